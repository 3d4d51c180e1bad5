"""Training loop for the conditional denoiser: losses, steps, checkpoints.

The objective for a batch is

    total = mean_i mse(eps_i, eps_pred_i) + lambda1 * mean_i (1 - cos(embed(x0_hat_i), z_y_i))

where ``x0_hat`` is the clean image implied by the noise prediction. Every
step draws, in this order from the single training generator: the batch
indices, the diffusion steps and the noise fields. Saving the generator
state in a checkpoint is therefore enough for an exact resume.
"""

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .conditioning import ToyImageEmbedder, cosine_loss_graph, load_external_embedding, toy_text_embed
from .denoiser import AdamState, ArchitectureConfig, DenoiserParams, adam_step, forward_graph, init_params
from .diffusion import ema_update, forward_marginal, linear_beta_schedule
from .errors import DivergenceError, FormatError, InvariantError, ParameterError
from .image import check_same_shape, load_image, make_rng, read_tensor, write_tensor
from .wavelet import encoder_features, starlet_reconstruct

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda1: float = 0.1
    ema_decay: float = 0.999
    seed: int = 0
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    scales: int = 4
    channels: int = 16
    n_blocks: int = 2
    kernel_size: int = 3
    emb_dim: int = 16
    embed_seed: int = 1234
    align_t_max: int = 0  # 0 applies the alignment loss at every step
    checkpoint_every: int = 0  # 0 writes only the final checkpoint

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ParameterError("batch_size must be >= 1 and steps >= 0")
        if self.lambda1 < 0:
            raise ParameterError("lambda1 must be >= 0")
        if not (0 < self.lr and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ParameterError("Adam hyperparameters out of range")
        if not 0 <= self.ema_decay < 1:
            raise ParameterError("ema_decay must lie in [0, 1)")
        if self.checkpoint_every < 0 or self.align_t_max < 0:
            raise ParameterError("checkpoint_every and align_t_max must be >= 0")

    @property
    def arch(self):
        return ArchitectureConfig(channels=self.channels, kernel_size=self.kernel_size,
                                  n_blocks=self.n_blocks, emb_dim=self.emb_dim, scales=self.scales)

    def schedule(self):
        return linear_beta_schedule(self.T, self.beta_start, self.beta_end)

    def to_text(self):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, **overrides):
        """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise FormatError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, lineno)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides):
        with open(path) as fh:
            return cls.from_text(fh.read(), **overrides)


def _coerce(kind, value, lineno):
    try:
        if kind in (int, "int"):
            return int(value)
        return float(value)
    except ValueError:
        raise FormatError(f"config line {lineno}: cannot parse {value!r}") from None


class Dataset:
    """Training images with labels, cached wavelet features and text embeddings."""

    def __init__(self, images, labels, embeddings, scales=4):
        if not images:
            raise ParameterError("dataset is empty")
        if not len(images) == len(labels) == len(embeddings):
            raise InvariantError("images, labels and embeddings differ in length")
        shape = np.shape(images[0])
        for img in images:
            check_same_shape(images[0], img, "dataset images")
        self.images = np.stack([np.asarray(x, dtype=np.float64) for x in images])
        self.labels = list(labels)
        self.embeddings = np.stack([e.values for e in embeddings])
        self.pyramids = [encoder_features(x, scales) for x in self.images]
        for img, pyr in zip(self.images, self.pyramids):
            if np.max(np.abs(starlet_reconstruct(pyr) - img)) > 1e-10:
                raise InvariantError("cached pyramid does not reconstruct its image")
        self.planes = np.stack([np.stack(p.planes) for p in self.pyramids])
        self.shape = shape
        self.scales = scales

    def __len__(self):
        return len(self.images)

    @classmethod
    def from_labelled(cls, pairs, scales=4, emb_dim=16):
        images = [img for img, _ in pairs]
        labels = [label for _, label in pairs]
        embeddings = [toy_text_embed(label, emb_dim) for label in labels]
        return cls(images, labels, embeddings, scales)


def read_embedding_manifest(path):
    """Read ``label<TAB>relative/path.awt`` lines into a dict."""
    base = os.path.dirname(path)
    mapping = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            label, rel = line.split("\t")
            mapping[label] = os.path.join(base, rel)
    return mapping


def load_dataset_dir(root, scales=4, emb_dim=16):
    """Load ``images/*.pgm`` with ``labels.tsv``; use ``embeddings/manifest.tsv`` when present."""
    with open(os.path.join(root, "labels.tsv")) as fh:
        rows = [line.rstrip("\n").split("\t", 1) for line in fh if line.strip()]
    manifest = os.path.join(root, "embeddings", "manifest.tsv")
    external = read_embedding_manifest(manifest) if os.path.exists(manifest) else {}
    images, labels, embeddings = [], [], []
    for name, label in rows:
        images.append(load_image(os.path.join(root, "images", name)))
        labels.append(label)
        if label in external:
            embeddings.append(load_external_embedding(external[label], emb_dim))
        else:
            embeddings.append(toy_text_embed(label, emb_dim))
    return Dataset(images, labels, embeddings, scales)


def mse_loss(eps, eps_pred):
    """Mean (not sum) of squared differences."""
    check_same_shape(eps, eps_pred)
    d = np.asarray(eps, dtype=np.float64) - np.asarray(eps_pred, dtype=np.float64)
    return float(np.mean(d * d))


def objective(params, x0, planes, z_y, t, eps, sched, lambda1, embedder, align_t_max=0):
    """Evaluate the batch loss and its parameter gradient.

    Returns ``(total, mse, align, grads)``; ``align`` is always reported,
    but only enters the graph when ``lambda1 > 0``.
    """
    leaves = {k: ad.Var(v, requires_grad=True) for k, v in params.blocks.items()}
    ab = sched.alpha_bars[t - 1][:, None, None]
    x_t = forward_marginal(x0, t, eps, sched)
    with ad.Tape() as tape:
        eps_pred = forward_graph(leaves, x_t, t, z_y, planes)
        diff = eps_pred - eps
        mse = (diff * diff).mean()
        x0_hat = (x_t - eps_pred * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))
        per_example = cosine_loss_graph(embedder.graph(x0_hat), z_y)
        mask = np.ones(len(t)) if align_t_max == 0 else (t <= align_t_max).astype(float)
        align = (per_example * mask).sum() * (1.0 / max(1.0, mask.sum()))
        total = mse + align * lambda1 if lambda1 > 0 else mse
    tape.backward(total)
    grads = DenoiserParams(params.arch, {
        k: v.grad if v.grad is not None else np.zeros_like(v.value) for k, v in leaves.items()
    })
    return float(total.value), float(mse.value), float(align.value), grads


@dataclass
class TrainState:
    params: DenoiserParams
    ema: DenoiserParams
    opt: AdamState
    rng: np.random.Generator
    step: int = 0
    curve: list = dataclasses.field(default_factory=list)


def training_step(params, ema, opt_state, batch, sched, cfg, rng, embedder):
    """Draw steps and noise, take one Adam step and one EMA update.

    ``batch`` is ``(x0, planes, z_y)`` with leading batch axis.
    """
    x0, planes, z_y = batch
    t = rng.integers(1, sched.T + 1, size=len(x0))
    eps = rng.standard_normal(x0.shape)
    total, mse, align, grads = objective(params, x0, planes, z_y, t, eps, sched,
                                         cfg.lambda1, embedder, cfg.align_t_max)
    if not np.isfinite(total):
        raise DivergenceError("non-finite training loss")
    params, opt_state = adam_step(params, grads, opt_state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    ema = ema_update(ema, params, cfg.ema_decay)
    return params, ema, opt_state, {"total": total, "mse": mse, "align": align}


def init_state(cfg):
    rng = make_rng(cfg.seed)
    params = init_params(cfg.arch, rng)
    return TrainState(params, params.copy(), AdamState.zeros(params), rng)


def train(dataset, cfg, checkpoint_dir=None, resume=None):
    """Run ``cfg.steps`` optimizer steps; returns the final :class:`TrainState`.

    ``state.curve`` holds ``(step, total, mse, align)`` rows. With
    ``checkpoint_dir`` set, a checkpoint is written every
    ``cfg.checkpoint_every`` steps and at the end. ``resume`` continues
    from a checkpoint directory (or an in-memory state) up to ``cfg.steps``.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    if dataset.scales != cfg.scales:
        raise InvariantError(f"dataset has {dataset.scales} scales, config expects {cfg.scales}")
    sched = cfg.schedule()
    embedder = ToyImageEmbedder(cfg.emb_dim, cfg.embed_seed)
    if resume is None:
        state = init_state(cfg)
    elif isinstance(resume, TrainState):
        state = resume
    else:
        state = load_checkpoint(resume)[0]
    last_saved = None
    while state.step < cfg.steps:
        idx = state.rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = (dataset.images[idx], dataset.planes[idx], dataset.embeddings[idx])
        try:
            state.params, state.ema, state.opt, metrics = training_step(
                state.params, state.ema, state.opt, batch, sched, cfg, state.rng, embedder)
        except DivergenceError as err:
            raise DivergenceError(f"training diverged at step {state.step + 1}; last good checkpoint: {last_saved}",
                                  step=state.step + 1) from err
        state.step += 1
        state.curve.append((state.step, metrics["total"], metrics["mse"], metrics["align"]))
        if state.step % 100 == 0:
            log.info("step %d total %.5f mse %.5f align %.5f", state.step, *state.curve[-1][1:])
        if checkpoint_dir and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            last_saved = save_checkpoint(state, cfg, os.path.join(checkpoint_dir, f"ckpt-{state.step:06d}"))
    if checkpoint_dir:
        save_checkpoint(state, cfg, os.path.join(checkpoint_dir, "final"))
    return state


# -- persistence --------------------------------------------------------------

def write_params(params, path):
    """Write a named parameter set: ``path`` (flat AWT1) plus ``path + '.manifest'``."""
    with open(path + ".manifest", "w") as fh:
        for name, block in params.blocks.items():
            fh.write(f"{name} {block.ndim} {' '.join(map(str, block.shape))}\n")
    write_tensor(path, params.flat())


def read_params(path, arch):
    flat = read_tensor(path)
    with open(path + ".manifest") as fh:
        rows = [line.split() for line in fh if line.strip()]
    found = [(r[0], tuple(int(n) for n in r[2:])) for r in rows]
    if found != list(arch.block_shapes().items()):
        raise FormatError(f"{path}: manifest blocks do not match the architecture")
    return DenoiserParams(arch, {k: np.zeros(s) for k, s in arch.block_shapes().items()}).with_flat(flat)


def write_curve(curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "mse", "align"])
        for step, total, mse, align in curve:
            writer.writerow([step, repr(total), repr(mse), repr(align)])


def read_curve(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]


def save_checkpoint(state, cfg, path):
    """Persist everything needed for a bit-exact resume into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    write_params(state.params, os.path.join(path, "params.awt"))
    write_params(state.ema, os.path.join(path, "params.awt.ema"))
    write_params(state.opt.m, os.path.join(path, "adam_m.awt"))
    write_params(state.opt.v, os.path.join(path, "adam_v.awt"))
    with open(os.path.join(path, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    with open(os.path.join(path, "state.json"), "w") as fh:
        json.dump({"step": state.step, "adam_step": state.opt.step,
                   "rng": state.rng.bit_generator.state}, fh)
    write_curve(state.curve, os.path.join(path, "loss.csv"))
    return path


def load_checkpoint(path):
    """Return ``(TrainState, TrainingConfig)`` from a checkpoint directory."""
    cfg = TrainingConfig.load(os.path.join(path, "config.txt"))
    arch = cfg.arch
    with open(os.path.join(path, "state.json")) as fh:
        meta = json.load(fh)
    rng = make_rng(0)
    rng.bit_generator.state = meta["rng"]
    opt = AdamState(read_params(os.path.join(path, "adam_m.awt"), arch),
                    read_params(os.path.join(path, "adam_v.awt"), arch), meta["adam_step"])
    state = TrainState(read_params(os.path.join(path, "params.awt"), arch),
                       read_params(os.path.join(path, "params.awt.ema"), arch),
                       opt, rng, meta["step"], read_curve(os.path.join(path, "loss.csv")))
    return state, cfg
