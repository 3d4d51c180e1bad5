"""Command-line entry point: ``awdiff <subcommand> ...``."""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .conditioning import load_external_embedding, toy_text_embed
from .diffusion import SamplerConfig, linear_beta_schedule, sample
from .errors import AwdiffError
from .image import derive_seed, load_image, make_rng, save_image, write_pgm
from .metrics import CwSsimParams, structure_preservation_report
from .phantom import PhantomParams, generate_phantom
from .training import TrainingConfig, load_checkpoint, load_dataset_dir, train, write_curve
from .wavelet import starlet_decompose, starlet_reconstruct

IMAGE_SUFFIXES = (".pgm", ".awt")


def worker_count():
    """Worker cap from ``AWDIFF_THREADS``; 0 or unset means one per CPU."""
    value = int(os.environ.get("AWDIFF_THREADS", "0") or 0)
    return value if value > 0 else (os.cpu_count() or 1)


def _pmap(fn, items):
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _display(plane):
    lo, hi = plane.min(), plane.max()
    return np.full_like(plane, 0.5) if hi == lo else (plane - lo) / (hi - lo)


def cmd_phantom(args):
    os.makedirs(os.path.join(args.out, "images"), exist_ok=True)
    rng = make_rng(args.seed)
    plans = []
    for i in range(args.count):
        plans.append(PhantomParams(
            width=args.size, height=args.size, n_blines=int(rng.integers(0, args.max_blines + 1)),
            irregular_pleura=bool(rng.integers(0, 2)), speckle_sigma=args.speckle,
            seed=derive_seed(args.seed, i)))

    def render(i):
        img, label = generate_phantom(plans[i])
        name = f"{i:04d}.pgm"
        write_pgm(os.path.join(args.out, "images", name), img)
        return name, label

    rows = _pmap(render, list(range(args.count)))
    with open(os.path.join(args.out, "labels.tsv"), "w") as fh:
        for name, label in rows:
            fh.write(f"{name}\t{label}\n")
    print(f"wrote {args.count} phantoms to {args.out}")


def cmd_decompose(args):
    img = load_image(args.image)
    pyr = starlet_decompose(img, args.scales)
    os.makedirs(args.out, exist_ok=True)
    pyr.save(os.path.join(args.out, "pyramid.awt"))
    for s, plane in enumerate(pyr.planes, start=1):
        write_pgm(os.path.join(args.out, f"wp{s}.pgm"), _display(plane))
    write_pgm(os.path.join(args.out, "residual.pgm"), np.clip(pyr.residual, 0.0, 1.0))
    err = float(np.max(np.abs(starlet_reconstruct(pyr) - img)))
    print(f"reconstruction max-abs error: {err:.3e}")


def cmd_schedule(args):
    sched = linear_beta_schedule(args.T, args.beta_start, args.beta_end)
    lines = ["t,beta,alpha,alpha_bar"]
    lines += [f"{t},{b!r},{a!r},{ab!r}" for t, b, a, ab in
              ((t, float(b), float(a), float(ab)) for t, b, a, ab in sched.table())]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    overrides = dict(steps=args.steps, batch_size=args.batch, lambda1=args.lambda1,
                     ema_decay=args.ema_decay, seed=args.seed, scales=args.scales, T=args.T,
                     beta_start=args.beta_start, beta_end=args.beta_end)
    if args.config:
        cfg = TrainingConfig.load(args.config, **overrides)
    else:
        cfg = TrainingConfig(**{k: v for k, v in overrides.items() if v is not None})
    dataset = load_dataset_dir(args.data, cfg.scales, cfg.emb_dim)
    state = train(dataset, cfg, checkpoint_dir=args.out, resume=args.resume)
    write_curve(state.curve, os.path.join(args.out, "loss.csv"))
    last = state.curve[-1] if state.curve else None
    print(f"trained {state.step} steps" + (f", final mse {last[2]:.5f}" if last else ""))


def cmd_sample(args):
    state, cfg = load_checkpoint(args.checkpoint)
    params = state.params if args.no_ema else state.ema
    if args.embedding:
        z_y = load_external_embedding(args.embedding, cfg.emb_dim)
    elif args.label:
        z_y = toy_text_embed(args.label, cfg.emb_dim)
    else:
        raise AwdiffError("sample needs --label or --embedding")
    reference = load_image(args.reference)
    f = starlet_decompose(reference, cfg.scales)
    sched = linear_beta_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    os.makedirs(args.out, exist_ok=True)

    def draw(i):
        sampler = SamplerConfig(seed=derive_seed(args.seed, i), variance_mode=args.variance)
        x = sample(params, sched, z_y, f, sampler)
        save_image(x, os.path.join(args.out, f"sample_{i:03d}.awt"))
        write_pgm(os.path.join(args.out, f"sample_{i:03d}.pgm"), np.clip(x, 0.0, 1.0))

    _pmap(draw, list(range(args.count)))
    print(f"wrote {args.count} samples to {args.out}")


def _image_files(directory):
    return sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))


def cmd_eval(args):
    names = [n for n in _image_files(args.originals) if n in set(_image_files(args.generated))]
    if not names:
        raise AwdiffError("no image names shared by the two directories")
    xs = [load_image(os.path.join(args.originals, n)) for n in names]
    ys = [load_image(os.path.join(args.generated, n)) for n in names]
    report = structure_preservation_report(xs, ys, CwSsimParams(scales=args.scales), workers=worker_count())
    os.makedirs(args.out, exist_ok=True)
    report.write_csv(os.path.join(args.out, "metrics.csv"))
    report.write_histogram(os.path.join(args.out, "histogram.txt"))
    print(f"{len(names)} pairs, a-trous win rate {report.win_rate:.3f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="python -m awdiff", description="Wavelet-conditioned diffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a labelled phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--speckle", type=float, default=0.2)
    p.add_argument("--max-blines", type=int, default=4)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("decompose", help="starlet-decompose an image")
    p.add_argument("image")
    p.add_argument("out")
    p.add_argument("--scales", type=int, default=4)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("schedule", help="print the noise schedule table")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train", help="train the denoiser on a dataset directory")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--scales", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--ema-decay", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--reference", required=True, help="image whose wavelet planes condition sampling")
    p.add_argument("--label")
    p.add_argument("--embedding")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--variance", choices=("beta", "beta_tilde"), default="beta")
    p.add_argument("--no-ema", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="compare paired image directories")
    p.add_argument("originals")
    p.add_argument("generated")
    p.add_argument("--out", required=True)
    p.add_argument("--scales", type=int, default=3)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except (AwdiffError, OSError, ValueError) as err:
        print(f"awdiff: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
