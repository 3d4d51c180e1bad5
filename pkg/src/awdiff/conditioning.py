"""Frozen embedding providers and the cosine alignment loss.

The text and image encoders here are deterministic stand-ins: the text side
hashes whitespace tokens to seeded Gaussian vectors, the image side is an
8x8 area pool followed by a fixed random projection. Real vectors computed
offline can be loaded from rank-1 AWT1 files instead.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, InvariantError, ParameterError
from .image import make_rng, read_tensor, write_tensor

DEFAULT_DIM = 16
POOL = 8


@dataclass(frozen=True)
class ConditioningEmbedding:
    values: np.ndarray
    source_tag: str = "toy-text"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or not np.all(np.isfinite(vals)):
            raise InvariantError("embedding must be a finite 1D vector")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.size


def _token_seed(token):
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def toy_text_embed(label, dim=DEFAULT_DIM):
    """Average of per-token seeded Gaussian vectors, L2-normalized."""
    tokens = str(label).split()
    if not tokens:
        raise ParameterError("label prompt is empty")
    vecs = [make_rng(_token_seed(tok)).standard_normal(dim) for tok in tokens]
    mean = np.mean(vecs, axis=0)
    return ConditioningEmbedding(mean / np.linalg.norm(mean), "toy-text")


def pooling_matrix(n, bins=POOL):
    """``(bins, n)`` matrix averaging ``n`` samples into ``bins`` near-equal groups."""
    if n < bins:
        raise ParameterError(f"image side {n} is smaller than the {bins}-bin pool")
    mat = np.zeros((bins, n))
    for i, group in enumerate(np.array_split(np.arange(n), bins)):
        mat[i, group] = 1.0 / group.size
    return mat


class ToyImageEmbedder:
    """Frozen image encoder: area-pool to 8x8, project with a seeded matrix, normalize."""

    def __init__(self, dim=DEFAULT_DIM, seed=1234):
        self.dim = dim
        self.seed = seed
        self.projection = make_rng(seed).standard_normal((POOL * POOL, dim)) / POOL

    def graph(self, images):
        """Embed a ``(B, H, W)`` batch on the active tape; returns unnormalized ``(B, dim)``.

        Normalization is left to the caller because the cosine loss is
        scale-invariant; :meth:`__call__` applies it.
        """
        images = ad.as_var(images)
        bsz, height, width = images.shape
        rows = pooling_matrix(height)
        cols = pooling_matrix(width).T
        pooled = (rows @ images) @ cols
        return pooled.reshape(bsz, POOL * POOL) @ self.projection

    def __call__(self, img):
        z = self.graph(np.asarray(img, dtype=np.float64)[None]).value[0]
        return ConditioningEmbedding(z / np.linalg.norm(z), "toy-image")

    def gradient(self, img, upstream):
        """Pixel gradient of ``<normalized embedding, upstream>``."""
        pixels = ad.Var(np.asarray(img, dtype=np.float64)[None], requires_grad=True)
        with ad.Tape() as tape:
            z = self.graph(pixels)
            unit = z / ad.sqrt((z * z).sum(axis=1, keepdims=True))
        tape.backward(unit, seed=np.asarray(upstream, dtype=np.float64)[None])
        return pixels.grad[0]


def toy_image_embed(img, dim=DEFAULT_DIM, seed=1234):
    return ToyImageEmbedder(dim, seed)(img)


def save_embedding(emb, path):
    write_tensor(path, emb.values)


def load_external_embedding(path, dim=None):
    """Load a rank-1 AWT1 vector verbatim; ``dim`` (if given) must match."""
    values = read_tensor(path)
    if values.ndim != 1:
        raise FormatError(f"{path}: embedding must be rank 1, got rank {values.ndim}")
    if dim is not None and values.size != dim:
        raise FormatError(f"{path}: embedding has dim {values.size}, configuration expects dim {dim}")
    return ConditioningEmbedding(values, "external-file")


def _values(z):
    return z.values if isinstance(z, ConditioningEmbedding) else np.asarray(z, dtype=np.float64)


def cosine_alignment_loss(z_img, z_txt):
    """``1 - cos(z_img, z_txt)``, in [0, 2]."""
    a, b = _values(z_img), _values(z_txt)
    if a.shape != b.shape:
        raise InvariantError(f"embedding dims differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ParameterError("cosine undefined for a zero-norm embedding")
    return 1.0 - float(a @ b) / (na * nb)


def cosine_alignment_grad(z_img, z_txt):
    """Gradient of :func:`cosine_alignment_loss` with respect to ``z_img``."""
    a, b = _values(z_img), _values(z_txt)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cos = float(a @ b) / (na * nb)
    return -(b / (na * nb) - cos * a / (na * na))


def cosine_loss_graph(z, z_txt):
    """Batched ``1 - cos`` on the tape: ``z`` is a ``(B, d)`` Var, ``z_txt`` a ``(B, d)`` array."""
    z_txt = np.asarray(z_txt, dtype=np.float64)
    dot = (z * z_txt).sum(axis=1)
    norm = ad.sqrt((z * z).sum(axis=1)) * np.linalg.norm(z_txt, axis=1)
    return 1.0 - dot / norm
