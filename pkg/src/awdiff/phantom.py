"""Synthetic lung-ultrasound phantoms: pleural line, B-lines and speckle."""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .image import make_rng


@dataclass(frozen=True)
class PhantomParams:
    width: int = 32
    height: int = 32
    pleural_line_row: float = 0.3
    pleural_thickness_px: int = 2
    pleural_brightness: float = 0.9
    background: float = 0.1
    n_blines: int = 0
    bline_width_px: int = 1
    bline_brightness: float = 0.6
    speckle_sigma: float = 0.0
    irregular_pleura: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ParameterError("phantom must be at least 4x4")
        if self.n_blines < 0 or self.bline_width_px < 1 or self.pleural_thickness_px < 1:
            raise ParameterError("counts and widths must be non-negative / positive")
        for name in ("pleural_brightness", "background", "bline_brightness"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.speckle_sigma < 0:
            raise ParameterError("speckle_sigma must be >= 0")
        if not 0.0 <= self.pleural_line_row < 1.0:
            raise ParameterError("pleural_line_row is a fraction of the height in [0, 1)")


def phantom_label(n_blines, irregular_pleura=False):
    label = f"{n_blines} B-lines"
    return label + ", irregular pleura" if irregular_pleura else label


def _bline_columns(rng, width, count, spacing):
    """Pick ``count`` columns at least ``spacing`` apart, away from the borders."""
    margin = 2
    slots = np.arange(margin, width - margin - spacing + 1, spacing)
    if count > len(slots):
        raise ParameterError(f"cannot fit {count} B-lines into width {width}")
    chosen = np.sort(rng.choice(len(slots), size=count, replace=False))
    return slots[chosen]


def generate_phantom(p):
    """Render a phantom image and its text label; deterministic in ``p.seed``."""
    rng = make_rng(p.seed)
    img = np.full((p.height, p.width), p.background)
    top = int(round(p.pleural_line_row * p.height))
    rows = np.arange(p.height)[:, None]
    if p.irregular_pleura:
        offsets = rng.integers(-1, 2, size=p.width)[None, :]
    else:
        offsets = np.zeros((1, p.width), dtype=int)
    band = (rows >= top + offsets) & (rows < top + offsets + p.pleural_thickness_px)
    img[band] = p.pleural_brightness

    below = top + p.pleural_thickness_px + 1
    if p.n_blines:
        cols = _bline_columns(rng, p.width, p.n_blines, p.bline_width_px + 2)
        for c in cols:
            img[below:, c:c + p.bline_width_px] = p.bline_brightness

    if p.speckle_sigma > 0:
        gain = np.clip(1.0 + p.speckle_sigma * rng.standard_normal(img.shape), 0.0, None)
        img = np.clip(img * gain, 0.0, 1.0)
    return img, phantom_label(p.n_blines, p.irregular_pleura)


def phantom_suite(count, base=None, seed=0, max_blines=4):
    """A reproducible list of ``(image, label)`` phantoms with varied B-line counts."""
    base = base or PhantomParams(speckle_sigma=0.2)
    out = []
    rng = make_rng(seed)
    for i in range(count):
        n = int(rng.integers(0, max_blines + 1))
        irregular = bool(rng.integers(0, 2))
        params = replace(base, n_blines=n, irregular_pleura=irregular, seed=seed * 100003 + i)
        out.append(generate_phantom(params))
    return out
