"""MAE / RMSE on albedo grids, PSNR / SSIM on rendered 8-bit images.

Albedo grids are channel-first ``(C, H, W)``; rendered images are
``(H, W, 3)`` uint8 as produced by :func:`nightvis.data.albedo_to_image`.
Masks are boolean ``(H, W)`` grids selecting the evaluated cells.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

INFINITE = math.inf

SSIM_WINDOW = 8
SSIM_STRIDE = 4


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    return a, b


def _select(diff: np.ndarray, mask, channel_axis: int | None) -> np.ndarray:
    if mask is None:
        return diff.reshape(-1)
    mask = np.asarray(mask, dtype=bool)
    spatial = diff.shape[1:] if channel_axis == 0 else diff.shape[:2] if channel_axis == -1 else diff.shape
    if mask.shape != tuple(spatial):
        raise ShapeError(f"mask {mask.shape} does not match spatial extent {spatial}")
    if not mask.any():
        raise ValueError("mask selects no cells")
    if channel_axis == 0:
        return diff[:, mask].reshape(-1)
    if channel_axis == -1:
        return diff[mask].reshape(-1)
    return diff[mask]


def _channel_axis(a: np.ndarray, layout: str) -> int | None:
    if a.ndim == 2:
        return None
    return 0 if layout == "chw" else -1


def mae(I, K, mask=None) -> float:
    a, b = _pair(I, K)
    return float(np.mean(np.abs(_select(a - b, mask, _channel_axis(a, "chw")))))


def rmse(I, K, mask=None) -> float:
    a, b = _pair(I, K)
    return float(np.sqrt(np.mean(_select(a - b, mask, _channel_axis(a, "chw")) ** 2)))


def psnr(I, K, max_i: float = 255.0, mask=None) -> float:
    """Peak signal-to-noise ratio with MSE pooled over channels and pixels.

    Returns :data:`INFINITE` when the images are identical.
    """
    a, b = _pair(I, K)
    mse = float(np.mean(_select(a - b, mask, _channel_axis(a, "hwc")) ** 2))
    if mse == 0.0:
        return INFINITE
    return 20.0 * math.log10(max_i / math.sqrt(mse))


def ssim(
    I,
    K,
    window: int = SSIM_WINDOW,
    stride: int = SSIM_STRIDE,
    dynamic_range: float = 255.0,
    c3: float | None = None,
    mask=None,
) -> float:
    """Mean structural similarity over uniform sliding windows.

    Uses ``c1=(0.01 L)^2`` and ``c2=(0.03 L)^2``.  Without ``c3`` the index is
    the two-factor form; with ``c3`` the contrast and structure terms are
    evaluated separately.  Channels are scored independently and averaged.
    With a mask, only windows lying wholly inside it are used.
    """
    a, b = _pair(I, K)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w, _ = a.shape
    if window > h or window > w:
        raise ShapeError(f"SSIM window {window} larger than image {h}x{w}")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    wa = sliding_window_view(a, (window, window), axis=(0, 1))[::stride, ::stride]
    wb = sliding_window_view(b, (window, window), axis=(0, 1))[::stride, ::stride]
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = ((wa - mu_a[..., None, None]) * (wb - mu_b[..., None, None])).mean(axis=(-2, -1))

    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    if c3 is None:
        rest = (2 * cov + c2) / (var_a + var_b + c2)
    else:
        sa, sb = np.sqrt(var_a), np.sqrt(var_b)
        rest = ((2 * sa * sb + c2) / (var_a + var_b + c2)) * ((cov + c3) / (sa * sb + c3))
    index = lum * rest  # (rows, cols, channels)

    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise ShapeError(f"mask {mask.shape} does not match image {h}x{w}")
        inside = sliding_window_view(mask, (window, window))[::stride, ::stride].all(axis=(-2, -1))
        if not inside.any():
            raise ValueError("no SSIM window fits inside the mask")
        index = index[inside]
        return float(index.mean(axis=0).mean())
    return float(index.mean(axis=(0, 1)).mean())


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CONVENTIONS = {
    "mae_rmse_units": "albedo (0..1.65), channels averaged",
    "psnr": "20*log10(255/sqrt(MSE)), MSE pooled over RGB channels and pixels; identical images -> inf",
    "ssim": f"two-factor form, uniform {SSIM_WINDOW}x{SSIM_WINDOW} windows, stride {SSIM_STRIDE}, "
    "per-channel then channel mean, c1=(0.01*255)^2, c2=(0.03*255)^2",
}


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    psnr: float
    ssim: float
    region: str = "full"
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"region = {self.region}"]
        for key in ("mae", "rmse", "psnr", "ssim"):
            lines.append(f"{key} = {format_value(getattr(self, key))}")
        for k, v in self.extra.items():
            lines.append(f"{k} = {format_value(v)}")
        return "\n".join(lines) + "\n"


def format_value(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


def quadrant_mask(shape: tuple[int, int], quadrant: str = "bottom_right") -> np.ndarray:
    """Boolean mask of one quarter of an ``(H, W)`` grid."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    rows = slice(h // 2, h) if quadrant.startswith("bottom") else slice(0, h // 2)
    cols = slice(w // 2, w) if quadrant.endswith("right") else slice(0, w // 2)
    if quadrant not in ("top_left", "top_right", "bottom_left", "bottom_right"):
        raise ValueError(f"unknown quadrant {quadrant!r}")
    mask[rows, cols] = True
    return mask


def evaluate(y_true, y_synth, mask=None, region: str | None = None) -> MetricsReport:
    """Score a synthesized albedo grid ``(3, H, W)`` against a reference."""
    from .data import albedo_to_image

    a, b = _pair(y_true, y_synth)
    img_a, img_b = albedo_to_image(a), albedo_to_image(b)
    return MetricsReport(
        mae=mae(a, b, mask),
        rmse=rmse(a, b, mask),
        psnr=psnr(img_a, img_b, mask=mask),
        ssim=ssim(img_a, img_b, mask=mask),
        region=region or ("full" if mask is None else "masked"),
    )


def mean_report(reports: list[MetricsReport], region: str | None = None) -> MetricsReport:
    """Average a list of per-frame reports (PSNR averaged over finite values)."""
    if not reports:
        raise ValueError("no reports to average")
    finite = [r.psnr for r in reports if math.isfinite(r.psnr)]
    return MetricsReport(
        mae=float(np.mean([r.mae for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        psnr=float(np.mean(finite)) if finite else INFINITE,
        ssim=float(np.mean([r.ssim for r in reports])),
        region=region or reports[0].region,
        extra={"frames": len(reports)},
    )


def metrics_table(rows: dict[str, MetricsReport], sep: str = "\t") -> str:
    """Delimited table with one row per model input configuration."""
    header = sep.join(["Model input", "Mean MAE", "Mean RMSE", "PSNR", "SSIM"])
    lines = [header]
    for label, r in rows.items():
        lines.append(sep.join([label, f"{r.mae:.3f}", f"{r.rmse:.3f}", format_psnr(r.psnr), f"{r.ssim:.3f}"]))
    return "\n".join(lines) + "\n"


def format_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.1f}"
