"""Dense optical flow and one-step extrapolation for the nowcast benchmark.

The estimator is a Horn-Schunck energy (linearized brightness constancy
plus quadratic smoothness) solved coarse-to-fine with image warping.  The
inner solver is red-black block Gauss-Seidel: every pixel update is the
exact minimizer of the energy in that pixel's ``(du, dv)`` with the rest
held fixed, so the energy of each linearization never increases.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import VISIBLE_CHANNELS, write_raw
from .errors import DataError, ShapeError
from .metrics import MetricsReport, evaluate, mae, quadrant_mask

ALGORITHM = "Horn-Schunck, coarse-to-fine with warping, red-black Gauss-Seidel"
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class FlowConfig:
    alpha: float = 0.3
    levels: int = 3
    warps: int = 3
    iterations: int = 60
    max_displacement: float = 16.0
    min_size: int = 8

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.levels < 1 or self.warps < 1 or self.iterations < 1:
            raise ValueError("levels, warps and iterations must be positive")


@dataclass
class FlowField:
    u: np.ndarray  # column displacement per step
    v: np.ndarray  # row displacement per step
    history: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def mean(self) -> tuple[float, float]:
        return float(self.u.mean()), float(self.v.mean())

    def curl(self) -> np.ndarray:
        return np.gradient(self.v, axis=1) - np.gradient(self.u, axis=0)

    @classmethod
    def zeros(cls, shape) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape))

    def save(self, out_dir: str | os.PathLike, name: str = "flow") -> Path:
        """Write ``u`` and ``v`` as raw float32 planes plus a small JSON entry."""
        out = Path(out_dir)
        write_raw(out / f"{name}_u.f32", self.u)
        write_raw(out / f"{name}_v.f32", self.v)
        entry = {
            "algorithm": ALGORITHM,
            "rows": self.shape[0],
            "cols": self.shape[1],
            "u": f"{name}_u.f32",
            "v": f"{name}_v.f32",
            "encoding": "float32-le, row-major",
        }
        path = out / f"{name}.json"
        path.write_text(json.dumps(entry, indent=1, sort_keys=True) + "\n")
        return path


def to_luminance(frame: np.ndarray) -> np.ndarray:
    """Reduce an ``(H, W, 3)`` RGB image or ``(3, H, W)`` CH01..CH03 grid to luminance."""
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        return f
    if f.ndim == 3 and f.shape[-1] == 3:
        r, g, b = f[..., 0], f[..., 1], f[..., 2]
    elif f.ndim == 3 and f.shape[0] == len(VISIBLE_CHANNELS):
        b, g, r = f[0], f[1], f[2]
    else:
        raise ShapeError(f"cannot derive luminance from shape {f.shape}")
    wr, wg, wb = LUMA_WEIGHTS
    return wr * r + wg * g + wb * b


def sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional coordinates, clamping to the edge."""
    h, w = img.shape
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.minimum(np.floor(r).astype(int), h - 2) if h > 1 else np.zeros_like(r, dtype=int)
    c0 = np.minimum(np.floor(c).astype(int), w - 2) if w > 1 else np.zeros_like(c, dtype=int)
    fr, fc = r - r0, c - c0
    r1, c1 = np.minimum(r0 + 1, h - 1), np.minimum(c0 + 1, w - 1)
    top = img[r0, c0] + fc * (img[r0, c1] - img[r0, c0])
    bot = img[r1, c0] + fc * (img[r1, c1] - img[r1, c0])
    return top + fr * (bot - top)


def _grid(shape):
    return np.meshgrid(np.arange(shape[0], dtype=np.float64), np.arange(shape[1], dtype=np.float64), indexing="ij")


def warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``out(r, c) = img(r + v, c + u)``."""
    rr, cc = _grid(img.shape)
    return sample_bilinear(img, rr + v, cc + u)


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _upsample_flow(f: np.ndarray, shape) -> np.ndarray:
    rr, cc = _grid(shape)
    sr = f.shape[0] / shape[0]
    sc = f.shape[1] / shape[1]
    return sample_bilinear(f, (rr + 0.5) * sr - 0.5, (cc + 0.5) * sc - 0.5)


def _neighbour_sums(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.zeros_like(a)
    n = np.zeros_like(a)
    s[1:] += a[:-1]
    n[1:] += 1
    s[:-1] += a[1:]
    n[:-1] += 1
    s[:, 1:] += a[:, :-1]
    n[:, 1:] += 1
    s[:, :-1] += a[:, 1:]
    n[:, :-1] += 1
    return s, n


def hs_energy(ix, iy, it, u0, v0, du, dv, alpha) -> float:
    data = np.sum((ix * du + iy * dv + it) ** 2)
    uu, vv = u0 + du, v0 + dv
    smooth = sum(np.sum(np.diff(f, axis=ax) ** 2) for f in (uu, vv) for ax in (0, 1))
    return float(data + alpha**2 * smooth)


def _solve_increment(ix, iy, it, u0, v0, alpha, iterations) -> tuple[np.ndarray, np.ndarray, list[float]]:
    a2 = alpha**2
    du = np.zeros_like(u0)
    dv = np.zeros_like(v0)
    rr, cc = np.indices(u0.shape)
    colours = [((rr + cc) % 2) == k for k in (0, 1)]
    ixx, iyy, ixy = ix * ix, iy * iy, ix * iy
    history = [hs_energy(ix, iy, it, u0, v0, du, dv, alpha)]
    for _ in range(iterations):
        for sel in colours:
            su, n = _neighbour_sums(u0 + du)
            sv, _ = _neighbour_sums(v0 + dv)
            ru = -ix * it - a2 * (n * u0 - su)
            rv = -iy * it - a2 * (n * v0 - sv)
            a11 = ixx + a2 * n
            a22 = iyy + a2 * n
            det = a11 * a22 - ixy * ixy
            du = np.where(sel, (a22 * ru - ixy * rv) / det, du)
            dv = np.where(sel, (a11 * rv - ixy * ru) / det, dv)
        history.append(hs_energy(ix, iy, it, u0, v0, du, dv, alpha))
    return du, dv, history


def estimate_flow(frame_t0, frame_t1, config: FlowConfig | None = None) -> FlowField:
    """Flow ``(u, v)`` such that ``frame_t1(r + v, c + u) ~ frame_t0(r, c)``.

    Frames may be greyscale grids, RGB images or CH01..CH03 albedo stacks;
    colour inputs are reduced to luminance first.
    """
    cfg = config or FlowConfig()
    cfg.validate()
    f0, f1 = to_luminance(frame_t0), to_luminance(frame_t1)
    if f0.shape != f1.shape:
        raise ShapeError(f"frames differ in shape: {f0.shape} vs {f1.shape}")
    if not (np.all(np.isfinite(f0)) and np.all(np.isfinite(f1))):
        raise DataError("optical flow input contains non-finite values")
    if np.array_equal(f0, f1):
        return FlowField.zeros(f0.shape)
    lo = min(f0.min(), f1.min())
    span = max(f0.max(), f1.max()) - lo
    f0, f1 = (f0 - lo) / span, (f1 - lo) / span

    pyr = [(f0, f1)]
    while len(pyr) < cfg.levels and min(pyr[-1][0].shape) >= 2 * cfg.min_size:
        a, b = pyr[-1]
        pyr.append((_downsample(a), _downsample(b)))

    u = np.zeros(pyr[-1][0].shape)
    v = np.zeros_like(u)
    history: list[list[float]] = []
    for level, (a, b) in enumerate(reversed(pyr)):
        if level:
            scale = a.shape[0] / u.shape[0]
            u = _upsample_flow(u, a.shape) * scale
            v = _upsample_flow(v, a.shape) * scale
        ga_r, ga_c = np.gradient(a)
        for _ in range(cfg.warps):
            bw = warp(b, u, v)
            gb_r, gb_c = np.gradient(bw)
            ix, iy = 0.5 * (ga_c + gb_c), 0.5 * (ga_r + gb_r)
            du, dv, hist = _solve_increment(ix, iy, bw - a, u, v, cfg.alpha, cfg.iterations)
            u = np.clip(u + du, -cfg.max_displacement, cfg.max_displacement)
            v = np.clip(v + dv, -cfg.max_displacement, cfg.max_displacement)
            history.append(hist)
    return FlowField(u, v, history)


def extrapolate(frame_t1, flow: FlowField, steps: int = 1) -> np.ndarray:
    """Advect ``frame_t1`` forward: ``out(r, c) = frame_t1(r - v, c - u)``, repeated ``steps`` times.

    Accepts ``(H, W)``, ``(H, W, C)`` or ``(C, H, W)`` arrays; colour channels
    share the one flow field.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    f = np.asarray(frame_t1, dtype=np.float64)
    shape = flow.shape
    if f.ndim == 2:
        planes, layout = [f], "hw"
    elif f.shape[:2] == shape:
        planes, layout = [f[..., k] for k in range(f.shape[-1])], "hwc"
    elif f.shape[1:] == shape:
        planes, layout = list(f), "chw"
    else:
        raise ShapeError(f"flow {shape} does not match frame {f.shape}")
    if planes[0].shape != shape:
        raise ShapeError(f"flow {shape} does not match frame {f.shape}")
    out = []
    for p in planes:
        for _ in range(steps):
            p = warp(p, -flow.u, -flow.v)
        out.append(p)
    if layout == "hw":
        return out[0]
    return np.stack(out, axis=-1 if layout == "hwc" else 0)


def benchmark_quadrant(real_t0, real_t1, synth_t2, quadrant: str = "bottom_right", truth_t2=None,
                       config: FlowConfig | None = None) -> MetricsReport:
    """Score a synthesized albedo frame against the flow-extrapolated benchmark on one quadrant.

    Inputs are ``(3, H, W)`` albedo stacks.  When ``truth_t2`` is given the
    report also carries the benchmark's own error against the truth.
    """
    flow = estimate_flow(real_t0, real_t1, config)
    bench = np.clip(extrapolate(real_t1, flow), 0.0, None)
    mask = quadrant_mask(bench.shape[1:], quadrant)
    report = evaluate(bench, synth_t2, mask=mask, region=quadrant)
    report.extra["benchmark"] = ALGORITHM
    if truth_t2 is not None:
        report.extra["benchmark_vs_truth_mae"] = mae(truth_t2, bench, mask)
        report.extra["synth_vs_truth_mae"] = mae(truth_t2, synth_t2, mask)
    return report
