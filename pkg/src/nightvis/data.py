"""Dataset manifests, synthetic desk-scale scenes, normalization and batching.

On disk a dataset is a directory holding ``manifest.json`` plus one raw
file per (sample, channel): flat little-endian float32, row-major, with the
extent given by the channel's native grid in the manifest.  The visible
target of each sample is stored the same way as a ``3 x rows x cols`` block
in CH01, CH02, CH03 order (blue, green, red).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DataShapeError, MissingFileError, NonFiniteDataError

logger = logging.getLogger(__name__)

ALBEDO_MIN = 0.0
ALBEDO_MAX = 1.65
MAX_PIXEL = 255
VISIBLE_CHANNELS = ("CH01", "CH02", "CH03")
CATEGORIES = ("infrared", "nwp_multilevel", "nwp_singlelevel", "noise")
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "nightvis-manifest"


@dataclass
class ChannelSpec:
    name: str
    category: str
    native_rows: int
    native_cols: int
    physical_min: float
    physical_max: float

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"channel {self.name}: unknown category {self.category!r}")
        if not self.physical_min < self.physical_max:
            raise ConfigError(f"channel {self.name}: physical_min must be below physical_max")


@dataclass
class Sample:
    x: np.ndarray  # (C, H, W), normalized to [-1, 1]
    y: np.ndarray  # (3, H, W), normalized visible target
    timestamp: str
    night: bool = False
    day: bool = True
    sequence: int = 0
    hour: int = 12


# ---------------------------------------------------------------------------
# normalization and rendering
# ---------------------------------------------------------------------------


def normalize(v, lo: float, hi: float) -> np.ndarray:
    return 2.0 * (np.asarray(v, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize(v, lo: float, hi: float) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) + 1.0) * 0.5 * (hi - lo) + lo


def normalize_visible(albedo) -> np.ndarray:
    return normalize(albedo, ALBEDO_MIN, ALBEDO_MAX).astype(np.float32)


def denormalize_visible(y_norm) -> np.ndarray:
    """Map generator output in ``[-1, 1]`` to albedo in ``[0, 1.65]``; overshoot is clamped."""
    return denormalize(np.clip(y_norm, -1.0, 1.0), ALBEDO_MIN, ALBEDO_MAX)


def albedo_to_image(albedo) -> np.ndarray:
    """Render a ``(3, H, W)`` CH01/CH02/CH03 albedo grid as an ``(H, W, 3)`` RGB uint8 image.

    CH03 drives red, CH02 green, CH01 blue.  Pixel values are rounded half
    away from zero after a linear map of ``[0, 1.65]`` onto ``[0, 255]``.
    """
    a = np.clip(np.asarray(albedo, dtype=np.float64), ALBEDO_MIN, ALBEDO_MAX)
    # rounding to 9 places absorbs representation error at exact .5 ties
    scaled = np.round(a / ALBEDO_MAX * MAX_PIXEL, 9)
    pix = np.floor(scaled + 0.5).astype(np.uint8)
    return np.ascontiguousarray(pix[::-1].transpose(1, 2, 0))


def luminance(image) -> np.ndarray:
    """Single-channel luminance of an ``(H, W, 3)`` RGB image."""
    img = np.asarray(image, dtype=np.float64)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: Path
    rows: int
    cols: int
    channels: list[ChannelSpec]
    records: list[dict]
    normalization: dict[str, tuple[float, float]] = field(default_factory=dict)
    recipe: dict = field(default_factory=dict)

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]

    @property
    def categories(self) -> list[str]:
        return [c.category for c in self.channels]

    def __len__(self) -> int:
        return len(self.records)

    def stats_for(self, spec: ChannelSpec) -> tuple[float, float]:
        lo, hi = self.normalization.get(spec.name, (spec.physical_min, spec.physical_max))
        if not lo < hi:
            hi = lo + 1.0
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "grid": {"rows": self.rows, "cols": self.cols},
            "target": {
                "channels": list(VISIBLE_CHANNELS),
                "albedo_range": [ALBEDO_MIN, ALBEDO_MAX],
                "encoding": "float32-le, 3 x rows x cols",
            },
            "channels": [asdict(c) for c in self.channels],
            "normalization": {
                "method": "minmax",
                "split": "train",
                "stats": {k: [float(lo), float(hi)] for k, (lo, hi) in self.normalization.items()},
            },
            "samples": self.records,
            "recipe": self.recipe,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise MissingFileError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
        if doc.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{path} is not a {MANIFEST_FORMAT} document")
        target = doc.get("target", {})
        if list(target.get("albedo_range", [])) != [ALBEDO_MIN, ALBEDO_MAX]:
            raise DataError(f"target albedo range must be [{ALBEDO_MIN}, {ALBEDO_MAX}]")
        stats = doc.get("normalization", {}).get("stats", {})
        return cls(
            root=path.parent,
            rows=doc["grid"]["rows"],
            cols=doc["grid"]["cols"],
            channels=[ChannelSpec(**c) for c in doc["channels"]],
            records=doc["samples"],
            normalization={k: (float(v[0]), float(v[1])) for k, v in stats.items()},
            recipe=doc.get("recipe", {}),
        )

    def validate_files(self) -> None:
        """Check every referenced file exists with the declared size."""
        for i, rec in enumerate(self.records):
            for spec in self.channels:
                _check_file(self.root / rec["files"][spec.name], spec.native_rows * spec.native_cols)
            if rec.get("target"):
                _check_file(self.root / rec["target"], 3 * self.rows * self.cols)

    def select(self, split: str | None = None, day: bool | None = None, night: bool | None = None,
               hours: tuple[int, int] | None = None) -> list[int]:
        """Indices of records matching all given filters (``hours`` is inclusive)."""
        out = []
        for i, rec in enumerate(self.records):
            if split is not None and rec.get("split") != split:
                continue
            if day is not None and bool(rec.get("day")) != day:
                continue
            if night is not None and bool(rec.get("night")) != night:
                continue
            if hours is not None and not hours[0] <= rec.get("hour", 0) % 24 <= hours[1]:
                continue
            out.append(i)
        return out


def _check_file(path: Path, n_values: int) -> None:
    if not path.exists():
        raise MissingFileError(f"missing data file: {path}")
    size = path.stat().st_size
    if size != 4 * n_values:
        raise DataShapeError(f"{path}: {size} bytes, expected {4 * n_values}")


def read_raw(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    _check_file(path, math.prod(shape))
    arr = np.fromfile(path, dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteDataError(f"{path} contains non-finite values")
    return arr.astype(np.float32)


def write_raw(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def upsample_to(grid: np.ndarray, rows: int, cols: int) -> np.ndarray:
    if grid.shape == (rows, cols):
        return grid
    out = T.bilinear_upsample(T.Tensor(grid.astype(np.float32)), rows, cols)
    return out.value


def stack_channels(raw: dict[str, np.ndarray], manifest: DatasetManifest) -> np.ndarray:
    """Upsample, normalize and stack raw channel grids in manifest order."""
    planes = []
    for spec in manifest.channels:
        grid = upsample_to(raw[spec.name], manifest.rows, manifest.cols)
        lo, hi = manifest.stats_for(spec)
        planes.append(np.clip(normalize(grid, lo, hi), -1.0, 1.0))
    return np.stack(planes).astype(np.float32)


def load_sample(manifest: DatasetManifest, index: int) -> Sample:
    if not 0 <= index < len(manifest.records):
        raise IndexError(f"sample index {index} out of range 0..{len(manifest.records) - 1}")
    rec = manifest.records[index]
    raw = {}
    for spec in manifest.channels:
        try:
            rel = rec["files"][spec.name]
        except KeyError:
            raise MissingFileError(f"sample {index} has no file for channel {spec.name}") from None
        raw[spec.name] = read_raw(manifest.root / rel, (spec.native_rows, spec.native_cols))
    if rec.get("target"):
        albedo = read_raw(manifest.root / rec["target"], (3, manifest.rows, manifest.cols))
        y = normalize_visible(albedo)
    else:
        y = np.zeros((3, manifest.rows, manifest.cols), dtype=np.float32)
    return Sample(
        x=stack_channels(raw, manifest),
        y=y,
        timestamp=rec.get("timestamp", str(index)),
        night=bool(rec.get("night", False)),
        day=bool(rec.get("day", True)),
        sequence=int(rec.get("sequence", 0)),
        hour=int(rec.get("hour", 0)),
    )


@dataclass
class Dataset:
    """All samples of a manifest stacked into arrays."""

    x: np.ndarray
    y: np.ndarray
    records: list[dict]
    channel_names: list[str]
    categories: list[str]

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = list(idx)
        return Dataset(self.x[idx], self.y[idx], [self.records[i] for i in idx], self.channel_names, self.categories)

    def __len__(self) -> int:
        return len(self.x)


def load_dataset(manifest: DatasetManifest, indices: Sequence[int] | None = None) -> Dataset:
    idx = range(len(manifest)) if indices is None else list(indices)
    samples = [load_sample(manifest, i) for i in idx]
    if not samples:
        raise DataError("no samples selected")
    return Dataset(
        x=np.stack([s.x for s in samples]),
        y=np.stack([s.y for s in samples]),
        records=[manifest.records[i] for i in idx],
        channel_names=manifest.channel_names,
        categories=manifest.categories,
    )


ABLATIONS = {
    "combined": ("infrared", "nwp_multilevel", "nwp_singlelevel", "noise"),
    "ir_only": ("infrared", "noise"),
    "nwp_only": ("nwp_multilevel", "nwp_singlelevel", "noise"),
}


def ablation_keep(categories: Sequence[str], mode: str) -> np.ndarray:
    if mode not in ABLATIONS:
        raise ConfigError(f"unknown ablation {mode!r}; expected one of {sorted(ABLATIONS)}")
    return np.array([c in ABLATIONS[mode] for c in categories])


def apply_ablation(x: np.ndarray, categories: Sequence[str], mode: str) -> np.ndarray:
    """Zero the input channels an ablation arm does not see."""
    keep = ablation_keep(categories, mode)
    if keep.all():
        return x
    out = x.copy()
    out[:, ~keep] = 0.0
    return out


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


@dataclass
class SceneConfig:
    rows: int = 64
    cols: int = 64
    samples: int = 200
    sequence_length: int = 25
    start_hour: int = 6
    n_infrared: int = 8
    n_nwp_multilevel: int = 8
    n_nwp_quarter: int = 4
    nwp_coarsen: int = 2
    noise_channel: bool = True
    holdout_sequences: int = 2
    terminator_spread_hours: float = 1.0
    speed_range: tuple[float, float] = (1.0, 2.0)
    cloud_scale: float = 4.0
    ir_noise_kelvin: float = 0.3

    def validate(self) -> None:
        if self.samples < 1:
            raise ConfigError("synthetic dataset needs at least one sample")
        if self.n_infrared + self.n_nwp_multilevel + self.n_nwp_quarter + int(self.noise_channel) == 0:
            raise ConfigError("synthetic dataset needs at least one input channel")
        if self.rows < 8 or self.cols < 8:
            raise ConfigError("synthetic grid must be at least 8x8")
        if self.sequence_length < 1:
            raise ConfigError("sequence_length must be positive")
        if self.rows % 4 or self.cols % 4 or self.rows % self.nwp_coarsen or self.cols % self.nwp_coarsen:
            raise ConfigError("grid extents must be divisible by 4 and by nwp_coarsen")

    @property
    def n_sequences(self) -> int:
        return math.ceil(self.samples / self.sequence_length)

    @property
    def n_channels(self) -> int:
        return self.n_infrared + self.n_nwp_multilevel + self.n_nwp_quarter + int(self.noise_channel)


IR_NAMES = ("CH07", "CH08", "CH09", "CH10", "CH11", "CH12", "CH13", "CH14")
# (gain, offset) applied to the effective radiating temperature per IR channel
IR_RESPONSE = (
    (1.00, 4.0), (0.98, 3.0), (0.55, 105.0), (0.70, 72.0),
    (0.95, 9.0), (1.00, 0.0), (0.99, -1.0), (0.85, 30.0),
)
NWP_MULTILEVEL = (
    "Fraction of cloud cover@low",
    "Fraction of cloud cover@high",
    "Temperature@850hPa",
    "Temperature@500hPa",
    "Relative humidity@850hPa",
    "Relative humidity@500hPa",
    "U-component of wind@500hPa",
    "V-component of wind@500hPa",
)
NWP_SINGLE = ("Skin temperature", "Total column cloud liquid water", "Total column cloud ice water", "Total cloud cover")
NOISE_NAME = "NOISE"


def _channel_specs(cfg: SceneConfig) -> list[ChannelSpec]:
    specs = []
    for i in range(cfg.n_infrared):
        specs.append(ChannelSpec(_cycle(IR_NAMES, i), "infrared", cfg.rows, cfg.cols, 180.0, 320.0))
    hr, hc = cfg.rows // cfg.nwp_coarsen, cfg.cols // cfg.nwp_coarsen
    ranges = {"Fraction": (0.0, 1.0), "Temperature": (230.0, 300.0), "Relative": (0.0, 100.0), "U-": (-40.0, 40.0), "V-": (-40.0, 40.0)}
    for i in range(cfg.n_nwp_multilevel):
        name = _cycle(NWP_MULTILEVEL, i)
        lo, hi = next(v for k, v in ranges.items() if name.startswith(k))
        specs.append(ChannelSpec(name, "nwp_multilevel", hr, hc, lo, hi))
    qr, qc = cfg.rows // 4, cfg.cols // 4
    single_ranges = ((270.0, 320.0), (0.0, 1.0), (0.0, 0.5), (0.0, 1.0))
    for i in range(cfg.n_nwp_quarter):
        lo, hi = single_ranges[i % len(single_ranges)]
        specs.append(ChannelSpec(_cycle(NWP_SINGLE, i), "nwp_singlelevel", qr, qc, lo, hi))
    if cfg.noise_channel:
        specs.append(ChannelSpec(NOISE_NAME, "noise", cfg.rows, cfg.cols, 0.0, 1.0))
    return specs


def _cycle(names: Sequence[str], i: int) -> str:
    base = names[i % len(names)]
    return base if i < len(names) else f"{base}#{i // len(names)}"


def _spectral_filter(rows: int, cols: int, scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ky = np.fft.fftfreq(rows)[:, None]
    kx = np.fft.fftfreq(cols)[None, :]
    return np.exp(-2 * (np.pi * scale) ** 2 * (kx**2 + ky**2)), kx, ky


class AdvectedField:
    """Band-limited periodic random field, translated and slowly evolving.

    Translation is a Fourier phase shift, so sub-pixel displacements are
    exact on the periodic domain.  The field has zero mean and unit variance.
    """

    def __init__(self, rng: np.random.Generator, rows: int, cols: int, scale: float,
                 velocity: tuple[float, float], period_hours: float | None = None):
        filt, self.kx, self.ky = _spectral_filter(rows, cols, scale)
        self.spec_a = np.fft.fft2(rng.standard_normal((rows, cols))) * filt
        self.spec_b = np.fft.fft2(rng.standard_normal((rows, cols))) * filt
        self.spec_a[0, 0] = self.spec_b[0, 0] = 0
        self.norm = np.sqrt(np.mean(np.abs(np.fft.ifft2(self.spec_a)) ** 2)) + 1e-12
        self.velocity = velocity  # (columns, rows) per hour
        self.omega = 0.0 if period_hours is None else 2 * np.pi / period_hours

    def at(self, t: float) -> np.ndarray:
        u, v = self.velocity
        shift = np.exp(-2j * np.pi * (self.kx * u * t + self.ky * v * t))
        spec = (np.cos(self.omega * t) * self.spec_a + np.sin(self.omega * t) * self.spec_b) * shift
        return np.fft.ifft2(spec).real / self.norm


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _coarsen(grid: np.ndarray, factor: int) -> np.ndarray:
    r, c = grid.shape
    return grid.reshape(r // factor, factor, c // factor, factor).mean(axis=(1, 3))


def sun_elevation(hour: float, rows: int, cols: int, spread_hours: float) -> np.ndarray:
    """Sine of a toy solar elevation; the bottom-right corner runs ``spread_hours`` ahead."""
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    offset = ((rr + cc) / max(rows + cols - 2, 1) - 0.5) * spread_hours
    return np.sin(2 * np.pi * (hour + offset - 6.0) / 24.0)


@dataclass
class SyntheticFrame:
    raw: dict[str, np.ndarray]
    albedo: np.ndarray  # (3, H, W), CH01..CH03, retained for every frame
    sun: np.ndarray  # (H, W) toy solar elevation
    cloud: np.ndarray  # (H, W) cloud fraction in [0, 1]
    timestamp: str
    sequence: int
    hour: int
    day: bool
    night: bool

    @property
    def observed_albedo(self) -> np.ndarray:
        """What a visible imager would see: nothing where the sun is down."""
        return self.albedo * (self.sun > 0)


SURFACE_ALBEDO = {"ocean": (0.07, 0.06, 0.04), "land": (0.10, 0.16, 0.22)}
CLOUD_ALBEDO = (1.30, 1.34, 1.38)


def generate_frames(seed: int, cfg: SceneConfig | None = None) -> tuple[list[ChannelSpec], list[SyntheticFrame]]:
    """Procedurally generate raw channel grids and visible truth for every frame.

    Latent state per sequence: a fine cloud driver, a smoother cloud-top
    height and water path, and a static land mask, all advected by one
    sequence-wide wind.  Visible albedo follows from optical depth; infrared
    brightness temperatures are decreasing in cloud-top height and
    emissivity; NWP fields are block-averaged views of the same latents.
    """
    cfg = cfg or SceneConfig()
    cfg.validate()
    specs = _channel_specs(cfg)
    rows, cols = cfg.rows, cfg.cols
    root = np.random.SeedSequence(seed)
    frames: list[SyntheticFrame] = []
    remaining = cfg.samples
    for s, child in enumerate(root.spawn(cfg.n_sequences)):
        rng = np.random.default_rng(child)
        speed = rng.uniform(*cfg.speed_range)
        angle = rng.uniform(0, 2 * np.pi)
        vel = (speed * np.cos(angle), speed * np.sin(angle))
        driver = AdvectedField(rng, rows, cols, cfg.cloud_scale, vel, period_hours=60.0)
        height = AdvectedField(rng, rows, cols, 2.5 * cfg.cloud_scale, vel, period_hours=90.0)
        water = AdvectedField(rng, rows, cols, 2.5 * cfg.cloud_scale, vel, period_hours=90.0)
        land_field = AdvectedField(rng, rows, cols, 3.0 * cfg.cloud_scale, (0.0, 0.0)).at(0.0)
        land = _sigmoid(3.0 * land_field)
        ir_bias = rng.normal(0, 0.5, size=cfg.n_infrared)
        bg = AdvectedField(rng, rows, cols, 3.0 * cfg.cloud_scale, vel).at(0.0)

        n = min(cfg.sequence_length, remaining)
        remaining -= n
        for t in range(n):
            hour = cfg.start_hour + t
            q, r_h, r_w = driver.at(t), height.at(t), water.at(t)
            cloud = _sigmoid(3.0 * (q - 0.2))
            top = _sigmoid(1.6 * r_h)  # 0 low .. 1 high
            path = _sigmoid(1.2 * (0.5 * r_h + 0.85 * r_w))
            tau = 14.0 * cloud * (0.15 + path)
            cloud_albedo = tau / (tau + 7.0)
            surf = np.stack([SURFACE_ALBEDO["ocean"][k] * (1 - land) + SURFACE_ALBEDO["land"][k] * land for k in range(3)])
            albedo = surf * (1 - cloud_albedo) + cloud_albedo * np.array(CLOUD_ALBEDO)[:, None, None]

            diurnal = np.sin(2 * np.pi * (hour - 9.0) / 24.0)
            skin = 296.0 + 2.0 * bg + land * (3.0 + 4.0 * diurnal)
            emissivity = 1.0 - np.exp(-0.7 * tau)
            cloud_temp = 288.0 - 75.0 * top
            t_eff = (1 - emissivity) * skin + emissivity * cloud_temp

            raw: dict[str, np.ndarray] = {}
            spec_iter = iter(specs)
            for k in range(cfg.n_infrared):
                gain, off = IR_RESPONSE[k % len(IR_RESPONSE)]
                raw[next(spec_iter).name] = gain * t_eff + off + ir_bias[k] + rng.normal(0, cfg.ir_noise_kelvin, (rows, cols))
            low, high = cloud * (1 - top), cloud * top
            ml_fields = [
                low,
                high,
                284.0 + 0.3 * (skin - 296.0) - 3.0 * low,
                258.0 + 2.0 * r_w - 2.0 * high,
                55.0 + 40.0 * low,
                30.0 + 65.0 * high,
                np.full((rows, cols), 10.0 * vel[0]) + 2.0 * r_h,
                np.full((rows, cols), 10.0 * vel[1]) + 2.0 * r_w,
            ]
            for k in range(cfg.n_nwp_multilevel):
                coarse = _coarsen(ml_fields[k % len(ml_fields)], cfg.nwp_coarsen)
                raw[next(spec_iter).name] = coarse + rng.normal(0, 0.01 * np.std(coarse) + 1e-6, coarse.shape)
            liquid = 0.6 * cloud * path * (1 - top)
            ice = 0.3 * cloud * path * top
            single_fields = [skin, liquid, ice, cloud]
            for k in range(cfg.n_nwp_quarter):
                raw[next(spec_iter).name] = _coarsen(single_fields[k % len(single_fields)], 4)
            if cfg.noise_channel:
                raw[next(spec_iter).name] = rng.uniform(0.0, 1.0, (rows, cols))

            sun = sun_elevation(hour, rows, cols, cfg.terminator_spread_hours)
            day, night = bool(np.all(sun > 0)), bool(np.all(sun <= 0))
            frames.append(
                SyntheticFrame(
                    raw={k: v.astype(np.float32) for k, v in raw.items()},
                    albedo=np.clip(albedo, ALBEDO_MIN, ALBEDO_MAX).astype(np.float32),
                    sun=sun,
                    cloud=cloud,
                    timestamp=f"seq{s:02d}-d{hour // 24}-{hour % 24:02d}:00",
                    sequence=s,
                    hour=hour,
                    day=day,
                    night=night,
                )
            )
    return specs, frames


def split_of(sequence: int, cfg: SceneConfig) -> str:
    return "test" if sequence >= cfg.n_sequences - cfg.holdout_sequences else "train"


def minmax_stats(specs: Sequence[ChannelSpec], frames: Sequence[SyntheticFrame]) -> dict[str, tuple[float, float]]:
    stats = {}
    for spec in specs:
        stats[spec.name] = (
            float(min(f.raw[spec.name].min() for f in frames)),
            float(max(f.raw[spec.name].max() for f in frames)),
        )
    return stats


def synth_scene(seed: int, cfg: SceneConfig | None = None) -> list[Sample]:
    """In-memory synthetic dataset, normalized with training-split min/max statistics."""
    cfg = cfg or SceneConfig()
    specs, frames = generate_frames(seed, cfg)
    train = [f for f in frames if split_of(f.sequence, cfg) == "train"] or frames
    manifest = DatasetManifest(Path("."), cfg.rows, cfg.cols, specs, [], minmax_stats(specs, train))
    return [
        Sample(
            x=stack_channels(f.raw, manifest),
            y=normalize_visible(f.albedo),
            timestamp=f.timestamp,
            night=f.night,
            day=f.day,
            sequence=f.sequence,
            hour=f.hour,
        )
        for f in frames
    ]


def write_synthetic(out_dir: str | os.PathLike, seed: int, cfg: SceneConfig | None = None) -> DatasetManifest:
    """Write a synthetic dataset (raw files + manifest + recipe README) to ``out_dir``."""
    cfg = cfg or SceneConfig()
    specs, frames = generate_frames(seed, cfg)
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {root}: {exc}") from None
    records = []
    for i, f in enumerate(frames):
        sdir = f"samples/{i:04d}"
        files = {}
        for j, spec in enumerate(specs):
            rel = f"{sdir}/c{j:02d}.f32"
            write_raw(root / rel, f.raw[spec.name])
            files[spec.name] = rel
        write_raw(root / f"{sdir}/visible.f32", f.albedo)
        records.append(
            {
                "timestamp": f.timestamp,
                "sequence": f.sequence,
                "hour": f.hour,
                "day": f.day,
                "night": f.night,
                "split": split_of(f.sequence, cfg),
                "files": files,
                "target": f"{sdir}/visible.f32",
            }
        )
    train = [f for f in frames if split_of(f.sequence, cfg) == "train"] or frames
    recipe = {"generator": "nightvis.data.generate_frames", "seed": seed, "config": _jsonable(asdict(cfg))}
    manifest = DatasetManifest(root, cfg.rows, cfg.cols, specs, records, minmax_stats(specs, train), recipe)
    manifest.save()
    (root / "README.txt").write_text(_recipe_text(seed, cfg, specs, frames))
    return manifest


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _recipe_text(seed: int, cfg: SceneConfig, specs, frames) -> str:
    n_day = sum(f.day for f in frames)
    n_night = sum(f.night for f in frames)
    lines = [
        "Synthetic night-visible dataset",
        "",
        f"seed: {seed}",
        f"grid: {cfg.rows}x{cfg.cols}",
        f"samples: {len(frames)} in {cfg.n_sequences} hourly sequences starting at {cfg.start_hour:02d}:00",
        f"frames: {n_day} day, {n_night} night, {len(frames) - n_day - n_night} twilight",
        f"held-out sequences: last {cfg.holdout_sequences}",
        f"input channels ({len(specs)}):",
    ]
    lines += [f"  {s.name} [{s.category}] native {s.native_rows}x{s.native_cols}" for s in specs]
    lines += [
        "",
        "Recipe: cloud fraction is a logistic of a band-limited random field advected",
        "by one wind per sequence. Visible albedo mixes surface and cloud albedo via",
        "optical depth (cloud fraction x water path). Infrared channels are affine",
        "in the effective radiating temperature (skin vs cloud top, weighted by",
        "emissivity) plus Gaussian noise. NWP fields are block means of the same",
        "latents. NOISE is i.i.d. uniform and carries no information. The visible",
        "target is kept for night frames so night synthesis can be scored.",
        "",
        "Regenerate: nightvis make-synthetic --seed <seed> --out <dir>",
    ]
    return "\n".join(lines) + "\n"


def synth_translation(seed: int, rows: int = 64, cols: int = 64, shift: tuple[float, float] = (2.0, 0.0),
                      frames: int = 3, scale: float = 4.0) -> np.ndarray:
    """Frames of a smooth periodic pattern translating by ``shift`` (cols, rows) per frame.

    Values lie in ``[0, 1]``.
    """
    rng = np.random.default_rng(seed)
    f = AdvectedField(rng, rows, cols, scale, shift)
    return np.stack([_sigmoid(1.5 * f.at(t)) for t in range(frames)])


def save_png(path: str | os.PathLike, image: np.ndarray) -> Path:
    """Write an ``(H, W, 3)`` uint8 image (or ``(H, W)`` greyscale) as PNG."""
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise DataShapeError(f"PNG export expects uint8, got {arr.dtype}")
    Image.fromarray(arr).save(path, format="PNG", optimize=False)
    return path
