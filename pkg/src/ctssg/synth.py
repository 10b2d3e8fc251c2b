"""Synthetic multi-label volumes with planted z-localized patterns.

Every label owns a band of triplets and a pattern type. A positive volume gets
one instance of the pattern rendered somewhere inside that band, on top of a
clipped Gaussian background. Each volume is a pure function of
``(seed, index)``.

Pattern types
    blob                  3-D Gaussian bump, one triplet deep
    alternating_intensity +a / -a on consecutive slices over two triplets,
                          so the sign flips inside and across triplets
    multi_slice_gradient  intensity ramp from 0 to a over two triplets
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.stats import norm

from .errors import DimensionError, ValidationError

PATTERNS = ("blob", "alternating_intensity", "multi_slice_gradient")
MIN_BAND = {"blob": 1, "alternating_intensity": 2, "multi_slice_gradient": 2}
MAGIC = b"CTSV"


@dataclass(frozen=True)
class LabelSpec:
    z_band: tuple[int, int]
    pattern: str = "blob"
    amplitude: float = 0.35
    prevalence: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "z_band", tuple(int(b) for b in self.z_band))


def default_labels(n_nodes: int = 8) -> tuple[LabelSpec, ...]:
    """Four labels on four equal, disjoint bands."""
    w = n_nodes // 4
    return (
        LabelSpec((0, w), "blob", 0.35, 0.4),
        LabelSpec((w, 2 * w), "alternating_intensity", 0.2, 0.4),
        LabelSpec((2 * w, 3 * w), "multi_slice_gradient", 0.35, 0.4),
        LabelSpec((3 * w, n_nodes), "blob", 0.35, 0.4),
    )


@dataclass(frozen=True)
class SynthConfig:
    n_slices: int = 24
    height: int = 32
    width: int = 32
    slices_per_node: int = 3
    labels: tuple[LabelSpec, ...] = field(default_factory=default_labels)
    correlation: tuple[tuple[float, ...], ...] | None = None
    noise_floor: float = 0.05
    background: float = 0.5
    patch: int = 8
    seed: int = 0

    def __post_init__(self):
        labels = tuple(l if isinstance(l, LabelSpec) else LabelSpec(**l) for l in self.labels)
        object.__setattr__(self, "labels", labels)
        if self.correlation is not None:
            object.__setattr__(self, "correlation", tuple(tuple(float(x) for x in row) for row in self.correlation))
        self.validate()

    @property
    def n_nodes(self) -> int:
        return self.n_slices // self.slices_per_node

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def validate(self) -> None:
        if self.n_slices % self.slices_per_node:
            raise ValidationError("SynthConfig: n_slices must be a multiple of slices_per_node")
        if not self.labels:
            raise ValidationError("SynthConfig: at least one label is required")
        if not 0 < self.patch <= min(self.height, self.width):
            raise ValidationError(f"SynthConfig: patch {self.patch} does not fit a {self.height}x{self.width} slice")
        if self.noise_floor < 0:
            raise ValidationError("SynthConfig: noise_floor must be >= 0")
        for m, spec in enumerate(self.labels):
            lo, hi = spec.z_band
            if spec.pattern not in PATTERNS:
                raise ValidationError(f"label {m}: unknown pattern {spec.pattern!r}")
            if not 0 <= lo < hi <= self.n_nodes:
                raise ValidationError(f"label {m}: z_band {spec.z_band} outside [0, {self.n_nodes})")
            if hi - lo < MIN_BAND[spec.pattern]:
                raise ValidationError(
                    f"label {m}: z_band {spec.z_band} too small for {spec.pattern} (needs {MIN_BAND[spec.pattern]} triplets)"
                )
            if not 0 <= spec.prevalence <= 1:
                raise ValidationError(f"label {m}: prevalence must lie in [0, 1]")
            if not abs(spec.amplitude) > self.noise_floor:
                raise ValidationError(f"label {m}: amplitude must exceed noise_floor")
        if self.correlation is not None:
            R = np.asarray(self.correlation)
            if R.shape != (self.n_labels, self.n_labels) or not np.allclose(R, R.T):
                raise ValidationError("SynthConfig: correlation must be a symmetric M x M matrix")
            if np.linalg.eigvalsh(R)[0] < -1e-12 or not np.allclose(np.diag(R), 1.0):
                raise ValidationError("SynthConfig: correlation must be positive semidefinite with unit diagonal")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = [dict(asdict(l), z_band=list(l.z_band)) for l in self.labels]
        return d


@dataclass
class Dataset:
    volumes: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.labels)


def _sample_labels(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    prev = np.array([l.prevalence for l in cfg.labels])
    if cfg.correlation is None:
        u = rng.uniform(size=cfg.n_labels)
        return (u < prev).astype(np.int64)
    z = rng.multivariate_normal(np.zeros(cfg.n_labels), np.asarray(cfg.correlation), method="eigh")
    with np.errstate(divide="ignore"):
        return (z < norm.ppf(prev)).astype(np.int64)


def render_pattern(spec: LabelSpec, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive offset volume for one planted instance of ``spec``."""
    C, p = cfg.slices_per_node, cfg.patch
    out = np.zeros((cfg.n_slices, cfg.height, cfg.width))
    lo, hi = spec.z_band
    y0 = int(rng.integers(0, cfg.height - p + 1))
    x0 = int(rng.integers(0, cfg.width - p + 1))
    a = spec.amplitude
    if spec.pattern == "blob":
        node = int(rng.integers(lo, hi))
        zc = node * C + (C - 1) / 2
        yy, xx = np.mgrid[0:p, 0:p] - (p - 1) / 2
        sig = p / 4
        for s in range(node * C, node * C + C):
            out[s, y0 : y0 + p, x0 : x0 + p] = a * np.exp(-((s - zc) ** 2) / (2 * 1.5**2) - (yy**2 + xx**2) / (2 * sig**2))
        return out
    node = int(rng.integers(lo, hi - 1))
    span = 2 * C
    for k in range(span):
        s = node * C + k
        level = a * (-1.0) ** k if spec.pattern == "alternating_intensity" else a * k / (span - 1)
        out[s, y0 : y0 + p, x0 : x0 + p] = level
    return out


def generate_one(cfg: SynthConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, index])
    labels = _sample_labels(cfg, rng)
    vol = cfg.background + cfg.noise_floor * rng.standard_normal((cfg.n_slices, cfg.height, cfg.width))
    vol = np.clip(vol, 0.0, 1.0)
    for spec, y in zip(cfg.labels, labels):
        if y:
            vol = vol + render_pattern(spec, cfg, rng)
    # float32-representable so the on-disk format round-trips exactly
    vol = np.clip(vol, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return vol, labels


def generate(cfg: SynthConfig, count: int, start: int = 0) -> Dataset:
    if count < 0:
        raise ValidationError("count must be >= 0")
    vols = np.zeros((count, cfg.n_slices, cfg.height, cfg.width))
    labels = np.zeros((count, cfg.n_labels), dtype=np.int64)
    for i in range(count):
        vols[i], labels[i] = generate_one(cfg, start + i)
    return Dataset(vols, labels, np.arange(start, start + count), cfg.seed)


def matched_filter_scores(volume: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """Hand-coded detector: peak windowed energy of the deviation from background.

    For each label the deviation energy is averaged over one-triplet-deep,
    patch-wide windows lying entirely inside the label's band; the score is
    the largest such window mean minus the noise variance, divided by the
    energy the pattern itself puts in its best window.
    """
    C, p = cfg.slices_per_node, cfg.patch
    energy = uniform_filter((volume - cfg.background) ** 2, size=(C, p, p), mode="constant")
    scores = np.zeros(cfg.n_labels)
    for m, spec in enumerate(cfg.labels):
        lo, hi = spec.z_band
        centers = energy[lo * C + C // 2 : hi * C - C // 2]
        ref = _pattern_energy(spec, cfg)
        scores[m] = (centers.max() - cfg.noise_floor**2) / ref
    return scores


def _pattern_energy(spec: LabelSpec, cfg: SynthConfig) -> float:
    clean = render_pattern(spec, cfg, np.random.default_rng(0))
    C, p = cfg.slices_per_node, cfg.patch
    return float(uniform_filter(clean**2, size=(C, p, p), mode="constant").max())


def matched_filter_labels(volume: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    return (matched_filter_scores(volume, cfg) > 0.5).astype(np.int64)


def z_translate(volume: np.ndarray, shift: int) -> np.ndarray:
    """Shift content along the slice axis; vacated slices take the volume minimum."""
    v = np.asarray(volume)
    S = v.shape[0]
    shift = int(shift)
    if abs(shift) >= S:
        raise ValidationError(f"z_translate: |shift|={abs(shift)} must be < {S} slices")
    out = np.full_like(v, v.min())
    if shift >= 0:
        out[shift:] = v[: S - shift]
    else:
        out[:shift] = v[-shift:]
    return out


def add_noise(volume: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Additive i.i.d. Gaussian noise, re-clipped to [0, 1]."""
    if sigma < 0:
        raise ValidationError(f"add_noise: sigma must be >= 0, got {sigma}")
    v = np.asarray(volume)
    if sigma == 0:
        return v.copy()
    noise = np.random.default_rng(seed).standard_normal(v.shape)
    return np.clip(v + sigma * noise, 0.0, 1.0)


def write_volume(path: str | Path, volume: np.ndarray) -> None:
    v = np.asarray(volume)
    if v.ndim != 3:
        raise DimensionError(f"write_volume: expected a 3-d volume, got {v.shape}")
    header = MAGIC + np.array(v.shape, dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(v, dtype="<f4").tobytes())


def read_volume(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValidationError(f"{path}: not a volume file")
    shape = tuple(int(x) for x in np.frombuffer(raw[4:16], dtype="<u4"))
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != np.prod(shape):
        raise DimensionError(f"{path}: header extents {shape} do not match payload of {data.size} values")
    return data.reshape(shape).astype(np.float64)


def save_dataset(ds: Dataset, out_dir: str | Path, cfg: SynthConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for vol, lab, idx in zip(ds.volumes, ds.labels, ds.indices):
        name = f"vol_{int(idx):06d}.bin"
        write_volume(out / name, vol)
        entries.append({"file": name, "index": int(idx), "seed": int(ds.seed), "labels": [int(x) for x in lab]})
    doc = {"config": cfg.to_dict(), "count": len(entries), "volumes": entries}
    (out / "index.json").write_text(json.dumps(doc, indent=1) + "\n")


def load_dataset(data_dir: str | Path) -> Dataset:
    d = Path(data_dir)
    doc = json.loads((d / "index.json").read_text())
    entries = doc["volumes"]
    cfg = doc["config"]
    vols = np.zeros((len(entries), cfg["n_slices"], cfg["height"], cfg["width"]))
    for i, e in enumerate(entries):
        vols[i] = read_volume(d / e["file"])
    labels = np.array([e["labels"] for e in entries], dtype=np.int64).reshape(len(entries), len(cfg["labels"]))
    return Dataset(vols, labels, np.array([e["index"] for e in entries], dtype=np.int64), cfg["seed"])
