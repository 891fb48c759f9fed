"""Synthetic LIBS-like spectra, per-segment normalization, splits and file I/O.

A spectrum is a sum of Gaussian emission lines on a flat per-segment
baseline. Line heights are quadratic functions of the composition ``x`` and
are jittered shot to shot by lognormal multipliers driven by a few shared
shot factors (plasma conditions change several lines together). Each
segment, standing in for one spectrometer, is normalized to unit sum.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, InputError

SPLITS = ("unassigned", "train", "val", "test_interp", "test_extrap")


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    wl_min: float
    wl_max: float

    @property
    def size(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Peak:
    """Gaussian line: ``amplitude(x) = c0 + c1 x + c2 x^2`` at pixel ``center``."""

    center: float
    width: float
    coeffs: tuple
    loadings: tuple = ()

    def amplitude(self, x):
        c0, c1, c2 = self.coeffs
        return c0 + c1 * x + c2 * x * x


@dataclass(frozen=True)
class SyntheticSpec:
    P: int
    segments: tuple
    peaks: tuple
    noise_scale: float = 0.05
    replicates_per_material: int = 5
    baseline: float = 0.02
    n_shot_factors: int = 2

    def validate(self):
        check_layout(self.segments, self.P)
        if self.replicates_per_material < 1:
            raise InputError("replicates_per_material must be >= 1")
        if self.noise_scale < 0 or self.baseline < 0:
            raise InputError("noise_scale and baseline must be non-negative")
        for i, p in enumerate(self.peaks):
            if not p.width > 0:
                raise InputError(f"peak {i} has non-positive width")
            if not any(s.start <= p.center < s.end for s in self.segments):
                raise InputError(f"peak {i} center {p.center} lies outside every segment")
            if len(p.coeffs) != 3:
                raise InputError(f"peak {i} needs three amplitude coefficients")
            if p.loadings and len(p.loadings) != self.n_shot_factors:
                raise InputError(f"peak {i} has {len(p.loadings)} loadings, expected {self.n_shot_factors}")


@dataclass(frozen=True)
class Spectrum:
    intensities: np.ndarray
    segments: tuple


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    material_id: np.ndarray
    split: np.ndarray
    segments: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.Y = np.asarray(self.Y, dtype=float)
        self.material_id = np.asarray(self.material_id, dtype=str)
        self.split = np.asarray(self.split, dtype=str)
        n = self.X.shape[0]
        if self.Y.ndim != 2 or self.Y.shape[0] != n or self.material_id.shape != (n,) or self.split.shape != (n,):
            raise InputError("X, Y, material_id and split must have the same number of rows")
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise InputError(f"unknown split labels: {sorted(bad)}")
        self.segments = tuple(self.segments)

    def __len__(self):
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.Y.shape[1]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    def subset(self, split: str) -> "Dataset":
        keep = self.split == split
        return Dataset(self.X[keep], self.Y[keep], self.material_id[keep], self.split[keep], self.segments)

    def counts(self) -> dict:
        """Spectra and distinct materials per split label."""
        out = {}
        for name in SPLITS:
            keep = self.split == name
            if keep.any():
                out[name] = (int(keep.sum()), len(set(self.material_id[keep].tolist())))
        return out


def check_layout(segments, P: int):
    """Segments must tile ``[0, P)`` in order without gaps or overlap."""
    if not segments:
        raise InputError("segment layout is empty")
    pos = 0
    for i, s in enumerate(segments):
        if s.start != pos or s.end <= s.start:
            raise InputError(f"segment {i} ({s.start}, {s.end}) does not continue the partition at {pos}")
        pos = s.end
    if pos != P:
        raise InputError(f"segments cover [0, {pos}) but P = {P}")


def layout_for_ranges(P: int, ranges) -> tuple:
    """Split ``P`` pixels across wavelength ranges in proportion to their span."""
    spans = np.array([hi - lo for lo, hi in ranges], dtype=float)
    bounds = np.round(np.cumsum(spans) / spans.sum() * P).astype(int)
    starts = np.concatenate([[0], bounds[:-1]])
    return tuple(Segment(int(a), int(b), float(lo), float(hi)) for a, b, (lo, hi) in zip(starts, bounds, ranges))


# UV, VIO and VNIR spectrometer ranges in nm.
SPECTROMETER_RANGES = ((246.0, 338.0), (382.0, 473.0), (492.0, 849.0))

# (segment, relative position within segment, width in pixels, amplitude coeffs,
# shot-factor loadings). Every amplitude stays within [0.3, 1.5] on [0, 1]; several
# are convex so the response steepens beyond the training range.
_DEFAULT_PEAKS = (
    (0, 0.18, 1.5, (0.3, 0.2, 1.0), (1.0, 0.3)),
    (0, 0.41, 2.0, (1.0, -0.6, -0.1), (-0.8, 0.5)),
    (0, 0.62, 1.2, (0.4, -0.4, 1.2), (0.6, -0.9)),
    (0, 0.85, 2.5, (0.8, 0.5, -0.9), (-0.4, -0.6)),
    (1, 0.20, 1.8, (0.9, -1.6, 1.5), (0.9, 0.8)),
    (1, 0.45, 2.2, (0.3, 1.5, -0.6), (-1.0, 0.2)),
    (1, 0.77, 1.5, (1.2, -1.0, 0.1), (0.3, -1.0)),
    (2, 0.08, 3.0, (0.5, -0.5, 1.3), (0.7, 0.6)),
    (2, 0.26, 2.0, (1.0, -0.3, -0.4), (-0.6, -0.4)),
    (2, 0.46, 4.0, (0.4, 0.0, 1.0), (0.2, 1.0)),
    (2, 0.67, 2.5, (0.9, -0.8, 0.3), (-0.9, -0.2)),
    (2, 0.88, 3.0, (0.5, 0.8, -0.9), (0.5, -0.7)),
)


def default_synthetic_spec(P: int = 256, noise_scale: float = 0.05, replicates_per_material: int = 5,
                           baseline: float = 0.02) -> SyntheticSpec:
    """Three-segment, twelve-line layout with desk-scale defaults."""
    segments = layout_for_ranges(P, SPECTROMETER_RANGES)
    peaks = []
    for seg_i, rel, width, coeffs, loadings in _DEFAULT_PEAKS:
        seg = segments[seg_i]
        center = seg.start + rel * (seg.size - 1)
        peaks.append(Peak(float(center), width, coeffs, loadings))
    spec = SyntheticSpec(P, segments, tuple(peaks), noise_scale, replicates_per_material, baseline, 2)
    spec.validate()
    return spec


def normalize_segments(y, layout) -> Spectrum:
    """Divide each segment of ``y`` by its own sum."""
    y = np.asarray(y, dtype=float)
    check_layout(layout, y.shape[-1])
    out = np.array(y, dtype=float, copy=True)
    for i, s in enumerate(layout):
        total = out[..., s.start:s.end].sum(axis=-1, keepdims=True)
        if np.any(total <= 0):
            raise InputError(f"segment {i} [{s.start}, {s.end}) has non-positive sum")
        out[..., s.start:s.end] /= total
    return Spectrum(out, tuple(layout))


def line_profiles(spec: SyntheticSpec) -> np.ndarray:
    """Unit-height Gaussian line shapes, shape (n_peaks, P)."""
    pix = np.arange(spec.P, dtype=float)
    return np.stack([np.exp(-0.5 * ((pix - p.center) / p.width) ** 2) for p in spec.peaks]) \
        if spec.peaks else np.zeros((0, spec.P))


def raw_spectrum(spec: SyntheticSpec, x: float, shot_log_multipliers=None) -> np.ndarray:
    """Un-normalized spectrum at composition ``x``."""
    amps = np.array([p.amplitude(x) for p in spec.peaks])
    if shot_log_multipliers is not None:
        amps = amps * np.exp(shot_log_multipliers)
    return np.maximum(amps @ line_profiles(spec) + spec.baseline, 0.0)


def mean_spectrum(spec: SyntheticSpec, x: float, normalize: bool = True) -> np.ndarray:
    """Noise-free spectrum at composition ``x``."""
    raw = raw_spectrum(spec, x)
    return normalize_segments(raw, spec.segments).intensities if normalize else raw


def generate_synthetic(spec: SyntheticSpec, n_materials: int, rng_seed=None) -> Dataset:
    """Draw ``n_materials`` compositions uniformly on [0, 1] and their replicate spectra.

    All rows are labelled ``"unassigned"``; see :func:`split_dataset`.
    """
    spec.validate()
    if n_materials < 4:
        raise InputError("n_materials must be at least 4")
    rng = np.random.default_rng(rng_seed)
    xs = rng.uniform(0.0, 1.0, size=n_materials)
    profiles, loadings = line_profiles(spec), _loading_matrix(spec)

    R = spec.replicates_per_material
    X = np.repeat(xs, R)[:, None]
    mids = np.repeat([f"M{i:04d}" for i in range(n_materials)], R)
    Y = np.empty((n_materials * R, spec.P))
    for m, x in enumerate(xs):
        Y[m * R:(m + 1) * R] = _raw_replicates(spec, x, R, rng, profiles, loadings)
    Y = normalize_segments(Y, spec.segments).intensities
    return Dataset(X, Y, mids, np.full(len(mids), "unassigned"), spec.segments)


def _loading_matrix(spec: SyntheticSpec) -> np.ndarray:
    L = np.array([p.loadings or (0.0,) * spec.n_shot_factors for p in spec.peaks], dtype=float)
    return L.reshape(len(spec.peaks), spec.n_shot_factors)


def _raw_replicates(spec, x, R, rng, profiles, loadings):
    amps = np.array([p.amplitude(x) for p in spec.peaks])
    factors = rng.standard_normal((R, spec.n_shot_factors))
    log_mult = spec.noise_scale * factors @ loadings.T
    return np.maximum((amps * np.exp(log_mult)) @ profiles + spec.baseline, 0.0)


def simulate_spectra(spec: SyntheticSpec, xs, rng_seed=None) -> np.ndarray:
    """One normalized noisy spectrum per composition in ``xs``."""
    spec.validate()
    rng = np.random.default_rng(rng_seed)
    profiles, loadings = line_profiles(spec), _loading_matrix(spec)
    xs = np.asarray(xs, dtype=float).reshape(-1)
    Y = np.vstack([_raw_replicates(spec, x, 1, rng, profiles, loadings) for x in xs])
    return normalize_segments(Y, spec.segments).intensities


def _material_table(ds: Dataset):
    ids, first = np.unique(ds.material_id, return_index=True)
    order = np.argsort(first)
    ids, first = ids[order], first[order]
    return ids, ds.X[first, 0]


def split_dataset(ds: Dataset, fractions=(0.75, 0.1, 0.15), extrap_train_cutoff: float = 0.8,
                  extrap_test_cutoff: float = 0.9, rng_seed=None) -> Dataset:
    """Assign material-level split labels.

    ``fractions`` gives the (train, val, test_interp) shares of the materials
    below ``extrap_train_cutoff``. Materials above ``extrap_test_cutoff`` go
    to ``test_extrap``; those in between are never trained on and go to val
    (or to test_interp when the val share is zero). Cutoffs apply to the
    first input column.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise InputError(f"fractions must be three non-negative shares summing to 1, got {list(fractions)}")
    if extrap_train_cutoff > extrap_test_cutoff:
        raise InputError("extrap_train_cutoff must not exceed extrap_test_cutoff")

    rng = np.random.default_rng(rng_seed)
    ids, mx = _material_table(ds)
    labels = np.empty(ids.size, dtype=object)

    labels[mx > extrap_test_cutoff] = "test_extrap"
    gap = np.flatnonzero((mx >= extrap_train_cutoff) & (mx <= extrap_test_cutoff))
    free = np.flatnonzero(mx < extrap_train_cutoff)

    free = free[rng.permutation(free.size)]
    n_train = int(round(fr[0] * free.size))
    n_val = int(round(fr[1] * free.size))
    n_val = min(n_val, free.size - n_train)
    labels[free[:n_train]] = "train"
    labels[free[n_train:n_train + n_val]] = "val"
    labels[free[n_train + n_val:]] = "test_interp"

    # between the cutoffs: validation when it has a share, keeping test_interp
    # inside the training span
    labels[gap] = "val" if fr[1] > 0 else "test_interp"

    lookup = dict(zip(ids.tolist(), labels.tolist()))
    split = np.array([lookup[m] for m in ds.material_id.tolist()])
    return replace(ds, split=split)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_dataset(ds: Dataset, path):
    """Write ``path`` (CSV) and ``path + '.json'`` (segment layout)."""
    path = Path(path)
    header = ["material_id"] + [f"x_{d}" for d in range(ds.D)] + ["split"] + [f"y_{p}" for p in range(ds.P)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(ds)):
            writer.writerow([ds.material_id[i]] + [_fmt(v) for v in ds.X[i]] + [ds.split[i]]
                            + [_fmt(v) for v in ds.Y[i]])
    layout = {
        "P": ds.P,
        "segments": [
            {"start": s.start, "end": s.end, "wl_min": s.wl_min, "wl_max": s.wl_max} for s in ds.segments
        ],
    }
    _sidecar(path).write_text(json.dumps(layout, indent=2) + "\n")


def read_layout(path) -> tuple:
    side = _sidecar(path)
    if not side.exists():
        raise DatasetFormatError("missing segment-layout sidecar " + str(side), path)
    try:
        meta = json.loads(side.read_text())
        return tuple(Segment(int(s["start"]), int(s["end"]), float(s["wl_min"]), float(s["wl_max"]))
                     for s in meta["segments"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"malformed sidecar: {exc}", side) from None


def read_dataset(path) -> Dataset:
    """Read a dataset written by :func:`write_dataset`."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("dataset file not found", path)
    segments = read_layout(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file", path, 1) from None
        if not header or header[0] != "material_id" or "split" not in header:
            raise DatasetFormatError("header must start with material_id and contain split", path, 1)
        s_col = header.index("split")
        D = s_col - 1
        P = len(header) - s_col - 1
        if D < 1 or P < 1:
            raise DatasetFormatError("header needs at least one x_ and one y_ column", path, 1)
        ids, X, split, Y = [], [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"expected {len(header)} columns, found {len(row)}", path, line)
            try:
                X.append([float(v) for v in row[1:s_col]])
                Y.append([float(v) for v in row[s_col + 1:]])
            except ValueError as exc:
                raise DatasetFormatError(f"bad number: {exc}", path, line) from None
            if row[s_col] not in SPLITS:
                raise DatasetFormatError(f"unknown split label {row[s_col]!r}", path, line)
            ids.append(row[0])
            split.append(row[s_col])
    if not ids:
        raise DatasetFormatError("no data rows", path)
    check_layout(segments, P)
    return Dataset(np.array(X), np.array(Y), np.array(ids), np.array(split), segments)
