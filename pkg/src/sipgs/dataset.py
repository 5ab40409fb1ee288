"""Sensor/image ingestion, synthetic plant-growth data, and batch assembly.

On-disk layout of a dataset directory::

    sensors.csv     timestamp,ambient_temperature,ambient_humidity,reservoir_level,
                    reservoir_temperature,ph,ec   (extra columns are ignored)
    cycles.csv      optional; one ``start`` column of growth-cycle start timestamps
    images/         <unix_ts>.png, 8-bit RGB
    manifest.json   written by :func:`ingest` / :func:`synth_generate`

Each growth cycle becomes one condition sequence. Every image is matched to
the sensor row nearest in time (ties go to the earlier row) and contributes
a sequence entry stamped with the image time; sensor rows not matched to
any image stay in the sequence as condition-only entries. Elapsed time is
measured from the first image of the cycle, so rows before it are dropped.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .seq_encoder import N_INPUTS, SENSOR_FIELDS, EnvSequence, NormStats, normalize
from .tensor import ContractError

log = logging.getLogger(__name__)

CSV_HEADER = ("timestamp",) + SENSOR_FIELDS
MATCH_WINDOW_S = 3600.0
VAL_FRACTION = 0.15
ENTRY_COLUMNS = ("time", "elapsed_time", "delta_t") + SENSOR_FIELDS + ("image",)


class DataError(ValueError):
    pass


# ------------------------------------------------------------------ sensor log


@dataclass
class SensorLog:
    timestamps: np.ndarray
    values: np.ndarray  # (n, 6) in SENSOR_FIELDS order

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(SENSOR_FIELDS))
        if len(self.timestamps) != len(self.values):
            raise DataError("sensor log timestamps and values differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("sensor log timestamps must be strictly increasing")
        if not np.isfinite(self.values).all() or not np.isfinite(self.timestamps).all():
            raise DataError("sensor log contains non-finite values")

    def __len__(self) -> int:
        return len(self.timestamps)


def read_sensor_csv(path: str | Path) -> SensorLog:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty CSV (a header row is required)")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise DataError(f"{path}: header is missing column(s) {missing}")
        cols = [header.index(c) for c in CSV_HEADER]
        ts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                nums = [float(row[i]) for i in cols]
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
            if not all(math.isfinite(v) for v in nums):
                raise DataError(f"{path}:{lineno}: non-finite value in row {row!r}")
            if ts and nums[0] <= ts[-1]:
                raise DataError(f"{path}:{lineno}: timestamp {nums[0]} is not after {ts[-1]}")
            ts.append(nums[0])
            vals.append(nums[1:])
    if not ts:
        raise DataError(f"{path}: CSV contains no data rows")
    return SensorLog(np.array(ts), np.array(vals))


def write_sensor_csv(path: str | Path, log_: SensorLog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, row in zip(log_.timestamps, log_.values):
            w.writerow([_num(t)] + [repr(float(v)) for v in row])


def _num(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def read_cycles_csv(path: str | Path) -> list[float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "start":
            raise DataError(f"{path}: expected a 'start' header")
        starts = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                starts.append(float(row[0]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed cycle start {row!r}") from None
    return sorted(starts)


# -------------------------------------------------------------------- frames


def load_frame(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_frame(path: str | Path, frame: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def quantize(frame: np.ndarray) -> np.ndarray:
    """Value a frame would have after a PNG round trip."""
    return np.clip(np.round(frame * 255.0), 0, 255) / 255.0


# ------------------------------------------------------------------- manifest


@dataclass
class DatasetManifest:
    N: int
    pairs: list[dict]
    cycles: list[dict]
    splits: dict[str, list[int]]
    normalization: dict
    excluded: int = 0
    excluded_images: list[str] = field(default_factory=list)
    dropped_rows: int = 0
    generator: dict | None = None
    format: str = "sipgs-dataset"
    version: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def stats(self) -> NormStats:
        return NormStats.from_dict(self.normalization)


def _assign_cycles(times: np.ndarray, starts: list[float]) -> np.ndarray:
    if not starts:
        return np.zeros(len(times), dtype=np.int64)
    idx = np.searchsorted(np.asarray(starts), times, side="right") - 1
    return np.maximum(idx, 0)


def _image_timestamps(image_dir: Path) -> list[tuple[float, Path]]:
    out = []
    for p in sorted(image_dir.glob("*.png")):
        try:
            out.append((float(p.stem), p))
        except ValueError:
            warnings.warn(f"skipping image with non-timestamp name: {p.name}", stacklevel=3)
    out.sort(key=lambda tp: tp[0])
    return out


def ingest(csv_path: str | Path, image_dir: str | Path, cycles_path: str | Path | None = None,
           root: str | Path | None = None, val_fraction: float = VAL_FRACTION,
           test_fraction: float = 0.0) -> DatasetManifest:
    """Pair images with sensor rows and build per-cycle condition sequences.

    Image paths in the manifest are relative to ``root`` (default: the
    parent of ``image_dir``), which is where the manifest is meant to live.
    Within each cycle the last ``test_fraction`` of frames by time form the
    test split, the preceding ``val_fraction`` the validation split.
    """
    sensors = read_sensor_csv(csv_path)
    image_dir = Path(image_dir)
    root = Path(root) if root is not None else image_dir.parent
    starts = read_cycles_csv(cycles_path) if cycles_path else []
    images = _image_timestamps(image_dir)

    ts = sensors.timestamps
    kept: list[tuple[float, Path, int]] = []
    excluded: list[str] = []
    for t_img, path in images:
        j = int(np.searchsorted(ts, t_img))
        cands = [k for k in (j - 1, j) if 0 <= k < len(ts)]
        best = min(cands, key=lambda k: (abs(ts[k] - t_img), ts[k]))
        if abs(ts[best] - t_img) > MATCH_WINDOW_S:
            warnings.warn(f"image {path.name}: no sensor row within {MATCH_WINDOW_S:.0f} s; excluded", stacklevel=2)
            excluded.append(path.name)
            continue
        kept.append((t_img, path, best))
    if not kept:
        raise DataError("no image could be matched to a sensor row")

    img_cycle = _assign_cycles(np.array([k[0] for k in kept]), starts)
    row_cycle = _assign_cycles(ts, starts)
    matched_rows = {k[2] for k in kept}
    pairs: list[dict] = []
    cycles: list[dict] = []
    splits: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    dropped = 0
    stat_rows = []
    for c in sorted(set(img_cycle.tolist())):
        members = [kept[i] for i in np.flatnonzero(img_cycle == c)]
        origin = members[0][0]
        next_start = starts[c + 1] if starts and c + 1 < len(starts) else math.inf
        entries = []  # (time, kind, sensor row, image slot); rows sort before images at equal time
        for r in np.flatnonzero(row_cycle == c):
            if int(r) in matched_rows:
                continue
            if ts[r] < origin or ts[r] >= next_start:
                dropped += 1
                continue
            entries.append((ts[r], 0, int(r), -1))
        for slot, (t_img, _, r) in enumerate(members):
            entries.append((t_img, 1, r, slot))
        entries.sort(key=lambda e: (e[0], e[1]))

        rows, prev_t = [], None
        slot_to_entry = {}
        for e_idx, (t, _, r, slot) in enumerate(entries):
            rows.append([t, t - origin, 0.0 if prev_t is None else t - prev_t] + sensors.values[r].tolist() + [slot])
            prev_t = t
            if slot >= 0:
                slot_to_entry[slot] = e_idx
        cycles.append({"index": len(cycles), "origin": origin, "columns": list(ENTRY_COLUMNS), "rows": rows})

        n = len(members)
        n_test = int(round(test_fraction * n))
        n_val = int(round(val_fraction * n))
        n_train = n - n_val - n_test
        if n_train < 1:
            raise DataError(f"cycle {c}: too few frames ({n}) for the requested splits")
        last_train_time = members[n_train - 1][0]
        for slot, (t_img, path, r) in enumerate(members):
            pid = len(pairs)
            pairs.append({
                "image": Path(os.path.relpath(path, root)).as_posix(),
                "timestamp": t_img,
                "cycle": len(cycles) - 1,
                "sensor_row": r,
                "seq_range": [0, slot_to_entry[slot] + 1],
                "elapsed_time": t_img - origin,
                "delta_t": 0.0 if slot == 0 else t_img - members[slot - 1][0],
            })
            split = "train" if slot < n_train else ("val" if slot < n_train + n_val else "test")
            splits[split].append(pid)
        stat_rows.extend(row[3:3 + len(SENSOR_FIELDS)] for row in rows if row[0] <= last_train_time)

    stats = NormStats.fit(np.array(stat_rows))
    return DatasetManifest(
        N=len(pairs), pairs=pairs, cycles=cycles, splits=splits, normalization=stats.to_dict(),
        excluded=len(excluded), excluded_images=excluded, dropped_rows=dropped,
    )


# --------------------------------------------------------- in-memory dataset


@dataclass
class Batch:
    indices: np.ndarray
    frames: np.ndarray  # (B, 3, H, W)
    prev_frames: np.ndarray  # (B, 3, H, W); zeros at the start of a cycle
    seq_inputs: np.ndarray  # (T, S, 8) normalised, zero-padded
    t_index: np.ndarray  # (B,) last step of each item's prefix
    s_index: np.ndarray  # (B,) column of seq_inputs holding the item's cycle
    stats: NormStats | None = None

    def __len__(self) -> int:
        return len(self.indices)

    def sequences(self) -> list[EnvSequence]:
        """The normalised condition prefix of every item."""
        return [EnvSequence(self.seq_inputs[: t + 1, s], True, self.stats)
                for t, s in zip(self.t_index, self.s_index)]


class Dataset:
    """A manifest with its frames loaded and its sequences normalised."""

    def __init__(self, manifest: DatasetManifest, root: str | Path):
        self.manifest = manifest
        self.root = Path(root)
        self.stats = manifest.stats()
        self.cycles_raw: list[np.ndarray] = []
        self.cycles: list[np.ndarray] = []
        for cyc in manifest.cycles:
            rows = np.asarray(cyc["rows"], dtype=np.float64)
            raw = np.concatenate([rows[:, 3 : 3 + len(SENSOR_FIELDS)], rows[:, 1:3]], axis=1)
            self.cycles_raw.append(raw)
            self.cycles.append(normalize(EnvSequence(raw), self.stats).values)
        pairs = manifest.pairs
        self.pair_cycle = np.array([p["cycle"] for p in pairs], dtype=np.int64)
        self.pair_end = np.array([p["seq_range"][1] for p in pairs], dtype=np.int64)
        self.elapsed = np.array([p["elapsed_time"] for p in pairs])
        self.timestamps = np.array([p["timestamp"] for p in pairs])
        self.prev_index = np.full(len(pairs), -1, dtype=np.int64)
        for i in range(1, len(pairs)):
            if self.pair_cycle[i] == self.pair_cycle[i - 1]:
                self.prev_index[i] = i - 1
        self.frames = np.stack([load_frame(self.root / p["image"]).transpose(2, 0, 1) for p in pairs])

    @classmethod
    def load(cls, manifest_path: str | Path) -> "Dataset":
        manifest_path = Path(manifest_path)
        if not manifest_path.is_file():
            raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
        return cls(DatasetManifest.load(manifest_path), manifest_path.parent)

    def __len__(self) -> int:
        return len(self.manifest.pairs)

    @property
    def image_size(self) -> int:
        return self.frames.shape[-1]

    def split(self, name: str) -> list[int]:
        if name == "all":
            return list(range(len(self)))
        if name not in self.manifest.splits:
            raise ContractError(f"unknown split {name!r}")
        return list(self.manifest.splits[name])

    def sequence(self, cycle: int, end: int | None = None) -> EnvSequence:
        """Normalised condition sequence of ``cycle``, optionally cut after ``end`` entries."""
        vals = self.cycles[cycle] if end is None else self.cycles[cycle][:end]
        return EnvSequence(vals, True, self.stats)

    def cycle_pairs(self, cycle: int) -> np.ndarray:
        return np.flatnonzero(self.pair_cycle == cycle)

    def assemble(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        cyc = self.pair_cycle[idx]
        used = sorted(set(cyc.tolist()))
        col = {c: j for j, c in enumerate(used)}
        ends = self.pair_end[idx]
        T_ = int(ends.max())
        block = np.zeros((T_, len(used), N_INPUTS))
        for c in used:
            n = min(T_, len(self.cycles[c]))
            block[:n, col[c]] = self.cycles[c][:n]
        prev = np.zeros((len(idx),) + self.frames.shape[1:])
        has_prev = self.prev_index[idx] >= 0
        prev[has_prev] = self.frames[self.prev_index[idx][has_prev]]
        return Batch(idx, self.frames[idx], prev, block, ends - 1, np.array([col[c] for c in cyc]), self.stats)


def load_dataset(manifest_path: str | Path) -> Dataset:
    return Dataset.load(manifest_path)


def make_batches(dataset: Dataset, split: str, batch_size: int, seed: int | None = None, epoch: int = 0,
                 rng: np.random.Generator | None = None, shuffle: bool = True) -> Iterator[Batch]:
    """Yield batches covering ``split`` exactly once.

    The order is a permutation drawn from ``rng`` when given, otherwise from
    a generator seeded with ``(seed, epoch)``. A batch size larger than the
    split yields one smaller batch.
    """
    idx = np.asarray(dataset.split(split), dtype=np.int64)
    if len(idx) == 0:
        raise ContractError(f"split {split!r} is empty")
    if shuffle:
        gen = rng if rng is not None else np.random.default_rng([int(seed or 0), int(epoch)])
        idx = idx[gen.permutation(len(idx))]
    for a in range(0, len(idx), batch_size):
        yield dataset.assemble(idx[a : a + batch_size])


# ------------------------------------------------------------ synthetic data

# environmental envelopes
TEMP_RANGE = (18.0, 30.0)
HUMIDITY_RANGE = (40.0, 80.0)
PH_RANGE = (5.5, 6.5)
EC_RANGE = (1.0, 2.5)
RES_TEMP_RANGE = (15.0, 28.0)

# plant geometry on a 64-pixel canvas (scaled for other sizes)
SOIL_ROW = 56
STEM_START = 6.0
STEM_MAX = 48.0
NODE_SPACING = 6.0
MAX_LEAVES = 8
LEAF_MAX = 9.0
GROWTH_PX_PER_HOUR = 1.2

BACKGROUND = np.array([0.80, 0.79, 0.86])
SOIL = np.array([0.40, 0.28, 0.18])


@dataclass(frozen=True)
class SynthConfig:
    n_cycles: int = 2
    frames_per_cycle: int = 200
    interval_s: float = 600.0
    canvas: int = 64
    seed: int = 0
    start_ts: int = 1_700_000_000
    cycle_gap_s: float = 86400.0
    noise_sigma: float = 0.01
    leaf_jitter: int = 1

    def __post_init__(self):
        if self.frames_per_cycle < 2:
            raise DataError("frames_per_cycle must be at least 2")
        if self.n_cycles < 1:
            raise DataError("n_cycles must be at least 1")
        if self.interval_s <= 0:
            raise DataError("interval_s must be positive")
        if self.canvas < 16:
            raise DataError("canvas must be at least 16 pixels")


@dataclass
class SynthPlantState:
    stem_height: float
    leaf_count: int
    leaf_sizes: list[float]
    hue: float


def _ou(rng: np.random.Generator, n: int, theta: float, sigma: float) -> np.ndarray:
    out = np.zeros(n)
    for i in range(1, n):
        out[i] = out[i - 1] * (1.0 - theta) + sigma * rng.standard_normal()
    return out


def make_env_trajectory(rng: np.random.Generator, n: int, interval_s: float, base_temp: float,
                        phase: float | None = None) -> np.ndarray:
    """Smooth bounded environmental trajectory, shape ``(n, 6)`` in SENSOR_FIELDS order."""
    hours = np.arange(n) * interval_s / 3600.0
    if phase is None:
        phase = rng.uniform(0, 2 * np.pi)
    temp = base_temp + 1.0 * np.sin(2 * np.pi * hours / 24.0 + phase) + _ou(rng, n, 0.05, 0.15)
    hum = 60.0 + _ou(rng, n, 0.03, 0.8) - 1.5 * (temp - base_temp)
    level = np.empty(n)
    lvl = rng.uniform(0.85, 1.0)
    for i in range(n):
        level[i] = lvl
        lvl -= 0.0015 * interval_s / 600.0
        if lvl < 0.3:
            lvl = rng.uniform(0.9, 1.0)
    res_temp = temp - 2.0 + _ou(rng, n, 0.05, 0.05)
    ph = 6.0 + _ou(rng, n, 0.02, 0.02)
    ec = 1.8 + _ou(rng, n, 0.02, 0.02)
    env = np.stack([
        np.clip(temp, *TEMP_RANGE),
        np.clip(hum, *HUMIDITY_RANGE),
        np.clip(level, 0.0, 1.0),
        np.clip(res_temp, *RES_TEMP_RANGE),
        np.clip(ph, *PH_RANGE),
        np.clip(ec, *EC_RANGE),
    ], axis=1)
    return env


def growth_rate(temperature, humidity, ec):
    """Stem growth in pixels per hour on a 64-pixel canvas.

    Monotone increasing in each argument over its envelope; temperature
    dominates (a 5 degree rise adds about a third of the full-range rate).
    """
    ft = 0.2 + 0.8 * (np.clip(temperature, *TEMP_RANGE) - TEMP_RANGE[0]) / (TEMP_RANGE[1] - TEMP_RANGE[0])
    fh = 0.85 + 0.15 * (np.clip(humidity, *HUMIDITY_RANGE) - HUMIDITY_RANGE[0]) / (HUMIDITY_RANGE[1] - HUMIDITY_RANGE[0])
    fe = 0.85 + 0.15 * (np.clip(ec, *EC_RANGE) - EC_RANGE[0]) / (EC_RANGE[1] - EC_RANGE[0])
    return GROWTH_PX_PER_HOUR * ft * fh * fe


def simulate_growth(env: np.ndarray, interval_s: float) -> list[SynthPlantState]:
    """Integrate plant state over an environmental trajectory (deterministic)."""
    states = []
    stem = STEM_START
    for i, row in enumerate(env):
        if i > 0:
            stem = min(STEM_MAX, stem + growth_rate(row[0], row[1], row[5]) * interval_s / 3600.0)
        n_leaves = int(min(MAX_LEAVES, max(0.0, (stem - 2.0) // NODE_SPACING)))
        sizes = [min(LEAF_MAX, 1.5 + 0.4 * (stem - (2.0 + NODE_SPACING * (k + 1)))) for k in range(n_leaves)]
        health = np.clip(1.0 - abs(row[4] - 6.0) / 0.5, 0.0, 1.0)
        hue = 0.50 + 0.12 * health + 0.06 * (row[5] - EC_RANGE[0]) / (EC_RANGE[1] - EC_RANGE[0])
        states.append(SynthPlantState(float(stem), n_leaves, [float(s) for s in sizes], float(hue)))
    return states


def _paint(img: np.ndarray, alpha: np.ndarray, color: np.ndarray) -> None:
    a = alpha[..., None]
    img *= 1.0 - a
    img += a * color


def render_plant(state: SynthPlantState, rng: np.random.Generator, canvas: int = 64,
                 noise_sigma: float = 0.01, leaf_jitter: int = 1) -> np.ndarray:
    """Draw stem and alternating elliptical leaves; returns an (H, W, 3) frame in [0, 1]."""
    s = canvas / 64.0
    yy, xx = np.mgrid[0:canvas, 0:canvas] + 0.5
    img = np.empty((canvas, canvas, 3))
    img[:] = BACKGROUND * (1.0 - 0.08 * yy[..., None] / canvas)
    soil = SOIL_ROW * s
    img[yy > soil] = SOIL

    cx = canvas / 2.0
    top = soil - state.stem_height * s
    stem_alpha = np.clip(1.0 * s - np.abs(xx - cx) + 0.5, 0.0, 1.0) * np.clip(yy - top + 0.5, 0.0, 1.0)
    stem_alpha *= yy <= soil
    _paint(img, stem_alpha, np.array([0.22, state.hue - 0.12, 0.14]))

    leaf_color = np.array([0.16, state.hue, 0.13])
    for k, size in enumerate(state.leaf_sizes):
        side = -1.0 if k % 2 == 0 else 1.0
        a, b = size * s, 0.45 * size * s
        jx, jy = rng.integers(-leaf_jitter, leaf_jitter + 1, size=2) if leaf_jitter else (0, 0)
        lx = cx + side * (a + 1.0 * s) + jx
        ly = soil - (2.0 + NODE_SPACING * (k + 1)) * s - 0.3 * b + jy
        r = np.sqrt(((xx - lx) / a) ** 2 + ((yy - ly) / b) ** 2)
        alpha = np.clip((1.0 - r) * b + 0.5, 0.0, 1.0)
        _paint(img, alpha, leaf_color * (0.9 + 0.1 * (1.0 - r.clip(0, 1))[..., None]))

    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def green_mass(frame: np.ndarray) -> float:
    """Plant-mask proxy: total excess of green over the larger of red and blue."""
    f = np.asarray(frame, dtype=np.float64)
    if f.shape[0] == 3 and f.shape[-1] != 3:
        f = f.transpose(1, 2, 0)
    excess = f[..., 1] - np.maximum(f[..., 0], f[..., 2])
    return float(np.clip(excess, 0.0, None).sum())


def cycle_base_temperatures(rng: np.random.Generator, n_cycles: int) -> np.ndarray:
    """Stratified cycle mean temperatures so that cycles span the envelope."""
    lo, hi = TEMP_RANGE[0] + 1.0, TEMP_RANGE[1] - 1.0
    return lo + (np.arange(n_cycles) + rng.uniform(size=n_cycles)) / n_cycles * (hi - lo)


def synth_generate(cfg: SynthConfig, out_dir: str | Path) -> tuple[SensorLog, list[Path], DatasetManifest]:
    """Write a synthetic dataset (sensors.csv, cycles.csv, images/, manifest.json) to ``out_dir``."""
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    bases = cycle_base_temperatures(rng, cfg.n_cycles)
    cycle_len = cfg.frames_per_cycle * cfg.interval_s
    ts_all, env_all, starts, paths = [], [], [], []
    for c in range(cfg.n_cycles):
        start = cfg.start_ts + c * (cycle_len + cfg.cycle_gap_s)
        starts.append(start)
        env = make_env_trajectory(rng, cfg.frames_per_cycle, cfg.interval_s, bases[c])
        states = simulate_growth(env, cfg.interval_s)
        for i, st in enumerate(states):
            t = start + i * cfg.interval_s
            frame = render_plant(st, rng, cfg.canvas, cfg.noise_sigma, cfg.leaf_jitter)
            p = img_dir / f"{_num(t)}.png"
            save_frame(p, frame)
            paths.append(p)
            ts_all.append(t)
        env_all.append(env)
    sensors = SensorLog(np.array(ts_all, dtype=np.float64), np.concatenate(env_all))
    write_sensor_csv(out / "sensors.csv", sensors)
    with open(out / "cycles.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("start\n" + "".join(f"{_num(s)}\n" for s in starts))
    manifest = ingest(out / "sensors.csv", img_dir, out / "cycles.csv", root=out)
    manifest.generator = {**asdict(cfg), "cycle_base_temperatures": bases.tolist()}
    manifest.save(out / "manifest.json")
    return sensors, paths, manifest


def sensor_log_to_sequence(log_: SensorLog) -> EnvSequence:
    """Raw condition sequence of a sensor log, elapsed time measured from its first row."""
    t = log_.timestamps
    delta = np.concatenate([[0.0], np.diff(t)])
    return EnvSequence(np.concatenate([log_.values, (t - t[0])[:, None], delta[:, None]], axis=1))


def synthetic_sequence(env: np.ndarray, interval_s: float) -> EnvSequence:
    """Raw (unnormalised) condition sequence for a trajectory sampled every ``interval_s``."""
    n = len(env)
    elapsed = np.arange(n) * float(interval_s)
    delta = np.concatenate([[0.0], np.full(n - 1, float(interval_s))])
    return EnvSequence(np.concatenate([env, elapsed[:, None], delta[:, None]], axis=1))
