import json
from pathlib import Path

import numpy as np
import pytest

from sipgs.dataset import (DataError, DatasetManifest, SensorLog, SynthConfig, green_mass, growth_rate,
                           ingest, load_frame, make_batches, read_sensor_csv, render_plant, save_frame,
                           simulate_growth, synth_generate, write_sensor_csv)
from sipgs.tensor import ContractError

HEADER = "timestamp,ambient_temperature,ambient_humidity,reservoir_level,reservoir_temperature,ph,ec\n"


def _write_csv(path: Path, times, extra_header="", extra_value=""):
    lines = [HEADER.rstrip("\n") + extra_header + "\n"]
    for i, t in enumerate(times):
        lines.append(f"{t},{20 + i},{50 + i},0.5,{18 + i},6.0,1.5{extra_value}\n")
    path.write_text("".join(lines))
    return path


def _write_images(folder: Path, times, size=16):
    folder.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    for t in times:
        save_frame(folder / f"{t}.png", rng.uniform(size=(size, size, 3)))
    return folder


# ------------------------------------------------------------------- CSV


def test_csv_round_trip(tmp_path):
    log = SensorLog(np.array([0.0, 600.0]), np.arange(12.0).reshape(2, 6) + 0.25)
    write_sensor_csv(tmp_path / "s.csv", log)
    back = read_sensor_csv(tmp_path / "s.csv")
    assert np.array_equal(back.timestamps, log.timestamps) and np.array_equal(back.values, log.values)
    assert (tmp_path / "s.csv").read_text().startswith(HEADER)


def test_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="empty"):
        read_sensor_csv(empty)
    header_only = tmp_path / "h.csv"
    header_only.write_text(HEADER)
    with pytest.raises(DataError, match="no data rows"):
        read_sensor_csv(header_only)
    bad = tmp_path / "bad.csv"
    bad.write_text(HEADER + "0,1,2,3,4,5,6\n600,1,2,x,4,5,6\n")
    with pytest.raises(DataError, match=":3:"):
        read_sensor_csv(bad)
    missing = tmp_path / "m.csv"
    missing.write_text("timestamp,ph\n0,6\n")
    with pytest.raises(DataError, match="missing column"):
        read_sensor_csv(missing)
    order = tmp_path / "o.csv"
    order.write_text(HEADER + "600,1,2,3,4,5,6\n0,1,2,3,4,5,6\n")
    with pytest.raises(DataError, match="not after"):
        read_sensor_csv(order)


def test_extra_columns_ignored(tmp_path):
    p = _write_csv(tmp_path / "s.csv", [0, 600], ",light_on", ",1")
    assert read_sensor_csv(p).values.shape == (2, 6)


# ---------------------------------------------------------------- ingest


def test_nearest_row_matching_example(tmp_path):
    csv_path = _write_csv(tmp_path / "s.csv", [0, 600, 1200])
    imgs = _write_images(tmp_path / "images", [590, 1210])
    m = ingest(csv_path, imgs, root=tmp_path)
    assert [p["sensor_row"] for p in m.pairs] == [1, 2]  # rows 2 and 3, counted from 1
    assert m.pairs[1]["delta_t"] == 620.0
    assert m.pairs[0]["elapsed_time"] == 0.0 and m.pairs[1]["elapsed_time"] == 620.0


def test_tie_goes_to_earlier_row(tmp_path):
    csv_path = _write_csv(tmp_path / "s.csv", [0, 600])
    imgs = _write_images(tmp_path / "images", [300, 900])
    m = ingest(csv_path, imgs, root=tmp_path)
    assert m.pairs[0]["sensor_row"] == 0


def test_far_image_is_excluded_with_warning(tmp_path):
    csv_path = _write_csv(tmp_path / "s.csv", [0, 600, 1200])
    imgs = _write_images(tmp_path / "images", [0, 600, 1200, 9000])
    with pytest.warns(UserWarning, match="9000.png"):
        m = ingest(csv_path, imgs, root=tmp_path)
    assert m.N == 3 and m.excluded == 1 and m.excluded_images == ["9000.png"]


def test_condition_only_rows_stay_in_sequence(tmp_path):
    csv_path = _write_csv(tmp_path / "s.csv", [0, 600, 1200, 1800, 2400])
    imgs = _write_images(tmp_path / "images", [600, 1800, 2400])
    m = ingest(csv_path, imgs, root=tmp_path)
    rows = m.cycles[0]["rows"]
    # row at t=0 precedes the first image and is dropped; 1200 stays as condition-only
    assert [r[0] for r in rows] == [600, 1200, 1800, 2400]
    assert [r[-1] for r in rows] == [0, -1, 1, 2]
    assert [r[2] for r in rows] == [0, 600, 600, 600]
    assert m.dropped_rows == 1
    assert [p["seq_range"] for p in m.pairs] == [[0, 1], [0, 3], [0, 4]]


def test_ingest_is_deterministic(tmp_path):
    csv_path = _write_csv(tmp_path / "s.csv", list(range(0, 6000, 600)))
    imgs = _write_images(tmp_path / "images", list(range(10, 6000, 600)))
    a = ingest(csv_path, imgs, root=tmp_path).to_json()
    b = ingest(csv_path, imgs, root=tmp_path).to_json()
    assert a == b
    assert json.loads(a) == json.loads(json.dumps(json.loads(a), sort_keys=True))


def test_cycles_and_splits(tmp_path):
    times = list(range(0, 12000, 600))
    csv_path = _write_csv(tmp_path / "s.csv", times)
    imgs = _write_images(tmp_path / "images", times)
    (tmp_path / "cycles.csv").write_text("start\n0\n6000\n")
    m = ingest(csv_path, imgs, tmp_path / "cycles.csv", root=tmp_path, test_fraction=0.2)
    assert len(m.cycles) == 2
    assert m.pairs[10]["elapsed_time"] == 0.0 and m.pairs[10]["delta_t"] == 0.0
    all_idx = sorted(m.splits["train"] + m.splits["val"] + m.splits["test"])
    assert all_idx == list(range(m.N))
    assert not set(m.splits["train"]) & set(m.splits["val"])
    # per cycle of 10: 2 test (last), 2 val (before them), 6 train
    assert m.splits["test"] == [8, 9, 18, 19] and m.splits["val"] == [6, 7, 16, 17]


def test_normalisation_uses_training_rows_only(tmp_path):
    times = list(range(0, 6000, 600))
    csv_path = _write_csv(tmp_path / "s.csv", times)
    imgs = _write_images(tmp_path / "images", times)
    m = ingest(csv_path, imgs, root=tmp_path)
    n_train = len(m.splits["train"])
    temps = 20 + np.arange(n_train)
    assert m.normalization["mean"][0] == pytest.approx(temps.mean())


# ------------------------------------------------------------ synthetic


def test_synth_same_seed_bit_identical(tmp_path):
    cfg = SynthConfig(n_cycles=2, frames_per_cycle=5, canvas=32, seed=4)
    synth_generate(cfg, tmp_path / "a")
    synth_generate(cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 10 + 3
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_config_validation():
    with pytest.raises(DataError):
        SynthConfig(frames_per_cycle=1)


def test_synth_manifest_contents(tiny_dataset_dir, tiny_dataset):
    m = DatasetManifest.load(tiny_dataset_dir / "manifest.json")
    assert m.N == 20 and m.generator["seed"] == 3
    assert all((tiny_dataset_dir / p["image"]).is_file() for p in m.pairs)
    assert tiny_dataset.frames.shape == (20, 3, 16, 16)


def test_growth_rate_monotone():
    t = np.linspace(18, 30, 50)
    assert np.all(np.diff(growth_rate(t, 60, 1.8)) > 0)
    assert np.all(np.diff(growth_rate(24, np.linspace(40, 80, 20), 1.8)) > 0)
    assert np.all(np.diff(growth_rate(24, 60, np.linspace(1, 2.5, 20))) > 0)


def _const_env(temp, n=200):
    env = np.zeros((n, 6))
    env[:] = [temp, 60.0, 0.7, temp - 2, 6.0, 1.8]
    return env


def test_plant_state_monotone_and_bounded():
    rng = np.random.default_rng(0)
    from sipgs.dataset import make_env_trajectory

    env = make_env_trajectory(rng, 300, 600.0, 26.0)
    states = simulate_growth(env, 600.0)
    stems = [s.stem_height for s in states]
    assert np.all(np.diff(stems) >= 0) and max(stems) <= 64
    counts = [s.leaf_count for s in states]
    assert np.all(np.diff(counts) >= 0)
    for a, b in zip(states, states[1:]):
        assert all(y >= x for x, y in zip(a.leaf_sizes, b.leaf_sizes))


def test_env_trajectory_in_range():
    from sipgs.dataset import make_env_trajectory

    env = make_env_trajectory(np.random.default_rng(1), 500, 600.0, 29.0)
    lo = [18, 40, 0, 15, 5.5, 1.0]
    hi = [30, 80, 1, 28, 6.5, 2.5]
    assert np.all(env >= lo) and np.all(env <= hi)


def test_hot_cycle_grows_taller():
    cold = simulate_growth(_const_env(21.0), 600.0)[-1]
    hot = simulate_growth(_const_env(26.0), 600.0)[-1]
    assert hot.stem_height > cold.stem_height
    rng = np.random.default_rng(0)
    assert green_mass(render_plant(hot, rng, noise_sigma=0)) > green_mass(render_plant(cold, rng, noise_sigma=0))


def test_png_round_trip(tmp_path):
    f = np.random.default_rng(0).uniform(size=(8, 8, 3))
    save_frame(tmp_path / "f.png", f)
    assert np.array_equal(load_frame(tmp_path / "f.png"), np.round(f * 255) / 255)


def test_green_mass_channel_layouts():
    f = np.zeros((4, 4, 3))
    f[..., 1] = 0.5
    assert green_mass(f) == 8.0 == green_mass(f.transpose(2, 0, 1))


# --------------------------------------------------------------- batches


def test_batches_partition_split(tiny_dataset):
    train = tiny_dataset.split("train")
    seen = [i for b in make_batches(tiny_dataset, "train", 3, seed=1) for i in b.indices]
    assert sorted(seen) == sorted(train) and len(seen) == len(train)


def test_batch_order_deterministic(tiny_dataset):
    order = lambda s, e: [tuple(b.indices) for b in make_batches(tiny_dataset, "train", 4, seed=s, epoch=e)]
    assert order(1, 2) == order(1, 2)
    assert order(1, 2) != order(1, 3)


def test_oversized_batch_yields_one_batch(tiny_dataset):
    batches = list(make_batches(tiny_dataset, "val", 1000, seed=0))
    assert len(batches) == 1 and len(batches[0]) == len(tiny_dataset.split("val"))


def test_empty_split_errors(tiny_dataset):
    with pytest.raises(ContractError):
        list(make_batches(tiny_dataset, "test", 4))


def test_first_frame_has_zero_previous(tiny_dataset):
    first = int(tiny_dataset.cycle_pairs(1)[0])
    b = tiny_dataset.assemble([first, first + 1])
    assert not b.prev_frames[0].any()
    assert np.array_equal(b.prev_frames[1], tiny_dataset.frames[first])


def test_prefixes_are_causal(tiny_dataset):
    for b in make_batches(tiny_dataset, "train", 5, seed=0):
        for k, seq in enumerate(b.sequences()):
            assert seq.elapsed_time[-1] <= tiny_dataset.elapsed[b.indices[k]] + 1e-9
            assert len(seq) == tiny_dataset.pair_end[b.indices[k]]
