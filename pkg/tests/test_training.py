import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfirst.aer import SensorGeometry, Sprite, make_events, synth_translate
from hfirst.config import NetworkConfig
from hfirst.dataset import SynthParams, synth_character, trajectory
from hfirst.glyphs import CHARSET
from hfirst.network import run_network
from hfirst.training import (
    Model,
    TrainingError,
    concatenate_examples,
    count_c1,
    make_s2_kernel,
    track_and_stabilize,
    track_centroids,
    train_classes,
    training_config,
)

CFG = NetworkConfig()


@pytest.fixture(scope="module")
def char_model():
    recs = [(c, [synth_character(c, 0)[0]]) for c in CHARSET]
    return train_classes(recs, CFG), dict(recs)


# -- tracking --------------------------------------------------------------


def test_alpha_one_maps_every_event_to_centre():
    rng = np.random.default_rng(0)
    ev = make_events(np.arange(200), rng.integers(0, 128, 200), rng.integers(0, 128, 200),
                     np.zeros(200))
    out = track_and_stabilize(ev, alpha=1.0)
    assert out.size == 200
    assert set(out["x"].tolist()) == {16} and set(out["y"].tolist()) == {16}


def test_static_centred_object_is_shifted_only():
    pts = [(62, 62), (66, 66), (66, 62), (62, 66), (64, 64)]
    xs, ys = zip(*(pts * 400))
    ev = make_events(np.arange(len(xs)) * 10, xs, ys, np.zeros(len(xs)))
    out = track_and_stabilize(ev, alpha=0.05)
    warm = 200
    assert out.size == ev.size
    assert np.array_equal(out["x"][warm:].astype(int), ev["x"][warm:].astype(int) - 64 + 16)
    assert np.array_equal(out["y"][warm:].astype(int), ev["y"][warm:].astype(int) - 64 + 16)


@pytest.mark.parametrize("label", ["A", "7", "Q", "M"])
def test_tracker_drift_below_two_pixels(label):
    ev, meta = synth_character(label, 0)
    cents = track_centroids(ev, 0.05)
    gx, gy = trajectory(meta, ev["t"])
    err = cents - np.column_stack([gx, gy])
    # centroid offset from the true centre, averaged over tenths of the recording
    n = ev.size // 10
    means = np.array([err[i:i + n].mean(axis=0) for i in range(n // 2, ev.size - n + 1, n)])
    assert np.ptp(means, axis=0).max() < 2.0


def test_stabilisation_keeps_timestamps_and_window():
    ev, _ = synth_character("K", 1)
    out = track_and_stabilize(ev)
    assert out["x"].max() < 32 and out["y"].max() < 32
    assert np.isin(out["t"], ev["t"]).all()
    assert np.all(np.diff(out["t"].astype(np.int64)) >= 0)


def test_empty_stream_rejected():
    with pytest.raises(TrainingError):
        track_and_stabilize(make_events())
    with pytest.raises(ValueError):
        track_centroids(make_events([0], [0], [0], [0]), alpha=0)


# -- counting --------------------------------------------------------------


def test_count_empty_is_zero_grid():
    grid = count_c1(make_events(), CFG)
    assert grid.shape == (8, 8, 12) and not grid.any()


def test_count_shape_for_bypass_modes():
    ev = make_events([0, 5], [3, 30], [4, 31], [0, 1])
    assert count_c1(ev, NetworkConfig(bypass_s1=True)).shape == (8, 8, 1)
    grid = count_c1(ev, NetworkConfig(bypass_s1_c1=True))
    assert grid.shape == (32, 32, 1) and grid[3, 4, 0] == 1 and grid[30, 31, 0] == 1


def test_count_indexes_x_then_y():
    ev, _ = synth_character("L", 0)
    view = track_and_stabilize(ev)
    grid = count_c1(view, CFG)
    c1 = run_network(view, training_config(CFG), None, record=("C1",)).layer("C1")
    for x, y, ch in zip(c1["x"][:50], c1["y"][:50], c1["channel"][:50]):
        assert grid[x, y, ch] >= 1
    assert grid.sum() == c1.size


@pytest.mark.xfail(strict=True, reason="swept edges favour the diagonal channels at default weights")
def test_vertical_bar_sweep_concentrates_in_its_channel():
    bar = Sprite(np.pad(np.ones((12, 2)), 2) * 0.8 + 0.2)
    ev = synth_translate(bar, (1.0, 0.0), 100, 0.3, SensorGeometry(), seed=1)
    per_channel = count_c1(track_and_stabilize(ev), CFG).sum(axis=(0, 1))
    assert int(np.argmax(per_channel)) == 0


# -- kernels ---------------------------------------------------------------


def test_single_count_kernel():
    c = np.zeros((8, 8, 12), int)
    c[2, 5, 7] = 13
    k = make_s2_kernel(c, "x").weights
    assert k[2, 5, 7] == 100 and (np.delete(k.ravel(), np.ravel_multi_index((2, 5, 7), k.shape)) == -1).all()


def test_uniform_counts_kernel():
    assert set(make_s2_kernel(np.ones((8, 8, 12)), "u").weights.ravel().tolist()) == {4}


def test_zero_counts_name_the_class():
    with pytest.raises(TrainingError, match="'Z'"):
        make_s2_kernel(np.zeros((8, 8, 12)), "Z")


def test_small_counts_round_to_inhibitory():
    c = np.zeros((8, 8, 12))
    c[0, 0, 0], c[1, 1, 1] = 1000, 1  # second weight rounds to 0
    k = make_s2_kernel(c, "r").weights
    assert k[0, 0, 0] == 100 and k[1, 1, 1] == -1


@given(st.lists(st.integers(0, 30), min_size=768, max_size=768), st.integers(2, 50))
def test_kernel_scale_invariance(counts, factor):
    c = np.array(counts).reshape(8, 8, 12)
    if not c.any():
        return
    a = make_s2_kernel(c, "a").weights
    b = make_s2_kernel(c * factor, "a").weights
    assert np.abs(a - b).max() <= 1
    assert not (a == 0).any()
    pos = c * 100.0 / np.linalg.norm(c)
    assert abs(np.linalg.norm(pos) - 100) < 1e-9


def test_character_kernels_invariants(char_model):
    model, _ = char_model
    k = model.kernels
    assert k.shape == (36, 8, 8, 12)
    assert ((k >= 1) | (k == -1)).all()
    for kern in k:
        trained = kern[kern >= 1].astype(float)
        assert abs(np.linalg.norm(trained) - 100) <= 2 + 0.5 * np.sqrt(trained.size)
    # template weights stay in the tens of mV
    assert 10 <= k.max() < 100


def test_one_class_composition():
    ev, _ = synth_character("3", 0)
    model = train_classes({"3": [ev]}, CFG)
    want = make_s2_kernel(count_c1(track_and_stabilize(ev), CFG), "3").weights
    assert model.labels == ["3"] and np.array_equal(model.kernels[0], want)
    assert model.config_digest == CFG.digest()


def test_duplicate_labels_rejected():
    ev, _ = synth_character("3", 0)
    with pytest.raises(TrainingError):
        train_classes([("3", [ev]), ("3", [ev])], CFG)
    with pytest.raises(TrainingError):
        train_classes([("3", [])], CFG)


def test_concatenation_gap():
    a = make_events([10, 2000], [1, 1], [1, 1], [0, 0])
    b = make_events([500, 600], [2, 2], [2, 2], [0, 0])
    out = concatenate_examples([a, b], gap_ms=100)
    assert out["t"].tolist() == [10, 2000, 102_000, 102_100]


def test_model_text_roundtrip(char_model, tmp_path):
    model, _ = char_model
    text = model.to_text()
    back = Model.from_text(text)
    assert back.labels == model.labels and np.array_equal(back.kernels, model.kernels)
    assert back.to_text() == text
    # 768 integers per class, one line per (x, y) tap
    assert len(text.splitlines()) == 5 + 36 * (1 + 64)
    path = tmp_path / "m.txt"
    model.save(path)
    assert Model.load(path).to_text() == text


@pytest.mark.parametrize("mangle", [
    lambda t: "garbage\n" + t,
    lambda t: t.replace("kernel_shape=8x8x12", "kernel_shape=8x8"),
    lambda t: "\n".join(t.splitlines()[:40]),
    lambda t: t.replace("label=1\n", "nolabel\n", 1),
])
def test_malformed_model_rejected(char_model, mangle):
    with pytest.raises(TrainingError):
        Model.from_text(mangle(char_model[0].to_text()))


@pytest.mark.xfail(strict=True, reason="some glyph views are won by another template first")
def test_own_training_view_spikes_first(char_model):
    model, recs = char_model
    cfg = training_config(CFG)
    for i, label in enumerate(CHARSET):
        s2 = run_network(track_and_stabilize(recs[label][0]), cfg, model, record=("S2",)).spikes
        assert s2.size and s2["channel"][0] == i, label


def test_own_training_view_mostly_spikes_first(char_model):
    model, recs = char_model
    cfg = training_config(CFG)
    first = []
    for label in CHARSET:
        s2 = run_network(track_and_stabilize(recs[label][0]), cfg, model, record=("S2",)).spikes
        first.append(model.labels[s2["channel"][0]] if s2.size else None)
    hits = sum(f == lab for f, lab in zip(first, CHARSET))
    assert hits > 36 // 2
