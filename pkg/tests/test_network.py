import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfirst.aer import SensorGeometry, encode_events, make_events, shift_time, sort_events
from hfirst.config import ConfigError, NetworkConfig
from hfirst.gabor import s1_kernels
from hfirst.network import (
    LAYERS,
    SPIKE_CSV_HEADER,
    ActivationReport,
    Network,
    run_network,
    run_streaming,
    spikes_to_csv,
)
from hfirst.neuron import NeuronParams

from conftest import BACKENDS, random_events
from reference import ReferenceNet

SMALL = SensorGeometry(20, 20)


def small_kernels(cfg, n, seed=0, hi=80):
    rng = np.random.default_rng(seed)
    return rng.integers(-1, hi, size=(n,) + tuple(cfg.s2_kernel_shape)).astype(np.int32)


def burst(seed, n=300, geo=SMALL, t_max=20_000):
    rng = np.random.default_rng(seed)
    return random_events(rng, n, geo.width, geo.height, t_max,
                         cluster=(geo.width // 2, geo.height // 2, 5))


def spikes_as_tuples(spikes):
    return list(zip(*(spikes[f].tolist() for f in ("t", "layer", "x", "y", "channel"))))


VARIANTS = [
    {},
    {"disable_c1_reset": True},
    {"disable_s2_reset": True},
    {"disable_c1_reset": True, "disable_s2_reset": True},
    {"reset_clears_vm": True, "enable_c2": True},
    {"polarity_policy": "on_only"},
    {"polarity_policy": "off_only", "enable_c2": True},
    {"bypass_s1": True, "enable_c2": True},
    {"bypass_s1_c1": True, "enable_c2": True},
]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: ",".join(v) or "full")
def test_engines_match_scalar_reference(backend, variant):
    cfg = NetworkConfig(geometry=SMALL, s2_threshold=100, **variant)
    k2 = small_kernels(cfg, 3, hi=60 if not cfg.bypass_s1_c1 else 12)
    ev = burst(1, n=250)
    ref_spikes, tally = ReferenceNet(cfg, s1_kernels(cfg.gabor), k2).run(ev)
    res = run_network(ev, cfg, k2, backend=backend)
    assert spikes_as_tuples(res.spikes) == ref_spikes
    assert {k: v for k, v in vars(res.report).items() if v} == dict(+tally)
    if not variant:
        assert res.report.spikes_s2 > 0


def test_backends_agree_on_character_stream():
    if len(BACKENDS) < 2:
        pytest.skip("compiled engine not built")
    from hfirst.dataset import SynthParams, synth_character
    ev, _ = synth_character("R", 0, seed=3, params=SynthParams())
    cfg = NetworkConfig(enable_c2=True)
    k2 = small_kernels(cfg, 5, seed=2, hi=30)
    a = run_network(ev, cfg, k2, backend="cython")
    b = run_network(ev, cfg, k2, backend="python")
    assert a.spikes.tobytes() == b.spikes.tobytes()
    assert a.report == b.report
    for layer in LAYERS:
        for x, y in zip(Network(cfg, k2, "cython").layer_state(layer),
                        Network(cfg, k2, "python").layer_state(layer)):
            assert np.array_equal(x, y)


@pytest.mark.parametrize("backend", BACKENDS)
def test_chunked_feed_equals_single_feed(backend):
    cfg = NetworkConfig(geometry=SMALL, s2_threshold=100)
    k2 = small_kernels(cfg, 2)
    ev = burst(4)
    whole = run_network(ev, cfg, k2, backend=backend)
    net = Network(cfg, k2, backend=backend)
    parts = [net.feed(ev[i:i + 37]) for i in range(0, ev.size, 37)]
    assert np.concatenate(parts).tobytes() == whole.spikes.tobytes()
    assert net.report() == whole.report
    # handoff through the decoder thread keeps order
    net2 = Network(cfg, k2, backend=backend)
    got = []
    report = run_streaming((ev[i:i + 50] for i in range(0, ev.size, 50)), net2, got.append)
    assert np.concatenate(got).tobytes() == whole.spikes.tobytes()
    assert report == whole.report


# -- accounting ------------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_interior_event_costs_588(backend):
    res = run_network(make_events([0], [64], [64], [1]), NetworkConfig(), backend=backend)
    assert res.report.s1_ff == 588


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("x,y,want", [(0, 0, 192), (127, 127, 192), (0, 64, 12 * 4 * 7),
                                      (2, 64, 12 * 6 * 7)])
def test_boundary_events_truncate(backend, x, y, want):
    res = run_network(make_events([0], [x], [y], [0]), NetworkConfig(), backend=backend)
    assert res.report.s1_ff == want < 588


@pytest.mark.parametrize("backend", BACKENDS)
def test_closed_forms_on_random_interior_events(backend):
    n_cls = 36
    cfg = NetworkConfig(s2_threshold=100, enable_c2=True)
    k2 = small_kernels(cfg, n_cls, seed=5, hi=40)
    rng = np.random.default_rng(7)
    n = 10_000 if backend == "cython" else 1_500
    ev = random_events(rng, n, t_max=n * 10, cluster=(64, 64, 24))
    r = run_network(ev, cfg, k2, backend=backend, record=()).report
    assert r.spikes_s1 > 0 and r.spikes_c1 > 0 and r.spikes_s2 > 0
    assert r.s1_ff == 588 * n
    assert r.c1_ff + r.c1_rst_counted == 12 * r.spikes_s1
    assert r.s2_ff == 64 * n_cls * r.spikes_c1
    assert r.s2_rst_counted == 64 * n_cls * r.spikes_s2
    assert r.s2_rst_applied == 64 * (n_cls - 1) * r.spikes_s2
    assert r.c2_ff == r.spikes_s2


@pytest.mark.parametrize("backend", BACKENDS)
def test_bypass_s1_c1_window(backend):
    cfg = NetworkConfig(bypass_s1_c1=True)
    k2 = np.full((4, 32, 32, 1), -1, np.int32)
    r = run_network(make_events([0], [60], [70], [0]), cfg, k2, backend=backend).report
    assert r.s2_ff == 1024 * 4 and r.s1_ff == 0 and r.c1_ff == 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_input(backend):
    res = run_network(make_events(), NetworkConfig(), small_kernels(NetworkConfig(), 2),
                      backend=backend)
    assert res.spikes.size == 0 and res.report == ActivationReport()


def test_bypass_flags_exclusive():
    with pytest.raises(ConfigError):
        NetworkConfig(bypass_s1=True, bypass_s1_c1=True)


# -- layer behaviour -------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_c1_refractory_single_spike(backend):
    cfg = NetworkConfig(bypass_s1=True)
    ev = make_events([0, 1000, 6000], [8, 9, 8], [8, 10, 8], [1, 1, 1])
    c1 = run_network(ev, cfg, backend=backend).layer("C1")
    assert c1["t"].tolist() == [0, 6000]


@pytest.mark.parametrize("backend", BACKENDS)
def test_c2_refractory(backend):
    cfg = NetworkConfig(bypass_s1_c1=True, enable_c2=True)
    k2 = np.full((1, 32, 32, 1), 250, np.int32)
    ev = make_events([0, 5000, 10000], [10, 100, 60], [10, 100, 60], [0, 0, 0])
    res = run_network(ev, cfg, k2, backend=backend)
    s2, c2 = res.layer("S2"), res.layer("C2")
    assert set(s2["t"].tolist()) == {0, 5000, 10000}
    assert c2["t"].tolist() == [0, 10000]
    assert res.report.c2_ff == s2.size


@pytest.mark.parametrize("backend", BACKENDS)
def test_s2_reset_spares_own_class(backend):
    cfg = NetworkConfig(bypass_s1_c1=True)
    k2 = np.full((2, 32, 32, 1), 150, np.int32)
    k2[0] = 250  # class 0 fires on the first event, class 1 needs two
    ev = make_events([0, 500], [64, 64], [64, 64], [0, 0])
    net = Network(cfg, k2, backend=backend)
    net.feed(ev[:1])
    vm, tlu, tls = net.layer_state("S2")
    # class 1 neurons in the reset window of any class-0 spike are refractory
    assert (tls[1] == 0).any() and not (tls[0] == 0).all()
    sp = net.feed(ev[1:])
    assert not (sp["channel"] == 1).any()


@pytest.mark.parametrize("backend", BACKENDS)
def test_wta_exclusive_per_unit(backend):
    cfg = NetworkConfig()
    ev = random_events(np.random.default_rng(2), 20_000 if backend == "cython" else 3000,
                       t_max=200_000, cluster=(64, 64, 10))
    c1 = run_network(ev, cfg, backend=backend, record=("C1",)).layer("C1")
    last = {}
    for t, x, y, ch in zip(c1["t"].tolist(), c1["x"].tolist(), c1["y"].tolist(),
                           c1["channel"].tolist()):
        if (x, y) in last:
            assert (t - last[(x, y)]) // 1000 >= 5
        last[(x, y)] = t


@pytest.mark.parametrize("backend", BACKENDS)
def test_no_spontaneous_activity(backend):
    cfg = NetworkConfig(geometry=SMALL, s2_threshold=100, enable_c2=True)
    ev = burst(8)
    sp = run_network(ev, cfg, small_kernels(cfg, 3), backend=backend).spikes
    times = set(ev["t"].tolist())
    assert all(t in times for t in sp["t"].tolist())


@given(st.integers(0, 10_000), st.integers(1, 10**9))
def test_uniform_shift_shifts_spikes(seed, offset):
    cfg = NetworkConfig(geometry=SMALL, s2_threshold=100)
    k2 = small_kernels(cfg, 2, seed=seed)
    ev = burst(seed, n=150)
    a = run_network(ev, cfg, k2).spikes
    b = run_network(shift_time(ev, offset), cfg, k2).spikes
    assert (b["t"] - offset).tolist() == a["t"].tolist()
    assert a[["layer", "x", "y", "channel"]].tolist() == b[["layer", "x", "y", "channel"]].tolist()


@given(st.integers(0, 10_000))
def test_order_invariance_distinct_timestamps(seed):
    rng = np.random.default_rng(seed)
    ev = burst(seed, n=120)
    ev["t"] = np.arange(ev.size) * 97
    perm = ev[rng.permutation(ev.size)]
    cfg = NetworkConfig(geometry=SMALL, s2_threshold=100)
    k2 = small_kernels(cfg, 2, seed=seed)
    a = run_network(ev, cfg, k2).spikes
    b = run_network(sort_events(perm), cfg, k2).spikes
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("backend", BACKENDS)
def test_rerun_byte_identical(backend):
    cfg = NetworkConfig(geometry=SMALL, s2_threshold=100)
    k2 = small_kernels(cfg, 3)
    ev = burst(9)
    a = spikes_to_csv(run_network(ev, cfg, k2, backend=backend).spikes, ["a", "b", "c"])
    b = spikes_to_csv(run_network(ev, cfg, k2, backend=backend).spikes, ["a", "b", "c"])
    assert a == b and a.startswith(SPIKE_CSV_HEADER + "\n")


@pytest.mark.parametrize("backend", BACKENDS)
def test_input_checks(backend):
    cfg = NetworkConfig(geometry=SMALL)
    with pytest.raises(ValueError):
        run_network(make_events([5, 1], [0, 0], [0, 0], [0, 0]), cfg, backend=backend)
    with pytest.raises(ValueError):
        run_network(make_events([0], [20], [0], [0]), cfg, backend=backend)
    net = Network(cfg, backend=backend)
    net.feed(make_events([100], [1], [1], [0]))
    with pytest.raises(ValueError):
        net.feed(make_events([50], [1], [1], [0]))


def test_report_formats():
    r = ActivationReport(s1_ff=5, c1_ff=2, c1_rst_counted=22, s2_ff=7, s2_rst_counted=9)
    assert r.table_row() == {"S1": 5, "C1": 24, "S2": 7, "S2_rst": 9, "S2_rst_applied": 0}
    head, row = r.to_csv().splitlines()
    assert head.startswith("S1,C1,S2,S2_rst") and row.startswith("5,24,7,9")
    assert "s1_ff: 5" in r.to_text()


def test_config_text_roundtrip():
    cfg = NetworkConfig(s2_threshold=150, disable_c1_reset=True, s1=NeuronParams(180, 40, 4))
    from hfirst.config import parse_kv_text
    back = NetworkConfig.from_dict(parse_kv_text(cfg.to_text()))
    assert back == cfg and back.digest() == cfg.digest()
    with pytest.raises(ConfigError):
        NetworkConfig.from_dict({"nonsense": "1"})
