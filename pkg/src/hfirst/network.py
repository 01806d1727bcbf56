"""Event-driven HFirst network: S1 Gabor bank, C1 orientation WTA, S2 templates, C2 pooling.

The cascade itself lives in a compiled extension (``hfirst._engine``) with a
numpy fallback (``hfirst._engine_py``) chosen at import time. Set
``HFIRST_PURE_PYTHON=1`` to force the fallback.
"""

import io
import logging
import os
import queue
import threading
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import _engine_py
from .aer import is_sorted, validate_events
from .gabor import s1_kernels

log = logging.getLogger(__name__)

try:
    from . import _engine as _engine_c
except ImportError:  # extension not built
    _engine_c = None

if _engine_c is not None and not os.environ.get("HFIRST_PURE_PYTHON"):
    DEFAULT_BACKEND = "cython"
else:
    DEFAULT_BACKEND = "python"

BACKENDS = ("cython", "python")
LAYERS = ("S1", "C1", "S2", "C2")
SPIKE_DTYPE = _engine_py.SPIKE_DTYPE
SPIKE_CSV_HEADER = "t_us,layer,x,y,channel,label"


def available_backends():
    return [b for b in BACKENDS if b == "python" or _engine_c is not None]


def _engine_class(backend):
    backend = backend or DEFAULT_BACKEND
    if backend == "cython":
        if _engine_c is None:
            raise RuntimeError("compiled engine not built; reinstall the package or use backend='python'")
        return _engine_c.CEngine
    if backend == "python":
        return _engine_py.PyEngine
    raise ValueError(f"unknown backend {backend!r}")


@dataclass
class ActivationReport:
    events_in: int = 0
    events_admitted: int = 0
    s1_ff: int = 0
    c1_ff: int = 0
    c1_rst_counted: int = 0
    c1_rst_applied: int = 0
    s2_ff: int = 0
    s2_rst_counted: int = 0
    s2_rst_applied: int = 0
    c2_ff: int = 0
    spikes_s1: int = 0
    spikes_c1: int = 0
    spikes_s2: int = 0
    spikes_c2: int = 0

    TABLE_COLUMNS = ("S1", "C1", "S2", "S2_rst", "S2_rst_applied")

    def table_row(self):
        """Synapse activations in the results-table layout."""
        return {
            "S1": self.s1_ff,
            "C1": self.c1_ff + self.c1_rst_counted,
            "S2": self.s2_ff,
            "S2_rst": self.s2_rst_counted,
            "S2_rst_applied": self.s2_rst_applied,
        }

    def __add__(self, other):
        return ActivationReport(
            **{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        )

    def to_text(self):
        lines = [f"{f.name}: {getattr(self, f.name)}" for f in fields(self)]
        lines += [f"table_{k}: {v}" for k, v in self.table_row().items()]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        cols = self.TABLE_COLUMNS + tuple(f.name for f in fields(self))
        row = {**self.table_row(), **{f.name: getattr(self, f.name) for f in fields(self)}}
        return ",".join(cols) + "\n" + ",".join(str(row[c]) for c in cols) + "\n"


class NetworkResult(NamedTuple):
    spikes: np.ndarray  # all layers, in emission order
    report: ActivationReport

    def layer(self, name):
        return self.spikes[self.spikes["layer"] == LAYERS.index(name)]


def _as_kernels(model_or_kernels, cfg):
    kernels = getattr(model_or_kernels, "kernels", model_or_kernels)
    if kernels is None:
        kernels = np.zeros((0,) + tuple(cfg.s2_kernel_shape), np.int32)
    return np.asarray(kernels, dtype=np.int32)


class Network:
    """One stateful network instance. Not thread-safe; use one per thread."""

    def __init__(self, config, s2_kernels=None, backend=None, record=LAYERS):
        self.config = config
        self.backend = backend or DEFAULT_BACKEND
        kernels = _as_kernels(s2_kernels, config)
        flags = tuple(name in record for name in LAYERS)
        self._engine = _engine_class(self.backend)(
            config, s1_kernels(config.gabor), kernels, flags
        )

    @property
    def n_classes(self):
        return self._engine.n_classes

    def feed(self, events):
        """Process a sorted chunk and return the spikes it produced."""
        self._engine.feed(events)
        return self._engine.take_spikes()

    def report(self):
        return ActivationReport(**self._engine.counts())

    def layer_state(self, layer):
        return self._engine.layer_state(layer)


def run_network(events, config, s2_kernels=None, backend=None, record=LAYERS):
    """Run a complete, validated, sorted stream through a fresh network."""
    validate_events(events, config.geometry)
    if not is_sorted(events):
        raise ValueError("events must be sorted by timestamp")
    net = Network(config, s2_kernels, backend=backend, record=record)
    spikes = net.feed(events)
    return NetworkResult(spikes, net.report())


def spikes_to_csv(spikes, labels=None):
    """Spike CSV; ``labels`` maps class index -> label for S2/C2 rows."""
    buf = io.StringIO()
    buf.write(SPIKE_CSV_HEADER + "\n")
    for t, layer, x, y, ch in zip(
        spikes["t"].tolist(),
        spikes["layer"].tolist(),
        spikes["x"].tolist(),
        spikes["y"].tolist(),
        spikes["channel"].tolist(),
    ):
        label = ""
        if layer >= 2 and labels is not None:
            label = labels[ch]
        buf.write(f"{t},{LAYERS[layer]},{x},{y},{ch},{label}\n")
    return buf.getvalue()


_DONE = object()


def run_streaming(chunks, network, sink, maxsize=8):
    """Producer/consumer handoff: decode in a thread, process here, deliver to ``sink``.

    ``chunks`` is an iterable of sorted event arrays (e.g.
    :func:`hfirst.aer.iter_binary_chunks`); it is drained on a background
    thread while this thread runs the network. ``sink`` receives each chunk's
    spikes in order. Returns the final activation report.
    """
    q = queue.Queue(maxsize=maxsize)
    failure = []

    def produce():
        try:
            for chunk in chunks:
                q.put(chunk)
        except BaseException as err:  # surfaced on the consumer side
            failure.append(err)
        finally:
            q.put(_DONE)

    producer = threading.Thread(target=produce, name="hfirst-decoder", daemon=True)
    producer.start()
    while True:
        chunk = q.get()
        if chunk is _DONE:
            break
        sink(network.feed(chunk))
    producer.join()
    if failure:
        raise failure[0]
    return network.report()
