"""Build S2 class templates from recordings of single moving objects.

Pipeline per class: track the object with an event-centroid tracker, re-emit
events in a stabilised window around it, run that view through S1/C1, count
C1 spikes per (x, y, orientation), and L2-normalise the counts to 100 mV.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .aer import SensorGeometry, empty_events, make_events
from .network import run_network
from .util import round_half_away

log = logging.getLogger(__name__)

KERNEL_NORM = 100
INHIBITORY_WEIGHT = -1
MODEL_MAGIC = "hfirst-model v1"


class TrainingError(ValueError):
    pass


def track_centroids(events, alpha=0.05):
    """Exponentially smoothed event centroid after each event, shape (n, 2) as (x, y)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    n = events.shape[0]
    out = np.empty((n, 2), dtype=np.float64)
    if n == 0:
        return out
    xs = events["x"].astype(np.float64).tolist()
    ys = events["y"].astype(np.float64).tolist()
    cx, cy = xs[0], ys[0]
    keep = 1.0 - alpha
    for i in range(n):
        cx = keep * cx + alpha * xs[i]
        cy = keep * cy + alpha * ys[i]
        out[i, 0] = cx
        out[i, 1] = cy
    return out


def track_and_stabilize(events, alpha=0.05, window=32, return_centroids=False):
    """Re-emit events in a ``window`` x ``window`` frame centred on the tracked object.

    Events landing outside the frame are dropped; timestamps are unchanged.
    """
    if events.shape[0] == 0:
        raise TrainingError("cannot track an empty event stream")
    cents = track_centroids(events, alpha)
    half = window // 2
    sx = events["x"].astype(np.int64) - round_half_away(cents[:, 0]) + half
    sy = events["y"].astype(np.int64) - round_half_away(cents[:, 1]) + half
    keep = (sx >= 0) & (sx < window) & (sy >= 0) & (sy < window)
    out = make_events(events["t"][keep], sx[keep], sy[keep], events["p"][keep])
    if return_centroids:
        return out, cents
    return out


def training_config(config, window=32):
    """Network config for counting C1 spikes on a stabilised view."""
    return config.replace(
        geometry=SensorGeometry(window, window),
        disable_c1_reset=False,
        enable_c2=False,
    )


def count_c1(stabilized, config, window=32, backend=None):
    """Count C1 spikes (or raw pixel events when S1 and C1 are bypassed).

    Returns an integer grid indexed [x, y, channel] with the template shape
    of ``config`` (8 x 8 x 12 for the standard model).
    """
    tcfg = training_config(config, window)
    kx, ky, kc = config.s2_kernel_shape
    counts = np.zeros((kx, ky, kc), dtype=np.int64)
    if stabilized.shape[0] == 0:
        return counts
    if config.bypass_s1_c1:
        np.add.at(counts, (stabilized["x"].astype(np.intp), stabilized["y"].astype(np.intp), 0), 1)
        return counts
    res = run_network(stabilized, tcfg, None, backend=backend, record=("C1",))
    c1 = res.layer("C1")
    np.add.at(counts, (c1["x"], c1["y"], c1["channel"]), 1)
    return counts


@dataclass
class S2Kernel:
    label: str
    weights: np.ndarray  # int32 [x offset, y offset, channel]


def make_s2_kernel(counts, label):
    """L2-normalise counts to 100 mV; entries that are (or round to) zero become -1."""
    counts = np.asarray(counts, dtype=np.float64)
    norm = float(np.sqrt(np.sum(counts * counts)))
    if norm == 0:
        raise TrainingError(f"class {label!r}: no C1 activity in training data")
    w = round_half_away(KERNEL_NORM * counts / norm)
    w[w <= 0] = INHIBITORY_WEIGHT
    return S2Kernel(str(label), w.astype(np.int32))


@dataclass
class Model:
    labels: list
    kernels: np.ndarray  # int32 [class, x, y, channel]
    config_digest: str = ""
    geometry: SensorGeometry = field(default_factory=SensorGeometry)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.int32)
        if len(self.labels) != len(set(self.labels)):
            raise TrainingError("duplicate class labels")
        if self.kernels.ndim != 4 or self.kernels.shape[0] != len(self.labels):
            raise TrainingError("kernel array must be (classes, x, y, channels)")

    @property
    def n_classes(self):
        return len(self.labels)

    def index(self, label):
        return self.labels.index(label)

    def to_text(self):
        kx, ky, kc = self.kernels.shape[1:]
        lines = [
            MODEL_MAGIC,
            f"config_digest={self.config_digest}",
            f"geometry={self.geometry}",
            f"classes={self.n_classes}",
            f"kernel_shape={kx}x{ky}x{kc}",
        ]
        for label, kern in zip(self.labels, self.kernels):
            lines.append(f"label={label}")
            # one line per (x, y) tap, channels across
            for row in kern.reshape(kx * ky, kc):
                lines.append(" ".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != MODEL_MAGIC:
            raise TrainingError("not an hfirst model file")
        header = {}
        i = 1
        while i < len(lines) and not lines[i].startswith("label="):
            key, _, value = lines[i].partition("=")
            header[key] = value
            i += 1
        try:
            kx, ky, kc = (int(v) for v in header["kernel_shape"].split("x"))
            n = int(header["classes"])
            geometry = SensorGeometry.parse(header["geometry"])
        except (KeyError, ValueError) as err:
            raise TrainingError(f"bad model header: {err}") from None
        labels, kernels = [], []
        for _ in range(n):
            if i >= len(lines) or not lines[i].startswith("label="):
                raise TrainingError(f"expected label line at entry {len(labels)}")
            labels.append(lines[i][len("label="):])
            rows = lines[i + 1 : i + 1 + kx * ky]
            if len(rows) != kx * ky:
                raise TrainingError(f"class {labels[-1]!r}: truncated kernel")
            vals = np.array([[int(v) for v in r.split()] for r in rows], dtype=np.int32)
            if vals.shape != (kx * ky, kc):
                raise TrainingError(f"class {labels[-1]!r}: bad kernel row width")
            kernels.append(vals.reshape(kx, ky, kc))
            i += 1 + kx * ky
        return cls(labels, np.stack(kernels) if kernels else np.zeros((0, kx, ky, kc)),
                   header.get("config_digest", ""), geometry)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def concatenate_examples(examples, gap_ms=100):
    """Join event streams back to back, each starting ``gap_ms`` after the previous ends."""
    parts, end = [], None
    for ev in examples:
        if ev.shape[0] == 0:
            continue
        t = ev["t"].astype(np.int64)
        if end is not None:
            t = t - t[0] + end + gap_ms * 1000
        part = ev.copy()
        part["t"] = t
        parts.append(part)
        end = int(t[-1])
    if not parts:
        return empty_events()
    return np.concatenate(parts)


def train_classes(
    recordings,
    config,
    alpha=0.05,
    window=32,
    gap_ms=100,
    stabilized_transform=None,
    backend=None,
):
    """Train one S2 template per class.

    ``recordings`` is a sequence of ``(label, [events, ...])`` pairs (or a
    dict). ``stabilized_transform(label, i, events)`` may perturb each
    stabilised example before counting (used for training-time jitter).
    """
    items = list(recordings.items()) if isinstance(recordings, dict) else list(recordings)
    labels = [str(label) for label, _ in items]
    if len(labels) != len(set(labels)):
        raise TrainingError("duplicate class labels")
    kernels = []
    for label, examples in items:
        if not examples:
            raise TrainingError(f"class {label!r}: no recordings")
        views = []
        for i, ev in enumerate(examples):
            view = track_and_stabilize(ev, alpha, window)
            if stabilized_transform is not None:
                view = stabilized_transform(label, i, view)
            views.append(view)
        counts = count_c1(concatenate_examples(views, gap_ms), config, window, backend)
        kernels.append(make_s2_kernel(counts, label).weights)
        log.debug("trained class %s: %d C1 spikes", label, int(counts.sum()))
    kx, ky, kc = config.s2_kernel_shape
    stack = np.stack(kernels) if kernels else np.zeros((0, kx, ky, kc), np.int32)
    return Model(labels, stack, config.digest(), config.geometry)
