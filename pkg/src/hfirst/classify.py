"""Spike-count classification and the experimental protocol around it.

Scores are per-class S2 spike counts over a window; the soft output normalises
them to probabilities and the hard output takes the argmax (lowest class index
wins ties). A recording with no S2 spikes yields no decision and counts as an
error.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .aer import add_jitter
from .network import LAYERS, ActivationReport, Network, run_network
from .training import train_classes

log = logging.getLogger(__name__)

S2 = LAYERS.index("S2")
NO_DECISION = None


class EvaluationError(ValueError):
    pass


class ClassScores(NamedTuple):
    n: np.ndarray  # spike counts per class
    P: np.ndarray  # probabilities per class


def class_counts(s2_spikes, n_classes, window=None):
    """Per-class S2 spike counts, optionally restricted to ``window=(t0, t1)`` (µs, half-open)."""
    sp = s2_spikes
    if sp.dtype.names and "layer" in sp.dtype.names:
        sp = sp[sp["layer"] == S2]
    if window is not None:
        t0, t1 = window
        if t1 < t0:
            raise ValueError("window end precedes start")
        sp = sp[(sp["t"] >= t0) & (sp["t"] < t1)]
    return np.bincount(sp["channel"], minlength=n_classes)[:n_classes].astype(np.int64)


def _as_counts(spikes_or_counts, n_classes, window):
    arr = np.asarray(spikes_or_counts)
    if arr.dtype.names:
        return class_counts(arr, n_classes, window)
    return arr.astype(np.int64)


def classify_soft(spikes_or_counts, n_classes=None, window=None):
    n = _as_counts(spikes_or_counts, n_classes, window)
    total = n.sum()
    P = n / total if total > 0 else np.zeros(n.shape, dtype=np.float64)
    return ClassScores(n, P)


def classify_hard(spikes_or_counts, n_classes=None, window=None):
    """Index of the most active class, or ``NO_DECISION`` if nothing spiked."""
    n = _as_counts(spikes_or_counts, n_classes, window)
    if n.size == 0 or n.sum() == 0:
        return NO_DECISION
    return int(np.argmax(n))  # first maximum = lowest index


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Recording:
    label: str
    events: np.ndarray
    example_id: str = ""
    meta: dict = field(default_factory=dict)


class Dataset:
    """Labelled recordings grouped by class (class order = first appearance)."""

    def __init__(self, recordings):
        self.recordings = list(recordings)
        self.labels = []
        for r in self.recordings:
            if r.label not in self.labels:
                self.labels.append(r.label)

    def by_label(self):
        out = {label: [] for label in self.labels}
        for r in self.recordings:
            out[r.label].append(r)
        return out

    def __len__(self):
        return len(self.recordings)


@dataclass
class ExampleResult:
    example_id: str
    true_label: str
    pred_label: Optional[str]
    counts: np.ndarray
    class_labels: tuple = ()

    @property
    def correct(self):
        return self.pred_label == self.true_label

    @property
    def n_total(self):
        return int(self.counts.sum())


@dataclass
class TrialResult:
    seed: int
    examples: list
    report: ActivationReport

    @property
    def accuracy(self):
        if not self.examples:
            return 0.0
        return sum(e.correct for e in self.examples) / len(self.examples)

    def negative_response_accuracy(self):
        """Alternate score crediting correct non-responses of every class detector.

        Each (example, class) pair is one binary decision: the class "responds"
        if it produced any S2 spike. Interpretation of the positive/negative
        scoring used for spiking CNN comparisons; secondary metric only.
        """
        hits = total = 0
        for ex in self.examples:
            for label, c in zip(ex.class_labels, ex.counts):
                hits += (c > 0) == (label == ex.true_label)
                total += 1
        return hits / total if total else 0.0


def evaluate(model, recordings, config, backend=None, seed=0):
    """Score each recording over its full duration with a fresh network."""
    examples = []
    report = ActivationReport()
    for rec in recordings:
        if rec.label not in model.labels:
            raise EvaluationError(f"test label {rec.label!r} not in model classes")
        res = run_network(rec.events, config, model, backend=backend, record=("S2",))
        counts = class_counts(res.spikes, model.n_classes)
        pred = classify_hard(counts)
        examples.append(
            ExampleResult(
                rec.example_id,
                rec.label,
                None if pred is None else model.labels[pred],
                counts,
                tuple(model.labels),
            )
        )
        report = report + res.report
    return TrialResult(seed, examples, report)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class XValResult:
    trials: list

    @property
    def accuracies(self):
        return [t.accuracy for t in self.trials]

    @property
    def mean(self):
        return float(np.mean(self.accuracies)) if self.trials else 0.0

    @property
    def std(self):
        # sample standard deviation across trials
        acc = self.accuracies
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0

    def summary(self):
        return format_accuracy(self.mean, self.std)

    def mean_report(self):
        total = ActivationReport()
        for t in self.trials:
            total = total + t.report
        return total


def format_accuracy(mean, std):
    """Percent form with one decimal, e.g. ``84.9%±1.9%``."""
    return f"{100 * mean:.1f}%±{100 * std:.1f}%"


def split_dataset(dataset, rng, train_per_class=None):
    """Disjoint per-class train/test split. Default: half of each class (rounded down) trains."""
    train, test = {}, []
    for label, recs in dataset.by_label().items():
        if len(recs) < 2:
            raise EvaluationError(f"class {label!r} needs >= 2 examples, has {len(recs)}")
        k = train_per_class or len(recs) // 2
        if not 1 <= k < len(recs):
            raise EvaluationError(f"class {label!r}: cannot train on {k} of {len(recs)} examples")
        order = rng.permutation(len(recs))
        train[label] = [recs[i] for i in order[:k]]
        test.extend(recs[i] for i in order[k:])
    return train, test


def trial_seed(seed, trial):
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


@dataclass
class Protocol:
    """Everything one cross-validation trial needs (picklable for worker processes)."""

    config: object
    train_config: object = None
    train_per_class: Optional[int] = None
    alpha: float = 0.05
    gap_ms: int = 100
    train_jitter_ms: float = 0.0
    test_jitter_ms: float = 0.0
    backend: Optional[str] = None


def run_trial(dataset, protocol, seed, trial):
    ts = trial_seed(seed, trial)
    rng = np.random.default_rng(ts)
    train, test = split_dataset(dataset, rng, protocol.train_per_class)
    tcfg = protocol.train_config or protocol.config

    transform = None
    if protocol.train_jitter_ms > 0:
        def transform(label, i, view):
            return add_jitter(view, protocol.train_jitter_ms, trial_seed(ts, hash_label(label) + i))

    model = train_classes(
        [(label, [r.events for r in recs]) for label, recs in train.items()],
        tcfg,
        alpha=protocol.alpha,
        gap_ms=protocol.gap_ms,
        stabilized_transform=transform,
        backend=protocol.backend,
    )
    if protocol.test_jitter_ms > 0:
        test = [
            Recording(r.label, add_jitter(r.events, protocol.test_jitter_ms,
                                          trial_seed(ts, 7919 + j)), r.example_id, r.meta)
            for j, r in enumerate(test)
        ]
    result = evaluate(model, test, protocol.config, backend=protocol.backend, seed=ts)
    result.trial = trial
    return result


def hash_label(label):
    return sum((i + 1) * ord(c) for i, c in enumerate(str(label))) * 1009


def _run_trial_star(args):
    return run_trial(*args)


def cross_validate(dataset, protocol, trials=10, seed=0, jobs=1):
    """Repeated random train/test splits; returns per-trial results (mean ± sample std)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    args = [(dataset, protocol, seed, i) for i in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial_star, args))
    else:
        results = [run_trial(*a) for a in args]
    results.sort(key=lambda r: r.trial)
    return XValResult(results)


class JitterPoint(NamedTuple):
    sigma_ms: float
    mode: str
    mean: float
    std: float


def jitter_sweep(dataset, protocol, sigmas, mode="test", trials=10, seed=0, jobs=1):
    if mode not in ("train", "test"):
        raise ValueError("mode must be 'train' or 'test'")
    sigmas = list(sigmas)
    if sigmas != sorted(sigmas):
        raise ValueError("sigmas must be sorted ascending")
    points = []
    for sigma in sigmas:
        p = Protocol(**{**protocol.__dict__})
        if mode == "train":
            p.train_jitter_ms = sigma
        else:
            p.test_jitter_ms = sigma
        res = cross_validate(dataset, p, trials, seed, jobs)
        points.append(JitterPoint(float(sigma), mode, res.mean, res.std))
    return points


def jitter_csv(points):
    lines = ["sigma_ms,mode,mean_acc,std_acc"]
    lines += [f"{p.sigma_ms:g},{p.mode},{p.mean:.6f},{p.std:.6f}" for p in points]
    return "\n".join(lines) + "\n"


def results_csv(xval):
    lines = ["trial,example_id,true_label,pred_label,n_total"]
    for tr in xval.trials:
        for ex in tr.examples:
            pred = "" if ex.pred_label is None else ex.pred_label
            lines.append(f"{tr.trial},{ex.example_id},{ex.true_label},{pred},{ex.n_total}")
    lines.append("mean,std")
    lines.append(f"{xval.mean:.6f},{xval.std:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# streaming detection


class Detection(NamedTuple):
    t: int
    label: str
    x: int
    y: int


def stream_detections(model, events, config, backend=None, chunk=65536):
    """Every S2 spike as a detection, in time order, from one continuously running network."""
    net = Network(config, model, backend=backend, record=("S2",))
    out = []
    for start in range(0, events.shape[0], chunk):
        sp = net.feed(events[start : start + chunk])
        out.extend(
            Detection(int(t), model.labels[c], int(x), int(y))
            for t, x, y, c in zip(sp["t"], sp["x"], sp["y"], sp["channel"])
        )
    return out


def detections_csv(detections, model):
    lines = ["t_us,layer,x,y,channel,label"]
    for d in detections:
        lines.append(f"{d.t},S2,{d.x},{d.y},{model.index(d.label)},{d.label}")
    return "\n".join(lines) + "\n"


def chance(n_classes):
    return 1.0 / n_classes if n_classes else math.nan
