"""Command-line entry point: ``hfirst <command> [options]``.

Every command writes into ``<out>/<command>-<digest>-s<seed>/`` where the
digest covers the effective configuration and the command's inputs. The
effective configuration is echoed there as ``config.txt``, so rerunning the
same command with the same config and seed overwrites identical files.
"""

import argparse
import logging
import os
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .aer import (
    AERDecodeError,
    EventValidationError,
    FORMATS,
    SensorGeometry,
    guess_format,
    iter_binary_chunks,
    read_events,
)
from .classify import (
    EvaluationError,
    Protocol,
    cross_validate,
    detections_csv,
    evaluate,
    format_accuracy,
    jitter_csv,
    jitter_sweep,
    results_csv,
    stream_detections,
)
from .config import ABLATIONS, ConfigError, NetworkConfig, parse_bool, parse_kv_text
from .dataset import SynthParams, load_dataset, synth_character_set, write_dataset
from .glyphs import CHARSET
from .network import SPIKE_DTYPE, Network, available_backends, run_streaming, spikes_to_csv
from .training import Model, TrainingError, train_classes
from .util import digest

log = logging.getLogger("hfirst")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}
EXIT_USAGE = 2
SYNTH_PREFIX = "synth_"


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    jobs: int = 1
    trials: int = 10
    classes: int = 36
    per_class: int = 2
    train_per_class: int = 0  # 0: half of each class
    alpha: float = 0.05
    gap_ms: int = 100
    format: str = "binary-v1"
    backend: str = ""

    def __post_init__(self):
        if self.jobs < 1 or self.trials < 1 or self.per_class < 1:
            raise ConfigError("jobs, trials and per_class must be >= 1")
        if not 1 <= self.classes <= len(CHARSET):
            raise ConfigError(f"classes must be in 1..{len(CHARSET)}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.backend and self.backend not in available_backends():
            raise ConfigError(f"backend {self.backend!r} not available ({available_backends()})")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must be in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    synth: SynthParams = field(default_factory=SynthParams)
    run: RunSettings = field(default_factory=RunSettings)

    @classmethod
    def from_dict(cls, d):
        net, syn, run = {}, {}, {}
        run_keys = {f.name: f for f in fields(RunSettings)}
        syn_keys = {f.name: f for f in fields(SynthParams)}
        for key, value in d.items():
            if key in run_keys:
                run[key] = _coerce(run_keys[key], value)
            elif key.startswith(SYNTH_PREFIX) and key[len(SYNTH_PREFIX):] in syn_keys:
                name = key[len(SYNTH_PREFIX):]
                syn[name] = _coerce(syn_keys[name], value)
            else:
                net[key] = value
        return cls(NetworkConfig.from_dict(net), SynthParams(**syn), RunSettings(**run))

    def to_dict(self):
        d = dict(self.network.to_dict())
        d.update({SYNTH_PREFIX + k: v for k, v in asdict(self.synth).items()})
        d.update(asdict(self.run))
        return d

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.to_dict().items())

    def protocol(self, network=None):
        return Protocol(
            config=network or self.network,
            train_per_class=self.run.train_per_class or None,
            alpha=self.run.alpha,
            gap_ms=self.run.gap_ms,
            backend=self.run.backend or None,
        )


def _coerce(f, value):
    kind = type(f.default)
    try:
        return parse_bool(value) if kind is bool else kind(value)
    except ValueError as err:
        raise ConfigError(f"{f.name}: {err}") from None


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


# ---------------------------------------------------------------------------
# argument handling


def _common(p):
    p.add_argument("--config", metavar="PATH", help="key=value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", metavar="DIR", default="runs", help="parent of the run directory")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--backend", choices=("cython", "python"))
    p.add_argument("--s2-threshold", type=int, metavar="MV")
    p.add_argument("--trials", type=int)
    for flag in ("disable-c1-reset", "disable-s2-reset", "bypass-s1", "bypass-s1-c1", "enable-c2"):
        p.add_argument(f"--{flag}", action="store_true", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="hfirst", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hfirst {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a moving-character dataset")
    _common(p)

    p = sub.add_parser("train", help="train class templates from a dataset")
    _common(p)
    p.add_argument("--data", required=True, metavar="DIR")

    p = sub.add_parser("eval", help="classify every recording of a dataset with a model")
    _common(p)
    p.add_argument("--model", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="DIR")

    p = sub.add_parser("xval", help="repeated random-split cross-validation")
    _common(p)
    p.add_argument("--data", metavar="DIR", help="dataset directory (default: synthesise one)")

    p = sub.add_parser("jitter", help="accuracy versus timestamp jitter")
    _common(p)
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--mode", choices=("test", "train"), default="test")
    p.add_argument("--sigmas", default="0,1,2,5,10,20", help="comma-separated sigma values in ms")

    p = sub.add_parser("stream", help="run a model continuously over one recording")
    _common(p)
    p.add_argument("--model", required=True, metavar="PATH")
    p.add_argument("--input", required=True, metavar="FILE")
    p.add_argument("--spikes", action="store_true", help="also write every spike of every layer")

    p = sub.add_parser("ablate", help="cross-validate reset and bypass variants")
    _common(p)
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--variants", default=",".join(ABLATIONS))

    p = sub.add_parser("bench", help="throughput of the compiled and pure-Python engines")
    _common(p)
    p.add_argument("--input", metavar="FILE", help="recording to replay (default: synthetic)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backends", default=None, help="comma-separated (default: all available)")
    p.add_argument("--max-events", type=int, default=0, help="truncate the stream (0: all)")
    return parser


_FLAG_KEYS = {
    "seed": "seed", "jobs": "jobs", "format": "format", "backend": "backend",
    "s2_threshold": "s2_threshold", "trials": "trials",
    "disable_c1_reset": "disable_c1_reset", "disable_s2_reset": "disable_s2_reset",
    "bypass_s1": "bypass_s1", "bypass_s1_c1": "bypass_s1_c1", "enable_c2": "enable_c2",
}


def resolve_config(args):
    """Defaults, then the config file, then ``--set``, then dedicated flags."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(parse_kv_text(fh.read()))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = value
    return RunConfig.from_dict(values)


def run_dir(args, cfg, inputs=()):
    text = cfg.to_text() + "".join(f"input={i}\n" for i in inputs)
    path = os.path.join(args.out, f"{args.command}-{digest(text)}-s{cfg.run.seed}")
    os.makedirs(path, exist_ok=True)
    _write(path, "config.txt", f"command={args.command}\n" + text)
    return path


def _write(directory, name, text):
    with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _need(path, what="file"):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# data sources


def synth_dataset(cfg):
    return synth_character_set(
        labels=CHARSET[: cfg.run.classes],
        per_class=cfg.run.per_class,
        seed=cfg.run.seed,
        params=cfg.synth,
        geometry=cfg.network.geometry,
    )


def dataset_for(args, cfg):
    """Dataset from ``--data`` (adopting its geometry) or synthesised from the config."""
    if getattr(args, "data", None):
        ds, geometry = load_dataset(_need(args.data, "dataset"))
        if geometry != cfg.network.geometry:
            log.info("using dataset geometry %s", geometry)
            cfg = RunConfig(cfg.network.replace(geometry=geometry), cfg.synth, cfg.run)
        return ds, cfg
    log.info("no --data given; synthesising %d x %d recordings", cfg.run.classes, cfg.run.per_class)
    return synth_dataset(cfg), cfg


def _inputs(args):
    return [os.path.abspath(getattr(args, k)) for k in ("data", "model", "input")
            if getattr(args, k, None)]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg):
    out = run_dir(args, cfg)
    ds = synth_dataset(cfg)
    write_dataset(ds, out, cfg.network.geometry, fmt=cfg.run.format,
                  extra={"seed": cfg.run.seed, "synth": asdict(cfg.synth)})
    print(out)
    return 0


def cmd_train(args, cfg):
    ds, cfg = dataset_for(args, cfg)
    out = run_dir(args, cfg, _inputs(args))
    groups = ds.by_label()
    k = cfg.run.train_per_class
    model = train_classes(
        [(label, [r.events for r in (recs[:k] if k else recs)]) for label, recs in groups.items()],
        cfg.network, alpha=cfg.run.alpha, gap_ms=cfg.run.gap_ms, backend=cfg.run.backend or None,
    )
    model.save(os.path.join(out, "model.txt"))
    print(os.path.join(out, "model.txt"))
    return 0


def _load_model(path):
    return Model.load(_need(path, "model file"))


def cmd_eval(args, cfg):
    model = _load_model(args.model)
    ds, cfg = dataset_for(args, cfg)
    out = run_dir(args, cfg, _inputs(args))
    res = evaluate(model, ds.recordings, cfg.network, backend=cfg.run.backend or None,
                   seed=cfg.run.seed)
    lines = ["example_id,true_label,pred_label,n_total"]
    for ex in res.examples:
        lines.append(f"{ex.example_id},{ex.true_label},{ex.pred_label or ''},{ex.n_total}")
    _write(out, "results.csv", "\n".join(lines) + "\n")
    _write(out, "activations.csv", res.report.to_csv())
    summary = f"accuracy={100 * res.accuracy:.1f}%\n"
    _write(out, "summary.txt", summary)
    print(summary, end="")
    return 0


def cmd_xval(args, cfg):
    ds, cfg = dataset_for(args, cfg)
    out = run_dir(args, cfg, _inputs(args))
    res = cross_validate(ds, cfg.protocol(), cfg.run.trials, cfg.run.seed, cfg.run.jobs)
    _write(out, "results.csv", results_csv(res))
    _write(out, "activations.csv", res.mean_report().to_csv())
    summary = res.summary()
    _write(out, "summary.txt", summary + "\n")
    print(summary)
    return 0


def _parse_sigmas(text):
    try:
        return sorted(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad --sigmas {text!r}") from None


def cmd_jitter(args, cfg):
    sigmas = _parse_sigmas(args.sigmas)
    ds, cfg = dataset_for(args, cfg)
    out = run_dir(args, cfg, _inputs(args) + [f"mode={args.mode}", f"sigmas={sigmas}"])
    points = jitter_sweep(ds, cfg.protocol(), sigmas, args.mode, cfg.run.trials,
                          cfg.run.seed, cfg.run.jobs)
    _write(out, "jitter.csv", jitter_csv(points))
    for p in points:
        print(f"sigma={p.sigma_ms:g}ms {args.mode}: {format_accuracy(p.mean, p.std)}")
    return 0


def cmd_stream(args, cfg):
    model = _load_model(args.model)
    _need(args.input, "recording")
    out = run_dir(args, cfg, _inputs(args))
    backend = cfg.run.backend or None
    if args.spikes:
        net = Network(cfg.network, model, backend=backend)
        parts = []
        if guess_format(args.input) == "binary-v1":
            report = run_streaming(iter_binary_chunks(args.input, geometry=cfg.network.geometry),
                                   net, parts.append)
        else:
            parts.append(net.feed(read_events(args.input, geometry=cfg.network.geometry).events))
            report = net.report()
        spikes = np.concatenate(parts) if parts else np.zeros(0, SPIKE_DTYPE)
        _write(out, "spikes.csv", spikes_to_csv(spikes, model.labels))
        s2 = spikes[spikes["layer"] == 2]
        dets = [(int(t), model.labels[c], int(x), int(y))
                for t, x, y, c in zip(s2["t"], s2["x"], s2["y"], s2["channel"])]
        lines = ["t_us,layer,x,y,channel,label"]
        lines += [f"{t},S2,{x},{y},{model.index(lb)},{lb}" for t, lb, x, y in dets]
        _write(out, "detections.csv", "\n".join(lines) + "\n")
    else:
        events = read_events(args.input, geometry=cfg.network.geometry).events
        dets = stream_detections(model, events, cfg.network, backend=backend)
        _write(out, "detections.csv", detections_csv(dets, model))
        report = None
    if report is not None:
        _write(out, "activations.csv", report.to_csv())
    print(os.path.join(out, "detections.csv"))
    return 0


def cmd_ablate(args, cfg):
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}; choose from {list(ABLATIONS)}")
    ds, cfg = dataset_for(args, cfg)
    out = run_dir(args, cfg, _inputs(args) + [f"variants={variants}"])
    rows = ["variant,mean_acc,std_acc,summary,S1,C1,S2,S2_rst,trial_accuracies"]
    for name in variants:
        net = cfg.network.replace(**ABLATIONS[name])
        res = cross_validate(ds, cfg.protocol(net), cfg.run.trials, cfg.run.seed, cfg.run.jobs)
        table = res.mean_report().table_row()
        per = cfg.run.trials
        acc = ";".join(f"{a:.6f}" for a in res.accuracies)
        rows.append(
            f"{name},{res.mean:.6f},{res.std:.6f},{res.summary()},"
            f"{table['S1'] / per:.1f},{table['C1'] / per:.1f},{table['S2'] / per:.1f},"
            f"{table['S2_rst'] / per:.1f},{acc}"
        )
        print(f"{name}: {res.summary()}")
    _write(out, "ablation.csv", "\n".join(rows) + "\n")
    return 0


def bench_stream(args, cfg):
    if args.input:
        events = read_events(_need(args.input, "recording"), geometry=cfg.network.geometry).events
    else:
        ds = synth_character_set(labels=CHARSET[:1], per_class=1, seed=cfg.run.seed,
                                 params=cfg.synth, geometry=cfg.network.geometry)
        events = ds.recordings[0].events
    if args.max_events:
        events = events[: args.max_events]
    return events


def cmd_bench(args, cfg):
    if args.repeats < 3:
        raise ConfigError("bench needs --repeats >= 3")
    events = bench_stream(args, cfg)
    backends = args.backends.split(",") if args.backends else available_backends()
    rng = np.random.default_rng(cfg.run.seed)
    shape = (cfg.run.classes,) + tuple(cfg.network.s2_kernel_shape)
    kernels = rng.integers(-1, 30, size=shape).astype(np.int32)
    out = run_dir(args, cfg, _inputs(args) + [f"backends={backends}", f"repeats={args.repeats}"])
    lines = [f"events={events.shape[0]}", f"classes={cfg.run.classes}", f"repeats={args.repeats}"]
    for backend in backends:
        rates, report = [], None
        for _ in range(args.repeats):
            net = Network(cfg.network, kernels, backend=backend, record=())
            t0 = time.perf_counter()
            net.feed(events)
            rates.append(events.shape[0] / max(time.perf_counter() - t0, 1e-9))
            report = net.report()
        med = statistics.median(rates)
        lines.append(f"{backend}.events_per_s={med:.0f}")
        n = max(report.events_admitted, 1)
        for key, value in report.table_row().items():
            lines.append(f"{backend}.per_event.{key}={value / n:.3f}")
        lines.append(f"{backend}.per_s1_spike.C1={(report.c1_ff + report.c1_rst_counted) / max(report.spikes_s1, 1):.3f}")
        print(f"{backend}: {med:,.0f} events/s (median of {args.repeats})")
    _write(out, "bench.txt", "\n".join(lines) + "\n")
    return 0


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "xval": cmd_xval,
    "jitter": cmd_jitter, "stream": cmd_stream, "ablate": cmd_ablate, "bench": cmd_bench,
}


def setup_logging():
    name = os.environ.get("HFIRST_LOG", "warn").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if level is None:
        log.warning("HFIRST_LOG=%r not in %s; using warn", name, list(LOG_LEVELS))


def main(argv=None):
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except FileNotFoundError as err:
        print(f"hfirst {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, AERDecodeError, EventValidationError, TrainingError,
            EvaluationError, OSError, ValueError) as err:
        mod = type(err).__module__.rsplit(".", 1)[-1]
        print(f"hfirst {args.command}: {mod}: {err}", file=sys.stderr)
        return EXIT_USAGE if isinstance(err, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
