"""Synthetic character recordings and on-disk datasets (binary-v1 files + JSON manifest)."""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .aer import (
    SensorGeometry,
    add_noise,
    read_events,
    sort_events,
    sprite_center,
    synth_translate,
    write_events,
)
from .classify import Dataset, Recording
from .glyphs import CHARSET, glyph_sprite

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SynthParams:
    """Stimulus settings for the moving-character task."""

    scale: int = 3
    speed: float = 1.0  # px/ms
    speed_jitter: float = 0.1  # relative, uniform
    angle_deg: float = 20.0  # 0 = left to right, positive = downward
    angle_jitter_deg: float = 5.0
    y_jitter: float = 8.0  # px, crossing height
    enter: bool = False  # True starts outside the field and slides in
    contrast_threshold: float = 0.3
    threshold_mismatch: float = 0.1
    noise_rate: float = 0.0  # background events/s
    foreground: float = 1.0
    background: float = 0.2


def _rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def crossing(sprite_shape, geometry, params, rng):
    """Draw a velocity and start position for one pass across the sensor."""
    h, w = sprite_shape
    speed = params.speed * (1 + rng.uniform(-params.speed_jitter, params.speed_jitter))
    angle = math.radians(params.angle_deg + rng.uniform(-params.angle_jitter_deg, params.angle_jitter_deg))
    vx, vy = speed * math.cos(angle), speed * math.sin(angle)
    x0 = float(-w) if params.enter else 0.0
    duration = (geometry.width - w - x0) / vx
    y_mid = geometry.height / 2 + rng.uniform(-params.y_jitter, params.y_jitter)
    start = (x0, y_mid - h / 2 - vy * duration / 2)
    return (vx, vy), start, duration


def synth_character(label, rep, seed=0, params=SynthParams(), geometry=SensorGeometry()):
    """One recording of ``label`` crossing the sensor; returns (events, metadata)."""
    cls_index = CHARSET.index(label) if label in CHARSET else sum(map(ord, label))
    rng = _rng(seed, cls_index, rep)
    sprite = glyph_sprite(label, params.scale, foreground=params.foreground,
                          background=params.background)
    velocity, start, duration = crossing(sprite.shape, geometry, params, rng)
    gen_seed = int(rng.integers(2**31))
    events = synth_translate(
        sprite, velocity, duration, params.contrast_threshold, geometry,
        seed=gen_seed, start=start, threshold_mismatch=params.threshold_mismatch,
    )
    if params.noise_rate > 0:
        events = add_noise(events, params.noise_rate, geometry, seed=gen_seed + 1)
    meta = {
        "label": label,
        "rep": rep,
        "velocity_px_per_ms": list(velocity),
        "start_top_left": list(start),
        "sprite_size": list(sprite.shape[::-1]),
        "duration_ms": duration,
        "n_events": int(events.shape[0]),
    }
    return events, meta


def trajectory(meta, t_us):
    """Ground-truth sprite centre at ``t_us`` from recording metadata."""
    w, h = meta["sprite_size"]
    return sprite_center(np.zeros((h, w)), meta["velocity_px_per_ms"], meta["start_top_left"], t_us)


def synth_character_set(labels=CHARSET, per_class=2, seed=0, params=SynthParams(),
                        geometry=SensorGeometry()):
    recs = []
    for label in labels:
        for rep in range(per_class):
            events, meta = synth_character(label, rep, seed, params, geometry)
            recs.append(Recording(label, events, f"{label}_{rep}", meta))
    return Dataset(recs)


def synth_scene(labels, seed=0, params=SynthParams(), geometry=SensorGeometry(), lanes=None,
                stagger_ms=0.0):
    """Several characters crossing simultaneously in separate horizontal lanes.

    Returns merged events and per-character metadata (with ``t_offset_us``).
    """
    n = len(labels)
    if lanes is None:
        lanes = [geometry.height * (i + 1) / (n + 1) for i in range(n)]
    flat = SynthParams(**{**asdict(params), "angle_deg": 0.0, "angle_jitter_deg": 0.0,
                          "y_jitter": 0.0, "noise_rate": 0.0})
    parts, metas = [], []
    for i, (label, lane) in enumerate(zip(labels, lanes)):
        rng = _rng(seed, 1000 + i)
        sprite = glyph_sprite(label, params.scale, foreground=params.foreground,
                              background=params.background)
        h, w = sprite.shape
        velocity, _, duration = crossing(sprite.shape, geometry, flat, rng)
        start = (float(-w), lane - h / 2)
        offset = int(round(i * stagger_ms * 1000))
        ev = synth_translate(sprite, velocity, duration, params.contrast_threshold, geometry,
                             seed=int(rng.integers(2**31)), start=start,
                             threshold_mismatch=params.threshold_mismatch)
        ev["t"] += offset
        parts.append(ev)
        metas.append({"label": label, "velocity_px_per_ms": list(velocity),
                      "start_top_left": list(start), "sprite_size": [w, h],
                      "duration_ms": duration, "t_offset_us": offset})
    events = sort_events(np.concatenate(parts))
    if params.noise_rate > 0:
        events = add_noise(events, params.noise_rate, geometry, seed=seed + 17)
    return events, metas


def write_dataset(dataset, out_dir, geometry=SensorGeometry(), extra=None, fmt="binary-v1"):
    os.makedirs(out_dir, exist_ok=True)
    ext = ".csv" if fmt == "csv" else ".aer"
    entries = []
    for rec in dataset.recordings:
        fname = f"{rec.example_id}{ext}"
        write_events(os.path.join(out_dir, fname), rec.events, fmt)
        entries.append({"file": fname, "label": rec.label, "example_id": rec.example_id,
                        **({"meta": rec.meta} if rec.meta else {})})
    manifest = {"format": fmt, "geometry": str(geometry), "recordings": entries, **(extra or {})}
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return os.path.join(out_dir, MANIFEST)


def load_dataset(path):
    """Load a dataset directory (or manifest path)."""
    mpath = os.path.join(path, MANIFEST) if os.path.isdir(path) else path
    root = os.path.dirname(mpath)
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    geometry = SensorGeometry.parse(manifest.get("geometry", "128x128"))
    recs = []
    for entry in manifest["recordings"]:
        res = read_events(os.path.join(root, entry["file"]), geometry=geometry)
        recs.append(Recording(entry["label"], res.events, entry.get("example_id", entry["file"]),
                              entry.get("meta", {})))
    return Dataset(recs), geometry
