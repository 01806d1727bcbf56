"""Address-Event-Representation streams: codecs, validation, synthesis, perturbation.

Event streams are held as numpy structured arrays with :data:`EVENT_DTYPE`, whose
memory layout is exactly one ``binary-v1`` record (16 bytes, little-endian), so
binary decoding is a zero-copy view.
"""

import io
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .util import round_half_away

log = logging.getLogger(__name__)

EVENT_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("_reserved", "V3")]
)
RECORD_SIZE = EVENT_DTYPE.itemsize
MAGIC = b"AERHF1\x00\x00"
CSV_HEADER = "t_us,x,y,p"
FORMATS = ("binary-v1", "csv")

# engine keeps time in int64 and uses a large negative "never spiked" sentinel
MAX_TIMESTAMP = 1 << 62

LOG_FLOOR = 1e-3


class AERDecodeError(ValueError):
    """Malformed record. ``offset`` is a byte offset (binary) or 1-based line (csv)."""

    def __init__(self, message, offset, unit="byte"):
        super().__init__(f"{message} (at {unit} {offset})")
        self.reason = message
        self.offset = int(offset)
        self.unit = unit


class EventValidationError(ValueError):
    def __init__(self, message, index):
        super().__init__(f"event #{index}: {message}")
        self.index = index


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid sensor geometry {self.width}x{self.height}")

    def __str__(self):
        return f"{self.width}x{self.height}"

    @classmethod
    def parse(cls, text):
        w, h = str(text).lower().split("x")
        return cls(int(w), int(h))


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


class DecodeResult(NamedTuple):
    events: np.ndarray
    resorted: bool  # input had decreasing timestamps and was stable-sorted
    magic: bool  # binary input carried the optional file magic


def make_events(t=(), x=(), y=(), p=()):
    """Build an event array from column sequences."""
    t = np.asarray(t, dtype=np.int64)
    out = np.zeros(t.shape[0], dtype=EVENT_DTYPE)
    if t.size and t.min() < 0:
        raise ValueError("timestamps must be non-negative")
    out["t"] = t
    out["x"] = x
    out["y"] = y
    out["p"] = p
    return out


def events_from_records(records):
    records = list(records)
    if not records:
        return make_events()
    t, x, y, p = zip(*records)
    return make_events(t, x, y, p)


def to_records(events):
    return [Event(int(e["t"]), int(e["x"]), int(e["y"]), int(e["p"])) for e in events]


def empty_events():
    return np.zeros(0, dtype=EVENT_DTYPE)


def is_sorted(events):
    t = events["t"]
    return bool(t.size < 2 or np.all(t[1:] >= t[:-1]))


def sort_events(events):
    """Stable sort by timestamp; ties keep arrival order."""
    order = np.argsort(events["t"], kind="stable")
    return events[order]


def validate_events(events, geometry):
    """Check coordinates, polarity and timestamp range. Raises EventValidationError."""
    bad = (
        (events["x"] >= geometry.width)
        | (events["y"] >= geometry.height)
        | (events["p"] > 1)
        | (events["t"] >= MAX_TIMESTAMP)
    )
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        e = events[i]
        raise EventValidationError(
            f"t={int(e['t'])} x={int(e['x'])} y={int(e['y'])} p={int(e['p'])} "
            f"outside {geometry} sensor / valid ranges",
            i,
        )


def _decode_binary(data):
    magic = data[: len(MAGIC)] == MAGIC
    start = len(MAGIC) if magic else 0
    body = len(data) - start
    if body % RECORD_SIZE:
        last = start + (body // RECORD_SIZE) * RECORD_SIZE
        raise AERDecodeError(f"truncated record ({body % RECORD_SIZE} trailing bytes)", last)
    events = np.frombuffer(data, dtype=EVENT_DTYPE, offset=start).copy()
    reserved = np.frombuffer(events["_reserved"].tobytes(), dtype=np.uint8).reshape(-1, 3)
    bad = np.flatnonzero(reserved.any(axis=1) | (events["p"] > 1))
    if bad.size:
        i = int(bad[0])
        what = "non-zero reserved bytes" if reserved[i].any() else f"polarity {int(events['p'][i])}"
        raise AERDecodeError(f"malformed record: {what}", start + i * RECORD_SIZE)
    return events, magic


def _decode_csv(text):
    ts, xs, ys, ps = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line.replace(" ", "") == CSV_HEADER:
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise AERDecodeError(f"expected 4 fields, got {len(fields)}", lineno, "line")
        try:
            t, x, y, p = (int(f) for f in fields)
        except ValueError:
            raise AERDecodeError(f"non-integer field in {line!r}", lineno, "line") from None
        if t < 0 or x < 0 or y < 0 or p not in (0, 1) or x > 0xFFFF or y > 0xFFFF:
            raise AERDecodeError(f"field out of range in {line!r}", lineno, "line")
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
    return make_events(ts, xs, ys, ps)


def decode_events(data, fmt="binary-v1", geometry=SensorGeometry()):
    """Decode and validate an event stream.

    ``data`` is ``bytes`` for binary-v1 and ``str`` (or utf-8 bytes) for csv.
    Streams with decreasing timestamps are stable-sorted and flagged.
    """
    magic = False
    if fmt == "binary-v1":
        events, magic = _decode_binary(bytes(data))
    elif fmt == "csv":
        if isinstance(data, (bytes, bytearray)):
            data = data.decode("utf-8")
        events = _decode_csv(data)
    else:
        raise ValueError(f"unknown event format {fmt!r}; expected one of {FORMATS}")
    validate_events(events, geometry)
    resorted = not is_sorted(events)
    if resorted:
        log.warning("event stream has decreasing timestamps; stable-sorted")
        events = sort_events(events)
    return DecodeResult(events, resorted, magic)


def encode_events(events, fmt="binary-v1", magic=False):
    if not is_sorted(events):
        raise ValueError("events must be sorted by timestamp before encoding")
    if fmt == "binary-v1":
        out = np.ascontiguousarray(events, dtype=EVENT_DTYPE).copy()
        out["_reserved"] = b"\x00\x00\x00"
        return (MAGIC if magic else b"") + out.tobytes()
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for t, x, y, p in zip(
            events["t"].tolist(), events["x"].tolist(), events["y"].tolist(), events["p"].tolist()
        ):
            buf.write(f"{t},{x},{y},{p}\n")
        return buf.getvalue()
    raise ValueError(f"unknown event format {fmt!r}; expected one of {FORMATS}")


def guess_format(path):
    return "csv" if str(path).lower().endswith(".csv") else "binary-v1"


def read_events(path, fmt=None, geometry=SensorGeometry()):
    fmt = fmt or guess_format(path)
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_events(data, fmt, geometry)


def write_events(path, events, fmt=None, magic=False):
    fmt = fmt or guess_format(path)
    payload = encode_events(events, fmt, magic=magic)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(payload)


def iter_binary_chunks(path, chunk_events=65536, geometry=SensorGeometry()) -> Iterator[np.ndarray]:
    """Decode a binary-v1 file incrementally, validating each chunk.

    Chunks must arrive already sorted across chunk boundaries; a regression
    raises instead of sorting, because earlier chunks may already be consumed.
    """
    size = os.path.getsize(path)
    last_t = 0
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        offset = len(MAGIC) if head == MAGIC else 0
        fh.seek(offset)
        if (size - offset) % RECORD_SIZE:
            raise AERDecodeError("truncated record", size - (size - offset) % RECORD_SIZE)
        while True:
            data = fh.read(chunk_events * RECORD_SIZE)
            if not data:
                return
            try:
                events, _ = _decode_binary(data)
            except AERDecodeError as err:
                raise AERDecodeError(err.reason, offset + err.offset) from None
            validate_events(events, geometry)
            if events.size:
                if not is_sorted(events) or int(events["t"][0]) < last_t:
                    raise AERDecodeError("timestamp regression in streamed input", offset)
                last_t = int(events["t"][-1])
            offset += len(data)
            yield events


# --------------------------------------------------------------------------
# idealized sensor


@dataclass
class Sprite:
    intensity: np.ndarray
    background: float = 0.2

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.intensity.ndim != 2 or self.intensity.size == 0:
            raise ValueError("sprite intensity must be a non-empty 2-D grid")
        if (self.intensity < 0).any() or self.background < 0:
            raise ValueError("sprite intensities must be >= 0")
        if np.all(self.intensity == self.background):
            raise ValueError("sprite has no pixel differing from background")

    @property
    def shape(self):
        return self.intensity.shape


def default_start(sprite, velocity, geometry):
    """Top-left placement so the sprite enters from the side opposite its motion."""
    h, w = sprite.shape
    vx, vy = velocity
    if abs(vx) >= abs(vy):
        x0 = -w if vx > 0 else geometry.width
        y0 = (geometry.height - h) / 2.0
    else:
        x0 = (geometry.width - w) / 2.0
        y0 = -h if vy > 0 else geometry.height
    return float(x0), float(y0)


def sprite_center(sprite, velocity, start, t_us):
    """Ground-truth sprite centre (pixels) at time ``t_us``."""
    h, w = sprite.shape
    t_ms = np.asarray(t_us, dtype=np.float64) / 1000.0
    return (start[0] + w / 2.0 + velocity[0] * t_ms, start[1] + h / 2.0 + velocity[1] * t_ms)


def _render_log(sprite, padded, x0, y0, rows, cols):
    """Log intensity over the pixel block rows x cols with sprite top-left at (x0, y0)."""
    sy = rows[:, None] - y0
    sx = cols[None, :] - x0
    iy = np.floor(sy).astype(np.int64)
    ix = np.floor(sx).astype(np.int64)
    fy = sy - iy
    fx = sx - ix
    h, w = sprite.shape
    # padded has one background ring on each side; sprite pixel (r, c) -> padded (r+1, c+1)
    y0i, y1i = np.clip(iy + 1, 0, h + 1), np.clip(iy + 2, 0, h + 1)
    x0i, x1i = np.clip(ix + 1, 0, w + 1), np.clip(ix + 2, 0, w + 1)
    a = padded[y0i, x0i]
    b = padded[y0i, x1i]
    c = padded[y1i, x0i]
    d = padded[y1i, x1i]
    val = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    return np.log(np.maximum(val, LOG_FLOOR))


def synth_translate(
    sprite,
    velocity,
    duration_ms,
    contrast_threshold,
    geometry=SensorGeometry(),
    seed=0,
    start=None,
    threshold_mismatch=0.0,
    pixel_refractory_us=0,
    step_us=None,
):
    """Idealized change-detection sensor viewing a sprite translating at constant velocity.

    Each pixel keeps a log-intensity reference level; whenever the current log
    intensity departs from it by the pixel's contrast threshold an event fires
    at the linearly interpolated crossing time and the reference moves one
    threshold step. ``velocity`` is in pixels/ms, ``start`` is the sprite's
    top-left corner at t=0 (defaults to entering from off-sensor).
    """
    h, w = sprite.shape
    if h > geometry.height or w > geometry.width:
        raise ValueError(f"sprite {w}x{h} larger than sensor {geometry}")
    vx, vy = float(velocity[0]), float(velocity[1])
    speed = math.hypot(vx, vy)
    if speed == 0:
        raise ValueError("velocity must be non-zero")
    if contrast_threshold <= 0:
        raise ValueError("contrast_threshold must be > 0")
    if start is None:
        start = default_start(sprite, (vx, vy), geometry)
    rng = np.random.default_rng(seed)
    thresh = np.full((geometry.height, geometry.width), float(contrast_threshold))
    if threshold_mismatch > 0:
        thresh *= 1.0 + threshold_mismatch * rng.standard_normal(thresh.shape)
        np.maximum(thresh, 0.05 * contrast_threshold, out=thresh)

    padded = np.pad(sprite.intensity, 1, constant_values=sprite.background)
    # move at most ~0.05 px per step so log intensity is near-linear within a step
    if step_us is None:
        step_us = max(1, min(100, int(50.0 / speed)))
    duration_us = int(round(duration_ms * 1000))
    all_rows = np.arange(geometry.height, dtype=np.float64)
    all_cols = np.arange(geometry.width, dtype=np.float64)
    ref = _render_log(sprite, padded, start[0], start[1], all_rows, all_cols)
    last_event = np.full(ref.shape, -(1 << 40), dtype=np.int64)

    chunks_t, chunks_x, chunks_y, chunks_p = [], [], [], []
    t0 = 0
    x_a, y_a = start
    prev_block = None
    while t0 < duration_us:
        t1 = min(t0 + step_us, duration_us)
        x_b = start[0] + vx * t1 / 1000.0
        y_b = start[1] + vy * t1 / 1000.0
        r0 = max(int(math.floor(min(y_a, y_b))) - 1, 0)
        r1 = min(int(math.ceil(max(y_a, y_b))) + h + 1, geometry.height)
        c0 = max(int(math.floor(min(x_a, x_b))) - 1, 0)
        c1 = min(int(math.ceil(max(x_a, x_b))) + w + 1, geometry.width)
        if r0 < r1 and c0 < c1:
            rows, cols = all_rows[r0:r1], all_cols[c0:c1]
            key = (r0, r1, c0, c1, x_a, y_a)
            if prev_block is not None and prev_block[0] == key:
                l_a = prev_block[1]
            else:
                l_a = _render_log(sprite, padded, x_a, y_a, rows, cols)
            l_b = _render_log(sprite, padded, x_b, y_b, rows, cols)
            prev_block = ((r0, r1, c0, c1, x_b, y_b), l_b)
            ref_blk = ref[r0:r1, c0:c1]
            th_blk = thresh[r0:r1, c0:c1]
            diff = l_b - ref_blk
            n = np.floor(np.abs(diff) / th_blk).astype(np.int64)
            if n.any():
                sign = np.sign(diff)
                slope = l_b - l_a
                for k in range(1, int(n.max()) + 1):
                    iy, ix = np.nonzero(n >= k)
                    level = ref_blk[iy, ix] + sign[iy, ix] * k * th_blk[iy, ix]
                    s = slope[iy, ix]
                    with np.errstate(divide="ignore", invalid="ignore"):
                        frac = np.where(s != 0, (level - l_a[iy, ix]) / s, 1.0)
                    frac = np.clip(frac, 0.0, 1.0)
                    tc = np.floor(t0 + frac * (t1 - t0)).astype(np.int64)
                    gy, gx = iy + r0, ix + c0
                    if pixel_refractory_us > 0:
                        ok = tc - last_event[gy, gx] >= pixel_refractory_us
                        last_event[gy[ok], gx[ok]] = tc[ok]
                        tc, gy, gx, sgn = tc[ok], gy[ok], gx[ok], sign[iy, ix][ok]
                    else:
                        sgn = sign[iy, ix]
                    chunks_t.append(tc)
                    chunks_x.append(gx)
                    chunks_y.append(gy)
                    chunks_p.append((sgn > 0).astype(np.uint8))
                ref_blk += sign * n * th_blk
        x_a, y_a = x_b, y_b
        t0 = t1

    if not chunks_t:
        return empty_events()
    events = make_events(
        np.concatenate(chunks_t),
        np.concatenate(chunks_x),
        np.concatenate(chunks_y),
        np.concatenate(chunks_p),
    )
    return sort_events(events)


def add_jitter(events, sigma_ms, seed=0):
    """Add zero-mean Gaussian timing noise (std ``sigma_ms``), clamp at 0, re-sort."""
    if sigma_ms < 0:
        raise ValueError("sigma must be >= 0")
    out = events.copy()
    if sigma_ms == 0 or out.size == 0:
        return out
    rng = np.random.default_rng(seed)
    delta = round_half_away(rng.normal(0.0, sigma_ms * 1000.0, out.size))
    out["t"] = np.maximum(out["t"].astype(np.int64) + delta, 0)
    return sort_events(out)


def shift_time(events, offset_us):
    out = events.copy()
    t = out["t"].astype(np.int64) + int(offset_us)
    if t.size and t.min() < 0:
        raise ValueError("shift would produce negative timestamps")
    out["t"] = t
    return out


def add_noise(events, rate, geometry=SensorGeometry(), seed=0):
    """Inject uniform background events (Poisson, ``rate`` events/s) over the stream's span."""
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0 or events.size == 0:
        return events.copy()
    rng = np.random.default_rng(seed)
    t_lo, t_hi = int(events["t"].min()), int(events["t"].max())
    n = int(rng.poisson(rate * (t_hi - t_lo) / 1e6))
    noise = make_events(
        rng.integers(t_lo, t_hi + 1, n),
        rng.integers(0, geometry.width, n),
        rng.integers(0, geometry.height, n),
        rng.integers(0, 2, n),
    )
    return sort_events(np.concatenate([events, noise]))
