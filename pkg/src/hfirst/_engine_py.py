"""Pure-Python (numpy) implementation of the S1/C1/S2/C2 cascade.

Used when the compiled ``_engine`` extension is unavailable, and as the
readable statement of the propagation semantics both backends share:

* Events are consumed strictly in order. Everything an event causes (S1 -> C1
  -> S2 -> C2, including lateral resets) completes before the next event.
* All S1 neurons in the event's window integrate first; the resulting S1
  spikes are then propagated one at a time, depth-first, in (orientation, y, x)
  order. Ties in a C1 unit therefore go to the lower orientation index.
* A C1 spike drives every S2 neuron in its window; all S2 neurons crossing
  threshold on that input spike together (in (class, y, x) order), and only
  then do their lateral resets apply. A reset spares the spiking class.
* Tallies follow the worst-case synapse accounting: C1 counts 1 feedforward
  plus (orientations - 1) reset synapses per S1 spike; S2_rst counts every
  neuron in the reset window including the spiking class. Resets actually
  applied are tallied separately.
"""

import numpy as np

from .neuron import NEVER

SPIKE_DTYPE = np.dtype(
    [("t", "<i8"), ("layer", "<i4"), ("x", "<i4"), ("y", "<i4"), ("channel", "<i4")]
)

COUNTER_NAMES = (
    "events_in", "events_admitted",
    "s1_ff", "c1_ff", "c1_rst_counted", "c1_rst_applied",
    "s2_ff", "s2_rst_counted", "s2_rst_applied", "c2_ff",
    "spikes_s1", "spikes_c1", "spikes_s2", "spikes_c2",
)


def _integrate_block(vm, tlu, tls, t, w, params):
    """Vectorised integrate over views of a layer; returns the spike mask."""
    thr, leak, refr = params
    active = (t - tls) // 1000 >= refr
    dt = (t - tlu) // 1000
    v = vm.astype(np.int64)
    v = np.where(v >= 0, np.maximum(v - leak * dt, 0), np.minimum(v + leak * dt, 0)) + w
    spike = active & (v >= thr)
    vm[active] = np.where(spike, 0, v)[active]
    tlu[active] = t
    tls[spike] = t
    return spike


class _Layer:
    def __init__(self, shape):
        self.vm = np.zeros(shape, np.int32)
        self.tlu = np.zeros(shape, np.int64)
        self.tls = np.full(shape, NEVER, np.int64)


class PyEngine:
    def __init__(self, cfg, s1_kernels, s2_kernels, record=(True, True, True, True)):
        self.width = cfg.geometry.width
        self.height = cfg.geometry.height
        self.use_c1 = not cfg.bypass_s1_c1
        self.use_s1 = self.use_c1 and not cfg.bypass_s1
        self.n_orient = cfg.n_channels
        self.pool = cfg.pool_size
        self.c1_h, self.c1_w = cfg.c1_shape
        self.s2_h, self.s2_w = cfg.s2_shape
        self.c1_reset = not cfg.disable_c1_reset
        self.s2_reset = not cfg.disable_s2_reset
        self.clear_vm = cfg.reset_clears_vm
        self.enable_c2 = cfg.enable_c2
        self.polarity = cfg.polarity_policy
        self.p_s1 = (cfg.s1.v_thresh, cfg.s1.leak, cfg.s1.t_refr)
        self.p_c1 = (cfg.c1.v_thresh, cfg.c1.leak, cfg.c1.t_refr)
        self.p_s2 = (cfg.s2.v_thresh, cfg.s2.leak, cfg.s2.t_refr)
        self.p_c2 = (cfg.c2.v_thresh, cfg.c2.leak, cfg.c2.t_refr)

        self.k1 = np.ascontiguousarray(s1_kernels, dtype=np.int32)
        if self.use_s1 and (self.k1.ndim != 3 or self.k1.shape[0] != self.n_orient):
            raise ValueError("s1 kernels must be (orientations, size, size)")
        self.radius = self.k1.shape[1] // 2 if self.k1.ndim == 3 else 0
        self.k2 = np.ascontiguousarray(s2_kernels, dtype=np.int32)
        if self.k2.ndim != 4 or tuple(self.k2.shape[1:]) != tuple(cfg.s2_kernel_shape):
            raise ValueError(
                f"s2 kernels must be (classes, {cfg.s2_kernel_shape}), got {self.k2.shape}"
            )
        self.n_classes, self.kx, self.ky, self.kc = self.k2.shape
        self.lo_x, self.lo_y = self.kx // 2, self.ky // 2

        o = self.n_orient
        self.s1 = _Layer((o, self.height, self.width) if self.use_s1 else (1, 1, 1))
        self.c1 = _Layer((o, self.c1_h, self.c1_w))
        n = max(self.n_classes, 1)
        self.s2 = _Layer((n, self.s2_h, self.s2_w))
        self.c2 = _Layer((n,))
        self.counters = dict.fromkeys(COUNTER_NAMES, 0)
        self.last_t = 0
        self.record = tuple(bool(r) for r in record)
        self.out = []

    def counts(self):
        return dict(self.counters)

    def layer_state(self, layer):
        lay = {"S1": self.s1, "C1": self.c1, "S2": self.s2, "C2": self.c2}[layer]
        return lay.vm.copy(), lay.tlu.copy(), lay.tls.copy()

    def take_spikes(self):
        arr = np.array(self.out, dtype=SPIKE_DTYPE) if self.out else np.zeros(0, SPIKE_DTYPE)
        self.out = []
        return arr

    def feed(self, events):
        cnt = self.counters
        for i, (t, x, y, p) in enumerate(
            zip(
                events["t"].astype(np.int64).tolist(),
                events["x"].tolist(),
                events["y"].tolist(),
                events["p"].tolist(),
            )
        ):
            if t < self.last_t:
                raise ValueError(
                    f"event #{i}: timestamp {t} precedes {self.last_t}; input must be sorted"
                )
            if x >= self.width or y >= self.height:
                raise ValueError(f"event #{i}: ({x}, {y}) outside {self.width}x{self.height}")
            self.last_t = t
            cnt["events_in"] += 1
            if (self.polarity == "on_only" and p == 0) or (self.polarity == "off_only" and p == 1):
                continue
            cnt["events_admitted"] += 1
            if self.use_s1:
                self._s1(x, y, t)
            elif self.use_c1:
                self._c1(x // self.pool, y // self.pool, 0, t)
            else:
                self._s2(x, y, 0, t)

    def _s1(self, x, y, t):
        r = self.radius
        x0, x1 = max(x - r, 0), min(x + r, self.width - 1)
        y0, y1 = max(y - r, 0), min(y + r, self.height - 1)
        du = x - np.arange(x0, x1 + 1) + r
        dv = y - np.arange(y0, y1 + 1) + r
        w = self.k1[:, du][:, :, dv].transpose(0, 2, 1)
        sl = (slice(None), slice(y0, y1 + 1), slice(x0, x1 + 1))
        lay = self.s1
        spike = _integrate_block(lay.vm[sl], lay.tlu[sl], lay.tls[sl], t, w, self.p_s1)
        self.counters["s1_ff"] += w.size
        for th, yy, xx in zip(*np.nonzero(spike)):
            X, Y = int(xx) + x0, int(yy) + y0
            self.counters["spikes_s1"] += 1
            if self.record[0]:
                self.out.append((t, 0, X, Y, int(th)))
            self._c1(X // self.pool, Y // self.pool, int(th), t)

    def _c1(self, cx, cy, ch, t):
        cnt = self.counters
        cnt["c1_ff"] += 1
        if self.c1_reset:
            cnt["c1_rst_counted"] += self.n_orient - 1
        lay = self.c1
        idx = (slice(ch, ch + 1), cy, cx)
        if not _integrate_block(lay.vm[idx], lay.tlu[idx], lay.tls[idx], t, 1, self.p_c1)[0]:
            return
        cnt["spikes_c1"] += 1
        if self.record[1]:
            self.out.append((t, 1, cx, cy, ch))
        if self.c1_reset:
            others = [o for o in range(self.n_orient) if o != ch]
            lay.tls[others, cy, cx] = t
            if self.clear_vm:
                lay.vm[others, cy, cx] = 0
            cnt["c1_rst_applied"] += self.n_orient - 1
        self._s2(cx, cy, ch, t)

    def _s2(self, cx, cy, ch, t):
        lo_x, lo_y = self.lo_x, self.lo_y
        x0, x1 = max(cx - (self.kx - 1 - lo_x), 0), min(cx + lo_x, self.s2_w - 1)
        y0, y1 = max(cy - (self.ky - 1 - lo_y), 0), min(cy + lo_y, self.s2_h - 1)
        if x0 > x1 or y0 > y1 or self.n_classes == 0:
            return
        du = cx - np.arange(x0, x1 + 1) + lo_x
        dv = cy - np.arange(y0, y1 + 1) + lo_y
        w = self.k2[:, du][:, :, dv, ch].transpose(0, 2, 1)
        sl = (slice(None), slice(y0, y1 + 1), slice(x0, x1 + 1))
        lay = self.s2
        spike = _integrate_block(lay.vm[sl], lay.tlu[sl], lay.tls[sl], t, w, self.p_s2)
        self.counters["s2_ff"] += w.size
        for k, yy, xx in zip(*np.nonzero(spike)):
            self._s2_spike(int(k), int(yy) + y0, int(xx) + x0, t)

    def _s2_spike(self, k, Y, X, t):
        cnt = self.counters
        cnt["spikes_s2"] += 1
        if self.record[2]:
            self.out.append((t, 2, X, Y, k))
        if self.s2_reset:
            x0, x1 = max(X - self.lo_x, 0), min(X + self.kx - 1 - self.lo_x, self.s2_w - 1)
            y0, y1 = max(Y - self.lo_y, 0), min(Y + self.ky - 1 - self.lo_y, self.s2_h - 1)
            area = (x1 - x0 + 1) * (y1 - y0 + 1)
            cnt["s2_rst_counted"] += self.n_classes * area
            cnt["s2_rst_applied"] += (self.n_classes - 1) * area
            others = [c for c in range(self.n_classes) if c != k]
            win = (others, slice(y0, y1 + 1), slice(x0, x1 + 1))
            self.s2.tls[win] = t
            if self.clear_vm:
                self.s2.vm[win] = 0
        if self.enable_c2:
            cnt["c2_ff"] += 1
            lay = self.c2
            idx = slice(k, k + 1)
            if _integrate_block(lay.vm[idx], lay.tlu[idx], lay.tls[idx], t, 1, self.p_c2)[0]:
                cnt["spikes_c2"] += 1
                if self.record[3]:
                    self.out.append((t, 3, 0, 0, k))
