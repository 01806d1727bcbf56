# distutils: language = c++
"""Compiled event-driven S1/C1/S2/C2 cascade.

Mirrors :class:`hfirst._engine_py.PyEngine` exactly; see that module for the
propagation semantics. Internally each layer is an array of neuron records
laid out [y, x, channel] so the channels of one position are contiguous.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t, uint64_t
from libc.string cimport memcpy
from libcpp.algorithm cimport sort
from libcpp.vector cimport vector

cnp.import_array()

cdef int64_t NEVER = -(1LL << 60)

cdef struct SpikeRec:
    int64_t t
    int32_t layer
    int32_t x
    int32_t y
    int32_t channel

cdef packed struct Neuron:
    int64_t tlu
    int64_t tls
    int32_t vm
    int32_t pad

NEURON_DTYPE = np.dtype([("tlu", "<i8"), ("tls", "<i8"), ("vm", "<i4"), ("pad", "<i4")])

SPIKE_DTYPE = np.dtype(
    [("t", "<i8"), ("layer", "<i4"), ("x", "<i4"), ("y", "<i4"), ("channel", "<i4")]
)

COUNTER_NAMES = (
    "events_in", "events_admitted",
    "s1_ff", "c1_ff", "c1_rst_counted", "c1_rst_applied",
    "s2_ff", "s2_rst_counted", "s2_rst_applied", "c2_ff",
    "spikes_s1", "spikes_c1", "spikes_s2", "spikes_c2",
)


cdef struct Params:
    int64_t thr
    int64_t leak
    int64_t refr_us


cdef inline bint _integrate(Neuron* n, int64_t t, int64_t w,
                            const Params* p) noexcept nogil:
    # t >= tls always holds for sorted input, so the floor division in the
    # refractory test reduces to a plain comparison in microseconds
    if t - n.tls < p.refr_us:
        return False
    cdef int64_t dt = (t - n.tlu) // 1000
    cdef int64_t v = n.vm
    if v >= 0:
        v -= p.leak * dt
        if v < 0:
            v = 0
    else:
        v += p.leak * dt
        if v > 0:
            v = 0
    v += w
    n.tlu = t
    if v >= p.thr:
        n.vm = 0
        n.tls = t
        return True
    n.vm = <int32_t>v
    return False


cdef Params _params(layer_params):
    cdef Params p
    p.thr = layer_params.v_thresh
    p.leak = layer_params.leak
    p.refr_us = <int64_t>layer_params.t_refr * 1000
    return p


def _neurons(h, w, c):
    arr = np.zeros((h, w, c), NEURON_DTYPE)
    arr["tls"] = NEVER
    return arr


cdef class CEngine:
    cdef readonly int width, height, n_orient, radius, ksize, pool
    cdef readonly int c1_w, c1_h, s2_w, s2_h, n_classes, kx, ky, kc, lo_x, lo_y
    cdef readonly bint use_s1, use_c1, c1_reset, s2_reset, clear_vm, enable_c2
    cdef readonly int polarity
    cdef Params p1, pc1, p2, pc2
    cdef object _k1, _k2, _s1, _c1, _s2, _c2, _counters
    cdef int32_t* k1      # [du, dv, orientation]
    cdef int32_t* k2      # [du, dv, channel, class]
    cdef Neuron* s1n
    cdef Neuron* c1n
    cdef Neuron* s2n
    cdef Neuron* c2n
    cdef int64_t* cnt
    cdef int64_t last_t
    cdef bint rec_s1, rec_c1, rec_s2, rec_c2
    cdef vector[SpikeRec] out
    cdef vector[int64_t] hits1, hits2

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
        self.polarity = ("merge", "on_only", "off_only").index(cfg.polarity_policy)
        self.p1 = _params(cfg.s1)
        self.pc1 = _params(cfg.c1)
        self.p2 = _params(cfg.s2)
        self.pc2 = _params(cfg.c2)

        k1 = np.ascontiguousarray(s1_kernels, dtype=np.int32)
        if self.use_s1 and (k1.ndim != 3 or k1.shape[0] != self.n_orient):
            raise ValueError("s1 kernels must be (orientations, size, size)")
        self.ksize = k1.shape[1] if k1.ndim == 3 else 1
        self.radius = self.ksize // 2
        self._k1 = np.ascontiguousarray(k1.transpose(1, 2, 0)) if k1.ndim == 3 else np.zeros(1, np.int32)
        k2 = np.ascontiguousarray(s2_kernels, dtype=np.int32)
        if k2.ndim != 4 or tuple(k2.shape[1:]) != tuple(cfg.s2_kernel_shape):
            raise ValueError(
                f"s2 kernels must be (classes, {cfg.s2_kernel_shape}), got {k2.shape}")
        self.n_classes = k2.shape[0]
        self.kx, self.ky, self.kc = k2.shape[1], k2.shape[2], k2.shape[3]
        self.lo_x, self.lo_y = self.kx // 2, self.ky // 2
        self._k2 = np.ascontiguousarray(k2.transpose(1, 2, 3, 0)) if k2.size else np.zeros(1, np.int32)

        o = self.n_orient
        n = max(self.n_classes, 1)
        self._s1 = _neurons(self.height, self.width, o) if self.use_s1 else _neurons(1, 1, 1)
        self._c1 = _neurons(self.c1_h, self.c1_w, o)
        self._s2 = _neurons(self.s2_h, self.s2_w, n)
        self._c2 = _neurons(1, 1, n)
        self._counters = np.zeros(len(COUNTER_NAMES), np.int64)
        self.k1 = <int32_t*>cnp.PyArray_DATA(self._k1)
        self.k2 = <int32_t*>cnp.PyArray_DATA(self._k2)
        self.s1n = <Neuron*>cnp.PyArray_DATA(self._s1)
        self.c1n = <Neuron*>cnp.PyArray_DATA(self._c1)
        self.s2n = <Neuron*>cnp.PyArray_DATA(self._s2)
        self.c2n = <Neuron*>cnp.PyArray_DATA(self._c2)
        self.cnt = <int64_t*>cnp.PyArray_DATA(self._counters)
        self.last_t = 0
        self.rec_s1, self.rec_c1, self.rec_s2, self.rec_c2 = [bool(r) for r in record]

    # -- introspection ----------------------------------------------------
    def counts(self):
        return dict(zip(COUNTER_NAMES, self._counters.tolist()))

    def layer_state(self, layer):
        """Copies of (vm, t_last_update, t_last_spike) for one layer, indexed [channel, y, x]."""
        arr = {"S1": self._s1, "C1": self._c1, "S2": self._s2, "C2": self._c2}[layer]
        if layer == "C2":
            return (arr["vm"][0, 0].copy(), arr["tlu"][0, 0].copy(), arr["tls"][0, 0].copy())
        return tuple(np.ascontiguousarray(arr[f].transpose(2, 0, 1)) for f in ("vm", "tlu", "tls"))

    def take_spikes(self):
        cdef Py_ssize_t n = self.out.size()
        arr = np.empty(n, dtype=SPIKE_DTYPE)
        cdef cnp.ndarray carr = arr
        if n:
            memcpy(cnp.PyArray_DATA(carr), &self.out[0], n * sizeof(SpikeRec))
        self.out.clear()
        return arr

    # -- processing -------------------------------------------------------
    def feed(self, events):
        """Process a sorted chunk of events; spikes accumulate until take_spikes()."""
        cdef Py_ssize_t n = events.shape[0]
        if n == 0:
            return
        cdef uint64_t[::1] ts = np.ascontiguousarray(events["t"], dtype=np.uint64)
        cdef uint16_t[::1] xs = np.ascontiguousarray(events["x"], dtype=np.uint16)
        cdef uint16_t[::1] ys = np.ascontiguousarray(events["y"], dtype=np.uint16)
        cdef uint8_t[::1] ps = np.ascontiguousarray(events["p"], dtype=np.uint8)
        cdef Py_ssize_t i
        cdef int64_t t
        cdef int x, y, p
        for i in range(n):
            t = <int64_t>ts[i]
            x = xs[i]
            y = ys[i]
            if t < self.last_t:
                raise ValueError(f"event #{i}: timestamp {t} precedes {self.last_t}; input must be sorted")
            if x >= self.width or y >= self.height:
                raise ValueError(f"event #{i}: ({x}, {y}) outside {self.width}x{self.height}")
            self.last_t = t
            self.cnt[0] += 1
            p = ps[i]
            if (self.polarity == 1 and p == 0) or (self.polarity == 2 and p == 1):
                continue
            self.cnt[1] += 1
            if self.use_s1:
                self._s1_event(x, y, t)
            elif self.use_c1:
                self._c1_input(x // self.pool, y // self.pool, 0, t)
            else:
                self._s2_input(x, y, 0, t)

    cdef inline void _record(self, int64_t t, int layer, int x, int y, int ch):
        cdef SpikeRec r
        r.t = t
        r.layer = layer
        r.x = x
        r.y = y
        r.channel = ch
        self.out.push_back(r)

    cdef void _s1_event(self, int x, int y, int64_t t):
        cdef int r = self.radius, o = self.n_orient, ks = self.ksize
        cdef int x0 = max(x - r, 0), x1 = min(x + r, self.width - 1)
        cdef int y0 = max(y - r, 0), y1 = min(y + r, self.height - 1)
        cdef int th, X, Y
        cdef Neuron* row
        cdef int32_t* kw
        cdef const Params* p = &self.p1
        self.hits1.clear()
        for Y in range(y0, y1 + 1):
            row = self.s1n + (<Py_ssize_t>Y * self.width) * o
            for X in range(x0, x1 + 1):
                kw = self.k1 + ((x - X + r) * ks + (y - Y + r)) * o
                for th in range(o):
                    if _integrate(row + X * o + th, t, kw[th], p):
                        # sort key gives (orientation, y, x) propagation order
                        self.hits1.push_back((<int64_t>th * self.height + Y) * self.width + X)
        self.cnt[2] += o * (x1 - x0 + 1) * (y1 - y0 + 1)
        if self.hits1.size() > 1:
            sort(self.hits1.begin(), self.hits1.end())
        cdef size_t i
        cdef int64_t key
        for i in range(self.hits1.size()):
            key = self.hits1[i]
            X = key % self.width
            Y = (key // self.width) % self.height
            th = key // (self.width * self.height)
            self.cnt[10] += 1
            if self.rec_s1:
                self._record(t, 0, X, Y, th)
            self._c1_input(X // self.pool, Y // self.pool, th, t)

    cdef void _c1_input(self, int cx, int cy, int ch, int64_t t):
        cdef int o = self.n_orient, k
        cdef Neuron* unit = self.c1n + (<Py_ssize_t>cy * self.c1_w + cx) * o
        self.cnt[3] += 1
        if self.c1_reset:
            self.cnt[4] += o - 1
        if not _integrate(unit + ch, t, 1, &self.pc1):
            return
        self.cnt[11] += 1
        if self.rec_c1:
            self._record(t, 1, cx, cy, ch)
        if self.c1_reset:
            for k in range(o):
                if k != ch:
                    unit[k].tls = t
                    if self.clear_vm:
                        unit[k].vm = 0
            self.cnt[5] += o - 1
        self._s2_input(cx, cy, ch, t)

    cdef void _s2_input(self, int cx, int cy, int ch, int64_t t):
        # S2 neuron at X sees input at cx through offset du = cx - X in [-lo, k - 1 - lo]
        cdef int lo_x = self.lo_x, lo_y = self.lo_y, nk = self.n_classes
        cdef int x0 = max(cx - (self.kx - 1 - lo_x), 0), x1 = min(cx + lo_x, self.s2_w - 1)
        cdef int y0 = max(cy - (self.ky - 1 - lo_y), 0), y1 = min(cy + lo_y, self.s2_h - 1)
        if x0 > x1 or y0 > y1 or nk == 0:
            return
        cdef int k, X, Y
        cdef Neuron* row
        cdef int32_t* kw
        cdef const Params* p = &self.p2
        self.hits2.clear()
        for Y in range(y0, y1 + 1):
            row = self.s2n + (<Py_ssize_t>Y * self.s2_w) * nk
            for X in range(x0, x1 + 1):
                kw = self.k2 + (((cx - X + lo_x) * self.ky + (cy - Y + lo_y)) * self.kc + ch) * nk
                for k in range(nk):
                    if _integrate(row + X * nk + k, t, kw[k], p):
                        self.hits2.push_back((<int64_t>k * self.s2_h + Y) * self.s2_w + X)
        self.cnt[6] += nk * (x1 - x0 + 1) * (y1 - y0 + 1)
        if self.hits2.size() > 1:
            sort(self.hits2.begin(), self.hits2.end())
        # all crossings on this input fire together; resets apply afterwards
        cdef size_t i
        cdef int64_t key
        for i in range(self.hits2.size()):
            key = self.hits2[i]
            self._s2_spike(<int>(key // (self.s2_w * self.s2_h)),
                           <int>((key // self.s2_w) % self.s2_h),
                           <int>(key % self.s2_w), t)

    cdef void _s2_spike(self, int c, int Y0, int X0, int64_t t):
        cdef int lo_x = self.lo_x, lo_y = self.lo_y, nk = self.n_classes
        cdef int k, X, Y, x0, x1, y0, y1, area
        cdef Neuron* cell
        self.cnt[12] += 1
        if self.rec_s2:
            self._record(t, 2, X0, Y0, c)
        if self.s2_reset:
            x0 = max(X0 - lo_x, 0)
            x1 = min(X0 + self.kx - 1 - lo_x, self.s2_w - 1)
            y0 = max(Y0 - lo_y, 0)
            y1 = min(Y0 + self.ky - 1 - lo_y, self.s2_h - 1)
            area = (x1 - x0 + 1) * (y1 - y0 + 1)
            self.cnt[7] += nk * area
            self.cnt[8] += (nk - 1) * area
            for Y in range(y0, y1 + 1):
                for X in range(x0, x1 + 1):
                    cell = self.s2n + (<Py_ssize_t>Y * self.s2_w + X) * nk
                    for k in range(nk):
                        if k != c:
                            cell[k].tls = t
                            if self.clear_vm:
                                cell[k].vm = 0
        if self.enable_c2:
            self.cnt[9] += 1
            if _integrate(self.c2n + c, t, 1, &self.pc2):
                self.cnt[13] += 1
                if self.rec_c2:
                    self._record(t, 3, 0, 0, c)
