"""Integer Integrate-and-Fire neuron with linear decay, refractory period and lateral reset.

This is the scalar reference model. The vectorised and compiled engines in
:mod:`hfirst.network` implement the same update and are tested against it.

Units: membrane potential in integer mV, time in integer microseconds. Decay
and refractoriness are evaluated at 1 ms precision.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

# "never spiked": far enough in the past that no neuron starts refractory
NEVER = -(1 << 60)
US_PER_MS = 1000


class TimeRegressionError(ValueError):
    pass


@dataclass(frozen=True)
class NeuronParams:
    v_thresh: int
    leak: int  # mV/ms
    t_refr: int  # ms

    def __post_init__(self):
        for name in ("v_thresh", "leak", "t_refr"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 0 <= value <= 255:
                raise ValueError(f"{name}={value!r} must be an unsigned 8-bit integer")
        if self.v_thresh < 1:
            raise ValueError("v_thresh must be >= 1")


@dataclass(frozen=True)
class NeuronState:
    vm: int = 0
    t_last_update: int = 0
    t_last_spike: int = NEVER


class SynapticInput(NamedTuple):
    t: int
    weight: int


def decay(vm, dt, leak):
    """Linear leak toward zero over ``dt`` whole ms; never crosses zero."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if vm >= 0:
        return max(vm - leak * dt, 0)
    return min(vm + leak * dt, 0)


def elapsed_ms(t_from, t_to):
    """Whole milliseconds elapsed between two µs timestamps (sub-ms remainder dropped)."""
    return (t_to - t_from) // US_PER_MS


def is_refractory(state, t, params):
    return (t - state.t_last_spike) // US_PER_MS < params.t_refr


def integrate(state, inp, params):
    """Apply one synaptic input. Returns ``(new_state, spiked)``."""
    t, weight = inp
    if t < state.t_last_update:
        raise TimeRegressionError(
            f"input at t={t} precedes last update t={state.t_last_update}"
        )
    if is_refractory(state, t, params):
        return state, False
    vm = decay(state.vm, elapsed_ms(state.t_last_update, t), params.leak) + weight
    if vm >= params.v_thresh:
        return NeuronState(0, t, t), True
    return NeuronState(vm, t, state.t_last_spike), False


def lateral_reset(state, t, clear_vm=False):
    """Force refraction as if the neuron had just spiked.

    The published update only moves ``t_last_spike``; ``clear_vm`` additionally
    zeroes the membrane.
    """
    if clear_vm:
        return replace(state, vm=0, t_last_spike=t)
    return replace(state, t_last_spike=t)
