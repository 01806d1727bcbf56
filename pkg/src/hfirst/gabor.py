"""Integer even-Gabor synaptic kernels for the S1 orientation bank.

Kernels are indexed ``W[theta_index, du + r, dv + r]`` where ``du``/``dv`` are
the horizontal/vertical offsets (event minus neuron position) and ``r`` is the
kernel radius. Channel ``i`` uses ``theta = i * 180 / orientations`` degrees; its
cosine carrier runs along direction ``theta``, so it prefers lines of events
whose normal points along ``theta`` (e.g. channel 90 deg: horizontal edges
sweeping vertically).
"""

from dataclasses import dataclass

import numpy as np

from .util import round_half_away


@dataclass(frozen=True)
class GaborParams:
    wavelength: float = 5.0
    sigma: float = 2.8
    gamma: float = 0.3
    size: int = 7
    orientations: int = 12
    weight_scale: int = 100

    def __post_init__(self):
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 3, got {self.size}")
        if self.orientations < 1:
            raise ValueError("need at least one orientation")
        if self.weight_scale < 1:
            raise ValueError("weight_scale must be >= 1")

    @property
    def radius(self):
        return self.size // 2

    def thetas(self):
        step = 180.0 / self.orientations
        return [i * step for i in range(self.orientations)]


def gabor_kernel(theta_deg, params=GaborParams()):
    """Quantized kernel for one orientation, shape ``(size, size)`` indexed [du, dv]."""
    r = params.radius
    offs = np.arange(-r, r + 1, dtype=np.float64)
    du, dv = np.meshgrid(offs, offs, indexing="ij")
    th = np.deg2rad(theta_deg)
    u0 = du * np.cos(th) + dv * np.sin(th)
    v0 = -du * np.sin(th) + dv * np.cos(th)
    f = np.exp(-(u0**2 + params.gamma**2 * v0**2) / (2 * params.sigma**2)) * np.cos(
        2 * np.pi * u0 / params.wavelength
    )
    return round_half_away(params.weight_scale * f).astype(np.int32)


def s1_kernels(params=GaborParams()):
    return np.stack([gabor_kernel(th, params) for th in params.thetas()]).astype(np.int32)
