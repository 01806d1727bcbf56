"""Network configuration: layer parameters, geometry, ablation switches.

Configs serialize to flat ``key=value`` text so they can be stored next to
results, diffed, and overridden from the command line.
"""

import logging
from dataclasses import dataclass, field, fields, replace

from .aer import SensorGeometry
from .gabor import GaborParams
from .neuron import NeuronParams
from .util import digest

log = logging.getLogger(__name__)

POLARITY_POLICIES = ("merge", "on_only", "off_only")
S2_THRESHOLD_RANGE = (100, 200)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    s1: NeuronParams = NeuronParams(200, 50, 5)
    c1: NeuronParams = NeuronParams(1, 0, 5)
    s2_threshold: int = 200
    s2_leak: int = 10
    s2_t_refr: int = 10
    c2: NeuronParams = NeuronParams(1, 0, 10)
    gabor: GaborParams = field(default_factory=GaborParams)
    pool_size: int = 4
    s2_window: int = 8
    bypass_window: int = 32
    disable_c1_reset: bool = False
    disable_s2_reset: bool = False
    bypass_s1: bool = False
    bypass_s1_c1: bool = False
    enable_c2: bool = False
    polarity_policy: str = "merge"
    reset_clears_vm: bool = False

    def __post_init__(self):
        if self.bypass_s1 and self.bypass_s1_c1:
            raise ConfigError("bypass_s1 and bypass_s1_c1 are mutually exclusive")
        if self.polarity_policy not in POLARITY_POLICIES:
            raise ConfigError(
                f"polarity_policy={self.polarity_policy!r} not in {POLARITY_POLICIES}"
            )
        if self.pool_size < 1 or self.s2_window < 1 or self.bypass_window < 1:
            raise ConfigError("window sizes must be >= 1")
        # validates 8-bit ranges
        self.s2
        lo, hi = S2_THRESHOLD_RANGE
        if not lo <= self.s2_threshold <= hi:
            log.warning("s2_threshold=%d outside the usual %d-%d mV range", self.s2_threshold, lo, hi)

    @property
    def s2(self):
        return NeuronParams(self.s2_threshold, self.s2_leak, self.s2_t_refr)

    @property
    def n_channels(self):
        """Orientation channels reaching S2 (1 when S1 is bypassed)."""
        if self.bypass_s1 or self.bypass_s1_c1:
            return 1
        return self.gabor.orientations

    @property
    def c1_shape(self):
        """C1 grid as (height, width)."""
        p = self.pool_size
        return (-(-self.geometry.height // p), -(-self.geometry.width // p))

    @property
    def s2_shape(self):
        if self.bypass_s1_c1:
            return (self.geometry.height, self.geometry.width)
        return self.c1_shape

    @property
    def s2_kernel_shape(self):
        """(x extent, y extent, channels) of each class template."""
        if self.bypass_s1_c1:
            return (self.bypass_window, self.bypass_window, 1)
        return (self.s2_window, self.s2_window, self.n_channels)

    def replace(self, **changes):
        return replace(self, **changes)

    # -- flat text form -------------------------------------------------
    def to_dict(self):
        d = {"width": self.geometry.width, "height": self.geometry.height}
        for layer in ("s1", "c1", "c2"):
            p = getattr(self, layer)
            d[f"{layer}_v_thresh"] = p.v_thresh
            d[f"{layer}_leak"] = p.leak
            d[f"{layer}_t_refr"] = p.t_refr
        g = self.gabor
        d.update(
            gabor_wavelength=g.wavelength,
            gabor_sigma=g.sigma,
            gabor_gamma=g.gamma,
            gabor_size=g.size,
            gabor_orientations=g.orientations,
            weight_scale=g.weight_scale,
        )
        for f in fields(self):
            if f.name not in ("geometry", "s1", "c1", "c2", "gabor"):
                d[f.name] = getattr(self, f.name)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kw = {}
        try:
            geom = SensorGeometry(int(d.pop("width", 128)), int(d.pop("height", 128)))
            kw["geometry"] = geom
            defaults = cls.__dataclass_fields__
            for layer in ("s1", "c1", "c2"):
                base = defaults[layer].default
                kw[layer] = NeuronParams(
                    int(d.pop(f"{layer}_v_thresh", base.v_thresh)),
                    int(d.pop(f"{layer}_leak", base.leak)),
                    int(d.pop(f"{layer}_t_refr", base.t_refr)),
                )
            g = GaborParams()
            kw["gabor"] = GaborParams(
                wavelength=float(d.pop("gabor_wavelength", g.wavelength)),
                sigma=float(d.pop("gabor_sigma", g.sigma)),
                gamma=float(d.pop("gabor_gamma", g.gamma)),
                size=int(d.pop("gabor_size", g.size)),
                orientations=int(d.pop("gabor_orientations", g.orientations)),
                weight_scale=int(d.pop("weight_scale", g.weight_scale)),
            )
            for name, value in d.items():
                if name not in defaults or name in kw:
                    raise ConfigError(f"unknown network config key {name!r}")
                kind = type(defaults[name].default)
                kw[name] = parse_bool(value) if kind is bool else kind(value)
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(str(err)) from None
        return cls(**kw)

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.to_dict().items())

    def digest(self):
        return digest(self.to_text())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def parse_kv_text(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ablation variants compared in the reset/bypass study
ABLATIONS = {
    "full": {},
    "no_c1_reset": {"disable_c1_reset": True},
    "no_s2_reset": {"disable_s2_reset": True},
    "no_reset": {"disable_c1_reset": True, "disable_s2_reset": True},
    "bypass_s1": {"bypass_s1": True},
    "bypass_s1_c1": {"bypass_s1_c1": True},
}
