"""Small numeric helpers shared across modules."""

import hashlib

import numpy as np


def round_half_away(x):
    """Round to nearest integer, ties away from zero (platform independent).

    Accepts scalars or arrays; returns int64 for arrays and ``int`` for scalars.
    """
    arr = np.asarray(x, dtype=np.float64)
    out = (np.sign(arr) * np.floor(np.abs(arr) + 0.5)).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


def digest(text, length=12):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]
