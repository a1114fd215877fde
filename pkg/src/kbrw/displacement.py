"""Displacement laws with exponential-power tails.

Two closed-form families are provided. Both of them make the scaling constant
``c_N`` and the limiting tail profile ``h`` available exactly:

* ``two_sided_exponential_power``: ``1 - F(x) = exp(-x**rho) / 2`` for
  ``x >= 0`` and ``F(x) = exp(-c_minus * |x|**rho) / 2`` for ``x <= 0``.
* ``right_exponential_left_bounded``: ``1 - F(x) = exp(-x**rho)`` for
  ``x >= 0``. All mass sits on ``[0, inf)``, so the left tail is empty and
  the law realizes ``c_minus = inf``.

An optional affine map ``x -> shift + scale * x`` is applied to the
standardized law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_SIDED = "two_sided_exponential_power"
RIGHT_BOUNDED = "right_exponential_left_bounded"
FAMILIES = (TWO_SIDED, RIGHT_BOUNDED)

# Uniforms are drawn on the open interval (0, 1) from 53 random bits.
_U_SCALE = 2.0 ** -53


@dataclass(frozen=True)
class TailProfile:
    """Limiting tail exponent ``h``: ``-x**rho`` on the right, ``-c_minus*|x|**rho`` on the left."""

    rho: float
    c_minus: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.c_minus > 0:
            raise ValueError(f"c_minus must be positive or inf, got {self.c_minus}")

    @property
    def left_bounded(self) -> bool:
        return math.isinf(self.c_minus)


def h_value(profile: TailProfile, x):
    """Evaluate ``h`` at ``x`` (scalar or array). Returns ``-inf`` left of 0 when ``c_minus = inf``."""
    xa = np.asarray(x, dtype=float)
    ax = np.abs(xa) ** profile.rho
    with np.errstate(invalid="ignore"):
        if profile.left_bounded:
            left = np.where(xa < 0, -np.inf, 0.0)
        else:
            left = -profile.c_minus * ax
    out = np.where(xa >= 0, -ax, left)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class DisplacementLaw:
    family: str = TWO_SIDED
    rho: float = 1.0
    c_minus: float = 1.0
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.family == RIGHT_BOUNDED:
            if not math.isinf(self.c_minus):
                # The family has an empty left tail; normalize the field.
                object.__setattr__(self, "c_minus", math.inf)
        elif not (self.c_minus > 0 and math.isfinite(self.c_minus)):
            raise ValueError("two-sided family needs a finite positive c_minus")

    @property
    def tail(self) -> TailProfile:
        return TailProfile(self.rho, self.c_minus)

    # Standardized law (scale 1, shift 0) -------------------------------
    def _sf0(self, z):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        if self.family == TWO_SIDED:
            right = 0.5 * np.exp(-zp ** self.rho)
            left = 1.0 - 0.5 * np.exp(-self.c_minus * np.abs(np.minimum(z, 0.0)) ** self.rho)
            return np.where(z >= 0, right, left)
        return np.where(z >= 0, np.exp(-zp ** self.rho), 1.0)

    def _cdf0(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == TWO_SIDED:
            zn = np.abs(np.minimum(z, 0.0))
            left = 0.5 * np.exp(-self.c_minus * zn ** self.rho)
            right = 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0) ** self.rho)
            return np.where(z <= 0, left, right)
        return np.where(z >= 0, -np.expm1(-np.maximum(z, 0.0) ** self.rho), 0.0)

    def _ppf0(self, u):
        u = np.asarray(u, dtype=float)
        inv_rho = 1.0 / self.rho
        if self.family == TWO_SIDED:
            lo = u < 0.5
            # Left branch: F(z) = exp(-c|z|^rho)/2 = u.
            ul = np.where(lo, u, 0.25)
            left = -(np.log(0.5 / ul) / self.c_minus) ** inv_rho
            # Right branch: 1 - F(z) = exp(-z^rho)/2 = 1 - u.
            ur = np.where(lo, 0.75, u)
            right = np.log(0.5 / (1.0 - ur)) ** inv_rho
            return np.where(lo, left, right)
        return (-np.log1p(-u)) ** inv_rho

    # Public interface ---------------------------------------------------
    def sf(self, x):
        """Survival function ``1 - F(x)``."""
        return self._sf0((np.asarray(x, dtype=float) - self.shift) / self.scale)

    def cdf(self, x):
        return self._cdf0((np.asarray(x, dtype=float) - self.shift) / self.scale)

    def ppf(self, u):
        """Inverse CDF on ``(0, 1)``."""
        return self.shift + self.scale * self._ppf0(u)

    def log_sf(self, x) -> float:
        """``log(1 - F(x))`` computed without cancellation in the far right tail."""
        z = (float(x) - self.shift) / self.scale
        if z >= 0:
            base = -(z ** self.rho)
            return base - math.log(2.0) if self.family == TWO_SIDED else base
        return math.log(float(self._sf0(z)))

    def log_cdf(self, x) -> float:
        """``log F(x)``; ``-inf`` where ``F`` vanishes."""
        z = (float(x) - self.shift) / self.scale
        if self.family == TWO_SIDED and z <= 0:
            return -math.log(2.0) - self.c_minus * abs(z) ** self.rho
        c = float(self._cdf0(z))
        return math.log(c) if c > 0 else -math.inf


def quantile_scale(law: DisplacementLaw, N: int) -> float:
    """Smallest ``x`` with ``1 - F(x) >= 1/N`` (the ``(1 - 1/N)``-quantile)."""
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    inv_rho = 1.0 / law.rho
    if law.family == TWO_SIDED:
        z = math.log(N / 2.0) ** inv_rho
    else:
        z = math.log(N) ** inv_rho
    return law.shift + law.scale * z


def sample(law: DisplacementLaw, rng: np.random.Generator, size=None):
    """Inverse-CDF draws from ``law``; exactly one 53-bit uniform per draw."""
    bits = rng.integers(0, 2 ** 53, size=size, dtype=np.int64)
    u = (bits.astype(float) + 0.5) * _U_SCALE
    out = law.ppf(u)
    if size is None:
        return float(out)
    return out


def karamata_deviation(law: DisplacementLaw, N: int, x: float) -> float:
    """``log P(X beyond x c_N) / log N - h(x)`` for the tail on the side of ``x``.

    Returns ``inf`` when the relevant tail probability is exactly zero, which
    flags that the law does not see that side of ``h`` at scale ``c_N``.
    """
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    if x == 0:
        raise ValueError("x must be nonzero")
    c_N = quantile_scale(law, N)
    logN = math.log(N)
    if x > 0:
        lp = law.log_sf(x * c_N)
    else:
        lp = law.log_cdf(x * c_N)
    if math.isinf(lp):
        return math.inf
    return lp / logN - h_value(law.tail, x)
