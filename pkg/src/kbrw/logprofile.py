"""Piecewise-linear log-profiles and the reproduction / selection operators.

A profile is a function ``R -> [0, inf) u {-inf}`` with compact support. It is
stored as a sorted list of closed linear pieces ``[xl, xr]`` carrying a left
value and a slope. Degenerate pieces (``xl == xr``) represent isolated points
or upward jumps. Between pieces the profile is ``-inf``. Where two pieces meet,
the value at the shared point is the larger of the two (upper-semicontinuous
convention, which is the one produced by sup-convolution).

The operators act exactly on this representation when the tail exponent is
``rho = 1``. Grid versions are provided for general ``rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from kbrw.displacement import TailProfile, h_value

TOL_X = 1e-12  # breakpoints closer than this are identified
TOL_V = 1e-12  # value tolerance (projection, merging, jumps)
TOL_SLOPE = 1e-12
SIGMA_TOL = 1e-12


def project_pi(v):
    """``v`` if ``v >= 0`` else ``-inf`` (works elementwise on arrays)."""
    va = np.asarray(v, dtype=float)
    out = np.where(va >= 0, va, -np.inf)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True, eq=False)
class PiecewiseProfile:
    """Finitely piecewise-linear profile; see the module docstring for the layout."""

    xl: np.ndarray
    xr: np.ndarray
    vl: np.ndarray
    slope: np.ndarray

    def __post_init__(self):
        for name in ("xl", "xr", "vl", "slope"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.xl)
        if not (len(self.xr) == len(self.vl) == len(self.slope) == n):
            raise ValueError("piece arrays must have equal length")
        if n and np.any(self.xr < self.xl):
            raise ValueError("pieces must satisfy xl <= xr")
        if n > 1 and np.any(self.xl[1:] < self.xr[:-1] - TOL_X):
            raise ValueError("pieces must be sorted and non-overlapping")

    # Construction -------------------------------------------------------
    @classmethod
    def empty(cls) -> "PiecewiseProfile":
        return cls([], [], [], [])

    @classmethod
    def point(cls, x: float, v: float) -> "PiecewiseProfile":
        if v < 0:
            return cls.empty()
        return cls([x], [x], [v], [0.0])

    @classmethod
    def from_breakpoints(cls, xs, vs) -> "PiecewiseProfile":
        """Continuous polyline through ``(xs[i], vs[i])``; a single point gives a point mass."""
        xs = np.asarray(xs, dtype=float)
        vs = np.asarray(vs, dtype=float)
        if xs.shape != vs.shape or xs.ndim != 1 or len(xs) == 0:
            raise ValueError("need matching 1-d breakpoint and value arrays")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(vs < 0) or not np.all(np.isfinite(vs)):
            raise ValueError("values must be finite and non-negative")
        if len(xs) == 1:
            return cls.point(xs[0], vs[0])
        s = np.diff(vs) / np.diff(xs)
        return _normalize(xs[:-1], xs[1:], vs[:-1], s)

    @classmethod
    def from_pieces(cls, pieces) -> "PiecewiseProfile":
        """Build from an iterable of ``(xl, xr, vl, slope)`` tuples, normalizing the result."""
        arr = np.array(list(pieces), dtype=float).reshape(-1, 4)
        return _normalize(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    # Basic attributes -----------------------------------------------------
    @property
    def n_pieces(self) -> int:
        return len(self.xl)

    @property
    def is_empty(self) -> bool:
        return self.n_pieces == 0

    @property
    def vr(self) -> np.ndarray:
        return self.vl + self.slope * (self.xr - self.xl)

    @property
    def L(self) -> float:
        return float(self.xl[0]) if self.n_pieces else math.nan

    @property
    def U(self) -> float:
        return float(self.xr[-1]) if self.n_pieces else math.nan

    def breakpoints(self) -> np.ndarray:
        """Sorted distinct piece endpoints."""
        if self.is_empty:
            return np.empty(0)
        return _dedupe(np.concatenate([self.xl, self.xr]))

    def sup(self) -> float:
        if self.is_empty:
            return -math.inf
        return float(max(self.vl.max(), self.vr.max()))

    def argmax(self) -> float:
        """Leftmost point where the supremum is attained."""
        cand = np.concatenate([self.xl, self.xr])
        vals = np.concatenate([self.vl, self.vr])
        best = vals.max()
        return float(cand[vals >= best - TOL_V].min())

    @property
    def is_connected(self) -> bool:
        if self.n_pieces <= 1:
            return True
        return bool(np.all(self.xl[1:] - self.xr[:-1] <= TOL_X))

    @property
    def is_continuous(self) -> bool:
        """No interior jumps: connected and matching values wherever pieces meet."""
        if not self.is_connected:
            return False
        if self.n_pieces <= 1:
            return True
        return bool(np.all(np.abs(self.vl[1:] - self.vr[:-1]) <= 1e-9))

    @property
    def concave(self) -> bool:
        """Class-C flag: continuous on its support with non-increasing slopes."""
        if not self.is_continuous:
            return False
        real = self.xr - self.xl > TOL_X
        s = self.slope[real]
        return bool(np.all(np.diff(s) <= 1e-9))

    def slopes(self) -> np.ndarray:
        """Slopes of the non-degenerate pieces, left to right."""
        return self.slope[self.xr - self.xl > TOL_X].copy()

    # Evaluation -----------------------------------------------------------
    def __call__(self, x):
        return self._eval(x, "value")

    def limits(self, x):
        """One-sided limits together with the value, at each ``x``."""
        return self._eval(x, "left"), self._eval(x, "value"), self._eval(x, "right")

    def _eval(self, x, mode: str):
        xa = np.asarray(x, dtype=float)
        flat = xa.reshape(-1)
        out = np.full(flat.shape, -np.inf)
        if self.n_pieces and flat.size:
            xl, xr = self.xl[None, :], self.xr[None, :]
            for start in range(0, flat.size, 4096):
                xc = flat[start:start + 4096, None]
                if mode == "value":
                    cover = (xl - TOL_X <= xc) & (xc <= xr + TOL_X)
                elif mode == "left":
                    cover = (xl < xc - TOL_X) & (xc <= xr + TOL_X)
                else:
                    cover = (xl - TOL_X <= xc) & (xc < xr - TOL_X)
                vals = self.vl[None, :] + self.slope[None, :] * (xc - xl)
                out[start:start + 4096] = np.where(cover, vals, -np.inf).max(axis=1)
        if xa.ndim == 0:
            return float(out[0])
        return out.reshape(xa.shape)

    def shift(self, dx: float) -> "PiecewiseProfile":
        """The profile ``x -> g(x - dx)`` (moved right by ``dx``)."""
        return PiecewiseProfile(self.xl + dx, self.xr + dx, self.vl, self.slope)

    def to_rows(self):
        """``(piece, x, value)`` rows: both endpoints of every piece."""
        rows = []
        for i in range(self.n_pieces):
            rows.append((i, float(self.xl[i]), float(self.vl[i])))
            if self.xr[i] > self.xl[i]:
                rows.append((i, float(self.xr[i]), float(self.vr[i])))
        return rows

    def __repr__(self):
        if self.is_empty:
            return "PiecewiseProfile(empty)"
        return f"PiecewiseProfile(L={self.L:.6g}, U={self.U:.6g}, pieces={self.n_pieces}, sup={self.sup():.6g})"


def _dedupe(x: np.ndarray, tol: float = TOL_X) -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        return x
    keep = np.concatenate([[True], np.diff(x) > tol])
    return x[keep]


def _normalize(xl, xr, vl, s) -> PiecewiseProfile:
    """Sort, collapse tiny pieces, drop covered points and merge collinear neighbours."""
    xl = np.asarray(xl, dtype=float)
    xr = np.asarray(xr, dtype=float)
    vl = np.asarray(vl, dtype=float)
    s = np.asarray(s, dtype=float)
    if xl.size == 0:
        return PiecewiseProfile.empty()
    vr = vl + s * (xr - xl)
    short = (xr - xl) <= TOL_X
    # Tiny pieces become points carrying their larger endpoint value.
    vl = np.where(short, np.maximum(vl, vr), vl)
    xr = np.where(short, xl, xr)
    s = np.where(short, 0.0, s)
    order = np.lexsort((xr, xl))
    xl, xr, vl, s = xl[order], xr[order], vl[order], s[order]

    segs = [p for p in zip(xl, xr, vl, s) if p[0] < p[1]]
    points = [p for p in zip(xl, xr, vl, s) if p[0] == p[1]]

    merged = []  # non-degenerate pieces, snapped and merged
    for a, b, v, sl in segs:
        if merged:
            pa, pb, pv, ps = merged[-1]
            if a < pb + TOL_X:
                # Snap a start that lies within tolerance of the previous end.
                v = v + sl * (pb - a)
                a = pb
                if b <= a + TOL_X:
                    continue
            pvr = pv + ps * (pb - pa)
            if a == pb and abs(v - pvr) <= TOL_V and abs(sl - ps) <= TOL_SLOPE:
                merged[-1] = (pa, b, pv, ps)
                continue
        merged.append((a, b, v, sl))

    out = list(merged)
    if points:
        seg_prof = (PiecewiseProfile(*np.array(merged).T) if merged else PiecewiseProfile.empty())
        best = {}
        for x, _, v, _ in points:
            key = None
            for kx in best:
                if abs(kx - x) <= TOL_X:
                    key = kx
                    break
            if key is None:
                best[x] = v
            else:
                best[key] = max(best[key], v)
        for x, v in best.items():
            cover = seg_prof(x) if merged else -math.inf
            if v > cover + TOL_V:
                out.append((x, x, v, 0.0))
        out.sort(key=lambda p: (p[0], p[1]))
    if not out:
        return PiecewiseProfile.empty()
    arr = np.array(out, dtype=float)
    return PiecewiseProfile(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def upper_envelope(a, b, va, s) -> PiecewiseProfile:
    """Pointwise maximum of linear segments ``y = va + s (x - a)`` on ``[a, b]``.

    No projection is applied, so values may be negative here.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    va = np.asarray(va, dtype=float)
    s = np.asarray(s, dtype=float)
    if a.size == 0:
        return PiecewiseProfile.empty()
    c = va - s * a
    n = a.size

    # Candidate breakpoints: endpoints, then pairwise crossings inside common domains.
    iu, ju = np.triu_indices(n, 1)
    ds = s[iu] - s[ju]
    ok = np.abs(ds) > 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = (c[ju] - c[iu]) / np.where(ok, ds, 1.0)
    lo = np.maximum(a[iu], a[ju])
    hi = np.minimum(b[iu], b[ju])
    ok &= (xi > lo + TOL_X) & (xi < hi - TOL_X)
    ends = np.concatenate([a, b])
    cross = xi[ok]
    cand = np.concatenate([ends, cross])
    prio = np.concatenate([np.zeros(ends.size), np.ones(cross.size)])
    order = np.lexsort((prio, cand))
    cand, prio = cand[order], prio[order]
    reps = []
    i = 0
    while i < cand.size:
        j = i
        while j + 1 < cand.size and cand[j + 1] - cand[i] <= TOL_X:
            j += 1
        grp = slice(i, j + 1)
        # Prefer an exact input endpoint as the cluster representative.
        k = i + int(np.argmin(prio[grp]))
        reps.append(cand[k])
        i = j + 1
    xs = np.array(reps)

    pieces = []
    if xs.size > 1:
        lo_e, hi_e = xs[:-1], xs[1:]
        mid = 0.5 * (lo_e + hi_e)
        active = (a[None, :] <= lo_e[:, None] + TOL_X) & (b[None, :] >= hi_e[:, None] - TOL_X)
        vals = np.where(active, s[None, :] * mid[:, None] + c[None, :], -np.inf)
        best = np.argmax(vals, axis=1)
        has = np.isfinite(vals[np.arange(mid.size), best])
        for t in np.nonzero(has)[0]:
            q = best[t]
            pieces.append((lo_e[t], hi_e[t], s[q] * lo_e[t] + c[q], s[q]))
    # Point values catch isolated points and upward jumps.
    cover = (a[None, :] - TOL_X <= xs[:, None]) & (xs[:, None] <= b[None, :] + TOL_X)
    pv = np.where(cover, s[None, :] * xs[:, None] + c[None, :], -np.inf).max(axis=1)
    for x, v in zip(xs, pv):
        if np.isfinite(v):
            pieces.append((x, x, v, 0.0))
    if not pieces:
        return PiecewiseProfile.empty()
    arr = np.array(pieces, dtype=float)
    return _normalize_signed(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def _normalize_signed(xl, xr, vl, s) -> PiecewiseProfile:
    # _normalize only compares values, so it works for signed values as well;
    # the profile invariant (values >= 0) is restored by clip_nonnegative.
    return _normalize(xl, xr, vl, s)


def clip_nonnegative(g: PiecewiseProfile) -> PiecewiseProfile:
    """Apply ``pi`` to a signed piecewise-linear function.

    Values within ``TOL_V`` below zero count as zero, so a piece that only
    touches zero survives as an isolated point of value 0.
    """
    out = []
    for a, b, v, sl in zip(g.xl, g.xr, g.vl, g.slope):
        vb = v + sl * (b - a)
        if v >= -TOL_V and vb >= -TOL_V:
            out.append((a, b, max(v, 0.0), sl))
            continue
        if max(v, vb) < -TOL_V:
            continue
        if v < -TOL_V and vb < -TOL_V:
            continue
        if max(v, vb) < 0:
            # Touches zero only within tolerance: keep the touching point.
            x = a if v >= vb else b
            out.append((x, x, 0.0, 0.0))
            continue
        z = a - v / sl  # zero crossing, strictly inside (a, b)
        if sl > 0:
            out.append((z, b, 0.0, sl))
        else:
            out.append((a, z, v, sl))
    if not out:
        return PiecewiseProfile.empty()
    arr = np.array(out, dtype=float)
    return _normalize(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def isolated_zeros(g: PiecewiseProfile, tol: float = 1e-9) -> list:
    """Locations of isolated support points where the profile is zero."""
    pts = []
    for i in range(g.n_pieces):
        if g.xl[i] == g.xr[i] and g.vl[i] <= tol:
            left_gap = i == 0 or g.xr[i - 1] < g.xl[i] - TOL_X
            right_gap = i == g.n_pieces - 1 or g.xl[i + 1] > g.xr[i] + TOL_X
            if left_gap and right_gap:
                pts.append(float(g.xl[i]))
    return pts


def sup_on(g: PiecewiseProfile, a: float, b: float) -> float:
    """Supremum of ``g`` over the half-open interval ``(a, b]``."""
    if not a < b:
        raise ValueError("need a < b")
    if g.is_empty:
        return -math.inf
    sel = (g.xr > a) & (g.xl <= b)
    if not np.any(sel):
        return -math.inf
    lo = np.maximum(g.xl[sel], a)
    hi = np.minimum(g.xr[sel], b)
    v_lo = g.vl[sel] + g.slope[sel] * (lo - g.xl[sel])
    v_hi = g.vl[sel] + g.slope[sel] * (hi - g.xl[sel])
    return float(max(v_lo.max(), v_hi.max()))


def omega(g: PiecewiseProfile) -> float:
    """``sup_z (g(z) + z)``."""
    if g.is_empty:
        raise ValueError("omega of an empty profile")
    return float(max((g.vl + g.xl).max(), (g.vr + g.xr).max()))


def reproduce_profile(g: PiecewiseProfile, tail: TailProfile, gamma: float) -> PiecewiseProfile:
    """``pi(1 - gamma + sup_z (g(z) + h(x - z)))`` for linear-tailed ``h`` (``rho = 1``)."""
    if tail.rho != 1:
        raise ValueError("exact reproduction needs rho = 1; use reproduce_profile_grid")
    if g.is_empty:
        return PiecewiseProfile.empty()
    reach = 1.0 - gamma
    cm = tail.c_minus
    finite = math.isfinite(cm)
    A, B, V, S = [], [], [], []

    def right_ray(x0, v0):
        A.append(x0)
        B.append(x0 + v0 + reach)
        V.append(v0)
        S.append(-1.0)

    def left_ray(x0, v0):
        if finite:
            A.append(x0 - (v0 + reach) / cm)
            B.append(x0)
            V.append(v0 - (v0 + reach))
            S.append(cm)

    for a, b, v, sl in zip(g.xl, g.xr, g.vl, g.slope):
        vb = v + sl * (b - a)
        if b == a:
            right_ray(a, v)
            left_ray(a, v)
        elif sl < -1.0:
            right_ray(a, v)
            left_ray(a, v)
        elif finite and sl > cm:
            right_ray(b, vb)
            left_ray(b, vb)
        else:
            A.append(a)
            B.append(b)
            V.append(v)
            S.append(sl)
            right_ray(b, vb)
            left_ray(a, v)
    env = upper_envelope(np.array(A), np.array(B), np.array(V) + reach, np.array(S))
    return clip_nonnegative(env)


def _split_at(g: PiecewiseProfile, x: float):
    """Pieces of ``g`` with any piece strictly containing ``x`` cut in two."""
    xl, xr, vl, s = list(g.xl), list(g.xr), list(g.vl), list(g.slope)
    out = []
    for a, b, v, sl in zip(xl, xr, vl, s):
        if a + TOL_X < x < b - TOL_X:
            out.append((a, x, v, sl))
            out.append((x, b, v + sl * (x - a), sl))
        else:
            out.append((a, b, v, sl))
    return out


def select_profile(g: PiecewiseProfile, sigma: float, beta: float) -> PiecewiseProfile:
    """``pi(g(x) + beta * min(x - sigma, 0))``."""
    if g.is_empty:
        return g
    out = []
    for a, b, v, sl in _split_at(g, sigma):
        if b <= sigma + TOL_X:
            out.append((a, b, v + beta * (a - sigma), sl + beta))
        else:
            out.append((a, b, v, sl))
    arr = np.array(out, dtype=float)
    signed = PiecewiseProfile(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return clip_nonnegative(signed)


def selected_sup(r: PiecewiseProfile, sigma: float, beta: float) -> float:
    """``sup_x (r(x) + beta * min(x - sigma, 0))`` (before projection)."""
    if r.is_empty:
        return -math.inf
    xl, xr, vl, vr = r.xl, r.xr, r.vl, r.vr
    lv = vl + beta * np.minimum(xl - sigma, 0.0)
    rv = vr + beta * np.minimum(xr - sigma, 0.0)
    best = max(lv.max(), rv.max())
    inside = (xl < sigma) & (sigma < xr)
    if np.any(inside):
        best = max(best, (vl[inside] + r.slope[inside] * (sigma - xl[inside])).max())
    return float(best)


def solve_sigma_star(r_prof: PiecewiseProfile, gamma: float, beta: float, bracket=None,
                     tol: float = SIGMA_TOL) -> float:
    """Smallest ``sigma`` with ``sup s_sigma(r_prof) <= gamma``, by bisection.

    ``bracket`` is a starting interval; it is widened automatically if it does
    not straddle the solution.
    """
    top = r_prof.sup()
    if top < gamma:
        raise ValueError(f"sup r = {top} < gamma = {gamma}: no admissible sigma")
    if top == gamma:
        return -math.inf

    def F(sig):
        return selected_sup(r_prof, sig, beta)

    if bracket is None:
        lo, hi = r_prof.L - 1.0, r_prof.U + (1.0 - gamma) / beta + 1.0
    else:
        lo, hi = float(bracket[0]), float(bracket[1])
    width = max(hi - lo, 1.0)
    while F(lo) <= gamma:
        lo -= width
        width *= 2
    width = max(hi - lo, 1.0)
    while F(hi) > gamma:
        hi += width
        width *= 2
    for _ in range(400):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if F(mid) <= gamma:
            hi = mid
        else:
            lo = mid
    return hi


def sigma_nonunique(r_prof: PiecewiseProfile, sigma: float, gamma: float, beta: float,
                    width: float = 1e-7) -> bool:
    """True when ``sup s_sigma`` stays at ``gamma`` over ``[sigma, sigma + width]``."""
    return selected_sup(r_prof, sigma + width, beta) >= gamma - TOL_V


def sigma_bracket(g: PiecewiseProfile, gamma: float, beta: float):
    """The a-priori interval ``(a_-, a_+)`` for the selection threshold of ``r(g)``."""
    q = (1.0 - gamma) / min(1.0, beta)
    return g.L + q, omega(g) - gamma + q


@dataclass
class DynamicsState:
    g: PiecewiseProfile
    t: int = 0
    sigma_history: list = field(default_factory=list)
    U_history: list = field(default_factory=list)
    nonunique: list = field(default_factory=list)


def dynamics_step(state: DynamicsState, tail: TailProfile, gamma: float, beta: float) -> DynamicsState:
    """One step ``g -> s_sigma(r(g))`` with ``sigma`` solving the mass constraint."""
    g = state.g
    r = reproduce_profile(g, tail, gamma)
    am, ap = sigma_bracket(g, gamma, beta)
    sigma = solve_sigma_star(r, gamma, beta, bracket=(am - 1.0, ap + 1.0))
    flag = sigma_nonunique(r, sigma, gamma, beta)
    g1 = select_profile(r, sigma, beta)
    return DynamicsState(
        g=g1,
        t=state.t + 1,
        sigma_history=state.sigma_history + [sigma],
        U_history=(state.U_history or [g.U]) + [g1.U],
        nonunique=state.nonunique + [flag],
    )


def evolve(g0: PiecewiseProfile, tail: TailProfile, gamma: float, beta: float, T: int):
    """States ``g^0, ..., g^T`` of the deterministic dynamics."""
    states = [DynamicsState(g=g0, U_history=[g0.U])]
    for _ in range(T):
        states.append(dynamics_step(states[-1], tail, gamma, beta))
    return states


def phi_distance(g1: PiecewiseProfile, g2: PiecewiseProfile) -> float:
    """``sup|g1+ - g2+|`` joined with the distances between upper and lower edges."""
    if g1.is_empty or g2.is_empty:
        raise ValueError("phi needs non-empty profiles")
    xs = _dedupe(np.concatenate([g1.breakpoints(), g2.breakpoints()]), tol=0.0)
    d = 0.0
    for f1, f2 in zip(g1.limits(xs), g2.limits(xs)):
        d = max(d, float(np.max(np.abs(np.maximum(f1, 0.0) - np.maximum(f2, 0.0)))))
    return max(d, abs(g1.U - g2.U), abs(g1.L - g2.L))


# Grid versions for a general tail exponent ---------------------------------

def reproduce_profile_grid(grid, g_vals, tail: TailProfile, gamma: float, out_grid=None):
    """Grid evaluation of ``pi(1 - gamma + max_i (g_i + h(x - x_i)))``."""
    grid = np.asarray(grid, dtype=float)
    g_vals = np.asarray(g_vals, dtype=float)
    out_grid = grid if out_grid is None else np.asarray(out_grid, dtype=float)
    src = np.isfinite(g_vals)
    out = np.full(out_grid.shape, -np.inf)
    if not np.any(src):
        return out
    zs, gs = grid[src], g_vals[src]
    for start in range(0, out_grid.size, 512):
        xc = out_grid[start:start + 512, None]
        vals = gs[None, :] + h_value(tail, xc - zs[None, :])
        out[start:start + 512] = vals.max(axis=1)
    return project_pi(1.0 - gamma + out)


def select_grid(grid, r_vals, sigma: float, beta: float):
    grid = np.asarray(grid, dtype=float)
    return project_pi(np.asarray(r_vals, dtype=float) + beta * np.minimum(grid - sigma, 0.0))


def solve_sigma_star_grid(grid, r_vals, gamma: float, beta: float, tol: float = SIGMA_TOL) -> float:
    """Bisection for the selection threshold of a grid-sampled profile."""
    grid = np.asarray(grid, dtype=float)
    r_vals = np.asarray(r_vals, dtype=float)
    fin = np.isfinite(r_vals)
    xs, rv = grid[fin], r_vals[fin]
    if xs.size == 0 or rv.max() < gamma:
        raise ValueError("no admissible sigma: sup r < gamma")

    def F(sig):
        return float((rv + beta * np.minimum(xs - sig, 0.0)).max())

    lo = xs.min() - 1.0
    hi = xs.max() + (1.0 - gamma) / beta + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if F(mid) <= gamma:
            hi = mid
        else:
            lo = mid
    return hi


def support_components(grid, vals):
    """Maximal runs of finite grid values as ``(x_first, x_last, max_value)`` triples."""
    grid = np.asarray(grid, dtype=float)
    fin = np.isfinite(np.asarray(vals, dtype=float))
    comps = []
    i = 0
    n = grid.size
    while i < n:
        if not fin[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and fin[j + 1]:
            j += 1
        comps.append((float(grid[i]), float(grid[j]), float(np.max(vals[i:j + 1]))))
        i = j + 1
    return comps
