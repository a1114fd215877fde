"""Finite-dimensional front dynamics for profiles built from breakpoint vectors.

A non-increasing vector ``x = (x_0, x_1, ...)`` encodes the concave profile
``f_x`` with slope ``-(1 - j*beta)`` on ``[x_{j+1}, x_j]`` and slope
``c_minus + beta`` left of ``x_K``. Selection and reproduction act on such
profiles through the map ``psi_sigma`` on vectors. The gaps
``v = (x_1 - x_2, ..., x_k - x_{k+1})`` follow one of finitely many affine
maps, and their fixed points give the traveling waves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from kbrw.displacement import TailProfile
from kbrw.logprofile import (
    PiecewiseProfile,
    evolve,
    phi_distance,
    reproduce_profile,
    select_profile,
    solve_sigma_star,
)

STRUCT_TOL = 1e-9
ALG_TOL = 1e-12


def k_of(beta: float) -> int:
    """``floor(1/beta)``, or ``1/beta - 1`` when ``1/beta`` is an integer."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    q = 1.0 / beta
    n = round(q)
    if n >= 1 and abs(q - n) < STRUCT_TOL:
        return int(n) - 1
    return int(math.floor(q))


def inv_beta_is_integer(beta: float) -> bool:
    q = 1.0 / beta
    return round(q) >= 1 and abs(q - round(q)) < STRUCT_TOL


@dataclass(frozen=True)
class SlopeParams:
    beta: float
    c_minus: float = math.inf

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.c_minus > 0:
            raise ValueError(f"c_minus must be positive or inf, got {self.c_minus}")

    @property
    def k(self) -> int:
        return k_of(self.beta)

    @property
    def K_cap(self):
        """Number of finite slopes ``-(1 - j beta)``; ``math.inf`` when ``c_minus`` is infinite."""
        if math.isinf(self.c_minus):
            return math.inf
        return int(math.floor((1.0 + self.c_minus) / self.beta + STRUCT_TOL)) + 2

    @property
    def finite(self) -> bool:
        return math.isfinite(self.c_minus)

    @property
    def u(self) -> np.ndarray:
        j = np.arange(1, self.k + 1)
        return 1.0 - j * self.beta

    @property
    def tail(self) -> TailProfile:
        return TailProfile(1.0, self.c_minus)

    def slope(self, j: int) -> float:
        """Slope of ``f_x`` on ``[x_{j+1}, x_j]`` (the tail slope for ``j = K``)."""
        if self.finite and j >= self.K_cap:
            return self.c_minus + self.beta
        return -(1.0 - j * self.beta)

    def slope_index(self, s: float, tol: float = STRUCT_TOL):
        """Index ``j`` with ``slope(j) == s`` within ``tol``, or ``None``."""
        j = int(round((1.0 + s) / self.beta))
        K = self.K_cap
        if j >= 0 and j <= K - 1 and abs(s - self.slope(j)) <= tol:
            return j
        if self.finite and abs(s - (self.c_minus + self.beta)) <= tol:
            return K
        return None


@dataclass(frozen=True)
class FrontVector:
    """Non-increasing breakpoint vector; ``truncated`` marks an infinite vector cut at its lower edge."""

    entries: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def _entries(x) -> np.ndarray:
    if isinstance(x, FrontVector):
        return np.array(x.entries, dtype=float)
    return np.array(x, dtype=float).reshape(-1)


def _entry(x: np.ndarray, j: int, fill: float) -> float:
    return float(x[j]) if j < len(x) else fill


def _integrate(x: np.ndarray, params: SlopeParams):
    """Breakpoints of ``f_x`` from the top down; missing entries count as ``-inf``."""
    if len(x) == 0:
        raise ValueError("empty front vector")
    if np.any(np.diff(x) > ALG_TOL):
        raise ValueError("front vector must be non-increasing")
    x = np.minimum.accumulate(x)
    K = params.K_cap
    M = len(x) - 1
    if params.finite and M > K:
        raise ValueError(f"front vector has {M + 1} entries, more than K + 1 = {K + 1}")
    pts = [(float(x[0]), 0.0)]
    val = 0.0
    for j in range(M):
        b, a = float(x[j]), float(x[j + 1])
        if b - a <= 0:
            continue
        rate = 1.0 - j * params.beta  # increase of f per unit leftwards
        new = val + rate * (b - a)
        if new <= 0 and rate < 0:
            pts.append((b - val / (-rate), 0.0))
            return pts, True
        pts.append((a, new))
        val = new
    if val > 0:
        last = params.slope(M)
        if last <= 0:
            raise ValueError("vector is too short: profile does not reach zero")
        pts.append((float(x[M]) - val / last, 0.0))
        return pts, False
    return pts, True


def profile_from_vector(x, params: SlopeParams) -> PiecewiseProfile:
    """The profile ``f_x`` as a piecewise-linear object."""
    pts, _ = _integrate(_entries(x), params)
    xs = np.array([p[0] for p in pts][::-1])
    vs = np.array([p[1] for p in pts][::-1])
    keep = np.concatenate([[True], np.diff(xs) > 0])
    xs, vs = xs[keep], np.maximum(vs[keep], 0.0)
    return PiecewiseProfile.from_breakpoints(xs, vs)


def lower_edge(x, params: SlopeParams) -> float:
    pts, _ = _integrate(_entries(x), params)
    return pts[-1][0]


def canonicalize(x, params: SlopeParams) -> FrontVector:
    """Clamp entries below the lower edge to it; infinite vectors keep a single clamp entry."""
    e = np.minimum.accumulate(_entries(x))
    L = lower_edge(e, params)
    e = np.maximum(e, L)
    if params.finite:
        K = params.K_cap
        if len(e) < K + 1:
            e = np.concatenate([e, np.full(K + 1 - len(e), L)])
        return FrontVector(e, truncated=False)
    above = e[e > L]
    return FrontVector(np.concatenate([above, [L]]), truncated=True)


def allowed_slopes_ok(g: PiecewiseProfile, params: SlopeParams, tol: float = STRUCT_TOL) -> bool:
    """Every non-degenerate piece has a slope from the allowed set."""
    return all(params.slope_index(s, tol) is not None for s in g.slopes())


def vector_from_profile(g: PiecewiseProfile, params: SlopeParams, gamma: float | None = None):
    """Recover ``(v, U, x)`` from a profile of the form ``f_x``.

    Raises ``ValueError`` when ``g`` is not of that form (slopes outside the
    allowed set, wrong order, jumps, or ``sup g != gamma`` when given).
    """
    if g.is_empty or not g.is_continuous:
        raise ValueError("profile must be non-empty and continuous")
    if abs(g.vr[-1]) > STRUCT_TOL or abs(g.vl[0]) > STRUCT_TOL:
        raise ValueError("profile must vanish at both edges")
    if gamma is not None and abs(g.sup() - gamma) > STRUCT_TOL:
        raise ValueError(f"sup g = {g.sup()} differs from gamma = {gamma}")
    real = np.nonzero(g.xr - g.xl > 0)[0]
    U, L = g.U, g.L
    entries = [U]
    prev = -1
    for i in real[::-1]:
        j = params.slope_index(float(g.slope[i]))
        if j is None:
            raise ValueError(f"slope {g.slope[i]} outside the allowed set")
        if j <= prev:
            raise ValueError("slopes are not in the allowed order")
        b, a = float(g.xr[i]), float(g.xl[i])
        while len(entries) <= j:
            entries.append(b)
        if params.finite and j == params.K_cap:
            prev = j
            break
        entries.append(a)  # tentative x_{j+1}
        prev = j
    need = params.K_cap + 1 if params.finite else max(len(entries), params.k + 2)
    while len(entries) < need:
        entries.append(L)
    x = np.array(entries[:need] if params.finite else entries, dtype=float)
    x = np.maximum(x, L)
    x = canonicalize(x, params)
    e = x.entries
    k = params.k
    xs = [_entry(e, j, L) for j in range(k + 2)]
    v = np.array([xs[j] - xs[j + 1] for j in range(1, k + 1)])
    return v, U, x


def in_T(g: PiecewiseProfile, params: SlopeParams, gamma: float, tol: float = STRUCT_TOL) -> bool:
    try:
        _, _, x = vector_from_profile(g, params, gamma)
    except ValueError:
        return False
    return phi_distance(profile_from_vector(x, params), g) <= tol


def _rho(e: np.ndarray, params: SlopeParams, gamma: float) -> np.ndarray:
    if params.finite:
        K = params.K_cap
        r = np.concatenate([e[:K], [e[K - 1]]])
    else:
        r = e.copy()
    r[0] = e[0] + 1.0 - gamma
    return r


def psi_bracket(x, params: SlopeParams, gamma: float):
    """Interval of ``sigma`` on which ``psi_sigma`` describes ``s_sigma(r(f_x))``."""
    e = canonicalize(x, params).entries
    L = lower_edge(e, params)
    q = (1.0 - gamma) / min(1.0, params.beta)
    lo = max(L + q, _entry(e, params.k + 1, L))
    hi = float(e[0]) - gamma + q
    return lo, hi


def psi_sigma(x, sigma: float, params: SlopeParams, gamma: float, check: bool = True) -> FrontVector:
    """Vector-level action of ``s_sigma o r`` on ``f_x``."""
    e = canonicalize(x, params).entries
    if check:
        lo, hi = psi_bracket(e, params, gamma)
        if not (lo - STRUCT_TOL <= sigma <= hi + STRUCT_TOL):
            raise ValueError(f"sigma = {sigma} outside the admissible interval [{lo}, {hi}]")
    beta = params.beta
    rho = _rho(e, params, gamma)
    tail = e[1:params.K_cap] if params.finite else e[1:]
    if rho[0] < sigma:
        if beta >= 1:
            raise ValueError("first case of psi requires beta < 1")
        y0 = (rho[0] - beta * sigma) / (1.0 - beta)
        new = np.concatenate([[y0, y0], tail])
    else:
        i = len(tail)
        for cand in range(len(tail)):
            if rho[cand + 1] < sigma <= rho[cand]:
                i = cand
                break
        new = np.concatenate([[rho[0]], e[1:i + 1], [sigma], tail[i:]])
    return canonicalize(new, params)


# Gap vectors, Sigma and the affine maps ------------------------------------

def _check_delta(v: np.ndarray, gamma: float, params: SlopeParams):
    if v.shape != (params.k,):
        raise ValueError(f"gap vector must have length k = {params.k}")
    if np.any(v < -ALG_TOL) or float(params.u @ v) > gamma + ALG_TOL:
        raise ValueError("gap vector outside the admissible simplex")


def Sigma_of(v, gamma: float, params: SlopeParams) -> float:
    """Closed form of ``sigma*(r(g)) - U(g)`` in terms of the gap vector."""
    v = np.asarray(v, dtype=float).reshape(-1)
    k = params.k
    if k == 0:
        return 1.0 - 2.0 * gamma
    _check_delta(v, gamma, params)
    beta = params.beta
    uv = float(params.u @ v)
    a = 1.0 - k * beta
    mb = min(1.0, beta)
    if v[-1] < (1.0 - gamma) / a:
        return uv - gamma - float(v[:-1].sum()) - a / mb * v[-1] + (1.0 - gamma) / mb
    return uv - gamma - float(v.sum()) + (1.0 - gamma) / a


def delta_class(v, gamma: float, params: SlopeParams) -> int:
    """Label in ``{-1, 0, 1, ..., k}`` selecting the affine map that applies to ``v``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    k = params.k
    if k == 0:
        return 0
    _check_delta(v, gamma, params)
    S = Sigma_of(v, gamma, params)
    if S > 1.0 - gamma + ALG_TOL:
        return -1
    D = S - float(params.u @ v) + gamma
    if D > 0:
        return 0
    cum = np.cumsum(v)
    for i in range(1, k + 1):
        if -cum[i - 1] < D:
            return i
    return k


def matrix_A_minus1(params: SlopeParams) -> np.ndarray:
    """Leslie-type matrix of the map on the luckiest side."""
    k, beta = params.k, params.beta
    A = np.zeros((k, k))
    if k == 0:
        return A
    A[0, :k - 1] = beta / (1.0 - beta)
    A[0, k - 1] = (1.0 - k * beta) / (1.0 - beta)
    A[np.arange(1, k), np.arange(0, k - 1)] = 1.0
    return A


def matrix_A0(params: SlopeParams) -> np.ndarray:
    """Companion-type matrix of the map on the fittest side."""
    k, beta = params.k, params.beta
    A = np.zeros((k, k))
    if k == 0:
        return A
    A[0, :k - 1] = -1.0
    A[0, k - 1] = -(1.0 - k * beta) / beta
    A[np.arange(1, k), np.arange(0, k - 1)] = 1.0
    return A


def matrix_Ai(i: int, params: SlopeParams) -> np.ndarray:
    """Matrix of the map on class ``i`` for ``1 <= i <= k - 1``."""
    k, beta = params.k, params.beta
    if not 1 <= i <= k - 1:
        raise ValueError(f"class index must lie in 1..{k - 1}")
    a = (1.0 - k * beta) / beta
    A = np.eye(k)
    m = k - i + 1
    M = np.zeros((m, m))
    M[0, :m - 1] = 1.0
    M[0, m - 1] = a
    M[1, 1:m - 1] = -1.0
    M[1, m - 1] = -a
    for r in range(2, m):
        M[r, r - 1] = 1.0
    A[i - 1:, i - 1:] = M
    return A


def affine_step(v, gamma: float, params: SlopeParams):
    """One step of the gap dynamics: returns ``(v', dU)``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    k, beta = params.k, params.beta
    if k == 0:
        return v.copy(), 1.0 - gamma
    cls = delta_class(v, gamma, params)
    e = np.eye(k)
    if cls == -1:
        S = Sigma_of(v, gamma, params)
        uv = float(params.u @ v)
        v1 = matrix_A_minus1(params) @ v + (gamma - uv) / (1.0 - beta) * e[0]
        return v1, (1.0 - gamma - beta * S) / (1.0 - beta)
    if cls == 0:
        return matrix_A0(params) @ v + (1.0 - gamma) / beta * e[0], 1.0 - gamma
    if cls == k:
        return v - (1.0 - gamma) / (1.0 - k * beta) * e[k - 1], 1.0 - gamma
    i = cls
    v1 = matrix_Ai(i, params) @ v + (1.0 - gamma) / beta * (e[i] - e[i - 1])
    return v1, 1.0 - gamma


def nu_luckiest(gamma: float, beta: float) -> float:
    k = k_of(beta)
    if k == 0:
        return math.nan
    return 2.0 * gamma / (k * (2.0 - (k + 1) * beta))


def fixed_points(gamma: float, params: SlopeParams):
    """``(mu_L, mu_F)``: constant gap vectors fixed by the luckiest and fittest maps."""
    k = params.k
    if k == 0:
        return np.empty(0), np.empty(0)
    return (np.full(k, nu_luckiest(gamma, params.beta)), np.full(k, 1.0 - gamma))


def char_poly_A0(params: SlopeParams) -> np.ndarray:
    """Coefficients (highest degree first) of ``l^k + ... + l + (1 - k beta)/beta``."""
    k = params.k
    return np.concatenate([np.ones(k), [(1.0 - k * params.beta) / params.beta]])


def spectral_gap_A0(params: SlopeParams) -> float:
    """Spectral radius of the fittest-side matrix, from the companion matrix of its polynomial."""
    k = params.k
    if k == 0:
        return 0.0
    coeffs = char_poly_A0(params)
    comp = np.zeros((k, k))
    comp[0, :] = -coeffs[1:]
    comp[np.arange(1, k), np.arange(0, k - 1)] = 1.0
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def power_iteration(A: np.ndarray, iters: int = 10000, tol: float = 1e-14):
    """Dominant eigenpair of a non-negative matrix; the vector is normalized to sum 1."""
    n = A.shape[0]
    w = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(iters):
        z = A @ w
        lam_new = float(z.sum())
        z /= lam_new
        if np.max(np.abs(z - w)) < tol:
            w = z
            lam = lam_new
            break
        w, lam = z, lam_new
    return lam, w


# Phase transition and traveling wave ---------------------------------------

def gamma_critical(beta: float) -> float:
    k = k_of(beta)
    if k == 0:
        return 0.0
    return k * (2.0 - (k + 1) * beta) / ((k + 1) * (2.0 - k * beta))


def wave_speed(gamma: float, beta: float) -> float:
    if gamma < gamma_critical(beta):
        return nu_luckiest(gamma, beta)
    return 1.0 - gamma


def front_gap_chi(gamma: float, beta: float) -> float:
    k = k_of(beta)
    j = np.arange(1, k + 1)
    return float(gamma - np.sum((1.0 - j * beta) * (1.0 - gamma)))


def phase_of(gamma: float, beta: float) -> str:
    return "luckiest" if gamma < gamma_critical(beta) else "fittest"


@dataclass
class WaveSolution:
    G: PiecewiseProfile
    y: FrontVector
    nu: float
    chi: float
    phase: str
    gamma_c: float
    gamma: float
    beta: float
    c_minus: float
    residual: float = 0.0

    @property
    def chi_plus(self) -> float:
        return max(self.chi, 0.0)


def wave_vector(gamma: float, params: SlopeParams) -> FrontVector:
    """Breakpoints ``(0, -chi+, -chi+ - nu, -chi+ - 2 nu, ...)`` of the traveling wave."""
    nu = wave_speed(gamma, params.beta)
    c0 = max(front_gap_chi(gamma, params.beta), 0.0)
    if params.finite:
        j = np.arange(1, params.K_cap + 1)
        return canonicalize(np.concatenate([[0.0], -c0 - (j - 1) * nu]), params)
    M = params.k + 2
    while True:
        j = np.arange(1, M + 1)
        y = np.concatenate([[0.0], -c0 - (j - 1) * nu])
        try:
            L = lower_edge(y, params)
        except ValueError:
            L = -math.inf
        if L >= y[-1]:
            return canonicalize(y, params)
        M *= 2


def wave_step(g: PiecewiseProfile, gamma: float, params: SlopeParams):
    """``(sigma, s_sigma(r(g)))`` for the dynamics with ``rho = 1``."""
    r = reproduce_profile(g, params.tail, gamma)
    sigma = solve_sigma_star(r, gamma, params.beta)
    return sigma, select_profile(r, sigma, params.beta)


def traveling_wave(gamma: float, beta: float, c_minus: float = math.inf,
                   for_stability: bool = False, verify: bool = True) -> WaveSolution:
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    params = SlopeParams(beta, c_minus)
    gc = gamma_critical(beta)
    if for_stability and abs(gamma - gc) <= ALG_TOL:
        raise ValueError("stability analysis is undefined at gamma = gamma_c")
    y = wave_vector(gamma, params)
    G = profile_from_vector(y, params)
    nu = wave_speed(gamma, beta)
    res = 0.0
    if verify:
        _, g1 = wave_step(G, gamma, params)
        res = phi_distance(g1, G.shift(nu))
        if res >= 1e-9:
            raise RuntimeError(f"traveling-wave check failed: phi = {res:.3e}")
    return WaveSolution(G=G, y=y, nu=nu, chi=front_gap_chi(gamma, beta), phase=phase_of(gamma, beta),
                        gamma_c=gc, gamma=gamma, beta=beta, c_minus=c_minus, residual=res)


def perturbed_wave(wave: WaveSolution, delta: float = 0.01, index: int = 1) -> PiecewiseProfile:
    """Move entry ``index`` of the wave vector by ``delta`` and restore ``sup = gamma``.

    The sign of ``delta`` is flipped if the move would break monotonicity.
    The top entry is then reset to ``x_1 + gamma - <u, v>``.
    """
    params = SlopeParams(wave.beta, wave.c_minus)
    x = np.array(wave.y.entries, dtype=float)
    need = max(index + 2, params.k + 2)
    L = lower_edge(x, params)
    if len(x) < need:
        x = np.concatenate([x, np.full(need - len(x), L)])
    trial = x.copy()
    trial[index] += delta
    if trial[index] > trial[index - 1] or (index + 1 < len(x) and trial[index] < trial[index + 1]):
        trial[index] = x[index] - delta
    k = params.k
    v = np.array([trial[j] - trial[j + 1] for j in range(1, k + 1)])
    trial[0] = trial[1] + wave.gamma - float(params.u @ v)
    return profile_from_vector(canonicalize(trial, params), params)


@dataclass
class RateEstimate:
    rate: float
    shift: float
    r2: float
    nongeometric: bool
    phis: np.ndarray = field(repr=False)
    nu: float = 0.0
    fitted_steps: int = 0


PHI_FLOOR = 1e-11


def convergence_rate(gamma: float, beta: float, g0: PiecewiseProfile, T: int,
                     c_minus: float = math.inf, delta: float = 0.05) -> RateEstimate:
    """Geometric decay rate of ``phi(g^t(. + nu t + c), G)`` fitted by least squares."""
    wave = traveling_wave(gamma, beta, c_minus, for_stability=True)
    G = wave.G
    d0 = phi_distance(g0, G)
    if d0 > delta:
        raise ValueError(f"initial profile is {d0:.3g} away from the wave, more than delta = {delta}")
    states = evolve(g0, TailProfile(1.0, c_minus), gamma, beta, T)
    nu = wave.nu
    gT = states[-1].g

    def aligned(g, t, c):
        return phi_distance(g.shift(-(nu * t + c)), G)

    c0 = gT.U - nu * T
    res = minimize_scalar(lambda c: aligned(gT, T, c), bounds=(c0 - 0.05, c0 + 0.05),
                          method="bounded", options={"xatol": 1e-14})
    c = float(res.x) if aligned(gT, T, float(res.x)) <= aligned(gT, T, c0) else c0
    phis = np.array([aligned(s.g, t, c) for t, s in enumerate(states)])
    if np.all(phis < 1e-9):
        return RateEstimate(0.0, c, 1.0, False, phis, nu, 0)
    t = np.arange(len(phis), dtype=float)
    use = phis > PHI_FLOOR
    if use.sum() < 3:
        return RateEstimate(0.0, c, 1.0, False, phis, nu, int(use.sum()))
    tt, lp = t[use], np.log(phis[use])
    slope, icept = np.polyfit(tt, lp, 1)
    pred = slope * tt + icept
    ss_tot = float(np.sum((lp - lp.mean()) ** 2))
    r2 = 1.0 - float(np.sum((lp - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    rate = float(math.exp(slope))
    flag = bool(r2 < 0.9 or rate >= 1.0 - 1e-3)
    return RateEstimate(rate, c, r2, flag, phis, nu, int(use.sum()))
