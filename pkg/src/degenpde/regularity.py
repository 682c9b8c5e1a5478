"""Measured regularity diagnostics on solution fields.

Everything here is a read-only pass over a computed field: one-sided
second-difference constants per time slice, their exponential-in-time upper
envelope, spatial and temporal Lipschitz constants, the initial-layer slope
bound assembled from the Hamiltonian, and the time-growth constants built
from coefficient norms. Boundary collars are excluded everywhere.
"""

from dataclasses import dataclass, field as dataclass_field
import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, ContractViolationError

__all__ = [
    "second_difference_constants",
    "EnvelopeFit",
    "envelope_fit",
    "LipschitzReport",
    "lipschitz_estimates",
    "BoundConstants",
    "initial_slope_bound",
    "time_growth_constants",
    "bound_constants",
    "DeviationReport",
    "initial_deviation_check",
    "field_sup_norms",
    "solution_sobolev_norms",
]


def _offset_vectors(grid, max_offset):
    """Integer offset vectors: per-axis multiples plus pairwise diagonals."""
    dim = grid.dim
    dx = grid.dx
    offsets = []
    caps = []
    for i in range(dim):
        cap = max(1, int(np.floor(max_offset / dx[i])))
        cap = min(cap, (grid.shape[i] - 1) // 2 - 1)
        caps.append(max(cap, 1))
    for i in range(dim):
        for m in range(1, caps[i] + 1):
            o = np.zeros(dim, dtype=int)
            o[i] = m
            offsets.append(o)
    for i in range(dim):
        for j in range(i + 1, dim):
            for m in range(1, min(caps[i], caps[j]) + 1):
                for sj in (1, -1):
                    o = np.zeros(dim, dtype=int)
                    o[i] = m
                    o[j] = sj * m
                    offsets.append(o)
    return offsets


def second_difference_constants(field, t_index, max_offset=None, collar=4):
    """One-sided second-difference constants (L_minus, L_plus) of a slice.

    L_minus bounds convexity defect: the largest negative centered second
    difference quotient, clipped at zero; L_plus is the symmetric concave
    bound. Offsets run over grid multiples up to ``max_offset`` (default a
    quarter of the smallest half-width) along each axis, plus diagonal pairs.
    """
    grid = field.grid
    u = field.values[t_index]
    if max_offset is None:
        max_offset = min(grid.half_width) / 4.0
    dx = grid.dx
    worst_min = 0.0
    worst_max = 0.0
    for o in _offset_vectors(grid, max_offset):
        h2 = float(sum((o[i] * dx[i]) ** 2 for i in range(grid.dim)))
        center = []
        plus = []
        minus = []
        ok = True
        for i, (oi, n) in enumerate(zip(o, grid.shape)):
            m = max(collar, abs(int(oi)))
            if n - m <= m:
                ok = False
                break
            center.append(slice(m, n - m))
            plus.append(slice(m + oi, n - m + oi))
            minus.append(slice(m - oi, n - m - oi))
        if not ok:
            continue
        quot = (u[tuple(plus)] + u[tuple(minus)] - 2.0 * u[tuple(center)]) / h2
        worst_min = min(worst_min, float(quot.min()))
        worst_max = max(worst_max, float(quot.max()))
    return max(0.0, -worst_min), max(0.0, worst_max)


@dataclass
class EnvelopeFit:
    """Exponential-in-time upper envelope amplitude * exp(rate * t) + offset."""

    amplitude: float
    rate: float
    offset: float
    max_slack: float = 0.0
    sse: float = 0.0

    def __iter__(self):
        return iter((self.amplitude, self.rate, self.offset))

    def value(self, t):
        return self.amplitude * np.exp(self.rate * np.asarray(t, dtype=float)) + self.offset


def _linear_fit_at_rate(rate, times, series):
    basis = np.stack([np.exp(rate * times), np.ones_like(times)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, series, rcond=None)
    m0, c0 = float(coef[0]), float(coef[1])
    if m0 < 0.0:
        m0 = 0.0
        c0 = float(np.mean(series))
    if c0 < 0.0:
        c0 = 0.0
        denom = float(basis[:, 0] @ basis[:, 0])
        m0 = max(0.0, float(basis[:, 0] @ series) / denom)
    resid = series - (m0 * basis[:, 0] + c0)
    return m0, c0, float(resid @ resid)


def envelope_fit(series, times):
    """Fit amplitude * exp(rate t) + offset as an upper envelope of the series.

    The rate is profiled by scalar minimization of the least-squares error
    (the amplitude and offset are linear at fixed rate), then the offset is
    shifted upward so the envelope dominates every sample. A constant fit is
    preferred whenever it explains the series equally well.
    """
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    if series.shape != times.shape or series.size < 4:
        raise ContractViolationError("envelope fit needs at least 4 aligned samples")
    if np.all(series == 0.0):
        return EnvelopeFit(0.0, 0.0, 0.0, 0.0, 0.0)
    t_span = max(float(times.max() - times.min()), 1e-12)
    rates = np.concatenate([[1e-3 / t_span], np.geomspace(1e-2, 60.0, 121) / t_span])
    best = None
    for rate in rates:
        m0, c0, sse = _linear_fit_at_rate(rate, times, series)
        if best is None or sse < best[3]:
            best = (rate, m0, c0, sse)
    lo = best[0] / 3.0
    hi = min(best[0] * 3.0, 200.0 / t_span)
    res = minimize_scalar(
        lambda r: _linear_fit_at_rate(r, times, series)[2],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10 / t_span},
    )
    rate = float(res.x)
    m0, c0, sse = _linear_fit_at_rate(rate, times, series)

    const_c0 = float(series.max())
    const_sse = float(np.sum((series - np.mean(series)) ** 2))
    if const_sse <= sse * (1.0 + 1e-9) + 1e-30:
        m0, rate, c0, sse = 0.0, 0.0, float(np.mean(series)), const_sse

    envelope = m0 * np.exp(rate * times) + c0
    shift = float(max(0.0, np.max(series - envelope)))
    c0 += shift
    envelope += shift
    slack = envelope - series
    return EnvelopeFit(m0, rate, c0, float(slack.max()), sse)


@dataclass
class LipschitzReport:
    lip_x: np.ndarray = dataclass_field(repr=False)
    lip_t: float = 0.0

    def max_lip_x(self):
        return float(self.lip_x.max())


def lipschitz_estimates(field, collar=4):
    """Adjacent-node difference quotients: spatial per slice, temporal overall."""
    grid = field.grid
    box = tuple(slice(collar, n - collar) for n in grid.shape)
    for n in grid.shape:
        if n - 2 * collar < 2:
            raise ContractViolationError("collar leaves too few nodes", collar=collar)
    vals = field.values
    m = grid.steps
    lip_x = np.zeros(m + 1)
    for k in range(m + 1):
        u = vals[k][box]
        worst = 0.0
        for i in range(grid.dim):
            d = np.abs(np.diff(u, axis=i)) / grid.dx[i]
            if d.size:
                worst = max(worst, float(d.max()))
        lip_x[k] = worst
    dt_vals = np.abs(np.diff(vals[(slice(None),) + box], axis=0)) / grid.dt
    lip_t = float(dt_vals.max()) if dt_vals.size else 0.0
    return LipschitzReport(lip_x=lip_x, lip_t=lip_t)


@dataclass
class BoundConstants:
    """Initial-layer slope bound and the time-growth pair (b1, b2).

    alpha(t) = (exp(b1 t) - 1)/b1 * (c0 b1 + b2), with the b1 -> 0 limit
    alpha(t) = b2 t.
    """

    c0_init: float
    b1: float
    b2: float
    meta: dict = dataclass_field(default_factory=dict)

    def alpha(self, t):
        t = np.asarray(t, dtype=float)
        if abs(self.b1) < 1e-12:
            out = t * (self.c0_init * self.b1 + self.b2)
        else:
            out = (np.expm1(self.b1 * t) / self.b1) * (self.c0_init * self.b1 + self.b2)
        return float(out) if out.ndim == 0 else out


def _p_candidates(problem, x_lat, t, p_cap, n_random, rng):
    dim = problem.dim
    cands = [np.zeros(dim)]
    if p_cap > 0.0:
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = p_cap
            cands.extend([e, -e])
        sig = np.asarray(problem.sigma(t), dtype=float)
        _, _, vt = np.linalg.svd(sig.T)
        top = vt[0]
        cands.extend([p_cap * top, -p_cap * top])
        for _ in range(n_random):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            cands.append(p_cap * v)
        mu_val = np.asarray(problem.drift(x_lat, t), dtype=float)
        norms = np.linalg.norm(mu_val, axis=-1, keepdims=True)
        safe = np.where(norms > 1e-300, norms, 1.0)
        aligned = p_cap * mu_val / safe
        pointwise = [aligned, -aligned]
        wv = np.asarray(problem.w(x_lat, t), dtype=float)
        swv = wv @ sig.T
        norms = np.linalg.norm(swv, axis=-1, keepdims=True)
        safe = np.where(norms > 1e-300, norms, 1.0)
        aligned_w = p_cap * swv / safe
        pointwise.extend([aligned_w, -aligned_w])
        return cands, pointwise
    return cands, []


def initial_slope_bound(
    problem,
    axes,
    horizon,
    p_cap,
    hess_cap,
    n_times=9,
    n_u=9,
    lattice_stride=None,
    n_random_dirs=16,
    seed=7,
):
    """Sampled sup of |H| over the probe lattice with capped gradient data.

    The gradient candidates sit on the cap sphere (axis directions, the top
    singular direction of sigma, seeded random directions, and per-point
    alignments with the drift and the sigma w field); the Hessian candidates
    are 0 and +/- cap * identity, where the trace term is extremal.
    """
    dim = problem.dim
    if lattice_stride is None:
        lattice_stride = max(1, (len(axes[0]) - 1) // 40)
    lat_axes = [ax[::lattice_stride] for ax in axes]
    mesh = np.stack(np.meshgrid(*lat_axes, indexing="ij"), axis=-1)
    x_lat = mesh.reshape(-1, dim)
    lo, hi = problem.value_interval
    u_samples = np.linspace(lo, hi, n_u)
    times = np.linspace(0.0, horizon * (1.0 - 1e-9), n_times)
    rng = np.random.default_rng(seed)

    worst = 0.0
    for t in times:
        sig = np.asarray(problem.sigma(t), dtype=float)
        a_mat = sig @ sig.T
        trace_caps = [0.0]
        if hess_cap > 0.0:
            tr = float(np.trace(a_mat))
            trace_caps.extend([-0.5 * hess_cap * tr, 0.5 * hess_cap * tr])
        fixed, pointwise = _p_candidates(problem, x_lat, t, p_cap, n_random_dirs, rng)
        mu_val = np.asarray(problem.drift(x_lat, t), dtype=float)
        w_val = np.asarray(problem.w(x_lat, t), dtype=float)
        for u in u_samples:
            u_arr = np.full(x_lat.shape[0], float(u))
            quad = np.asarray(problem.quad_coeff(x_lat, t, u_arr), dtype=float)
            cross = np.asarray(problem.cross_coeff(x_lat, t, u_arr), dtype=float)
            src = np.asarray(problem.source(x_lat, t, u_arr), dtype=float)
            for p in fixed:
                sp = sig.T @ p
                base = (
                    mu_val @ p
                    + quad * float(sp @ sp)
                    + cross * (w_val @ sp)
                    + src
                )
                for tc in trace_caps:
                    worst = max(worst, float(np.max(np.abs(tc + base))))
            for parr in pointwise:
                sp = parr @ sig
                base = (
                    np.einsum("...i,...i->...", mu_val, parr)
                    + quad * np.sum(sp * sp, axis=-1)
                    + cross * np.sum(w_val * sp, axis=-1)
                    + src
                )
                for tc in trace_caps:
                    worst = max(worst, float(np.max(np.abs(tc + base))))
    return worst


def time_growth_constants(norms, w1, w2, dim):
    """Assemble (b1, b2) from coefficient norms and time moduli.

    b1 = |lambda| |sigma^T|^2 w1^2 + |eta| |sigma^T| |w| w1 + L(f)
    b2 = L(sigma sigma^T) (N^2 w2 / 2 + |lambda| w1^2)
         + w1 (L(sigma^T) |w| + L(w) |sigma^T| + L(mu))
    """
    required = [
        "lambda_sup",
        "eta_sup",
        "sigma_t_sup",
        "w_sup",
        "mod_f_t",
        "mod_sigma_sq_t",
        "mod_sigma_t_t",
        "mod_w_t",
        "mod_mu_t",
    ]
    for name in required:
        if getattr(norms, name) is None:
            raise ConfigurationError("missing coefficient norm or time modulus", missing=name)
    b1 = (
        norms.lambda_sup * norms.sigma_t_sup**2 * w1**2
        + norms.eta_sup * norms.sigma_t_sup * norms.w_sup * w1
        + norms.mod_f_t
    )
    b2 = norms.mod_sigma_sq_t * (0.5 * dim**2 * w2 + norms.lambda_sup * w1**2) + w1 * (
        norms.mod_sigma_t_t * norms.w_sup + norms.mod_w_t * norms.sigma_t_sup + norms.mod_mu_t
    )
    return float(b1), float(b2)


def bound_constants(problem, axes, horizon, u0_norms, solution_norms=None, **sup_kwargs):
    """Computable bound constants for a problem on a probe lattice.

    u0_norms is the pair (gradient cap, Hessian cap) of the initial datum;
    solution_norms, when given, is the (W1, W2) pair of measured Sobolev sups
    used for the time-growth constants (these also need problem.norms).
    """
    grad_cap, hess_cap = u0_norms
    if not (np.isfinite(grad_cap) and np.isfinite(hess_cap)):
        raise ConfigurationError("initial datum norms must be finite", norms=u0_norms)
    c0 = initial_slope_bound(problem, axes, horizon, grad_cap, hess_cap, **sup_kwargs)
    meta = {
        "p_cap": float(grad_cap),
        "hess_cap": float(hess_cap),
        "n_times": sup_kwargs.get("n_times", 9),
        "n_u": sup_kwargs.get("n_u", 9),
    }
    if solution_norms is None:
        return BoundConstants(c0_init=c0, b1=0.0, b2=0.0, meta=dict(meta, time_growth=False))
    if problem.norms is None:
        raise ConfigurationError("problem carries no coefficient norms for the time-growth pair")
    w1, w2 = solution_norms
    b1, b2 = time_growth_constants(problem.norms, w1, w2, problem.dim)
    return BoundConstants(c0_init=c0, b1=b1, b2=b2, meta=dict(meta, time_growth=True))


@dataclass
class DeviationReport:
    worst_ratio: float
    ok: bool
    times: np.ndarray = dataclass_field(repr=False, default=None)
    deviations: np.ndarray = dataclass_field(repr=False, default=None)
    bounds: np.ndarray = dataclass_field(repr=False, default=None)


def initial_deviation_check(field, c0_init, tolerance, horizon_fraction=1.0, collar=4):
    """Verify max_x |u(., t) - u0| <= c0_init t + tolerance slice by slice."""
    grid = field.grid
    box = tuple(slice(collar, n - collar) for n in grid.shape)
    u0 = field.values[0][box]
    t_max = horizon_fraction * grid.horizon
    times = []
    devs = []
    bounds = []
    for k in range(1, grid.steps + 1):
        t = field.times[k]
        if t > t_max + 1e-15:
            break
        dev = float(np.max(np.abs(field.values[k][box] - u0)))
        times.append(t)
        devs.append(dev)
        bounds.append(c0_init * t + tolerance)
    times = np.asarray(times)
    devs = np.asarray(devs)
    bounds = np.asarray(bounds)
    ratios = devs / np.where(bounds > 0.0, bounds, 1.0)
    worst = float(ratios.max()) if ratios.size else 0.0
    return DeviationReport(
        worst_ratio=worst, ok=bool(worst <= 1.0), times=times, deviations=devs, bounds=bounds
    )


def field_sup_norms(values, axes):
    """Sup norms (value, gradient, Hessian) of one grid slice."""
    dim = len(axes)
    comps = np.gradient(values, *axes, edge_order=2)
    if dim == 1:
        comps = [comps]
    grad_sup = max(float(np.max(np.abs(g))) for g in comps)
    hess_sup = 0.0
    for g in comps:
        second = np.gradient(g, *axes, edge_order=2)
        if dim == 1:
            second = [second]
        hess_sup = max(hess_sup, max(float(np.max(np.abs(s))) for s in second))
    return float(np.max(np.abs(values))), grad_sup, hess_sup


def solution_sobolev_norms(field, collar=4, stride=1):
    """Measured sups of |u| + |grad u| and + |hess u| over the field."""
    grid = field.grid
    box = tuple(slice(collar, n - collar) for n in grid.shape)
    w1 = 0.0
    w2 = 0.0
    for k in range(0, grid.steps + 1, stride):
        u = field.values[k]
        comps = np.gradient(u, *grid.axes, edge_order=2)
        if grid.dim == 1:
            comps = [comps]
        gmax = max(float(np.max(np.abs(g[box]))) for g in comps)
        hmax = 0.0
        for g in comps:
            second = np.gradient(g, *grid.axes, edge_order=2)
            if grid.dim == 1:
                second = [second]
            hmax = max(hmax, max(float(np.max(np.abs(s[box]))) for s in second))
        val = float(np.max(np.abs(u[box])))
        w1 = max(w1, val + gmax)
        w2 = max(w2, val + gmax + hmax)
    return w1, w2
