"""Named experiment configurations.

Each builder returns a fully specified problem plus its lattice, ready for
the evolution loop; companion helpers compute the error metrics the studies
report.  The static-reconstruction study and the matrix-free driver for the
linear nonlocal equation live here as well.
"""
from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import diagnostics as diag
from .core import (
    ExactSampler,
    GridSpec,
    ParticleEnsemble,
    ProblemSpec,
    RejectionSampler,
    RngStream,
    scan_envelope,
)
from .evolution import KIND_ALLEN_CAHN, KIND_HJB_GRAD_SQ, NonlinearTerm, StepState
from .operators import FractionalParams, advect, diffuse, fractional_jump
from .vug import VugMap, build_solution_map, grid_coord, occupancy

EXPERIMENT_NAMES = (
    "benchmark_1d",
    "vug_static",
    "allen_cahn_6d",
    "allen_cahn_nonlocal_6d",
    "hjb_7d",
    "nonlocal_linear_hd",
)


# ---------------------------------------------------------------------------
# 1-D benchmark: u_t = u_x + u_xx + u - u^3, u0 = exp(-x^2)(1 + x^4)
# ---------------------------------------------------------------------------

def benchmark_u0(x):
    x1 = np.asarray(x, dtype=np.float64)
    if x1.ndim == 2:
        x1 = x1[:, 0]
    return np.exp(-(x1**2)) * (1.0 + x1**4)


# int exp(-x^2)(1 + x^4) dx = sqrt(pi) (1 + 3/4)
_BENCHMARK_MASS = 1.75 * math.sqrt(math.pi)


def _benchmark_sampler() -> RejectionSampler:
    def pdf(x):
        x1 = np.asarray(x)[:, 0]
        return np.exp(-0.5 * x1**2) / math.sqrt(2.0 * math.pi)

    scan = np.linspace(-10.0, 10.0, 20001).reshape(-1, 1)
    env = scan_envelope(benchmark_u0, pdf, scan)
    return RejectionSampler(
        u0=benchmark_u0,
        proposal_draw=lambda m, rng: rng.normal(size=(m, 1)),
        proposal_pdf=pdf,
        envelope=env,
        total_abs_mass=_BENCHMARK_MASS,
    )


def benchmark_problem(tau=0.01, h=0.01, T=1.0, strategy="A"):
    spec = ProblemSpec(
        dim=1,
        tau=tau,
        T=T,
        strategy=strategy,
        advection=np.array([1.0]),
        diffusion=1.0,
        nonlinearity=NonlinearTerm(KIND_ALLEN_CAHN),
        initial_condition=benchmark_u0,
        sampler=_benchmark_sampler(),
    )
    grid = GridSpec(anchor=0.0, h=h, dim=1)
    return spec, grid


@functools.lru_cache(maxsize=8)
def _benchmark_reference(T: float, dt: float = 2e-3):
    return diag.reference_1d(benchmark_u0, T, dt=dt)


def benchmark_error(ensemble: ParticleEnsemble, grid: GridSpec, T: float) -> float:
    """Relative L2 distance of the particle histogram to the deterministic
    splitting solution at time T."""
    num = diag.project_1d(ensemble, grid)
    x, u = _benchmark_reference(T)
    ref = diag.cell_average_1d(x, u, grid)
    return diag.rel_l2_error(num, ref)


def average_gridded_1d(fns: Sequence[diag.GriddedFunction1D]) -> diag.GriddedFunction1D:
    """Pointwise mean of 1-D gridded functions on a shared lattice (used to
    push the stochastic floor below the discretisation error)."""
    out = fns[0]
    for f in fns[1:]:
        a, b = diag._aligned_pair_1d(out, f)
        origin = min(out.origin, f.origin)
        out = diag.GriddedFunction1D(origin, out.h, a + b)
    return diag.GriddedFunction1D(out.origin, out.h, out.values / len(fns))


# ---------------------------------------------------------------------------
# Gaussian-mixture initial data shared by the 6-D and 7-D forced problems
# ---------------------------------------------------------------------------

def _mixture_rejection_sampler(u0, centers2, amps, d, prop_sd=math.sqrt(0.6),
                               mass=None):
    """Rejection sampler whose proposal is a 2-component Gaussian mixture
    centred where the initial data peaks; the envelope is found by scanning
    the first two coordinates (the ratio decays in the remaining ones)."""
    probs = np.abs(np.asarray(amps, dtype=np.float64))
    probs = probs / probs.sum()
    mus = np.zeros((2, d))
    mus[:, :2] = centers2

    def draw(m, rng):
        comp = (rng.random(m) >= probs[0]).astype(np.int64)
        return mus[comp] + prop_sd * rng.standard_normal((m, d))

    norm = (2.0 * math.pi * prop_sd**2) ** (-d / 2.0)

    def pdf(x):
        x = np.asarray(x, dtype=np.float64)
        out = 0.0
        for p, w in zip(mus, probs):
            q = np.sum((x - p) ** 2, axis=-1)
            out = out + w * np.exp(-q / (2.0 * prop_sd**2))
        return norm * out

    g = np.linspace(-6.0, 7.0, 651)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    scan = np.zeros((xx.size, d))
    scan[:, 0] = xx.ravel()
    scan[:, 1] = yy.ravel()
    env = scan_envelope(lambda x: np.abs(u0(x)), pdf, scan)
    return RejectionSampler(u0, draw, pdf, env, total_abs_mass=mass)


def _mixture_abs_mass(centers2, amps, g2) -> float:
    """int |u0| over R^d.  The directions beyond the first two integrate to
    a common Gaussian factor, leaving a 2-D absolute integral times 1/pi."""
    c2 = np.asarray(centers2, dtype=np.float64)

    def f(x2, x1):
        s = 0.0
        for p, a in zip(c2, amps):
            s += a * math.exp(-((x1 - p[0]) ** 2 + (x2 - p[1]) ** 2))
        return abs(g2(x1, x2) * s)

    val, err = integrate.dblquad(f, -8.0, 9.0, -8.0, 9.0,
                                 epsabs=1e-10, epsrel=1e-10)
    return val / math.pi


@functools.lru_cache(maxsize=4)
def _allen_cahn_mass(d: int) -> float:
    return _mixture_abs_mass(
        ((2.0, 2.0), (-1.0, -1.0)), (1.0, 2.0), lambda a, b: a + b
    )


@functools.lru_cache(maxsize=4)
def _hjb_mass(d: int) -> float:
    return _mixture_abs_mass(
        ((0.0, 0.6), (-1.0, 1.0)), (2.5, -1.0), lambda a, b: a * a + b * b
    )


def allen_cahn_problem(c=1.0, tau=0.1, T=2.0, h=0.4, strategy="B", d=6):
    u0 = lambda x: diag.allen_cahn_exact(x, 0.0, c, d)
    sampler = _mixture_rejection_sampler(
        u0, ((2.0, 2.0), (-1.0, -1.0)), (1.0, 2.0), d, mass=_allen_cahn_mass(d)
    )
    term = NonlinearTerm(
        KIND_ALLEN_CAHN, forcing=lambda x, t: diag.allen_cahn_forcing(x, t, c, d)
    )
    spec = ProblemSpec(
        dim=d, tau=tau, T=T, strategy=strategy, diffusion=c,
        nonlinearity=term, initial_condition=u0, sampler=sampler,
    )
    return spec, GridSpec(anchor=0.0, h=h, dim=d)


def hjb_problem(c=0.5, tau=0.1, T=2.0, h=0.4, d=7):
    u0 = lambda x: diag.hjb_exact(x, 0.0, c, d)
    sampler = _mixture_rejection_sampler(
        u0, ((0.0, 0.6), (-1.0, 1.0)), (2.5, -1.0), d, mass=_hjb_mass(d)
    )
    term = NonlinearTerm(
        KIND_HJB_GRAD_SQ, forcing=lambda x, t: diag.hjb_forcing(x, t, c, d)
    )
    spec = ProblemSpec(
        dim=d, tau=tau, T=T, strategy="B", diffusion=c,
        nonlinearity=term, initial_condition=u0, sampler=sampler,
    )
    return spec, GridSpec(anchor=0.0, h=h, dim=d)


def projection_errors(ensemble: ParticleEnsemble, grid: GridSpec, ref_p, ref_m,
                      lo=-10.0, hi=11.0):
    """Relative L2 errors of the 1-D and 2-D projections against closed-form
    reference projections on the same lattice."""
    num1 = diag.project_1d(ensemble, grid)
    r1 = diag.gridded_from_function_1d(ref_p, grid, lo, hi)
    num2 = diag.project_2d(ensemble, grid)
    r2 = diag.gridded_from_function_2d(
        lambda a, b: ref_m(a, b), grid, (lo, lo), (hi, hi)
    )
    return diag.rel_l2_error(num1, r1), diag.rel_l2_error(num2, r2)


def allen_cahn_projection_errors(ensemble, grid, c, t):
    return projection_errors(
        ensemble, grid,
        lambda x1: diag.allen_cahn_proj_p(x1, t, c),
        lambda x1, x2: diag.allen_cahn_proj_m(x1, x2, t, c),
    )


def hjb_projection_errors(ensemble, grid, c, t):
    return projection_errors(
        ensemble, grid,
        lambda x1: diag.hjb_proj_p(x1, t, c),
        lambda x1, x2: diag.hjb_proj_m(x1, x2, t, c),
    )


def nonlocal_ac_problem(tau=0.01, T=1.0, h=0.1, alpha=1.5, eps=0.005, d=6,
                        strategy="A"):
    """Bistable reaction with the jump-diffusion operator; the initial data
    is the standard d-variate Gaussian density (unit total mass)."""
    u0 = lambda x: (2.0 * math.pi) ** (-d / 2.0) * np.exp(
        -0.5 * np.sum(np.asarray(x) ** 2, axis=-1)
    )
    sampler = ExactSampler(
        draw=lambda n, rng: rng.standard_normal((n, d)), total_abs_mass=1.0
    )
    spec = ProblemSpec(
        dim=d, tau=tau, T=T, strategy=strategy, fractional=(alpha, eps),
        nonlinearity=NonlinearTerm(KIND_ALLEN_CAHN),
        initial_condition=u0, sampler=sampler,
    )
    return spec, GridSpec(anchor=0.0, h=h, dim=d)


def sign_coherence(state: StepState, grid: GridSpec) -> float:
    """Fraction of particles whose weight sign agrees with the sign of the
    reconstructed field in their own cell (cells where the field cancelled
    exactly are skipped)."""
    ens = state.ensemble
    vals = state.m1.values_at_coords(grid_coord(ens.locations, grid))
    live = vals != 0.0
    agree = np.sign(ens.weights[live]) == np.sign(vals[live])
    return float(agree.mean())


# ---------------------------------------------------------------------------
# static reconstruction study: sign-changing product-beta mixture
# ---------------------------------------------------------------------------

_BETA_PARAMS = ((15.0, 5.0), (10.0, 10.0), (5.0, 15.0))
_BETA_AMPS = (1.0, -1.0, 1.0)


def _beta_pdf(a: float, b: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lognorm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = np.exp(
        lognorm + (a - 1.0) * np.log(xi) + (b - 1.0) * np.log1p(-xi)
    )
    return out


def beta_mixture_value(x: np.ndarray) -> np.ndarray:
    """Sign-changing target of the reconstruction study: an alternating sum
    of three product-beta densities on the unit cube."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = 0.0
    for (a, b), amp in zip(_BETA_PARAMS, _BETA_AMPS):
        out = out + amp * np.prod(_beta_pdf(a, b, x), axis=1)
    return out


def beta_mixture_sampler(d: int) -> RejectionSampler:
    probs = np.full(3, 1.0 / 3.0)

    def draw(m, rng):
        comp = rng.integers(0, 3, size=m)
        out = np.empty((m, d))
        for j, (a, b) in enumerate(_BETA_PARAMS):
            sel = comp == j
            out[sel] = rng.beta(a, b, size=(int(sel.sum()), d))
        return out

    def pdf(x):
        x = np.asarray(x, dtype=np.float64)
        return sum(
            np.prod(_beta_pdf(a, b, x), axis=1) for a, b in _BETA_PARAMS
        ) / 3.0

    # |sum of three signed products| <= sum of the three products = 3 q
    return RejectionSampler(beta_mixture_value, draw, pdf, envelope=3.0,
                            total_abs_mass=None)


def _beta_cross(a, b, c, e) -> float:
    """int_0^1 f_{a,b} f_{c,e} dx in closed form."""
    def logbeta(p, q):
        return math.lgamma(p) + math.lgamma(q) - math.lgamma(p + q)

    return math.exp(logbeta(a + c - 1.0, b + e - 1.0) - logbeta(a, b) - logbeta(c, e))


def beta_mixture_norm_sq(d: int) -> float:
    """Exact squared L2 norm of the mixture (cross terms in closed form)."""
    total = 0.0
    for (a, b), amp_i in zip(_BETA_PARAMS, _BETA_AMPS):
        for (c, e), amp_j in zip(_BETA_PARAMS, _BETA_AMPS):
            total += amp_i * amp_j * _beta_cross(a, b, c, e) ** d
    return total


_DENSE_ERROR_CAP = 1 << 25


def beta_reconstruction_error(vmap: VugMap, d: int, h: float) -> float:
    """Relative L2 error of a reconstruction of the beta mixture.

    Small lattices are enumerated densely through the tensor structure of
    the reference; otherwise the off-support part of the norm uses the exact
    continuum value.
    """
    m = int(round(1.0 / h))
    centers = (np.arange(m) + 0.5) * h
    coords = np.clip(vmap.coords, 0, m - 1)
    if float(m) ** d <= _DENSE_ERROR_CAP:
        ref = np.zeros((m,) * d)
        for (a, b), amp in zip(_BETA_PARAMS, _BETA_AMPS):
            v = _beta_pdf(a, b, centers)
            block = v
            for _ in range(d - 1):
                block = np.multiply.outer(block, v)
            ref += amp * block
        num = np.zeros((m,) * d)
        num[tuple(coords.T)] = vmap.values
        return math.sqrt(float(np.sum((num - ref) ** 2))) / math.sqrt(
            float(np.sum(ref * ref))
        )
    cell = h**d
    ref_k = beta_mixture_value(vmap.grid.anchor + (coords + 0.5) * h)
    norm_sq = beta_mixture_norm_sq(d)
    err_sq = float(np.sum((vmap.values - ref_k) ** 2)) * cell + max(
        norm_sq - float(np.sum(ref_k**2)) * cell, 0.0
    )
    return math.sqrt(err_sq / norm_sq)


@dataclass
class StaticStudyResult:
    error: float
    stored_cells: int
    full_cells: int
    alpha_occ: float
    mass_estimate: float


def vug_static_study(d: int, n: int, h: float, seed: int,
                     workers: int = 1) -> StaticStudyResult:
    """Sample the beta mixture, reconstruct it on the lattice, and report the
    relative L2 error plus the occupancy of the unit cube."""
    rng = RngStream(seed).generator()
    locs, weights = beta_mixture_sampler(d).sample(n, rng)
    ens = ParticleEnsemble(locs, weights)
    grid = GridSpec(anchor=0.0, h=h, dim=d)
    vmap = build_solution_map(ens, grid, workers=workers)
    occ = occupancy(vmap, box=(np.zeros(d), np.ones(d)))
    err = beta_reconstruction_error(vmap, d, h)
    return StaticStudyResult(err, occ.stored_cells, occ.full_cells, occ.ratio,
                             float(abs(weights[0])))


# ---------------------------------------------------------------------------
# matrix-free driver for the linear nonlocal equation (O(d) storage)
# ---------------------------------------------------------------------------

_LINEAR_CHUNK_CAP = 1 << 23


@dataclass
class LinearRunResult:
    times: np.ndarray
    o1: np.ndarray
    o2: np.ndarray
    first_two: Optional[np.ndarray]  # (N, 2) final coordinates when kept


def run_nonlocal_linear(d: int, n: int, tau: float, T: float, b=1.0, c=0.2,
                        alpha=1.5, eps=0.005, seed: int = 0, x0=0.0,
                        keep_first_two: bool = False,
                        workers: int = 1) -> LinearRunResult:
    """Point-source run of ``g_t = b.grad g + c Lap g - (-Lap)^{a/2} g``.

    Particles start at ``x0`` with unit weights and never interact, so they
    are processed in fixed-size chunks (bounded memory regardless of d); the
    random stream is keyed by (chunk, step), which makes the result
    independent of the worker count.
    """
    params = FractionalParams(alpha, eps)
    steps = int(round(T / tau))
    if abs(steps * tau - T) > 1e-9:
        raise ValueError("T must be an integer multiple of tau")
    bvec = np.broadcast_to(np.asarray(b, dtype=np.float64), (d,))
    x0vec = np.broadcast_to(np.asarray(x0, dtype=np.float64), (d,))
    chunk = max(1, min(n, _LINEAR_CHUNK_CAP // d))
    nchunks = (n + chunk - 1) // chunk
    stream = RngStream(seed)

    def run_chunk(ci):
        lo = ci * chunk
        m = min(n, lo + chunk) - lo
        x = np.tile(x0vec, (m, 1))
        o1 = np.zeros(steps + 1)
        o2 = np.zeros(steps + 1)
        o1[0] = x[:, 0].sum()
        o2[0] = (x[:, 0] ** 2).sum()
        for s in range(steps):
            gen = stream.child(ci * steps + s + 1).generator()
            x = advect(x, bvec, tau)
            x = diffuse(x, c, tau, gen)
            x = fractional_jump(x, params, tau, gen)
            o1[s + 1] += x[:, 0].sum()
            o2[s + 1] += (x[:, 0] ** 2).sum()
        return o1, o2, x[:, :2].copy() if keep_first_two else None

    if workers > 1 and nchunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, range(nchunks)))
    else:
        parts = [run_chunk(ci) for ci in range(nchunks)]

    o1 = sum(p[0] for p in parts) / n
    o2 = sum(p[1] for p in parts) / n
    tails = (
        np.concatenate([p[2] for p in parts]) if keep_first_two else None
    )
    times = np.arange(steps + 1) * tau
    return LinearRunResult(times, o1, o2, tails)


def marginal_error_2d(first_two: np.ndarray, n_total: int, t: float, c: float,
                      alpha: float, half_width: float = 4.0,
                      h: float = 0.25) -> float:
    """Relative L2 distance of the empirical 2-D marginal (around its own
    centre) to the radial fundamental solution."""
    center = first_two.mean(axis=0)
    edges = np.arange(-half_width, half_width + 0.5 * h, h)
    counts, _, _ = np.histogram2d(
        first_two[:, 0] - center[0], first_two[:, 1] - center[1],
        bins=(edges, edges),
    )
    num = counts / (n_total * h * h)
    mids = 0.5 * (edges[:-1] + edges[1:])
    yy = np.hypot(mids[:, None], mids[None, :])
    radii = np.unique(np.round(yy, 12))
    table = {r: diag.radial_reference(r, t, c, alpha, d=2) for r in radii}
    ref = np.vectorize(lambda r: table[r])(np.round(yy, 12))
    return math.sqrt(float(np.sum((num - ref) ** 2))) / math.sqrt(
        float(np.sum(ref * ref))
    )
