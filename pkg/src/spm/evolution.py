"""Weak-form exponential-Euler stepping of the particle system.

Two update strategies are provided.  Strategy A multiplies each weight by
``1 + tau * f/u`` (valid when the nonlinearity vanishes with the solution)
and moves particles under the linear flow.  Strategy B first resamples
particle locations from the normalised magnitude of ``u + tau f``, assigns
uniform-magnitude signed weights ``+-Z``, then moves particles.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .core import GridSpec, ParticleEnsemble, ProblemSpec, RngStream, initial_sample
from .operators import FractionalParams, advect, diffuse, fractional_jump
from .vug import (
    ROLE_SOLUTION_PLUS_F,
    VugMap,
    build_solution_map,
    grid_coord,
    sample_from_map,
    total_variation_Z,
)

KIND_NONE = "none"
KIND_ALLEN_CAHN = "allen_cahn"
KIND_HJB_GRAD_SQ = "hjb_grad_sq"

# stream-id layout: one block of ids per step, one id per draw purpose
_STREAMS_PER_STEP = 8
_SID_INIT = 0
_SID_DIFFUSE = 1
_SID_FRACTIONAL = 2
_SID_RELOCATE = 3


@dataclass(frozen=True)
class NonlinearTerm:
    """Descriptor of the nonlinear part ``f(t, x, u, grad u)``."""

    kind: str = KIND_NONE
    forcing: Optional[Callable] = None  # r(x, t), vectorised over x

    @property
    def needs_gradient(self) -> bool:
        return self.kind == KIND_HJB_GRAD_SQ

    @property
    def satisfies_assumption(self) -> bool:
        # the ratio f/u must exist wherever u does not vanish
        return self.kind in (KIND_NONE, KIND_ALLEN_CAHN)


def f_value(term: NonlinearTerm, t: float, x: np.ndarray, u: np.ndarray,
            grad: Optional[np.ndarray] = None) -> np.ndarray:
    """Nonlinearity value(s), forcing included."""
    u = np.asarray(u, dtype=np.float64)
    if term.kind == KIND_ALLEN_CAHN:
        out = u - u**3
    elif term.kind == KIND_HJB_GRAD_SQ:
        if grad is None:
            raise ValueError("gradient required for the squared-gradient term")
        out = np.sum(np.asarray(grad, dtype=np.float64) ** 2, axis=-1)
    elif term.kind == KIND_NONE:
        out = np.zeros_like(u)
    else:
        raise ValueError(f"unknown nonlinearity kind {term.kind!r}")
    if term.forcing is not None:
        out = out + term.forcing(x, t)
    return out


def f_hat_value(term: NonlinearTerm, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``f/u`` on the support of the reconstruction, 0 elsewhere."""
    if not term.satisfies_assumption:
        raise ValueError(
            "f/u is undefined for a nonlinearity that survives where u vanishes"
        )
    u = np.asarray(u, dtype=np.float64)
    f = f_value(term, t, x, u)
    return np.divide(f, u, out=np.zeros_like(u), where=u != 0.0)


@dataclass
class StepState:
    """Ensemble plus the two reconstructions carried between steps.

    For strategy B, ``m2`` stores ``u + tau f`` and ``z`` its total
    variation; for strategy A, ``m2`` stores the weight multiplier field
    ``f/u`` instead and ``z`` is None.
    """

    ensemble: ParticleEnsemble
    m1: VugMap
    m2: VugMap
    z: Optional[float]
    step_index: int = 0


def _cell_gradients(m1: VugMap) -> np.ndarray:
    g = np.empty((m1.n_cells, m1.grid.dim))
    for j in range(m1.grid.dim):
        g[:, j] = m1.grad_component_at_stored(j)
    return g


def build_nonlinearity_map(m1: VugMap, term: NonlinearTerm, t: float, tau: float,
                           strategy: str) -> VugMap:
    """Second map over the stored cells of ``m1``: the weight multiplier
    field ``f/u`` (strategy A) or ``u + tau f`` (strategy B), evaluated at
    cell centers.  Cells absent from ``m1`` get no entry."""
    centers = m1.cell_centers()
    u = m1.values
    if strategy == "A":
        vals = f_hat_value(term, t, centers, u)
    else:
        grad = _cell_gradients(m1) if term.needs_gradient else None
        vals = u + tau * f_value(term, t, centers, u, grad)
    return VugMap(m1.grid, m1.coords, vals, role=ROLE_SOLUTION_PLUS_F)


def apply_motion(locs: np.ndarray, spec: ProblemSpec, seed_stream: RngStream,
                 step_index: int) -> np.ndarray:
    """One Lawson-Euler step of the linear flow: advection, then diffusion,
    then the fractional jump (the order is fixed for reproducibility)."""
    if spec.advection is not None:
        locs = advect(locs, spec.advection, spec.tau)
    if spec.diffusion:
        gen = seed_stream.child(
            step_index * _STREAMS_PER_STEP + _SID_DIFFUSE).generator()
        locs = diffuse(locs, spec.diffusion, spec.tau, gen)
    if spec.fractional is not None:
        params = FractionalParams(*spec.fractional)
        gen = seed_stream.child(
            step_index * _STREAMS_PER_STEP + _SID_FRACTIONAL).generator()
        locs = fractional_jump(locs, params, spec.tau, gen)
    return locs


def bootstrap(spec: ProblemSpec, n: int, grid: GridSpec, seed_stream: RngStream,
              workers: int = 1) -> StepState:
    """Initial ensemble, its reconstruction, and the first second map."""
    ens = initial_sample(spec, n, seed_stream.child(_SID_INIT))
    m1 = build_solution_map(ens, grid, workers=workers)
    term = spec.nonlinearity or NonlinearTerm()
    m2 = build_nonlinearity_map(m1, term, ens.time, spec.tau, spec.strategy)
    z = total_variation_Z(m2) if spec.strategy == "B" else None
    return StepState(ens, m1, m2, z, step_index=0)


def step_strategy_A(state: StepState, spec: ProblemSpec, grid: GridSpec,
                    seed_stream: RngStream, workers: int = 1) -> StepState:
    """Weight multiplication by ``1 + tau f/u``, then motion, then rebuild."""
    term = spec.nonlinearity or NonlinearTerm()
    ens = state.ensemble
    cells = grid_coord(ens.locations, grid)
    fhat = state.m2.values_at_coords(cells)
    weights = ens.weights * (1.0 + spec.tau * fhat)
    locs = apply_motion(ens.locations, spec, seed_stream, state.step_index)
    new_ens = ParticleEnsemble(locs, weights, time=ens.time + spec.tau)
    m1 = build_solution_map(new_ens, grid, workers=workers)
    m2 = build_nonlinearity_map(m1, term, new_ens.time, spec.tau, "A")
    return StepState(new_ens, m1, m2, None, state.step_index + 1)


def step_strategy_B(state: StepState, spec: ProblemSpec, grid: GridSpec,
                    seed_stream: RngStream, workers: int = 1) -> StepState:
    """Relocation from ``|u + tau f|/Z``, signed weights ``+-Z``, motion,
    rebuild of both maps and of ``Z``."""
    term = spec.nonlinearity or NonlinearTerm()
    ens = state.ensemble
    if state.z is None or state.z <= 0:
        raise RuntimeError("strategy B requires a positive Z")
    gen = seed_stream.child(
        state.step_index * _STREAMS_PER_STEP + _SID_RELOCATE).generator()
    pts, idx = sample_from_map(state.m2, state.z, gen, ens.n, return_indices=True)
    weights = np.sign(state.m2.values[idx]) * state.z
    locs = apply_motion(pts, spec, seed_stream, state.step_index)
    new_ens = ParticleEnsemble(locs, weights, time=ens.time + spec.tau)
    m1 = build_solution_map(new_ens, grid, workers=workers)
    m2 = build_nonlinearity_map(m1, term, new_ens.time, spec.tau, "B")
    z = total_variation_Z(m2)
    return StepState(new_ens, m1, m2, z, state.step_index + 1)


@dataclass
class RunResult:
    final: StepState
    records: list
    peak_cells: int


def run(spec: ProblemSpec, n: int, grid: GridSpec, seed: int,
        workers: int = 1,
        observer: Optional[Callable] = None) -> RunResult:
    """Execute ``T/tau`` steps, recording per-step observables.

    ``observer(state)``, when given, returns a dict merged into each step's
    record (projections, custom errors, ...).
    """
    stream = RngStream(seed)
    state = bootstrap(spec, n, grid, stream, workers=workers)
    stepper = step_strategy_A if spec.strategy == "A" else step_strategy_B
    records = []
    peak = state.m1.n_cells
    t0 = _time.perf_counter()
    for m in range(spec.n_steps):
        try:
            state = stepper(state, spec, grid, stream, workers=workers)
        except Exception as exc:
            raise RuntimeError(f"solver aborted at step {m}: {exc}") from exc
        peak = max(peak, state.m1.n_cells)
        rec = {
            "step": state.step_index,
            "t": state.ensemble.time,
            "mass": float(state.ensemble.weights.sum() / n),
            "z": state.z if state.z is not None else float("nan"),
            "stored_cells": state.m1.n_cells,
            "wall_s": _time.perf_counter() - t0,
        }
        if observer is not None:
            rec.update(observer(state))
        records.append(rec)
    return RunResult(state, records, peak)
