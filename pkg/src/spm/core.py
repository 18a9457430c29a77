"""Core vocabulary of the particle solver.

Ensembles of signed weighted points, the uniform lattice they are binned on,
problem descriptors, and deterministic counter-based random streams.  The
ensemble approximates a function ``u`` in the weak sense: for a test function
``phi``, ``<phi, u> ~ (1/N) sum_i w_i phi(x_i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class Particle(NamedTuple):
    """A single signed weighted point."""

    location: np.ndarray
    weight: float


@dataclass(frozen=True)
class ParticleEnsemble:
    """N signed weighted points carrying the solution at one instant.

    ``locations`` has shape (N, d), ``weights`` shape (N,).  Weights may be
    negative: the represented field is sign-changing.
    """

    locations: np.ndarray
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if loc.ndim != 2 or loc.shape[0] < 1:
            raise ValueError("locations must be a nonempty (N, d) array")
        if w.shape != (loc.shape[0],):
            raise ValueError("weights must have shape (N,)")
        if not np.all(np.isfinite(loc)):
            raise ValueError("non-finite particle location")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite particle weight")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def particle(self, i: int) -> Particle:
        return Particle(self.locations[i], float(self.weights[i]))


@dataclass(frozen=True)
class GridSpec:
    """Uniform lattice: cell ``j`` occupies ``[anchor + j h, anchor + (j+1) h)``
    per axis; cells are right-open and indexed by signed integers."""

    anchor: np.ndarray
    h: float
    dim: int

    def __post_init__(self):
        anchor = np.broadcast_to(
            np.asarray(self.anchor, dtype=np.float64), (self.dim,)
        ).copy()
        if not (self.h > 0):
            raise ValueError("cell side h must be positive")
        object.__setattr__(self, "anchor", anchor)

    @property
    def cell_measure(self) -> float:
        return self.h ** self.dim


class GridCoord(NamedTuple):
    """Integer lattice coordinate of one cell."""

    coords: tuple


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream.

    A (seed, stream_id) pair keys a Philox generator, so the variate at a
    given draw index never depends on how work is split across workers.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.seed & _U64, (self.stream_id ^ _STREAM_SALT) & _U64],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


_U64 = (1 << 64) - 1
_STREAM_SALT = 0x9E3779B97F4A7C15


class InitialSampler:
    """Draws locations from ``|u0| / int |u0|`` and assigns the matching
    signed weights ``w = u0(x) / p(x)``."""

    def sample(self, n: int, rng: np.random.Generator):
        raise NotImplementedError


class ExactSampler(InitialSampler):
    """Sampler for the case where drawing from ``|u0|/int|u0|`` is exact.

    ``draw(n, rng)`` returns (n, d) locations; ``u0_sign(x)`` the sign of u0
    at those locations; ``total_abs_mass`` is ``int |u0|``.
    """

    def __init__(self, draw: Callable, total_abs_mass: float, u0_sign=None):
        self.draw = draw
        self.total_abs_mass = float(total_abs_mass)
        self.u0_sign = u0_sign

    def sample(self, n, rng):
        x = np.asarray(self.draw(n, rng), dtype=np.float64)
        w = np.full(n, self.total_abs_mass)
        if self.u0_sign is not None:
            w *= np.sign(self.u0_sign(x))
        return x, w


class SamplingError(RuntimeError):
    pass


class RejectionSampler(InitialSampler):
    """Rejection sampler for ``|u0|`` under a proposal with a known envelope.

    Requires ``|u0(x)| <= envelope * proposal_pdf(x)`` everywhere; the bound
    is asserted on every accepted batch.  ``total_abs_mass`` is ``int |u0|``;
    when None it is estimated on the fly from the acceptance rate, using the
    identity  int|u0| = envelope * P(accept).
    """

    def __init__(
        self,
        u0: Callable,
        proposal_draw: Callable,
        proposal_pdf: Callable,
        envelope: float,
        total_abs_mass: Optional[float] = None,
        min_acceptance: float = 1e-3,
        batch: int = 1 << 19,
    ):
        self.u0 = u0
        self.proposal_draw = proposal_draw
        self.proposal_pdf = proposal_pdf
        self.envelope = float(envelope)
        self.total_abs_mass = total_abs_mass
        self.min_acceptance = min_acceptance
        self.batch = batch

    def sample(self, n, rng):
        locs = []
        signs = []
        drawn = 0
        accepted = 0
        while accepted < n:
            m = self.batch
            x = np.asarray(self.proposal_draw(m, rng), dtype=np.float64)
            u = np.asarray(self.u0(x), dtype=np.float64)
            q = np.asarray(self.proposal_pdf(x), dtype=np.float64)
            ratio = np.abs(u) / (self.envelope * q)
            worst = ratio.max()
            if worst > 1.0 + 1e-9:
                raise SamplingError(
                    f"envelope violated: |u0|/(M q) reached {worst:.6g} > 1"
                )
            keep = rng.random(m) < ratio
            drawn += m
            accepted += int(keep.sum())
            locs.append(x[keep])
            signs.append(np.sign(u[keep]))
            if drawn >= 4 * self.batch and accepted / drawn < self.min_acceptance:
                raise SamplingError(
                    f"rejection acceptance rate {accepted / drawn:.3g} below "
                    f"floor {self.min_acceptance:.3g}"
                )
        x = np.concatenate(locs)[:n]
        s = np.concatenate(signs)[:n]
        mass = self.total_abs_mass
        if mass is None:
            mass = self.envelope * accepted / drawn
        return x, s * mass


def scan_envelope(abs_u0, proposal_pdf, points, safety=1.2) -> float:
    """Envelope constant ``M`` with ``|u0| <= M q`` from a scan of candidate
    points (grid scan plus a safety factor)."""
    points = np.asarray(points, dtype=np.float64)
    q = np.asarray(proposal_pdf(points), dtype=np.float64)
    u = np.asarray(abs_u0(points), dtype=np.float64)
    good = q > 0
    return safety * float(np.max(u[good] / q[good]))


@dataclass
class ProblemSpec:
    """Descriptor of one Cauchy problem and of how to integrate it.

    The linear part is any combination of constant advection ``b . grad``,
    diffusion ``c Laplacian`` and the fractional Laplacian of order ``alpha``
    (with semigroup cut-off ``epsilon``).  ``nonlinearity`` is a
    ``NonlinearTerm`` from the evolution module.
    """

    dim: int
    tau: float
    T: float
    strategy: str = "A"
    advection: Optional[np.ndarray] = None
    diffusion: Optional[float] = None
    fractional: Optional[tuple] = None  # (alpha, epsilon)
    nonlinearity: object = None
    initial_condition: Optional[Callable] = None
    sampler: Optional[InitialSampler] = None

    def __post_init__(self):
        if self.tau <= 0 or self.T <= 0:
            raise ValueError("tau and T must be positive")
        steps = self.T / self.tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("T must be an integer multiple of tau")
        if self.advection is not None:
            b = np.broadcast_to(
                np.asarray(self.advection, dtype=np.float64), (self.dim,)
            ).copy()
            self.advection = b
        if self.diffusion is not None and self.diffusion < 0:
            raise ValueError("diffusion coefficient must be nonnegative")
        if self.fractional is not None:
            alpha, eps = self.fractional
            if not (0 < alpha < 2) or eps <= 0:
                raise ValueError("fractional order must lie in (0,2), cutoff > 0")
        if self.strategy not in ("A", "B"):
            raise ValueError("strategy must be 'A' or 'B'")
        if (
            self.strategy == "A"
            and self.nonlinearity is not None
            and not getattr(self.nonlinearity, "satisfies_assumption", True)
        ):
            raise ValueError(
                "strategy A needs a nonlinearity that vanishes with the solution"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))


def weak_pairing(ensemble: ParticleEnsemble, phi: Callable) -> float:
    """``(1/N) sum_i w_i phi(x_i)`` for a vectorised test function ``phi``."""
    vals = np.asarray(phi(ensemble.locations), dtype=np.float64)
    if vals.shape != (ensemble.n,):
        vals = np.broadcast_to(vals, (ensemble.n,))
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValueError(f"test function is non-finite at particle {idx}")
    return float(np.dot(ensemble.weights, vals) / ensemble.n)


def initial_sample(spec: ProblemSpec, n: int, rng: RngStream) -> ParticleEnsemble:
    """Draw the initial ensemble from ``|u0|/int|u0|`` with weights
    ``u0/p``; all weight magnitudes equal ``int |u0|``."""
    if spec.sampler is None:
        raise ValueError("problem spec has no initial sampler")
    gen = rng.generator()
    locs, weights = spec.sampler.sample(n, gen)
    if locs.shape != (n, spec.dim):
        raise ValueError("sampler returned wrong shape")
    return ParticleEnsemble(locs, weights, time=0.0)
