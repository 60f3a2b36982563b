"""Covariance Matrix Adaptation Evolution Strategy (CMA-ES).

Self-contained (mu/mu_w, lambda)-CMA-ES for black-box minimization over
flattened prompt vectors. Standard strategy constants following Hansen's
tutorial formulation: weighted recombination of the best floor(K/2)
candidates, cumulative step-size adaptation, and rank-one plus rank-mu
covariance updates.

All functions are pure: `cma_tell` returns a new state and never mutates its
inputs, and `cma_ask` is deterministic given (state, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Numerical floors: step size never collapses to zero, covariance eigenvalues
# are clamped relative to the largest before factorization.
STEP_SIZE_FLOOR = 1e-12
EIGENVALUE_FLOOR = 1e-14


class InvalidDimensionError(ValueError):
    pass


class CovarianceNotPDError(np.linalg.LinAlgError):
    pass


class NonFiniteFitnessError(ValueError):
    pass


class EmptyHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyParams:
    """Derived constants of the (mu/mu_w, lambda) strategy."""

    mu: int
    weights: np.ndarray          # length mu, positive, sums to 1
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float                 # E[||N(0, I_n)||]


@dataclass(frozen=True)
class Candidate:
    """One sampled genome; fitness is filled in by the evaluator."""

    genome: np.ndarray
    index: int
    fitness: float | None = None

    def with_fitness(self, value: float) -> "Candidate":
        return replace(self, fitness=float(value))


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray             # length n
    step_size: float
    cov: np.ndarray              # n x n, symmetric positive definite
    path_sigma: np.ndarray
    path_cov: np.ndarray
    generation: int
    pop_size: int
    params: StrategyParams
    seed: int = 0
    block_size: int | None = None  # block-diagonal covariance, or None for full

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _strategy_params(n: int, pop_size: int) -> StrategyParams:
    mu = pop_size // 2
    raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mu_eff = 1.0 / np.sum(weights ** 2)
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
    c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n ** 2))
    return StrategyParams(
        mu=mu, weights=weights, mu_eff=mu_eff, c_sigma=c_sigma, d_sigma=d_sigma,
        c_c=c_c, c_1=c_1, c_mu=c_mu, chi_n=chi_n,
    )


def cma_init(
    n: int,
    pop_size: int,
    seed: int = 0,
    *,
    mean0: np.ndarray | None = None,
    step_size0: float = 1.0,
    block_size: int | None = None,
) -> CmaState:
    """Fresh search state: zero mean, identity covariance, unit step size.

    `block_size` restricts the covariance to independent square blocks of
    that size along the diagonal (n must be a multiple of it).
    """
    if n < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {n}")
    if pop_size < 2:
        raise InvalidDimensionError(f"population size must be >= 2, got {pop_size}")
    if block_size is not None and (block_size < 1 or n % block_size != 0):
        raise InvalidDimensionError(
            f"block size {block_size} must divide dimension {n}")
    if mean0 is None:
        mean0 = np.zeros(n)
    mean0 = np.asarray(mean0, dtype=float)
    if mean0.shape != (n,):
        raise InvalidDimensionError(f"mean0 shape {mean0.shape} != ({n},)")
    if step_size0 <= 0:
        raise InvalidDimensionError("initial step size must be positive")
    return CmaState(
        mean=mean0.copy(),
        step_size=float(step_size0),
        cov=np.eye(n),
        path_sigma=np.zeros(n),
        path_cov=np.zeros(n),
        generation=0,
        pop_size=pop_size,
        params=_strategy_params(n, pop_size),
        seed=int(seed),
        block_size=block_size,
    )


def _cov_factors(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with floor-clamped eigenvalues.

    Returns (eigenvectors B, sqrt-eigenvalues D) so that the sampling
    transform is B @ diag(D).
    """
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotPDError(str(exc)) from exc
    top = float(evals[-1])
    if not np.isfinite(evals).all() or top <= 0:
        raise CovarianceNotPDError("covariance has no positive spectrum")
    evals = np.maximum(evals, EIGENVALUE_FLOOR * top)
    return evecs, np.sqrt(evals)


def _sampling_rng(state: CmaState) -> np.random.Generator:
    return np.random.default_rng((state.seed, state.generation))

def cma_ask(state: CmaState, rng: np.random.Generator | None = None) -> list[Candidate]:
    """Sample the population: genome_k = m + tau * B D z_k, z_k ~ N(0, I).

    With `rng` omitted, a generator derived from (state.seed, generation) is
    used, making sampling a pure function of the state.
    """
    if rng is None:
        rng = _sampling_rng(state)
    b, d = _cov_factors(state.cov)
    z = rng.standard_normal((state.pop_size, state.dim))
    genomes = state.mean + state.step_size * (z * d) @ b.T
    return [Candidate(genome=genomes[k].copy(), index=k) for k in range(state.pop_size)]


def _ranked(evaluated: list[Candidate]) -> list[Candidate]:
    """Ascending fitness, ties broken by sampling index."""
    for cand in evaluated:
        if cand.fitness is None or not math.isfinite(cand.fitness):
            raise NonFiniteFitnessError(
                f"candidate {cand.index} has fitness {cand.fitness}")
    return sorted(evaluated, key=lambda c: (c.fitness, c.index))


def _project_block_diagonal(cov: np.ndarray, block: int) -> np.ndarray:
    out = np.zeros_like(cov)
    for start in range(0, cov.shape[0], block):
        sl = slice(start, start + block)
        out[sl, sl] = cov[sl, sl]
    return out


def cma_tell(state: CmaState, evaluated: list[Candidate]) -> CmaState:
    """One full distribution update from an evaluated population."""
    if len(evaluated) != state.pop_size:
        raise InvalidDimensionError(
            f"expected {state.pop_size} evaluated candidates, got {len(evaluated)}")
    p = state.params
    n = state.dim
    elite = _ranked(evaluated)[: p.mu]

    old_mean = state.mean
    xs = np.stack([c.genome for c in elite])
    new_mean = p.weights @ xs
    y_w = (new_mean - old_mean) / state.step_size
    ys = (xs - old_mean) / state.step_size

    b, d = _cov_factors(state.cov)
    inv_sqrt_c = (b / d) @ b.T

    path_sigma = (1.0 - p.c_sigma) * state.path_sigma + math.sqrt(
        p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff) * (inv_sqrt_c @ y_w)

    gen = state.generation + 1
    norm_ps = float(np.linalg.norm(path_sigma))
    expected_decay = math.sqrt(1.0 - (1.0 - p.c_sigma) ** (2 * gen))
    h_sigma = 1.0 if norm_ps / expected_decay / p.chi_n < 1.4 + 2.0 / (n + 1.0) else 0.0

    path_cov = (1.0 - p.c_c) * state.path_cov + h_sigma * math.sqrt(
        p.c_c * (2.0 - p.c_c) * p.mu_eff) * y_w

    rank_one = np.outer(path_cov, path_cov)
    rank_mu = (ys.T * p.weights) @ ys
    # h_sigma = 0 stalls the path; the variance-loss correction keeps the
    # trace budget balanced.
    discount = 1.0 - p.c_1 - p.c_mu
    cov = (discount * state.cov
           + p.c_1 * (rank_one + (1.0 - h_sigma) * p.c_c * (2.0 - p.c_c) * state.cov)
           + p.c_mu * rank_mu)
    cov = (cov + cov.T) / 2.0
    if state.block_size is not None:
        cov = _project_block_diagonal(cov, state.block_size)

    step_size = state.step_size * math.exp(
        (p.c_sigma / p.d_sigma) * (norm_ps / p.chi_n - 1.0))
    step_size = max(step_size, STEP_SIZE_FLOOR)

    return replace(
        state,
        mean=new_mean,
        step_size=step_size,
        cov=cov,
        path_sigma=path_sigma,
        path_cov=path_cov,
        generation=gen,
    )


def cma_best(history: list[Candidate]) -> Candidate:
    """Lowest-fitness candidate over the whole history.

    `history` is expected in evaluation order (generation-major), so the
    stable min resolves ties toward the earliest generation, then the lowest
    sampling index.
    """
    if not history:
        raise EmptyHistoryError("no evaluated candidates")
    best = None
    for cand in history:
        if cand.fitness is None:
            raise EmptyHistoryError(f"candidate {cand.index} was never evaluated")
        if best is None or cand.fitness < best.fitness:
            best = cand
    return best
