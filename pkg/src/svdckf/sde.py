"""Ground-truth simulation of the continuous-discrete model.

Truth trajectories come from the order-1.5 Ito-Taylor scheme or from
Euler-Maruyama, both run on ``M`` equal substeps per sampling interval.

Batching: ``x0`` may carry a leading batch axis ``(B, n)``, in which case
``rng`` must be a sequence of ``B`` generators and replicate ``b`` draws
only from ``rng[b]``.  A replicate's trajectory therefore does not depend
on what else is in the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import NotPositiveDefinite, NumericalDivergence
from .linalg import cholesky, svd_symmetric
from .model import StateSpaceModel, discretized_drift


@dataclass(frozen=True)
class SubdivisionGrid:
    """Sampling period ``delta_t`` split into ``substeps`` equal integration steps."""

    delta_t: float
    substeps: int

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not self.delta_t > 0:
            raise ValueError("sampling period must be positive")

    @property
    def step(self) -> float:
        return self.delta_t / self.substeps

    def substep_times(self, t_start: float) -> np.ndarray:
        return t_start + self.step * np.arange(self.substeps)


@dataclass(frozen=True)
class CorrelatedNoisePair:
    w1: np.ndarray
    w2: np.ndarray


def noise_pair_from_normals(u1: np.ndarray, u2: np.ndarray, delta: float) -> CorrelatedNoisePair:
    """Map independent standard normals to the IT-1.5 noise pair.

    ``w1 = sqrt(d) u1`` and ``w2 = d^{3/2}/2 (u1 + u2/sqrt(3))`` give
    ``E[w1 w1^T] = d I``, ``E[w1 w2^T] = d^2/2 I``, ``E[w2 w2^T] = d^3/3 I``.
    """
    w1 = np.sqrt(delta) * u1
    w2 = 0.5 * delta ** 1.5 * (u1 + u2 / np.sqrt(3.0))
    return CorrelatedNoisePair(w1, w2)


def sample_noise_pair(rng: np.random.Generator, n: int, delta: float,
                      size: int | tuple[int, ...] = ()) -> CorrelatedNoisePair:
    if not delta > 0:
        raise ValueError("delta must be positive")
    shape = (size,) if isinstance(size, int) else tuple(size)
    u = rng.standard_normal((2,) + shape + (n,))
    return noise_pair_from_normals(u[0], u[1], delta)


def _as_rngs(rng, x0: np.ndarray) -> list[np.random.Generator] | None:
    if x0.ndim == 1:
        return None
    if x0.ndim != 2:
        raise ValueError("x0 must have shape (n,) or (B, n)")
    rngs = list(rng)
    if len(rngs) != x0.shape[0]:
        raise ValueError("need one generator per batch member")
    return rngs


def _draw(rng, rngs, shape) -> np.ndarray:
    if rngs is None:
        return rng.standard_normal(shape)
    return np.stack([r.standard_normal(shape) for r in rngs])


def simulate_truth_it15(model: StateSpaceModel, grid: SubdivisionGrid, t0: float,
                        x0: np.ndarray, rng, steps: int,
                        keep_substeps: bool = False) -> np.ndarray:
    """Order-1.5 Ito-Taylor simulation; returns states at ``t0 + k*delta_t``, k=0..steps.

    Output shape is ``(steps+1, n)``, or ``(B, steps+1, n)`` for batched
    ``x0``.  With ``keep_substeps`` every intermediate state is returned
    instead: ``(steps*M+1, n)``.
    """
    x = np.array(x0, dtype=float)
    rngs = _as_rngs(rng, x)
    n, big_m, d = model.n, grid.substeps, grid.step
    g = model.g
    out = [x.copy()]
    for k in range(steps):
        t_k = t0 + k * grid.delta_t
        u = _draw(rng, rngs, (big_m, 2, n))
        for m in range(big_m):
            t = t_k + m * d
            noise = noise_pair_from_normals(u[..., m, 0, :], u[..., m, 1, :], d)
            lf = model.lf(t, x)
            x = (discretized_drift(model, t, x, d, check=False) + noise.w1 @ g.T
                 + np.einsum("...ij,...j->...i", lf, noise.w2))
            if keep_substeps:
                out.append(x.copy())
        if not np.all(np.isfinite(x)):
            raise NumericalDivergence("truth trajectory is not finite", step=k + 1)
        if not keep_substeps:
            out.append(x.copy())
    return np.stack(out, axis=-2)


def simulate_truth_em05(model: StateSpaceModel, grid: SubdivisionGrid, t0: float,
                        x0: np.ndarray, rng, steps: int,
                        keep_substeps: bool = False) -> np.ndarray:
    """Euler-Maruyama simulation; same conventions as :func:`simulate_truth_it15`."""
    x = np.array(x0, dtype=float)
    rngs = _as_rngs(rng, x)
    n, big_m, d = model.n, grid.substeps, grid.step
    g = model.g
    sd = np.sqrt(d)
    out = [x.copy()]
    for k in range(steps):
        t_k = t0 + k * grid.delta_t
        u = _draw(rng, rngs, (big_m, n))
        for m in range(big_m):
            x = x + d * model.drift(t_k + m * d, x) + sd * (u[..., m, :] @ g.T)
            if keep_substeps:
                out.append(x.copy())
        if not np.all(np.isfinite(x)):
            raise NumericalDivergence("truth trajectory is not finite", step=k + 1)
        if not keep_substeps:
            out.append(x.copy())
    return np.stack(out, axis=-2)


def noise_sqrt(cov: np.ndarray) -> np.ndarray:
    """Square root of a PSD covariance: Cholesky if possible, else SVD-based."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return cholesky(cov).l
    except NotPositiveDefinite:
        return svd_symmetric(cov).sqrt_factor()


def sample_initial_state(model: StateSpaceModel, rng) -> np.ndarray:
    """Draw ``x(t0) ~ N(x0, P0)``; a sequence of generators yields a batch."""
    s = noise_sqrt(model.p0)
    if isinstance(rng, np.random.Generator):
        return model.x0 + s @ rng.standard_normal(model.n)
    return np.stack([model.x0 + s @ r.standard_normal(model.n) for r in rng])


def generate_measurements(model: StateSpaceModel, trajectory: np.ndarray, rng) -> np.ndarray:
    """Noisy measurements ``z_k = h(k, x_k) + v_k`` for k = 1..K.

    ``trajectory`` holds states at k = 0..K (as returned by the simulators);
    the result has shape ``(K, m)`` or ``(B, K, m)``.
    """
    traj = np.asarray(trajectory, dtype=float)
    rngs = None if traj.ndim == 2 else list(rng)
    steps = traj.shape[-2] - 1
    u = _draw(rng, rngs, (steps, model.m))
    z = np.empty(traj.shape[:-2] + (steps, model.m))
    s_r = noise_sqrt(model.measurement_cov(1)) if model.time_invariant_r else None
    for k in range(1, steps + 1):
        if not model.time_invariant_r:
            s_r = noise_sqrt(model.measurement_cov(k))
        z[..., k - 1, :] = model.measurement(k, traj[..., k, :]) + u[..., k - 1, :] @ s_r.T
    return z


def write_trajectory_csv(path, times: Sequence[float], states: np.ndarray,
                         measurements: np.ndarray | None = None) -> None:
    """One row per sampling instant: ``t, x1..xn, z1..zm`` (no z at k=0)."""
    states = np.asarray(states)
    n = states.shape[-1]
    m = 0 if measurements is None else measurements.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(m)])
        for k, t in enumerate(times):
            row = [repr(float(t))] + [repr(float(v)) for v in states[k]]
            if m:
                row += [""] * m if k == 0 else [repr(float(v)) for v in measurements[k - 1]]
            w.writerow(row)
