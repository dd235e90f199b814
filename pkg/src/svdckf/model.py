"""Continuous-discrete state-space models.

A model couples the Ito SDE ``dx = f(t, x) dt + G~ dbeta`` (with
``E[dbeta dbeta^T] = Q dt``) to discrete measurements
``z_k = h(k, x(t_k)) + v_k`` with ``v_k ~ N(0, R_k)``.

Every callable takes states with arbitrary leading batch axes, shape
``(..., n)``, and must return matching leading axes.  Models also supply
the Ito-Taylor operators analytically:

* ``lf(t, x)`` -- the ``n x n`` matrix whose ``(i, j)`` entry is
  ``L_j f_i = sum_p G_pj df_i/dx_p`` (i.e. ``J_f G``);
* ``l0f(t, x)`` -- ``df/dt + J_f f + 1/2 sum_{p,r} (G G^T)_pr d2f/dx_p dx_r``,

where ``G = G~ S_Q`` is the effective diffusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import NumericalDivergence
from .linalg import cholesky

Drift = Callable[[float, np.ndarray], np.ndarray]
Measurement = Callable[[int, np.ndarray], np.ndarray]

# state layout of the coordinated-turn model
CT_POSITION_INDEX = (0, 2, 4)


@dataclass(frozen=True)
class StateSpaceModel:
    n: int
    m: int
    drift: Drift
    g_tilde: np.ndarray
    q: np.ndarray
    measurement: Measurement
    r: np.ndarray | Callable[[int], np.ndarray]
    x0: np.ndarray
    p0: np.ndarray
    lf: Drift
    l0f: Drift
    position_index: tuple[int, ...] = ()
    name: str = "model"
    params: dict = field(default_factory=dict)
    g: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("g_tilde", "q", "x0", "p0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.g_tilde.shape != (self.n, self.n) or self.q.shape != (self.n, self.n):
            raise ValueError("g_tilde and q must be n x n")
        if self.x0.shape != (self.n,) or self.p0.shape != (self.n, self.n):
            raise ValueError("x0 must have length n and p0 must be n x n")
        if not callable(self.r):
            object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
            if self.r.shape != (self.m, self.m):
                raise ValueError("r must be m x m")
        object.__setattr__(self, "g", effective_diffusion(self.g_tilde, self.q))

    @property
    def time_invariant_r(self) -> bool:
        return not callable(self.r)

    def measurement_cov(self, k: int) -> np.ndarray:
        return self.r(k) if callable(self.r) else self.r


def effective_diffusion(g_tilde: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``G = G~ S_Q`` with ``S_Q`` the lower Cholesky factor of ``Q``.

    Raises ``NotPositiveDefinite`` when ``Q`` is not SPD.
    """
    return np.asarray(g_tilde, dtype=float) @ cholesky(q).l


def discretized_drift(model: StateSpaceModel, t: float, x: np.ndarray, delta: float,
                      check: bool = True) -> np.ndarray:
    """One IT-1.5 drift step ``x + delta f + delta^2/2 L0 f``."""
    out = x + delta * model.drift(t, x) + (0.5 * delta * delta) * model.l0f(t, x)
    if check and not np.all(np.isfinite(out)):
        raise NumericalDivergence("discretized drift is not finite")
    return out


def euler_drift(model: StateSpaceModel, t: float, x: np.ndarray, delta: float) -> np.ndarray:
    return x + delta * model.drift(t, x)


# -- coordinated turn -------------------------------------------------------

def coordinated_turn_model(
    delta_ill: float,
    omega0: float = 3.0,
    omega_unit: str = "deg",
    sigma1: float = np.sqrt(0.2),
    sigma2: float = 0.007,
    x0: tuple[float, ...] = (1000.0, 0.0, 2650.0, 150.0, 200.0, 0.0),
    p0_scale: float = 0.01,
) -> StateSpaceModel:
    """Aircraft coordinated turn observed through an ill-conditioned sensor.

    State is ``[eps, eps', eta, eta', zeta, zeta', omega]`` with ``omega`` in
    rad/s.  ``x0`` gives the first six entries of the initial mean; the
    turn rate is ``omega0`` in ``omega_unit`` ("deg" or "rad" per second).
    Both measurement channels sum the whole state, the second with the
    turn rate weighted by ``1 + delta_ill``, and ``R = delta_ill^2 I``.
    """
    if not delta_ill > 0:
        raise ValueError("delta_ill must be positive")
    if omega_unit not in ("deg", "rad"):
        raise ValueError("omega_unit must be 'deg' or 'rad'")
    n, m = 7, 2
    g_tilde = np.diag([0.0, sigma1, 0.0, sigma1, 0.0, sigma1, sigma2])
    q = np.eye(n)
    h_mat = np.ones((m, n))
    h_mat[1, 6] = 1.0 + delta_ill
    g = g_tilde  # Q = I
    gg = g @ g.T

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        ed, et, zd, w = x[..., 1], x[..., 3], x[..., 5], x[..., 6]
        zero = np.zeros_like(ed)
        return np.stack([ed, -w * et, et, w * ed, zd, zero, zero], axis=-1)

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        jac = np.zeros(x.shape + (n,))
        ed, et, w = x[..., 1], x[..., 3], x[..., 6]
        jac[..., 0, 1] = 1.0
        jac[..., 1, 3] = -w
        jac[..., 1, 6] = -et
        jac[..., 2, 3] = 1.0
        jac[..., 3, 1] = w
        jac[..., 3, 6] = ed
        jac[..., 4, 5] = 1.0
        return jac

    def lf(t, x):
        return jacobian(x) @ g

    def l0f(t, x):
        x = np.asarray(x, dtype=float)
        ed, et, w = x[..., 1], x[..., 3], x[..., 6]
        zero = np.zeros_like(ed)
        # J_f f
        out = np.stack([-w * et, -w * w * ed, w * ed, -w * w * et, zero, zero, zero], axis=-1)
        # the only second derivatives are d2f2/(d eta' d omega) = -1 and
        # d2f4/(d eps' d omega) = +1, each appearing twice in the sum
        out[..., 1] -= gg[3, 6]
        out[..., 3] += gg[1, 6]
        return out

    def measurement(k, x):
        return np.asarray(x, dtype=float) @ h_mat.T

    omega = np.deg2rad(omega0) if omega_unit == "deg" else float(omega0)
    mean0 = np.array(list(x0) + [omega], dtype=float)
    return StateSpaceModel(
        n=n, m=m, drift=drift, g_tilde=g_tilde, q=q, measurement=measurement,
        r=delta_ill ** 2 * np.eye(m), x0=mean0, p0=p0_scale * np.eye(n),
        lf=lf, l0f=l0f, position_index=CT_POSITION_INDEX, name="coordinated_turn",
        params=dict(delta_ill=delta_ill, omega=omega, sigma1=sigma1,
                    sigma2=sigma2, p0_scale=p0_scale, h=h_mat, jacobian=jacobian),
    )


# -- linear and random test families ----------------------------------------

def linear_model(a, g_tilde, q, h, r, x0, p0, position_index=()) -> StateSpaceModel:
    """Linear time-invariant model ``f = A x``, ``h = H x``."""
    a = np.asarray(a, dtype=float)
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n, m = a.shape[0], h.shape[0]
    g = effective_diffusion(g_tilde, q)
    ag = a @ g

    def drift(t, x):
        return np.asarray(x, dtype=float) @ a.T

    def lf(t, x):
        x = np.asarray(x)
        return np.broadcast_to(ag, x.shape[:-1] + (n, n))

    def l0f(t, x):
        return np.asarray(x, dtype=float) @ (a @ a).T

    def measurement(k, x):
        return np.asarray(x, dtype=float) @ h.T

    return StateSpaceModel(
        n=n, m=m, drift=drift, g_tilde=g_tilde, q=q, measurement=measurement,
        r=r, x0=x0, p0=p0, lf=lf, l0f=l0f, position_index=tuple(position_index),
        name="linear", params=dict(a=a, h=h),
    )


def random_nonlinear_model(rng: np.random.Generator, n: int, m: int,
                           delta_ill: float = 1.0) -> StateSpaceModel:
    """Random well-conditioned nonlinear model for equivalence experiments.

    Drift ``f_i = (A x)_i + b_i sin(x_i)`` with a stable ``A``; measurement
    ``h_i = (H x)_i + c_i x_i^2 / 2``.  ``delta_ill`` scales ``R``.
    """
    a = 0.3 * rng.standard_normal((n, n)) - 0.5 * np.eye(n)
    b = 0.5 * rng.standard_normal(n)
    g_tilde = np.diag(0.2 + 0.3 * rng.random(n))
    lq = np.tril(0.2 * rng.standard_normal((n, n)))
    q = lq @ lq.T + np.eye(n)
    h = rng.standard_normal((m, n))
    c = 0.2 * rng.standard_normal(m)
    r = delta_ill ** 2 * (0.5 + rng.random()) * np.eye(m)
    x0 = rng.standard_normal(n)
    p0 = np.diag(0.1 + 0.2 * rng.random(n))
    g = effective_diffusion(g_tilde, q)
    gg_diag = np.diag(g @ g.T)

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        return x @ a.T + b * np.sin(x)

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        return a + (b * np.cos(x))[..., None, :] * np.eye(n)

    def lf(t, x):
        return jacobian(x) @ g

    def l0f(t, x):
        x = np.asarray(x, dtype=float)
        jf = np.einsum("...ij,...j->...i", jacobian(x), drift(t, x))
        return jf - 0.5 * gg_diag * b * np.sin(x)

    def measurement(k, x):
        x = np.asarray(x, dtype=float)
        return x @ h.T + 0.5 * c * x[..., :m] ** 2

    return StateSpaceModel(
        n=n, m=m, drift=drift, g_tilde=g_tilde, q=q, measurement=measurement,
        r=r, x0=x0, p0=p0, lf=lf, l0f=l0f, name="random_nonlinear",
        params=dict(a=a, b=b, h=h, c=c),
    )


# -- finite-difference oracles ----------------------------------------------

def fd_jacobian(func, t: float, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``func(t, x)`` at a single state."""
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = step * max(1.0, abs(x[j]))
        cols.append((func(t, x + e) - func(t, x - e)) / (2 * e[j]))
    return np.stack(cols, axis=-1)


def fd_lf(model: StateSpaceModel, t: float, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    return fd_jacobian(model.drift, t, x, step) @ model.g


def fd_l0f(model: StateSpaceModel, t: float, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Finite-difference evaluation of the L0 operator applied to ``f``.

    Time derivative and Jacobian by central differences; the diffusion
    term uses the second directional derivative along each column ``g_j``
    of ``G``, since ``sum_{p,r} G_pj G_rj d2f/dx_p dx_r = D^2 f[g_j, g_j]``.
    """
    x = np.asarray(x, dtype=float)
    f = model.drift
    ht = step * max(1.0, abs(t))
    dfdt = (f(t + ht, x) - f(t - ht, x)) / (2 * ht)
    out = dfdt + fd_jacobian(f, t, x, step) @ f(t, x)
    f0 = f(t, x)
    for j in range(model.n):
        gj = model.g[:, j]
        norm = np.linalg.norm(gj)
        if norm == 0:
            continue
        u = gj / norm
        hs = step * max(1.0, np.abs(x).max())
        d2 = (f(t, x + hs * u) - 2 * f0 + f(t, x - hs * u)) / hs ** 2
        out = out + 0.5 * norm ** 2 * d2
    return out
