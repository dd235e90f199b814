"""Continuous-discrete cubature Kalman filters.

Four implementation forms share one recursion:

``Conventional``
    full covariance propagated; cubature nodes from its SVD (eigen)
    factors.  IT-1.5 and EM-0.5 variants.
``SvdFactored``
    only the SVD factors ``(Q, D^{1/2})`` are propagated, read off from
    reduced SVDs of rectangular pre-arrays.
``CholeskyNodeConventional``
    the classical CKF: full covariance, nodes from its Cholesky factor.
    Any failed factorization aborts the run.
``CholeskySquareRoot``
    triangular factors propagated through the same pre-arrays as
    ``SvdFactored``, with Householder triangularization instead of SVD.

The kernels (``_time_update`` / ``_measurement_update``) work on a batch of
independent filter states and report a failure code per member; the public
per-operation functions are strict wrappers that raise ``FilterDiverged``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import cubature
from .exceptions import FilterDiverged, InvalidInput
from .linalg import (
    EPS,
    CholeskyFactor,
    SvdFactors,
    apply_inverse_via_svd_masked,
    cholesky,
    cholesky_masked,
    condition_number,
    reduced_svd_masked,
    svd_symmetric,
    svd_symmetric_masked,
    triangularize,
)
from .model import StateSpaceModel, discretized_drift, euler_drift
from .sde import SubdivisionGrid, noise_sqrt


class Scheme(str, Enum):
    IT15 = "IT15"
    EM05 = "EM05"


class Form(str, Enum):
    CONVENTIONAL = "Conventional"
    SVD = "SvdFactored"
    CHOLESKY_NODE = "CholeskyNodeConventional"
    CHOLESKY_SR = "CholeskySquareRoot"


class FailureKind(str, Enum):
    NOT_PSD = "not_psd"
    NOT_PD = "cholesky_failed"
    ILL_CONDITIONED = "ill_conditioned_innovation"
    SINGULAR_INNOVATION = "singular_innovation"
    NON_FINITE = "non_finite"


_KINDS = list(FailureKind)

# column captions used in the two-panel report
TABLE_LABELS = {
    (Scheme.IT15, Form.CHOLESKY_NODE): "original",
    (Scheme.IT15, Form.CONVENTIONAL): "Alg.1a",
    (Scheme.IT15, Form.CHOLESKY_SR): "Cholesky",
    (Scheme.IT15, Form.SVD): "SVD Alg.1b",
    (Scheme.EM05, Form.CHOLESKY_NODE): "standard",
    (Scheme.EM05, Form.CONVENTIONAL): "Alg.2a",
    (Scheme.EM05, Form.CHOLESKY_SR): "Cholesky",
    (Scheme.EM05, Form.SVD): "SVD Alg.2b",
}
FORM_ORDER = (Form.CHOLESKY_NODE, Form.CONVENTIONAL, Form.CHOLESKY_SR, Form.SVD)


@dataclass(frozen=True)
class FilterSpec:
    scheme: Scheme
    form: Form
    substeps: int

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "form", Form(self.form))
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def id(self) -> str:
        return f"{self.scheme.value}-{self.form.value}-M{self.substeps}"

    @property
    def label(self) -> str:
        return TABLE_LABELS[(self.scheme, self.form)]

    @property
    def factored(self) -> bool:
        return self.form in (Form.SVD, Form.CHOLESKY_SR)


def table_specs(it_substeps: int = 64, em_substeps: int = 512) -> list[FilterSpec]:
    """The eight filters of the benchmark, IT-1.5 panel first."""
    return [FilterSpec(Scheme.IT15, f, it_substeps) for f in FORM_ORDER] + [
        FilterSpec(Scheme.EM05, f, em_substeps) for f in FORM_ORDER
    ]


Covariance = np.ndarray | SvdFactors | CholeskyFactor


@dataclass(frozen=True)
class FilterState:
    """Estimate at time ``t``; arrays may carry a leading batch axis."""

    t: float
    x_hat: np.ndarray
    cov: Covariance

    def covariance(self) -> np.ndarray:
        if isinstance(self.cov, np.ndarray):
            return self.cov
        return self.cov.reconstruct()

    def take(self, idx) -> "FilterState":
        cov = self.cov[idx] if isinstance(self.cov, np.ndarray) else self.cov.take(idx)
        return FilterState(self.t, self.x_hat[idx], cov)


@dataclass(frozen=True)
class UpdateDiagnostics:
    innovation: np.ndarray
    innovation_cov_condition: np.ndarray | float
    gain: np.ndarray
    failure: FailureKind | None = None


def _initial_cov(form: Form, p0: np.ndarray) -> Covariance:
    if form is Form.SVD:
        return svd_symmetric(p0)
    if form is Form.CHOLESKY_SR:
        return cholesky(p0)
    return np.array(p0, dtype=float)


def initial_state(spec: FilterSpec | Form, model: StateSpaceModel, t0: float = 0.0) -> FilterState:
    form = spec.form if isinstance(spec, FilterSpec) else Form(spec)
    return FilterState(t0, model.x0.copy(), _initial_cov(form, model.p0))


def _broadcast_state(state: FilterState, batch: int) -> FilterState:
    x = np.broadcast_to(state.x_hat, (batch, state.x_hat.shape[-1])).copy()
    cov = state.cov
    if isinstance(cov, np.ndarray):
        cov = np.broadcast_to(cov, (batch,) + cov.shape[-2:]).copy()
    elif isinstance(cov, SvdFactors):
        cov = SvdFactors(np.broadcast_to(cov.q, (batch,) + cov.q.shape[-2:]).copy(),
                         np.broadcast_to(cov.d_sqrt, (batch, cov.n)).copy())
    else:
        cov = CholeskyFactor(np.broadcast_to(cov.l, (batch,) + cov.l.shape[-2:]).copy())
    return FilterState(state.t, x, cov)


# -- batched kernels --------------------------------------------------------

def _t(a):
    return np.swapaxes(a, -1, -2)


def _flag(codes: np.ndarray, mask, kind: FailureKind) -> None:
    mask = np.asarray(mask) & (codes == 0)
    codes[mask] = _KINDS.index(kind) + 1


def _decode(code: int) -> FailureKind | None:
    return None if code == 0 else _KINDS[code - 1]


@dataclass
class _Context:
    """Per-run constants: nodes and noise square roots."""

    model: StateSpaceModel
    form: Form
    nodes: cubature.CubatureSet
    g: np.ndarray
    ggt: np.ndarray
    em_noise_sqrt: np.ndarray
    r_sqrt_cache: dict = field(default_factory=dict)

    def r_sqrt(self, k: int) -> np.ndarray:
        key = None if self.model.time_invariant_r else k
        if key not in self.r_sqrt_cache:
            r = self.model.measurement_cov(k)
            if self.form is Form.SVD:
                self.r_sqrt_cache[key] = svd_symmetric(r).sqrt_factor()
            else:
                self.r_sqrt_cache[key] = noise_sqrt(r)
        return self.r_sqrt_cache[key]


def _context(model: StateSpaceModel, form: Form) -> _Context:
    if form is Form.SVD:
        qf = svd_symmetric(model.q)
        em = model.g_tilde @ qf.sqrt_factor()
    else:
        em = model.g
    return _Context(model, form, cubature.make_nodes(model.n), model.g,
                    model.g_tilde @ model.q @ model.g_tilde.T, em)


def _node_factor(cov: Covariance, form: Form, codes: np.ndarray) -> np.ndarray:
    if form is Form.CONVENTIONAL:
        f, bad = svd_symmetric_masked(cov)
        _flag(codes, bad, FailureKind.NOT_PSD)
        return f.sqrt_factor()
    if form is Form.CHOLESKY_NODE:
        f, bad = cholesky_masked(cov)
        _flag(codes, bad, FailureKind.NOT_PD)
        return f.l
    return cov.sqrt_factor()


def _factorize(pre_array: np.ndarray, form: Form, codes: np.ndarray) -> Covariance:
    if form is Form.SVD:
        f, bad = reduced_svd_masked(pre_array)
        _flag(codes, bad, FailureKind.NON_FINITE)
        return f
    f = triangularize(pre_array)
    _flag(codes, ~np.isfinite(f.l).all(axis=(-2, -1)), FailureKind.NON_FINITE)
    return f


# -- pre-arrays -------------------------------------------------------------

def it15_covariance(xx, g, lf, d: float, ggt=None) -> np.ndarray:
    """IT-1.5 predicted covariance
    ``X X^T + d^2/2 (G Lf^T + Lf G^T) + d^3/3 Lf Lf^T + d G G^T``."""
    cross = g @ _t(lf)
    ggt = g @ _t(g) if ggt is None else ggt
    return xx @ _t(xx) + (0.5 * d * d) * (cross + _t(cross)) + (d ** 3 / 3.0) * (lf @ _t(lf)) + d * ggt


def it15_pre_array(xx, g, lf, d: float) -> np.ndarray:
    """``[X, sqrt(d)(G + d/2 Lf), sqrt(d^3/12) Lf]``, whose outer product is :func:`it15_covariance`."""
    return np.concatenate([xx, np.sqrt(d) * (g + (0.5 * d) * lf), np.sqrt(d ** 3 / 12.0) * lf], axis=-1)


def em05_pre_array(xx, noise_sqrt, d: float) -> np.ndarray:
    """``[X, sqrt(d) S]`` with ``S S^T = G~ Q G~^T``."""
    return np.concatenate([xx, np.sqrt(d) * noise_sqrt], axis=-1)


def innovation_pre_array(zz, r_sqrt) -> np.ndarray:
    """``[Z, S_R]``: outer product ``Z Z^T + R``."""
    return np.concatenate([zz, r_sqrt], axis=-1)


def posterior_pre_array(xx, zz, gain, r_sqrt) -> np.ndarray:
    """``[X - K Z, K S_R]``: outer product ``P - K R_e K^T`` for the optimal gain."""
    return np.concatenate([xx - gain @ zz, gain @ r_sqrt], axis=-1)


def _time_update(state: FilterState, ctx: _Context, grid: SubdivisionGrid,
                 scheme: Scheme) -> tuple[FilterState, np.ndarray]:
    model, form, nodes = ctx.model, ctx.form, ctx.nodes
    x, cov = state.x_hat, state.cov
    batch = x.shape[:-1]
    codes = np.zeros(batch, dtype=np.int8)
    d = grid.step
    g = np.broadcast_to(ctx.g, batch + ctx.g.shape)
    for m in range(grid.substeps):
        t = state.t + m * d
        s = _node_factor(cov, form, codes)
        pts = cubature.translate(nodes, s, x).points
        if scheme is Scheme.IT15:
            new = cubature.propagate(lambda tt, y: discretized_drift(model, tt, y, d, check=False), t, pts)
        else:
            new = cubature.propagate(lambda tt, y: euler_drift(model, tt, y, d), t, pts)
        stats = cubature.statistics(new)
        xx = stats.centered
        if scheme is Scheme.IT15:
            lf = np.broadcast_to(model.lf(t, x), batch + ctx.g.shape)
            if form in (Form.CONVENTIONAL, Form.CHOLESKY_NODE):
                cov = it15_covariance(xx, g, lf, d, ctx.ggt)
            else:
                cov = _factorize(it15_pre_array(xx, g, lf, d), form, codes)
        else:
            if form in (Form.CONVENTIONAL, Form.CHOLESKY_NODE):
                cov = xx @ _t(xx) + d * ctx.ggt
            else:
                noise = np.broadcast_to(ctx.em_noise_sqrt, batch + ctx.g.shape)
                cov = _factorize(em05_pre_array(xx, noise, d), form, codes)
        x = stats.mean
    _flag(codes, ~np.isfinite(x).all(axis=-1), FailureKind.NON_FINITE)
    return FilterState(state.t + grid.delta_t, x, cov), codes


def _measurement_update(state: FilterState, ctx: _Context, z: np.ndarray,
                        k: int) -> tuple[FilterState, UpdateDiagnostics, np.ndarray]:
    model, form, nodes = ctx.model, ctx.form, ctx.nodes
    x, cov = state.x_hat, state.cov
    batch = x.shape[:-1]
    codes = np.zeros(batch, dtype=np.int8)
    root2n = np.sqrt(2 * model.n)

    s = _node_factor(cov, form, codes)
    pts = cubature.translate(nodes, s, x).points
    zpts = cubature.propagate(model.measurement, k, pts)
    z_hat = zpts.mean(axis=-1)
    xx = (pts - x[..., :, None]) / root2n
    zz = (zpts - z_hat[..., :, None]) / root2n
    pxz = xx @ _t(zz)
    innovation = np.asarray(z, dtype=float) - z_hat

    if form in (Form.CONVENTIONAL, Form.CHOLESKY_NODE):
        r = model.measurement_cov(k)
        re = zz @ _t(zz) + r
        finite = np.isfinite(re).all(axis=(-2, -1))
        safe = np.where(finite[..., None, None], re, np.eye(model.m))
        cond = np.where(finite, np.linalg.cond(safe), np.inf)
        bad = ~(cond <= 1.0 / EPS)
        _flag(codes, bad, FailureKind.ILL_CONDITIONED)
        safe = np.where(bad[..., None, None], np.eye(model.m), safe)
        gain = _t(np.linalg.solve(safe, _t(pxz)))
        x_new = x + np.einsum("...ij,...j->...i", gain, innovation)
        new_cov = cov - gain @ re @ _t(gain)
        # indefiniteness of the posterior is caught here rather than at the
        # next time update so the failure is charged to this step
        if form is Form.CONVENTIONAL:
            _, bad = svd_symmetric_masked(new_cov)
            _flag(codes, bad, FailureKind.NOT_PSD)
        else:
            _, bad = cholesky_masked(new_cov)
            _flag(codes, bad, FailureKind.NOT_PD)
    else:
        r_sqrt = np.broadcast_to(ctx.r_sqrt(k), batch + (model.m, model.m))
        pre_a = innovation_pre_array(zz, r_sqrt)
        if form is Form.SVD:
            re_f, bad = reduced_svd_masked(pre_a)
            _flag(codes, bad, FailureKind.NON_FINITE)
            gain, bad = apply_inverse_via_svd_masked(re_f, pxz)
            _flag(codes, bad, FailureKind.SINGULAR_INNOVATION)
            cond = condition_number(re_f)
        else:
            l_e = triangularize(pre_a).l
            diag = np.abs(np.diagonal(l_e, axis1=-2, axis2=-1))
            bad = ~(diag.min(axis=-1) > EPS * diag.max(axis=-1))
            _flag(codes, bad, FailureKind.SINGULAR_INNOVATION)
            l_safe = np.where(bad[..., None, None], np.eye(model.m), l_e)
            gain = _t(np.linalg.solve(_t(l_safe), np.linalg.solve(l_safe, _t(pxz))))
            sv = np.linalg.svd(l_safe, compute_uv=False)
            with np.errstate(divide="ignore"):
                cond = np.where(bad, np.inf, (sv[..., 0] / sv[..., -1]) ** 2)
        x_new = x + np.einsum("...ij,...j->...i", gain, innovation)
        pre_b = posterior_pre_array(xx, zz, gain, r_sqrt)
        new_cov = _factorize(pre_b, form, codes)

    _flag(codes, ~np.isfinite(x_new).all(axis=-1), FailureKind.NON_FINITE)
    diag_out = UpdateDiagnostics(innovation, cond, gain)
    return FilterState(state.t, x_new, new_cov), diag_out, codes


def _raise_on(codes: np.ndarray, step: int | None = None) -> None:
    codes = np.asarray(codes)
    if np.any(codes):
        first = int(codes.flat[np.flatnonzero(codes)[0]])
        raise FilterDiverged(_decode(first), step)


def _strict_time_update(state, model, grid, scheme, form):
    with np.errstate(all="ignore"):
        new, codes = _time_update(state, _context(model, form), grid, scheme)
    _raise_on(codes)
    return new


def _strict_measurement_update(state, model, z, k, form):
    with np.errstate(all="ignore"):
        new, diag, codes = _measurement_update(state, _context(model, form), z, k)
    _raise_on(codes, k)
    return new, diag


# -- public per-operation API -----------------------------------------------

def time_update_it15_conventional(state: FilterState, model: StateSpaceModel,
                                  grid: SubdivisionGrid) -> FilterState:
    """IT-1.5 prediction propagating the full covariance (SVD nodes)."""
    return _strict_time_update(state, model, grid, Scheme.IT15, Form.CONVENTIONAL)


def time_update_it15_svd(state: FilterState, model: StateSpaceModel,
                         grid: SubdivisionGrid) -> FilterState:
    """IT-1.5 prediction of the SVD factors from the pre-array
    ``[X, sqrt(d)(G + d/2 Lf), sqrt(d^3/12) Lf]``."""
    return _strict_time_update(state, model, grid, Scheme.IT15, Form.SVD)


def time_update_em05_conventional(state, model, grid):
    return _strict_time_update(state, model, grid, Scheme.EM05, Form.CONVENTIONAL)


def time_update_em05_svd(state, model, grid):
    return _strict_time_update(state, model, grid, Scheme.EM05, Form.SVD)


def time_update_cholesky_node(state, model, grid, scheme=Scheme.IT15):
    return _strict_time_update(state, model, grid, Scheme(scheme), Form.CHOLESKY_NODE)


def time_update_cholesky_sr(state, model, grid, scheme=Scheme.IT15):
    return _strict_time_update(state, model, grid, Scheme(scheme), Form.CHOLESKY_SR)


def measurement_update_conventional(state_pred: FilterState, model: StateSpaceModel,
                                    z_k: np.ndarray, k: int = 1):
    return _strict_measurement_update(state_pred, model, z_k, k, Form.CONVENTIONAL)


def measurement_update_svd(state_pred: FilterState, model: StateSpaceModel,
                           z_k: np.ndarray, k: int = 1):
    return _strict_measurement_update(state_pred, model, z_k, k, Form.SVD)


def measurement_update_cholesky_node(state_pred, model, z_k, k: int = 1):
    return _strict_measurement_update(state_pred, model, z_k, k, Form.CHOLESKY_NODE)


def measurement_update_cholesky_sr(state_pred, model, z_k, k: int = 1):
    return _strict_measurement_update(state_pred, model, z_k, k, Form.CHOLESKY_SR)


# -- full runs --------------------------------------------------------------

@dataclass
class FilterRun:
    states: list[FilterState]
    diagnostics: list[UpdateDiagnostics]
    failure: FilterDiverged | None = None

    @property
    def x_hat(self) -> np.ndarray:
        return np.stack([s.x_hat for s in self.states])


def run_filter(spec: FilterSpec, model: StateSpaceModel, measurements: np.ndarray,
               grid: SubdivisionGrid, t0: float = 0.0) -> FilterRun:
    """Filter one measurement sequence ``z_1..z_K`` (shape ``(K, m)``).

    ``states[0]`` is the initial state and ``states[k]`` the posterior at
    ``t_k``.  A divergence stops the run and is recorded, not raised.
    """
    if grid.substeps != spec.substeps:
        grid = SubdivisionGrid(grid.delta_t, spec.substeps)
    ctx = _context(model, spec.form)
    state = initial_state(spec, model, t0)
    run = FilterRun([state], [])
    with np.errstate(all="ignore"):
        for k, z in enumerate(np.asarray(measurements, dtype=float), start=1):
            pred, codes = _time_update(state, ctx, grid, spec.scheme)
            if codes:
                run.failure = FilterDiverged(_decode(int(codes)), k, "time update")
                break
            state, diag, codes = _measurement_update(pred, ctx, z, k)
            if codes:
                run.failure = FilterDiverged(_decode(int(codes)), k, "measurement update")
                run.diagnostics.append(UpdateDiagnostics(diag.innovation, diag.innovation_cov_condition,
                                                         diag.gain, _decode(int(codes))))
                break
            run.states.append(state)
            run.diagnostics.append(diag)
    return run


@dataclass
class BatchRun:
    """Outcome of filtering ``B`` independent measurement sequences.

    ``x_hat`` rows after a member's failure are NaN; ``failed_step`` is 0
    for members that completed.
    """

    x_hat: np.ndarray
    failed_step: np.ndarray
    failure_kind: list[FailureKind | None]
    condition: np.ndarray

    @property
    def failed(self) -> np.ndarray:
        return self.failed_step > 0


def run_filter_batch(spec: FilterSpec, model: StateSpaceModel, measurements: np.ndarray,
                     grid: SubdivisionGrid, t0: float = 0.0) -> BatchRun:
    """Vectorized :func:`run_filter` over a leading replicate axis ``(B, K, m)``.

    Diverged members are dropped from the working batch; the others
    continue.  Each member's arithmetic is independent of the batch.
    """
    return run_filter_groups(spec, [model], [measurements], grid, t0)[0]


def _same_dynamics(a: StateSpaceModel, b: StateSpaceModel) -> bool:
    return (a.n == b.n and a.m == b.m and a.name == b.name
            and all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("g_tilde", "q", "x0", "p0")))


def _concat_states(parts: list[FilterState]) -> FilterState:
    first = parts[0]
    x = np.concatenate([p.x_hat for p in parts])
    if isinstance(first.cov, SvdFactors):
        cov = SvdFactors(np.concatenate([p.cov.q for p in parts]),
                         np.concatenate([p.cov.d_sqrt for p in parts]))
    elif isinstance(first.cov, CholeskyFactor):
        cov = CholeskyFactor(np.concatenate([p.cov.l for p in parts]))
    else:
        cov = np.concatenate([p.cov for p in parts])
    return FilterState(first.t, x, cov)


def run_filter_groups(spec: FilterSpec, models, measurements, grid: SubdivisionGrid,
                      t0: float = 0.0) -> list[BatchRun]:
    """Run one filter over several model variants at once.

    ``models[g]`` filters ``measurements[g]`` (shape ``(B_g, K, m)``).  The
    variants must share dynamics and prior and differ only in the
    measurement model, so every time update is done on the stacked batch
    and only the measurement update is split by group.  Results equal
    separate :func:`run_filter_batch` calls.
    """
    models = list(models)
    zs = [np.asarray(z, dtype=float) for z in measurements]
    if not models or len(models) != len(zs):
        raise InvalidInput("need one measurement array per model")
    base = models[0]
    if not all(_same_dynamics(base, mdl) for mdl in models[1:]):
        raise InvalidInput("grouped models must share dynamics, prior and dimensions")
    if any(z.ndim != 3 or z.shape[1:] != zs[0].shape[1:] for z in zs):
        raise InvalidInput("measurements must be (B, K, m) with common K and m")
    steps = zs[0].shape[1]
    sizes = [z.shape[0] for z in zs]
    group = np.repeat(np.arange(len(zs)), sizes)
    z_all = np.concatenate(zs)
    total = z_all.shape[0]
    if grid.substeps != spec.substeps:
        grid = SubdivisionGrid(grid.delta_t, spec.substeps)
    ctxs = [_context(mdl, spec.form) for mdl in models]
    state = _broadcast_state(initial_state(spec, base, t0), total)
    x_hat = np.full((total, steps + 1, base.n), np.nan)
    x_hat[:, 0] = state.x_hat
    cond = np.full((total, steps), np.nan)
    failed_step = np.zeros(total, dtype=int)
    kinds: list[FailureKind | None] = [None] * total
    active = np.arange(total)
    with np.errstate(all="ignore"):
        for k in range(1, steps + 1):
            if active.size == 0:
                break
            pred, codes = _time_update(state, ctxs[0], grid, spec.scheme)
            # active stays sorted and groups are contiguous, so concatenating
            # per-group results restores the batch order
            parts, mcodes, conds = [], [], []
            for g_idx, ctx in enumerate(ctxs):
                sel = np.flatnonzero(group[active] == g_idx)
                if sel.size == 0:
                    continue
                st, diag, mc = _measurement_update(pred.take(sel), ctx, z_all[active[sel], k - 1], k)
                parts.append(st)
                mcodes.append(mc)
                conds.append(np.broadcast_to(diag.innovation_cov_condition, mc.shape))
            state = _concat_states(parts)
            mcodes = np.concatenate(mcodes)
            codes = np.where(codes != 0, codes, mcodes)
            ok = codes == 0
            for i in np.flatnonzero(~ok):
                failed_step[active[i]] = k
                kinds[active[i]] = _decode(int(codes[i]))
            x_hat[active[ok], k] = state.x_hat[ok]
            cond[active[ok], k - 1] = np.concatenate(conds)[ok]
            if not ok.all():
                state = state.take(ok)
                active = active[ok]
    out = []
    for lo, hi in zip(np.cumsum([0] + sizes[:-1]), np.cumsum(sizes)):
        out.append(BatchRun(x_hat[lo:hi], failed_step[lo:hi], kinds[lo:hi], cond[lo:hi]))
    return out


def covariance_spectrum(state: FilterState) -> np.ndarray:
    """Square roots of the covariance eigenvalues, non-increasing (for export)."""
    if isinstance(state.cov, SvdFactors):
        return state.cov.d_sqrt
    if isinstance(state.cov, CholeskyFactor):
        return np.linalg.svd(state.cov.l, compute_uv=False)
    lam = np.linalg.eigvalsh(0.5 * (state.cov + state.cov.T))[::-1]
    return np.sqrt(np.clip(lam, 0.0, None))


def write_run_csv(path, run: FilterRun) -> None:
    """Rows ``t, x_hat..., d_sqrt..., condition, failed`` per sampling instant."""
    n = run.states[0].x_hat.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"d_sqrt{i + 1}" for i in range(n)]
                   + ["condition", "failed"])
        for k, st in enumerate(run.states):
            c = "" if k == 0 else f"{float(run.diagnostics[k - 1].innovation_cov_condition):.6e}"
            w.writerow([f"{st.t:.6g}"] + [f"{v:.10e}" for v in st.x_hat]
                       + [f"{v:.10e}" for v in covariance_spectrum(st)] + [c, 0])
        if run.failure is not None:
            w.writerow([""] * (1 + 2 * n) + ["", f"{run.failure.kind.value}@{run.failure.step}"])
