"""Structured recovery on top of the one-bit polyhedron.

Low-rank matrix sensing (matrix-form ORKA, SVP-ORKA, factorized alternating
minimization) and sparse recovery (ST-ORKA, HT-ORKA), plus the BIHT and HSVT
comparison baselines. Matrix signals are flattened row-major, matching
:func:`onebit.sensing.gen_matrix_sensing_model`, so ``<A_j, X> = Tr(A_j^T X)``
is the dot product of the flattened arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import feasibility as fz
from ._validation import as_generator
from .orka import OneBitPolyhedron
from .sensing import OneBitMeasurements, SamplingModel, one_bit

__all__ = [
    "soft_threshold",
    "hard_threshold",
    "svp_project",
    "svt",
    "MatrixSensingProblem",
    "SparseProblem",
    "FactorPair",
    "StructuredConfig",
    "StructuredTrace",
    "matrix_rka_step",
    "svp_orka_solve",
    "factorized_orka_solve",
    "st_orka_solve",
    "ht_orka_solve",
    "biht_baseline",
    "hsvt_baseline",
]


# --------------------------------------------------------------------------
# thresholding operators
# --------------------------------------------------------------------------

def soft_threshold(x, t):
    """``sgn(x) * (|x| - t)^+``."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def hard_threshold(x, s):
    """Keep the ``s`` largest-magnitude entries (ties -> lower index)."""
    x = np.asarray(x, dtype=float)
    s = int(s)
    if s >= x.size:
        return x.copy()
    out = np.zeros_like(x)
    if s <= 0:
        return out
    keep = np.argsort(-np.abs(x), kind="stable")[:s]
    out[keep] = x[keep]
    return out


def svp_project(X, r):
    """Best rank-``r`` approximation (top ``r`` singular triplets)."""
    X = np.asarray(X, dtype=float)
    if r >= min(X.shape):
        return X.copy()
    U, sv, Vt = np.linalg.svd(X, full_matrices=False)
    return (U[:, :r] * sv[:r]) @ Vt[:r]


def svt(X, t):
    """Soft-threshold the singular values by ``t``."""
    U, sv, Vt = np.linalg.svd(np.asarray(X, dtype=float), full_matrices=False)
    return (U * np.maximum(sv - t, 0.0)) @ Vt


# --------------------------------------------------------------------------
# problems and config
# --------------------------------------------------------------------------

@dataclass
class MatrixSensingProblem:
    """One-bit matrix sensing: measurements over flattened ``n1 x n2`` sensing
    matrices plus the target rank."""

    measurements: OneBitMeasurements
    rank: int

    def __post_init__(self):
        if self.measurements.model.signal_shape is None:
            raise ValueError("sampling model carries no signal_shape")
        if not 1 <= self.rank <= min(self.shape):
            raise ValueError(f"rank {self.rank} outside [1, {min(self.shape)}]")

    @property
    def shape(self):
        return self.measurements.model.signal_shape

    @property
    def sensing_tensor(self):
        """``n x n1 x n2`` stack of sensing matrices."""
        return self.measurements.model.entries.reshape((-1,) + self.shape)

    def polyhedron(self):
        return OneBitPolyhedron(self.measurements)


@dataclass
class SparseProblem:
    """One-bit compressed sensing with sparsity level ``sparsity``."""

    measurements: OneBitMeasurements
    sparsity: int

    def __post_init__(self):
        if not 1 <= self.sparsity <= self.measurements.d:
            raise ValueError(f"sparsity {self.sparsity} outside [1, {self.measurements.d}]")

    def polyhedron(self):
        return OneBitPolyhedron(self.measurements)


@dataclass
class FactorPair:
    """``X = L W^T`` with ``L`` of shape ``n1 x r`` and ``W`` of shape ``n2 x r``."""

    L: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        if self.L.ndim != 2 or self.W.ndim != 2 or self.L.shape[1] != self.W.shape[1]:
            raise ValueError("L and W must be 2-D with the same number of columns")

    @property
    def rank(self):
        return self.L.shape[1]

    def product(self):
        return self.L @ self.W.T


@dataclass
class StructuredConfig:
    """Settings for the structured solvers.

    ``selection`` picks the Kaczmarz row: ``"rka"`` (norm-proportional draw) or
    ``"skm"`` (most violated of ``sample_size`` uniform draws). ``st_scale`` is
    ``c`` in the soft threshold ``t = c * median(|z|)``. ``step`` is the BIHT
    step size. ``rounds``/``inner_iters`` drive the factorized solver (defaults
    20 and ``5 (n1 + n2) r``). ``normalize`` renormalizes every iterate to unit
    norm (direction-only recovery for ditherless data). ``step_kind="block"``
    replaces the single-row Kaczmarz step of the projected solvers by a Block
    SKM step on ``block_rows`` rows (default ``min(d - 1, n)``).
    """

    max_iters: int = 10_000
    tol: float = 1e-8
    relaxation: float = 1.0
    selection: str = "rka"
    sample_size: Optional[int] = None
    seed: object = None
    check_every: int = 10
    record_every: Optional[int] = None
    st_scale: float = 1.0
    step: float = 1.0
    rounds: int = 20
    inner_iters: Optional[int] = None
    normalize: bool = False
    step_kind: str = "row"
    block_rows: Optional[int] = None

    def __post_init__(self):
        if self.selection not in ("rka", "skm"):
            raise ValueError("selection must be 'rka' or 'skm'")
        if self.step_kind not in ("row", "block"):
            raise ValueError("step_kind must be 'row' or 'block'")
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.st_scale < 0:
            raise ValueError("st_scale must be non-negative")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def replace(self, **kw):
        return replace(self, **kw)

    def solver_config(self, **kw):
        base = dict(
            max_iters=self.max_iters,
            tol=self.tol,
            relaxation=self.relaxation,
            sample_size=self.sample_size,
            seed=self.seed,
            check_every=self.check_every,
            record_every=self.record_every,
        )
        base.update(kw)
        return fz.SolverConfig(**base)


@dataclass
class StructuredTrace(fz.ConvergenceTrace):
    """Convergence trace plus the support (or rank) size and the number of
    support changes per recorded iteration."""

    support_size: list = field(default_factory=list)
    support_changes: int = 0
    stalled: bool = False


def _vec(x):
    return np.asarray(getattr(x, "values", x), dtype=float).reshape(-1)


# --------------------------------------------------------------------------
# projected Kaczmarz driver
# --------------------------------------------------------------------------

def _row_picker(poly, cfg, rng):
    M = poly.n_rows
    if cfg.selection == "rka":
        norms = np.asarray(poly.row_norms_sq, dtype=float)
        stream = fz._index_stream(rng, M, norms / norms.sum())

        def pick(x):
            j = int(next(stream))
            return j, float(poly.residual_rows(x, np.array([j]))[0])

        return pick
    gamma = min(50, M) if cfg.sample_size is None else min(int(cfg.sample_size), M)
    all_idx = np.arange(M)

    def pick(x):
        idx = all_idx if gamma >= M else np.sort(rng.choice(M, size=gamma, replace=False))
        res = poly.residual_rows(x, idx)
        k = int(np.argmax(res))
        return int(idx[k]), float(res[k])

    return pick


def _block_stepper(poly, cfg, rng):
    """Block SKM step: draw a block, project onto its ``k'`` most violated
    half-spaces."""
    bnorms = np.asarray(poly.block_norms_sq, dtype=float)
    nb = len(bnorms)
    n = poly.n_rows // nb
    kp = min(poly.n_features - 1, n) if cfg.block_rows is None else int(cfg.block_rows)
    kp = max(1, min(kp, n))
    p = bnorms / bnorms.sum()

    def step(x):
        k = int(rng.choice(nb, p=p)) if nb > 1 else 0
        e = poly.block_residual(k, x)
        if e.max() <= 0.0:
            return x, k
        sel = np.array([int(np.argmax(e))]) if kp == 1 else np.argpartition(-e, kp - 1)[:kp]
        v = np.maximum(e[sel], 0.0)
        Bs = poly.block_rows(k, sel)
        try:
            w = fz._halfspace_weights(Bs, v) if len(sel) > 1 else v / float(Bs[0] @ Bs[0])
        except np.linalg.LinAlgError:
            j = int(np.argmax(v))
            Bs, w = Bs[j:j + 1], v[j:j + 1] / float(Bs[j] @ Bs[j])
        return x + cfg.relaxation * (Bs.T @ w), k

    return step


def _projected_kaczmarz(poly, operator, cfg, x0, x_ref, support_of):
    """Kaczmarz step ``z = KA(x)`` then ``x = operator(z)``.

    ``cfg.step_kind="row"`` projects onto one row (picked by ``cfg.selection``);
    ``"block"`` takes a Block SKM step.
    """
    rng = as_generator(cfg.seed)
    x = np.zeros(poly.n_features) if x0 is None else _vec(x0).copy()
    x = operator(x)
    scfg = cfg.solver_config()
    rec = fz._Recorder(poly, scfg, x_ref)
    rec.trace = StructuredTrace(indices=rec.trace.indices)
    norms = np.asarray(poly.row_norms_sq, dtype=float)
    if cfg.step_kind == "block":
        block_step = _block_stepper(poly, cfg, rng)
    else:
        pick = _row_picker(poly, cfg, rng)
    supp = support_of(x)
    it = 0
    if rec.step(0, x):
        return x, rec.finish(0)
    for it in range(1, cfg.max_iters + 1):
        if cfg.step_kind == "block":
            x, rec.trace.indices[it - 1] = block_step(x)
        else:
            j, res = pick(x)
            if res > 0.0 and norms[j] > 0.0:
                c, _ = poly.row(j)
                x = x + (cfg.relaxation * res / norms[j]) * c
                rec.trace.indices[it - 1] = j
        x = operator(x)
        new_supp = support_of(x)
        if new_supp is not None and supp is not None and not np.array_equal(new_supp, supp):
            rec.trace.support_changes += 1
        supp = new_supp
        if rec.want_record(it):
            rec.trace.support_size.append(-1 if supp is None else int(np.size(supp)))
        if rec.step(it, x):
            break
    return x, rec.finish(it)


def _unit(x):
    nrm = np.linalg.norm(x)
    return x / nrm if nrm > 0 else x


# --------------------------------------------------------------------------
# low-rank matrix sensing
# --------------------------------------------------------------------------

def matrix_rka_step(X, i, problem: MatrixSensingProblem, relaxation=1.0):
    """``X + lam (r tau - r Tr(A_j^T X))^+ / ||A_j||_F^2 r A_j`` for flat row
    ``i = l * n + j``. Zero sensing matrices leave ``X`` unchanged."""
    X = np.asarray(X, dtype=float)
    meas = problem.measurements
    n = meas.n
    j, ell = i % n, i // n
    Aj = problem.sensing_tensor[j]
    nrm2 = float(np.sum(Aj * Aj))
    if nrm2 == 0.0:
        return X.copy()
    r = float(meas.signs[j, ell])
    beta = r * meas.thresholds[j, ell] - r * float(np.sum(Aj * X))
    if beta <= 0.0:
        return X.copy()
    return X + (relaxation * beta * r / nrm2) * Aj


def svp_orka_solve(problem: MatrixSensingProblem, cfg=None, X0=None, X_ref=None):
    """SVP-ORKA: a Kaczmarz step on the one-bit polyhedron followed by the
    rank-``r`` projection, every iteration. Returns ``(X, trace)``."""
    cfg = cfg or StructuredConfig()
    shape, r = problem.shape, problem.rank

    def operator(x):
        try:
            return svp_project(x.reshape(shape), r).ravel()
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"SVD failed in rank projection: {exc}") from exc

    def support_of(x):
        sv = np.linalg.svd(x.reshape(shape), compute_uv=False)
        return np.flatnonzero(sv > 1e-10 * max(sv[0], 1e-300)) if sv.size else None

    x_ref = None if X_ref is None else _vec(X_ref)
    track = support_of if cfg.record_every else (lambda x: None)
    x, trace = _projected_kaczmarz(problem.polyhedron(), operator, cfg, X0, x_ref, track)
    return x.reshape(shape), trace


def _factor_rows(stack, F):
    """Coefficient rows ``vec(S_j F)`` of a factor sub-problem.

    ``stack`` holds ``A_j^T`` when solving for ``W`` (``F = L``) and ``A_j``
    when solving for ``L`` (``F = W``), since ``Tr(A_j^T L W^T) =
    <A_j^T L, W> = <A_j W, L>``.
    """
    n, p, q = stack.shape
    return (stack.reshape(n * p, q) @ F).reshape(n, -1)


def _hinge(meas, X_flat):
    y = meas.model.entries @ X_flat
    return float(np.maximum(meas.signs * (meas.thresholds - y[:, None]), 0.0).sum())


def factorized_orka_solve(problem: MatrixSensingProblem, cfg=None, init=None, X_ref=None):
    """Alternating minimization over ``X = L W^T``.

    With ``L`` fixed the measurements are linear in ``W`` (rows
    ``vec(A_j^T L)``) and vice versa; each half-round runs RKA (or SKM) on the
    corresponding one-bit polyhedron from the current factor. Initial factors
    are i.i.d. ``N(0, 1/r)`` unless ``init`` is given. Stops early with
    ``trace.stalled`` when a round leaves the total violation unchanged.
    Returns ``(FactorPair, trace)``.
    """
    cfg = cfg or StructuredConfig()
    n1, n2 = problem.shape
    r = problem.rank
    rng = as_generator(cfg.seed)
    if init is None:
        pair = FactorPair(
            rng.normal(0.0, np.sqrt(1.0 / r), (n1, r)), rng.normal(0.0, np.sqrt(1.0 / r), (n2, r))
        )
    else:
        pair = FactorPair(init.L.copy(), init.W.copy())
    meas = problem.measurements
    tensor = problem.sensing_tensor
    tensor_t = np.ascontiguousarray(tensor.transpose(0, 2, 1))
    inner = cfg.inner_iters if cfg.inner_iters is not None else 5 * (n1 + n2) * r
    solver = fz.rka_solve if cfg.selection == "rka" else fz.skm_solve
    x_ref = None if X_ref is None else _vec(X_ref)
    trace = StructuredTrace()
    prev = _hinge(meas, pair.product().ravel())
    total = 0
    for t in range(cfg.rounds):
        for side in ("W", "L"):
            fixed = pair.L if side == "W" else pair.W
            if not np.any(fixed):
                trace.flags.append((t, f"degenerate {side} sub-problem"))
                continue
            rows = _factor_rows(tensor_t if side == "W" else tensor, fixed)
            sub = OneBitMeasurements(meas.signs, meas.thresholds, SamplingModel("explicit", rows))
            poly = OneBitPolyhedron(sub)
            # feasibility is checked once, at the end of each inner solve
            scfg = cfg.solver_config(
                max_iters=inner,
                seed=rng.integers(2**63),
                record_every=None,
                tol=cfg.tol,
                check_every=max(inner, 1),
            )
            start = (pair.W if side == "W" else pair.L).ravel()
            sol, sub_trace = solver(poly, scfg, x0=start)
            total += sub_trace.n_iter
            if side == "W":
                pair.W = sol.reshape(n2, r)
            else:
                pair.L = sol.reshape(n1, r)
        X = pair.product().ravel()
        viol = _hinge(meas, X)
        dist = np.nan if x_ref is None else float(np.sum((X - x_ref) ** 2))
        trace.record(total, dist, viol)
        trace.support_size.append(r)
        if viol <= cfg.tol:
            trace.converged = True
            break
        if abs(prev - viol) <= 1e-9 * max(prev, 1e-300):
            trace.stalled = True
            trace.flags.append((t, "alternation stalled"))
            break
        prev = viol
    trace.n_iter = total
    return pair, trace


def hsvt_baseline(problem: MatrixSensingProblem, cfg=None, dither_scale=None, svt_scale=0.0):
    """Hard singular value thresholding baseline (simplified reconstruction).

    Starts from the linear estimate ``lam / (n m) sum r_j^(l) A_j`` (unbiased
    for uniform dither on ``[-lam, lam]`` and isotropic Gaussian sensing),
    then runs ``cfg.max_iters`` sign-mismatch gradient steps, each followed by
    singular value soft thresholding by ``svt_scale * sigma_1`` and the rank
    ``r`` projection. ``dither_scale`` defaults to ``max |tau|``.
    """
    cfg = cfg or StructuredConfig(max_iters=0)
    meas = problem.measurements
    shape, r = problem.shape, problem.rank
    A = meas.model.entries
    lam = float(np.max(np.abs(meas.thresholds))) if dither_scale is None else float(dither_scale)
    if lam <= 0:
        lam = 1.0
    M = meas.n * meas.m

    def proj(x):
        X = x.reshape(shape)
        if svt_scale > 0:
            sv1 = np.linalg.norm(X, 2)
            X = svt(X, svt_scale * sv1)
        return svp_project(X, r).ravel()

    x = proj(lam / M * (A.T @ meas.signs.sum(axis=1)))
    for _ in range(cfg.max_iters):
        mismatch = meas.signs - one_bit((A @ x)[:, None] - meas.thresholds)
        if not mismatch.any():
            break
        x = proj(x + cfg.step * lam / (2 * M) * (A.T @ mismatch.sum(axis=1)))
    return x.reshape(shape)


# --------------------------------------------------------------------------
# sparse recovery
# --------------------------------------------------------------------------

def _sparse_support(x):
    return np.flatnonzero(x)


def st_orka_solve(problem: SparseProblem, cfg=None, x0=None, x_ref=None):
    """ST-ORKA: Kaczmarz step, then soft thresholding with
    ``t = cfg.st_scale * median(|z|)``."""
    cfg = cfg or StructuredConfig()
    c = cfg.st_scale

    def operator(z):
        out = soft_threshold(z, c * float(np.median(np.abs(z)))) if c > 0 else z
        return _unit(out) if cfg.normalize else out

    return _projected_kaczmarz(problem.polyhedron(), operator, cfg, x0, _ref(x_ref), _sparse_support)


def ht_orka_solve(problem: SparseProblem, cfg=None, x0=None, x_ref=None):
    """HT-ORKA: Kaczmarz step, then hard thresholding to ``s`` entries."""
    cfg = cfg or StructuredConfig()
    s = problem.sparsity

    def operator(z):
        out = hard_threshold(z, s)
        return _unit(out) if cfg.normalize else out

    return _projected_kaczmarz(problem.polyhedron(), operator, cfg, x0, _ref(x_ref), _sparse_support)


def _ref(x_ref):
    return None if x_ref is None else _vec(x_ref)


_NBIHT_SCALE = math.sqrt(2 * math.pi)


def biht_baseline(problem: SparseProblem, cfg=None, x0=None, normalized=False, dither_scale=None):
    """Binary iterative hard thresholding (simplified reconstruction).

    ``x <- T_s(x + eta * lam / (2 m') * A^T (r - sgn(A x - tau)))`` with the
    sign residual summed over threshold sequences and ``eta = cfg.step``. At
    ``eta = 1`` the step makes the first update the unbiased linear estimate
    for uniform dither on ``[-lam, lam]``; ``dither_scale`` (``lam``)
    defaults to ``max |tau|``. ``normalized=True`` is NBIHT for ditherless
    data: ``lam`` is replaced by ``sqrt(2 pi)`` (the published step) and
    every iterate is renormalized to unit norm.
    """
    cfg = cfg or StructuredConfig(max_iters=1000)
    meas = problem.measurements
    A = meas.model.entries
    s = problem.sparsity
    M = meas.n * meas.m
    if normalized:
        scale = _NBIHT_SCALE
    else:
        scale = float(np.max(np.abs(meas.thresholds))) if dither_scale is None else float(dither_scale)
        scale = scale if scale > 0 else 1.0
    eta = cfg.step * scale / (2 * M)
    x = np.zeros(meas.d) if x0 is None else _vec(x0).copy()
    if normalized and not np.any(x):
        x = _unit(hard_threshold(A.T @ meas.signs.sum(axis=1), s))
    for _ in range(cfg.max_iters):
        mismatch = meas.signs - one_bit((A @ x)[:, None] - meas.thresholds)
        if not mismatch.any():
            break
        g = A.T @ mismatch.sum(axis=1)
        x = hard_threshold(x + eta * g, s)
        if normalized:
            x = _unit(x)
    return x
