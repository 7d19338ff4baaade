"""Kaczmarz-family solvers for linear feasibility problems ``C x >= b``.

All solvers talk to the system through a *row provider*. :class:`DenseRows`
wraps an explicit matrix; :class:`onebit.orka.OneBitPolyhedron` builds
rows on demand from one-bit data; :class:`PreconditionedRows` applies a
triangular right preconditioner ``C R^{-1}`` without forming the product.

A provider exposes ``n_rows``, ``n_features``, ``row(j)``, ``row_norms_sq``,
``residual(x)`` and ``residual_rows(x, idx)`` where a *residual* is the
violation ``b - C x`` (positive entries are violated inequalities). Block
structured providers also expose ``n_blocks``, ``block(k)`` and
``block_norms_sq``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import nnls

from ._validation import as_generator, check_system

__all__ = [
    "DenseRows",
    "PreconditionedRows",
    "SolverConfig",
    "ConvergenceTrace",
    "NonFiniteIterateError",
    "RankDeficientError",
    "rka_step",
    "rka_solve",
    "skm_solve",
    "qr_precondition",
    "sketch_precondition",
    "prskm_solve",
    "block_skm_solve",
    "quantile_rka_solve",
    "nearest_rank_quantile",
    "noisy_rka_error_bound",
    "max_violation",
    "SOLVERS",
]


class NonFiniteIterateError(FloatingPointError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    pass


# --------------------------------------------------------------------------
# row providers
# --------------------------------------------------------------------------

class DenseRows:
    """Explicit system ``C x >= b``.

    ``equality`` optionally marks rows that are equations. ``block_size``
    splits the rows into consecutive blocks of that size (for Block SKM).
    """

    def __init__(self, C, b, equality=None, block_size=None):
        self.C, self.b = check_system(C, b)
        if equality is None:
            self.equality = None
        else:
            self.equality = np.broadcast_to(np.asarray(equality, dtype=bool), self.b.shape).copy()
        self.row_norms_sq = np.einsum("ij,ij->i", self.C, self.C)
        self.block_size = block_size
        if block_size is not None and self.C.shape[0] % block_size:
            raise ValueError("row count is not a multiple of block_size")

    @property
    def n_rows(self):
        return self.C.shape[0]

    @property
    def n_features(self):
        return self.C.shape[1]

    @property
    def frob_norm_sq(self):
        return float(self.row_norms_sq.sum())

    def row(self, j):
        return self.C[j], self.b[j]

    def is_equality(self, j):
        return self.equality is not None and bool(self.equality[j])

    def residual(self, x):
        return self.b - self.C @ x

    def residual_rows(self, x, idx):
        return self.b[idx] - self.C[idx] @ x

    def rows(self, idx):
        return self.C[idx]

    def dense(self):
        return self.C, self.b

    def base_matrix(self):
        return self.C

    def precondition(self, R):
        return PreconditionedRows(self, R)

    # blocks
    @property
    def n_blocks(self):
        return 1 if self.block_size is None else self.n_rows // self.block_size

    def block(self, k):
        if self.block_size is None:
            return self.C, self.b
        sl = slice(k * self.block_size, (k + 1) * self.block_size)
        return self.C[sl], self.b[sl]

    @property
    def block_norms_sq(self):
        return self.row_norms_sq.reshape(self.n_blocks, -1).sum(axis=1)


class PreconditionedRows:
    """Rows of ``C R^{-1}`` for an upper-triangular ``R``, generated lazily.

    Iterates live in ``z`` space; :meth:`to_x` maps back via ``x = R^{-1} z``.
    """

    def __init__(self, base, R):
        self.base = base
        self.R = np.asarray(R, dtype=float)
        self._norms = None

    @property
    def n_rows(self):
        return self.base.n_rows

    @property
    def n_features(self):
        return self.base.n_features

    def to_x(self, z):
        return solve_triangular(self.R, z, lower=False)

    def to_z(self, x):
        return self.R @ x

    def _map_row(self, c):
        # row c^T R^{-1}  <=>  R^T w = c
        return solve_triangular(self.R, c, trans="T", lower=False)

    def row(self, j):
        c, b = self.base.row(j)
        return self._map_row(c), b

    def is_equality(self, j):
        return self.base.is_equality(j)

    @property
    def row_norms_sq(self):
        if self._norms is None:
            norms = np.empty(self.n_rows)
            step = 4096
            for start in range(0, self.n_rows, step):
                idx = np.arange(start, min(start + step, self.n_rows))
                rows = self._rows(idx)
                norms[idx] = np.einsum("ij,ij->i", rows, rows)
            self._norms = norms
        return self._norms

    def _rows(self, idx):
        rows = _rows_of(self.base, idx)
        return solve_triangular(self.R, rows.T, trans="T", lower=False).T

    def rows(self, idx):
        return self._rows(np.asarray(idx))

    @property
    def frob_norm_sq(self):
        return float(self.row_norms_sq.sum())

    def residual(self, z):
        return self.base.residual(self.to_x(z))

    def residual_rows(self, z, idx):
        return self.base.residual_rows(self.to_x(z), idx)


def _rows_of(provider, idx):
    if hasattr(provider, "rows"):
        return provider.rows(idx)
    return np.array([provider.row(j)[0] for j in idx])


# --------------------------------------------------------------------------
# configuration and traces
# --------------------------------------------------------------------------

@dataclass
class SolverConfig:
    """Hyperparameters shared by the Kaczmarz solvers.

    ``sample_size`` is the Motzkin sample size gamma (default ``min(50, M)``),
    ``block_rows`` the Block SKM sub-problem size k' (default
    ``min(d - 1, n)``), ``block_update`` its step (``"project"``: exact
    projection onto the selected half-spaces, ``"pinv"``: the plain
    pseudoinverse step), ``quantile`` the quantile level q of the robust
    variant and ``quantile_gate`` its direction (``"upper"``: use rows with
    ``|residual| >= Q``; ``"lower"``: use rows with ``|residual| <= Q``, which
    discards the large residuals of corrupted rows). Stopping: ``max(b - C x)^+ <= tol`` checked every
    ``check_every`` iterations, or ``max_iters``.
    """

    max_iters: int = 10_000
    tol: float = 1e-8
    relaxation: float = 1.0
    sample_size: Optional[int] = None
    block_rows: Optional[int] = None
    quantile: float = 0.5
    quantile_gate: str = "upper"
    seed: object = None
    check_every: int = 10
    record_every: Optional[int] = 1
    record_at: Optional[np.ndarray] = None
    sketch: str = "identity"
    block_update: str = "project"
    debug: bool = False

    def __post_init__(self):
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.sketch not in ("identity", "gaussian"):
            raise ValueError("sketch must be 'identity' or 'gaussian'")
        if self.block_update not in ("project", "pinv"):
            raise ValueError("block_update must be 'project' or 'pinv'")
        if self.quantile_gate not in ("upper", "lower"):
            raise ValueError("quantile_gate must be 'upper' or 'lower'")

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class ConvergenceTrace:
    """Iteration history. ``iterations[k]`` is the iteration count at which
    ``dist_sq[k]`` (squared distance to the reference point, NaN without one)
    and ``max_residual[k]`` were recorded; ``indices`` holds the row picked
    at every iteration (-1 when no row was used)."""

    iterations: list = field(default_factory=list)
    dist_sq: list = field(default_factory=list)
    max_residual: list = field(default_factory=list)
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    flags: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    wall_time: float = 0.0

    def record(self, it, dist_sq, max_res):
        self.iterations.append(int(it))
        self.dist_sq.append(float(dist_sq))
        self.max_residual.append(float(max_res))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "dist_sq", "max_residual"])
            for row in zip(self.iterations, self.dist_sq, self.max_residual):
                w.writerow([row[0], f"{row[1]:.17g}", f"{row[2]:.17g}"])


def max_violation(provider, x):
    """``max_j (b_j - <c_j, x>)^+`` (absolute residual for equality rows)."""
    res = provider.residual(x)
    eq = getattr(provider, "equality", None)
    if eq is not None:
        res = np.where(eq, np.abs(res), res)
    return float(max(res.max(initial=0.0), 0.0))


class _Recorder:
    """Shared bookkeeping for the iteration loops."""

    def __init__(self, provider, cfg, x_ref, to_x=None):
        self.provider = provider
        self.cfg = cfg
        self.x_ref = None if x_ref is None else np.asarray(x_ref, dtype=float).reshape(-1)
        self.to_x = to_x
        self.trace = ConvergenceTrace(indices=np.full(cfg.max_iters, -1, dtype=np.int64))
        self.t0 = time.perf_counter()
        if cfg.record_at is not None:
            self.record_set = set(int(i) for i in np.asarray(cfg.record_at).ravel())
        else:
            self.record_set = None
        self.prev_dist = None

    def want_record(self, it):
        if self.record_set is not None:
            return it in self.record_set
        return self.cfg.record_every is not None and it % self.cfg.record_every == 0

    def dist_sq(self, x):
        if self.x_ref is None:
            return np.nan
        xx = self.to_x(x) if self.to_x is not None else x
        return float(np.sum((xx - self.x_ref) ** 2))

    def step(self, it, x):
        """Called after ``it`` iterations; returns True to stop."""
        if not np.all(np.isfinite(x)):
            self.trace.flags.append((it, "non-finite iterate"))
            raise NonFiniteIterateError(f"non-finite iterate at iteration {it}")
        rec = self.want_record(it)
        check = it % max(1, self.cfg.check_every) == 0 or it == self.cfg.max_iters
        if not (rec or check or self.cfg.debug):
            return False
        viol = max_violation(self.provider, x) if (rec or check) else np.nan
        if rec:
            self.trace.record(it, self.dist_sq(x), viol)
        if self.cfg.debug and self.x_ref is not None and self.cfg.relaxation <= 1.0:
            d = self.dist_sq(x)
            if self.prev_dist is not None and d > self.prev_dist * (1 + 1e-10) + 1e-12:
                self.trace.flags.append((it, "distance to reference increased"))
            self.prev_dist = d
        if check and viol <= self.cfg.tol:
            self.trace.converged = True
            return True
        return False

    def finish(self, it):
        self.trace.n_iter = it
        self.trace.indices = self.trace.indices[:it]
        self.trace.wall_time = time.perf_counter() - self.t0
        return self.trace


def _start(provider, x0):
    if x0 is None:
        return np.zeros(provider.n_features)
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape[0] != provider.n_features:
        raise ValueError(f"x0 has {x.shape[0]} entries, system has {provider.n_features} columns")
    return x


# --------------------------------------------------------------------------
# single-row projections
# --------------------------------------------------------------------------

def _project(x, c, b, nrm2, equality, lam):
    beta = b - c @ x
    if not equality and beta <= 0.0:
        return x, False
    x = x + (lam * beta / nrm2) * c
    return x, True


def rka_step(x, j, provider, relaxation=1.0):
    """Project ``x`` onto row ``j``: ``x + beta / ||c_j||^2 c_j`` with
    ``beta = (b_j - <c_j, x>)^+`` (unclipped for equality rows).

    Zero rows leave ``x`` unchanged.
    """
    x = np.asarray(x, dtype=float)
    c, b = provider.row(j)
    nrm2 = float(c @ c)
    if nrm2 == 0.0:
        return x.copy()
    out, _ = _project(x, c, b, nrm2, provider.is_equality(j), relaxation)
    return out if out is not x else x.copy()


# --------------------------------------------------------------------------
# RKA / SKM
# --------------------------------------------------------------------------

def _index_stream(rng, M, p, chunk=4096):
    while True:
        if p is None:
            yield from rng.integers(0, M, size=chunk)
        else:
            yield from rng.choice(M, size=chunk, p=p)


def rka_solve(provider, cfg=None, x0=None, x_ref=None, _to_x=None):
    """Randomized Kaczmarz: row ``j`` drawn with probability
    ``||c_j||^2 / ||C||_F^2``."""
    cfg = cfg or SolverConfig()
    rng = as_generator(cfg.seed)
    x = _start(provider, x0)
    norms = np.asarray(provider.row_norms_sq, dtype=float)
    total = norms.sum()
    if total <= 0:
        raise ValueError("system has only zero rows")
    p = norms / total
    rec = _Recorder(provider, cfg, x_ref, _to_x)
    lam = cfg.relaxation
    it = 0
    if rec.step(0, x):
        return x, rec.finish(0)
    stream = _index_stream(rng, provider.n_rows, p)
    has_eq = getattr(provider, "equality", None) is not None
    for it in range(1, cfg.max_iters + 1):
        j = int(next(stream))
        c, b = provider.row(j)
        x, _ = _project(x, c, b, norms[j], has_eq and provider.is_equality(j), lam)
        rec.trace.indices[it - 1] = j
        if rec.step(it, x):
            break
    return x, rec.finish(it)


def _skm_loop(provider, cfg, x, x_ref, to_x=None, inv_norms=None):
    rng = as_generator(cfg.seed)
    M = provider.n_rows
    gamma = min(50, M) if cfg.sample_size is None else min(int(cfg.sample_size), M)
    if gamma < 1:
        raise ValueError("sample_size must be >= 1")
    rec = _Recorder(provider, cfg, x_ref, to_x)
    lam = cfg.relaxation
    it = 0
    if rec.step(0, x):
        return x, rec.finish(0)
    full = gamma >= M
    all_idx = np.arange(M)
    for it in range(1, cfg.max_iters + 1):
        if full:
            idx = all_idx
        else:
            idx = np.sort(rng.choice(M, size=gamma, replace=False))
        res = provider.residual_rows(x, idx)
        score = res if inv_norms is None else res * inv_norms[idx]
        k = int(np.argmax(score))  # first maximiser -> lowest row index
        if res[k] > 0.0:
            j = int(idx[k])
            c, b = provider.row(j)
            nrm2 = float(c @ c)
            if nrm2 > 0.0:
                x = x + (lam * res[k] / nrm2) * c
            else:
                rec.trace.flags.append((it, f"zero row {j} skipped"))
            rec.trace.indices[it - 1] = j
        if rec.step(it, x):
            break
    return x, rec.finish(it)


def skm_solve(provider, cfg=None, x0=None, x_ref=None):
    """Sampling Kaczmarz-Motzkin: sample gamma rows uniformly, project onto the
    one with the largest positive residual (ties -> lowest index)."""
    cfg = cfg or SolverConfig()
    return _skm_loop(provider, cfg, _start(provider, x0), x_ref)


# --------------------------------------------------------------------------
# preconditioning
# --------------------------------------------------------------------------

def _positive_diag_qr(C):
    Q, R = np.linalg.qr(C, mode="reduced")
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s, R * s[:, None]


def _check_rank(R, what):
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= 1e-12 * max(diag.max(), np.finfo(float).tiny):
        raise RankDeficientError(f"{what} is rank deficient")


def qr_precondition(C):
    """Reduced QR ``C = Q R`` with ``diag(R) > 0``."""
    C = np.asarray(C, dtype=float)
    M, d = C.shape
    if M < d:
        raise ValueError("QR preconditioning needs at least as many rows as columns")
    Q, R = _positive_diag_qr(C)
    _check_rank(R, "matrix")
    return Q, R


def sketch_precondition(C, sketch_size=None, seed=None, test_matrix=None, eps=0.5):
    """Triangular factor ``R_s`` of the QR of the Gaussian sketch ``N^T C``.

    ``sketch_size`` defaults to ``ceil(d / eps^2)``. ``test_matrix`` supplies
    ``N`` explicitly. The sketch is accumulated in row chunks so ``N`` is
    never held in full.
    """
    C = np.asarray(C, dtype=float)
    M, d = C.shape
    if test_matrix is not None:
        S = np.asarray(test_matrix, dtype=float).T @ C
    else:
        s = int(np.ceil(d / eps**2)) if sketch_size is None else int(sketch_size)
        if s < d:
            raise ValueError("sketch size must be at least the number of columns")
        rng = as_generator(seed)
        S = np.zeros((s, d))
        step = max(1, 2**20 // max(s, 1))
        for start in range(0, M, step):
            blk = C[start:start + step]
            S += rng.standard_normal((blk.shape[0], s)).T @ blk
    _, R = _positive_diag_qr(S)
    _check_rank(R, "sketch")
    return R


def prskm_solve(
    provider, cfg=None, x0=None, x_ref=None, precondition="qr", sketch_size=None, selection="distance"
):
    """Preconditioned SKM.

    QR (or sketch-and-precondition) of the provider's base matrix gives ``R``;
    SKM runs on ``C R^{-1} z >= b`` and ``x = R^{-1} z`` is recovered by back
    substitution. For one-bit polyhedra the base matrix is the sampling
    matrix ``A`` (``P R^{-1}`` stacks signed rows of ``A R^{-1}``).

    ``selection="distance"`` picks the sampled row whose hyperplane is farthest
    from ``z`` (residual over row norm), since preconditioned rows are not
    normalized; ``"residual"`` uses the raw residual like :func:`skm_solve`.
    """
    cfg = cfg or SolverConfig()
    base = provider.base_matrix()
    if precondition == "qr":
        _, R = qr_precondition(base)
    elif precondition == "sketch":
        R = sketch_precondition(base, sketch_size, seed=as_generator(cfg.seed).integers(2**32))
    else:
        raise ValueError(f"unknown preconditioner {precondition!r}")
    if selection not in ("distance", "residual"):
        raise ValueError("selection must be 'distance' or 'residual'")
    pre = provider.precondition(R)
    z0 = pre.to_z(_start(provider, x0))
    inv = None
    if selection == "distance":
        nrm = np.sqrt(np.asarray(pre.row_norms_sq, dtype=float))
        inv = np.divide(1.0, nrm, out=np.zeros_like(nrm), where=nrm > 0)
    z, trace = _skm_loop(pre, cfg, z0, x_ref, to_x=pre.to_x, inv_norms=inv)
    return pre.to_x(z), trace


# --------------------------------------------------------------------------
# Block SKM
# --------------------------------------------------------------------------

def _pinv_weights(Bs, v):
    """``w = (Bs Bs^T)^{-1} v`` so that ``Bs^T w = Bs^+ v``; raises
    LinAlgError if the Gram matrix is singular."""
    cf = cho_factor(Bs @ Bs.T, lower=True, check_finite=False)
    return cho_solve(cf, v, check_finite=False)


def _nnls_gram(G, v, max_rounds=None):
    """``argmin_{mu >= 0} 1/2 mu^T G mu - mu^T v`` by block principal pivoting.

    Returns ``None`` when pivoting fails to settle within ``max_rounds``.
    """
    k = v.size
    max_rounds = 5 * k if max_rounds is None else max_rounds
    P = np.ones(k, dtype=bool)
    best, budget = k + 1, 3
    for _ in range(max_rounds):
        mu = np.zeros(k)
        idx = np.flatnonzero(P)
        if idx.size:
            mu[idx] = np.linalg.solve(G[np.ix_(idx, idx)], v[idx])
        grad = G @ mu - v
        scale = 1e-12 * max(np.abs(v).max(), 1e-300)
        bad = (P & (mu < 0.0)) | (~P & (grad < -scale))
        n_bad = int(bad.sum())
        if n_bad == 0:
            return np.maximum(mu, 0.0)
        if n_bad < best:
            best, budget = n_bad, 3
            P ^= bad
        elif budget > 0:
            budget -= 1
            P ^= bad
        else:
            # single-index exchange guarantees termination
            j = int(np.flatnonzero(bad)[-1])
            P[j] = not P[j]
    return None


def _halfspace_weights(Bs, v):
    """Multipliers ``mu >= 0`` of the smallest ``dx = Bs^T mu`` with
    ``Bs dx >= v``.

    The dual is ``min_{mu >= 0} 1/2 mu^T G mu - mu^T v`` with ``G = Bs Bs^T``.
    When ``G^{-1} v >= 0`` every selected row is active and the answer is the
    pseudoinverse step. Otherwise the dual is solved by block principal
    pivoting, with scipy's NNLS on the Cholesky factor as the fallback.
    """
    G = Bs @ Bs.T
    L = np.linalg.cholesky(G)
    mu = np.linalg.solve(G, v)
    if np.all(mu >= 0.0):
        return mu
    mu = _nnls_gram(G, v)
    if mu is None:
        mu, _ = nnls(L.T, solve_triangular(L, v, lower=True, check_finite=False))
    return mu


class _DirectBlocks:
    """Block access for providers without an incremental block state."""

    def __init__(self, provider, x):
        self.provider = provider
        self.x = x

    def residual(self, k):
        if hasattr(self.provider, "block_residual"):
            return self.provider.block_residual(k, self.x)
        Bk, bk = self.provider.block(k)
        return bk - Bk @ self.x

    def rows(self, k, sel):
        if hasattr(self.provider, "block_rows"):
            return self.provider.block_rows(k, sel)
        return self.provider.block(k)[0][sel]

    def advance(self, k, sel, w, x):
        self.x = x

    def resync(self, x):
        self.x = x


def block_skm_solve(provider, cfg=None, x0=None, x_ref=None):
    """Block SKM.

    Each iteration draws block ``k`` with probability ``||B_k||_F^2 / ||B||_F^2``,
    ranks its rows by violation ``b_k - B_k x`` (largest first), keeps the top
    ``k'`` and moves ``x`` onto the sub-polyhedron ``B' x >= b'``. The default
    ``block_update="project"`` takes the exact projection; ``"pinv"`` applies
    ``x += lam * B'^+ (b' - B' x)^+``, which forces every selected row to
    equality and need not approach the feasible set when ``k' > 1``. With
    ``cfg.sketch == "gaussian"`` the block is first mixed by an ``n x n``
    Gaussian matrix ``G`` (rows ``G^T B_k``, rhs ``G^T b_k``).

    Providers exposing ``block_state(x)`` keep block residuals up to date
    incrementally; the state is re-synchronised every ``check_every`` steps.
    """
    cfg = cfg or SolverConfig()
    rng = as_generator(cfg.seed)
    x = _start(provider, x0)
    d = provider.n_features
    bnorms = np.asarray(provider.block_norms_sq, dtype=float)
    p = bnorms / bnorms.sum()
    nb = len(bnorms)
    n = provider.n_rows // nb
    kp = min(d - 1, n) if cfg.block_rows is None else int(cfg.block_rows)
    kp = max(1, min(kp, n))
    rec = _Recorder(provider, cfg, x_ref)
    lam = cfg.relaxation
    weights = _halfspace_weights if cfg.block_update == "project" else _pinv_weights
    gaussian = cfg.sketch == "gaussian"
    if gaussian:
        state = None
    elif hasattr(provider, "block_state"):
        state = provider.block_state(x)
    else:
        state = _DirectBlocks(provider, x)
    resync = max(1, cfg.check_every)
    it = 0
    if rec.step(0, x):
        return x, rec.finish(0)
    blocks = rng.choice(nb, size=cfg.max_iters, p=p) if cfg.max_iters else []
    for it in range(1, cfg.max_iters + 1):
        k = int(blocks[it - 1])
        if gaussian:
            Bk, bk = provider.block(k)
            G = rng.standard_normal((Bk.shape[0], Bk.shape[0]))
            Bk, bk = G.T @ Bk, G.T @ bk
            e = bk - Bk @ x
        else:
            e = state.residual(k)
        rec.trace.indices[it - 1] = k
        if e.max() > 0.0:
            if kp == 1:
                sel = np.array([int(np.argmax(e))])
            else:
                sel = np.argpartition(-e, kp - 1)[:kp]
            v = np.maximum(e[sel], 0.0)
            Bs = Bk[sel] if gaussian else state.rows(k, sel)
            while True:
                try:
                    if len(sel) == 1:
                        w = v / float(Bs[0] @ Bs[0])
                    else:
                        w = weights(Bs, v)
                    break
                except np.linalg.LinAlgError:
                    size = max(1, len(sel) // 2)
                    order = np.argsort(-v, kind="stable")[:size]
                    sel, Bs, v = sel[order], Bs[order], v[order]
                    rec.trace.flags.append((it, f"rank-deficient block sub-problem, k' -> {size}"))
            w = lam * w
            x = x + Bs.T @ w
            if not gaussian:
                state.advance(k, sel, w, x)
        if not gaussian and it % resync == 0:
            state.resync(x)
        if rec.step(it, x):
            break
    return x, rec.finish(it)


# --------------------------------------------------------------------------
# quantile-gated RKA
# --------------------------------------------------------------------------

def nearest_rank_quantile(values, q):
    """``ceil(q M)``-th smallest value (nearest-rank; at least the first)."""
    values = np.asarray(values, dtype=float).ravel()
    M = values.size
    k = min(max(int(np.ceil(q * M)), 1), M)
    return float(np.partition(values, k - 1)[k - 1])


def quantile_rka_solve(provider, cfg=None, x0=None, x_ref=None):
    """Upper-quantile RKA: the drawn row is used only if its absolute residual
    is at least the ``q``-quantile of all absolute residuals at the current
    iterate; otherwise the iterate is kept. ``cfg.quantile_gate="lower"``
    flips the test to ``<=``."""
    cfg = cfg or SolverConfig()
    if not 0.0 < cfg.quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    rng = as_generator(cfg.seed)
    x = _start(provider, x0)
    norms = np.asarray(provider.row_norms_sq, dtype=float)
    p = norms / norms.sum()
    rec = _Recorder(provider, cfg, x_ref)
    lam = cfg.relaxation
    upper = cfg.quantile_gate == "upper"
    it = 0
    if rec.step(0, x):
        return x, rec.finish(0)
    stream = _index_stream(rng, provider.n_rows, p)
    for it in range(1, cfg.max_iters + 1):
        j = int(next(stream))
        res = provider.residual(x)
        thr = nearest_rank_quantile(np.abs(res), cfg.quantile)
        keep = abs(res[j]) >= thr if upper else abs(res[j]) <= thr
        if keep and res[j] > 0.0 and norms[j] > 0.0:
            c, _ = provider.row(j)
            x = x + (lam * res[j] / norms[j]) * c
            rec.trace.indices[it - 1] = j
        if rec.step(it, x):
            break
    return x, rec.finish(it)


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------

def noisy_rka_error_bound(kappa, x0_err, iteration, gamma_max):
    """``(1 - 1/kappa^2)^(i/2) * ||x0 - x_hat|| + kappa * max_j |n_j| / ||c_j||``."""
    if kappa < 1:
        raise ValueError("scaled condition number must be >= 1")
    return (1.0 - 1.0 / kappa**2) ** (iteration / 2.0) * x0_err + kappa * gamma_max


SOLVERS = {
    "rka": rka_solve,
    "skm": skm_solve,
    "prskm": prskm_solve,
    "block_skm": block_skm_solve,
    "quantile": quantile_rka_solve,
}
