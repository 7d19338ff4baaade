"""The one-bit polyhedron and the ORKA drivers built on it.

Sign ``r_j^(l)`` and threshold ``tau_j^(l)`` turn into the inequality
``r_j^(l) <a_j, x> >= r_j^(l) tau_j^(l)``. Rows are ordered block by block:
row ``l * n + j`` belongs to sequence ``l`` and measurement ``j``, matching
``P = [A^T Omega^(1) | ... | A^T Omega^(m)]^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import feasibility as fz
from ._validation import spawn
from .sensing import OneBitMeasurements

__all__ = [
    "OneBitPolyhedron",
    "AdaptiveConfig",
    "AdaptiveResult",
    "build_polyhedron",
    "orka_solve",
    "consistency_check",
    "adaptive_threshold_solve",
    "threshold_update",
    "export_text",
    "MATERIALIZE_BUDGET",
]

MATERIALIZE_BUDGET = 10**7


class OneBitPolyhedron:
    """Implicit row provider for ``P x >= vec(R) * vec(Gamma)``.

    Only ``A``, ``R`` and ``Gamma`` are stored; ``dense()`` materializes ``P``
    when ``m * n * d`` stays within ``budget``.
    """

    def __init__(self, measurements: OneBitMeasurements, budget=MATERIALIZE_BUDGET, _R=None):
        self.measurements = measurements
        A = measurements.model.entries
        self.R = _R
        # storage-friendly preconditioning: rows of P R^{-1} are signed rows of A R^{-1}
        self.A = A if _R is None else solve_triangular(_R, A.T, trans="T", lower=False).T
        self.budget = budget
        n, m = measurements.signs.shape
        self.n, self.m = n, m
        self.s = measurements.signs.T.astype(float).ravel()
        self.rhs = self.s * measurements.thresholds.T.ravel()
        self.a_norms_sq = np.einsum("ij,ij->i", self.A, self.A)
        self.equality = None

    # provider protocol -------------------------------------------------
    @property
    def n_rows(self):
        return self.n * self.m

    @property
    def n_features(self):
        return self.A.shape[1]

    @property
    def row_norms_sq(self):
        return np.tile(self.a_norms_sq, self.m)

    @property
    def frob_norm_sq(self):
        return float(self.m * self.a_norms_sq.sum())

    def row(self, i):
        return self.s[i] * self.A[i % self.n], self.rhs[i]

    def rows(self, idx):
        idx = np.asarray(idx)
        return self.s[idx, None] * self.A[idx % self.n]

    def is_equality(self, i):
        return False

    def residual(self, x):
        y = self.A @ x
        return self.rhs - self.s * np.tile(y, self.m)

    def residual_rows(self, x, idx):
        idx = np.asarray(idx)
        return self.rhs[idx] - self.s[idx] * (self.A[idx % self.n] @ x)

    @property
    def n_blocks(self):
        return self.m

    def block(self, ell):
        sl = slice(ell * self.n, (ell + 1) * self.n)
        return self.s[sl, None] * self.A, self.rhs[sl]

    def block_residual(self, ell, x):
        sl = slice(ell * self.n, (ell + 1) * self.n)
        return self.rhs[sl] - self.s[sl] * (self.A @ x)

    def block_rows(self, ell, idx):
        idx = np.asarray(idx)
        return self.s[ell * self.n + idx, None] * self.A[idx]

    def block_state(self, x):
        return _BlockState(self, x)

    def gram(self):
        """``A A^T`` (cached on the sampling model), or None above budget."""
        model = self.measurements.model
        if self.R is not None or self.n * self.n > self.budget:
            return None
        G = getattr(model, "_gram_cache", None)
        if G is None:
            G = self.A @ self.A.T
            model._gram_cache = G
        return G

    @property
    def block_norms_sq(self):
        return np.full(self.m, self.a_norms_sq.sum())

    def base_matrix(self):
        return self.A

    def precondition(self, R):
        if self.R is not None:
            raise ValueError("polyhedron is already preconditioned")
        return OneBitPolyhedron(self.measurements, self.budget, _R=np.asarray(R, dtype=float))

    def to_x(self, z):
        return z if self.R is None else solve_triangular(self.R, z, lower=False)

    def to_z(self, x):
        return x if self.R is None else self.R @ x

    def dense(self):
        if self.n_rows * self.n_features > self.budget:
            raise MemoryError(
                f"materializing {self.n_rows}x{self.n_features} exceeds budget {self.budget}"
            )
        return self.rows(np.arange(self.n_rows)), self.rhs.copy()

    def violated(self, x, tol=0.0):
        return self.residual(np.asarray(x, dtype=float).reshape(-1)) > tol


class _BlockState:
    """Tracks ``y = A x`` across Block SKM steps.

    A step ``dx = sum_i w_i s_i a_{j_i}`` changes ``y`` by ``G[:, sel] (s w)``
    with the Gram matrix ``G = A A^T``; without ``G`` it falls back to
    ``A dx``.
    """

    def __init__(self, poly, x):
        self.poly = poly
        self.G = poly.gram()
        self.y = poly.A @ x

    def residual(self, ell):
        p = self.poly
        sl = slice(ell * p.n, (ell + 1) * p.n)
        return p.rhs[sl] - p.s[sl] * self.y

    def rows(self, ell, sel):
        return self.poly.block_rows(ell, sel)

    def advance(self, ell, sel, w, x):
        p = self.poly
        c = p.s[ell * p.n + sel] * w
        if self.G is not None:
            self.y += c @ self.G[sel]  # G is symmetric; rows are contiguous
        else:
            self.y += p.A @ (p.A[sel].T @ c)

    def resync(self, x):
        self.y = self.poly.A @ x


def build_polyhedron(measurements, budget=MATERIALIZE_BUDGET) -> OneBitPolyhedron:
    return OneBitPolyhedron(measurements, budget=budget)


def orka_solve(poly, solver="rka", cfg=None, x0=None, x_ref=None, **kw):
    """Run a feasibility solver (``rka``, ``skm``, ``prskm``, ``block_skm``,
    ``quantile``) on the one-bit polyhedron."""
    try:
        fn = fz.SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(fz.SOLVERS)}") from None
    if x_ref is not None:
        x_ref = np.asarray(getattr(x_ref, "values", x_ref), dtype=float).reshape(-1)
    return fn(poly, cfg, x0=x0, x_ref=x_ref, **kw)


def consistency_check(poly, x, tol=1e-9):
    """``(all_satisfied, n_violated)`` with slack ``tol``."""
    x = np.asarray(getattr(x, "values", x), dtype=float).reshape(-1)
    n_bad = int(np.count_nonzero(poly.residual(x) > tol))
    return n_bad == 0, n_bad


def export_text(poly, path):
    """Write ``P`` and the rhs as whitespace-separated text: a header line
    ``rows cols`` then one line ``c_1 ... c_d b`` per inequality ``c x >= b``."""
    P, b = poly.dense()
    with open(path, "w") as fh:
        fh.write(f"{P.shape[0]} {P.shape[1]}\n")
        for row, rhs in zip(P, b):
            fh.write(" ".join(f"{v:.17g}" for v in row) + f" {rhs:.17g}\n")


# --------------------------------------------------------------------------
# adaptive thresholds
# --------------------------------------------------------------------------

def threshold_update(y_hat, signs, thresholds):
    """``tau_new = A x_k - 1/2 r * eps`` with ``eps = r * (A x_k - tau)``.

    ``y_hat`` is ``A x_k`` (length n); arrays are ``n x m``.
    """
    y = np.asarray(y_hat, dtype=float)[:, None]
    eps = signs * (y - thresholds)
    return y - 0.5 * (signs * eps)


@dataclass
class AdaptiveConfig:
    """``rounds`` outer iterations; stop once ``sum_l ||tau_{k+1} - tau_k||_2 <=
    delta`` (default ``1e-3 m sqrt(n)``). ``solver_cfg`` drives the inner solve
    (default budget ``10 d`` iterations per round)."""

    rounds: int = 10
    solver: str = "block_skm"
    solver_cfg: Optional[fz.SolverConfig] = None
    delta: Optional[float] = None
    requantize: bool = False
    warm_start: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass
class AdaptiveResult:
    x: np.ndarray
    thresholds: list = field(default_factory=list)
    changes: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    aborted: bool = False


def adaptive_threshold_solve(measurements, cfg=None, oracle: Optional[Callable] = None, x_ref=None, x0=None):
    """Adaptive threshold refinement around an inner ORKA solve.

    Signs are kept fixed unless ``cfg.requantize`` is set, in which case
    ``oracle(thresholds) -> signs`` re-measures against the new thresholds.
    Returns ``(x, AdaptiveResult)``.
    """
    cfg = cfg or AdaptiveConfig()
    if cfg.requantize and oracle is None:
        raise ValueError("requantize=True needs a measurement oracle")
    n, m = measurements.signs.shape
    d = measurements.d
    delta = cfg.delta if cfg.delta is not None else 1e-3 * m * np.sqrt(n)
    base_cfg = cfg.solver_cfg or fz.SolverConfig(max_iters=10 * d, record_every=None)
    seed = base_cfg.seed if isinstance(base_cfg.seed, (int, np.integer)) else 0

    signs = measurements.signs
    tau = measurements.thresholds.copy()
    hist = AdaptiveResult(x=np.zeros(d), thresholds=[tau.copy()])
    x_prev = None if x0 is None else np.asarray(x0, dtype=float)
    for k in range(cfg.rounds):
        poly = OneBitPolyhedron(measurements.with_thresholds(tau, signs))
        start = x_prev if (cfg.warm_start and x_prev is not None) else x0
        inner = base_cfg.replace(seed=spawn(seed, k))
        try:
            x_k, trace = orka_solve(poly, cfg.solver, inner, x0=start, x_ref=x_ref)
        except fz.NonFiniteIterateError:
            hist.aborted = True
            break
        x_prev = x_k
        hist.x = x_k
        hist.iterates.append(x_k)
        hist.traces.append(trace)
        new_tau = threshold_update(measurements.model.entries @ x_k, signs, tau)
        change = float(np.linalg.norm(new_tau - tau, axis=0).sum())
        hist.changes.append(change)
        hist.thresholds.append(new_tau.copy())
        tau = new_tau
        if cfg.requantize:
            signs = np.asarray(oracle(tau), dtype=np.int8)
        if change <= delta:
            break
    return hist.x, hist
