"""Empirical checks of the finite volume property (FVP) and related bounds.

Average distance to the thresholds, its expected value for the supported
sampling models, recovery radii, sample-complexity shapes, scaled condition
numbers and convergence-rate floors.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from ._validation import as_generator

__all__ = [
    "FvpReport",
    "ComplexityBudget",
    "t_ave",
    "fvp_mean",
    "fvp_report",
    "sample_complexity",
    "recovery_radius",
    "hamming_distance",
    "scaled_condition_number",
    "kappa_invariance_check",
    "one_bit_stack",
    "gaussian_complexity_mc",
    "convergence_floor",
    "realized_deviation",
    "write_reports_csv",
]


@dataclass
class FvpReport:
    """One FVP validation row. ``deviation = |t_ave - mean|``."""

    t_ave: float
    mean: float
    lam: float
    m_prime: int
    radius: float = float("nan")
    hamming: float = float("nan")

    @property
    def deviation(self) -> float:
        return abs(self.t_ave - self.mean)

    def as_row(self) -> dict:
        row = asdict(self)
        row["deviation"] = self.deviation
        return row


def write_reports_csv(reports, path):
    """Write :class:`FvpReport` rows with floats at 17 significant digits."""
    cols = [f.name for f in fields(FvpReport)] + ["deviation"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rep in reports:
            row = rep.as_row()
            w.writerow([row[c] if isinstance(row[c], int) else f"{row[c]:.17g}" for c in cols])


# --------------------------------------------------------------------------
# distances and means
# --------------------------------------------------------------------------

def _values(model, x):
    x = np.asarray(getattr(x, "values", x), dtype=float).reshape(-1)
    A = getattr(model, "entries", model)
    return np.asarray(A, dtype=float) @ x


def t_ave(model, x, thresholds) -> float:
    """``1/(m n) sum_{l, j} |<a_j, x> - tau_j^(l)|``; ``thresholds`` is ``n x m``."""
    y = _values(model, x)
    tau = np.asarray(thresholds, dtype=float).reshape(y.shape[0], -1)
    return float(np.mean(np.abs(y[:, None] - tau)))


def fvp_mean(kind, lam, x_norm, n=None, mu_prime=None) -> float:
    """Expected ``T_ave`` under uniform dither on ``[-lam, lam]``.

    ``subgaussian``: ``lam/2 + ||x||^2/(2 lam)``; ``dct``: ``lam/2 +
    ||x||^2/(4 lam)``; ``no_dr``: ``((n-1)/n)(lam/2 + ||x||^2/(2 lam)) +
    mu'/n`` for one row outside the dynamic range.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    sq = float(x_norm) ** 2
    if kind == "subgaussian":
        return lam / 2 + sq / (2 * lam)
    if kind == "dct":
        return lam / 2 + sq / (4 * lam)
    if kind == "no_dr":
        if n is None or mu_prime is None:
            raise ValueError("no_dr needs n and mu_prime")
        if n < 1:
            raise ValueError("n must be >= 1")
        return (n - 1) / n * (lam / 2 + sq / (2 * lam)) + mu_prime / n
    raise ValueError(f"unknown kind {kind!r}")


def fvp_report(model, x, thresholds, lam, kind="subgaussian", **extras) -> FvpReport:
    x = np.asarray(getattr(x, "values", x), dtype=float).reshape(-1)
    tau = np.asarray(thresholds)
    return FvpReport(
        t_ave=t_ave(model, x, tau),
        mean=fvp_mean(kind, lam, np.linalg.norm(x), **extras),
        lam=float(lam),
        m_prime=int(tau.size),
    )


def realized_deviation(model, thresholds, points, lam, kind="subgaussian") -> float:
    """``max_p |T_ave(p) - mean(p)|`` over the given points.

    For a consistent estimate ``x_bar`` of ``x``, taking the points ``x``,
    ``x_bar`` and their midpoint makes ``||x_bar - x|| <= 4 sqrt(eps lam)``
    hold exactly (the mean is strictly convex in ``p`` while ``T_ave`` is
    affine along the segment when no sign changes).
    """
    devs = []
    for p in points:
        p = np.asarray(p, dtype=float).reshape(-1)
        devs.append(abs(t_ave(model, p, thresholds) - fvp_mean(kind, lam, np.linalg.norm(p))))
    return float(max(devs))


# --------------------------------------------------------------------------
# budgets and radii
# --------------------------------------------------------------------------

@dataclass
class ComplexityBudget:
    """Inputs of the sample-complexity shapes. ``kind`` is ``arbitrary``
    (needs ``gamma``), ``lowrank`` (``n1, n2, r``) or ``sparse`` (``s, d``)."""

    kind: str
    eps: float
    rho: float
    gamma: Optional[float] = None
    n1: Optional[int] = None
    n2: Optional[int] = None
    r: Optional[int] = None
    s: Optional[int] = None
    d: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("arbitrary", "lowrank", "sparse"):
            raise ValueError(f"unknown set kind {self.kind!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        need = {"arbitrary": ("gamma",), "lowrank": ("n1", "n2", "r"), "sparse": ("s", "d")}
        for name in need[self.kind]:
            val = getattr(self, name)
            if val is None or not val > 0:
                raise ValueError(f"{self.kind} budget needs positive {name}")
        if self.kind == "sparse" and self.s > self.d:
            raise ValueError("s must not exceed d")


def sample_complexity(budget: ComplexityBudget) -> float:
    """Unscaled lower-bound shape for ``m'`` (absolute constants dropped).

    arbitrary: ``gamma^2 / (rho^2 eps^2)``; lowrank: ``eps^-2 r (n1 + n2)
    log(1 + 1/rho)``; sparse: ``eps^-2 s log(d/s) log(1 + 1/rho)``.
    """
    b = budget
    if b.kind == "arbitrary":
        return b.gamma**2 / (b.rho**2 * b.eps**2)
    if b.kind == "lowrank":
        return b.r * (b.n1 + b.n2) * math.log1p(1 / b.rho) / b.eps**2
    if b.s == b.d:
        warnings.warn("s = d makes log(d/s) vanish; the sparse shape is degenerate", RuntimeWarning)
    return b.s * math.log(b.d / b.s) * math.log1p(1 / b.rho) / b.eps**2


def recovery_radius(kind, eps, lam, d_h=None, n=None, L=None) -> float:
    """Upper bound on ``||x_bar - x||`` for FVP deviation ``eps``.

    consistent: ``4 sqrt(eps lam)``; hamming: ``+ 2 sqrt((1 + lam^2) d_H)``;
    no_dr: ``4 sqrt(eps lam n/(n-1))``; no_dr_L: ``4 sqrt(eps lam n/(n-L))``.
    """
    if eps < 0 or not lam > 0:
        raise ValueError("eps must be non-negative and lam positive")
    base = 4.0 * math.sqrt(eps * lam)
    if kind == "consistent":
        return base
    if kind == "hamming":
        if d_h is None or not 0.0 <= d_h <= 1.0:
            raise ValueError("hamming radius needs d_h in [0, 1]")
        return base + 2.0 * math.sqrt((1.0 + lam**2) * d_h)
    if kind in ("no_dr", "no_dr_L"):
        L = 1 if kind == "no_dr" else L
        if n is None or L is None:
            raise ValueError(f"{kind} needs n" + ("" if kind == "no_dr" else " and L"))
        if L < 0 or L >= n:
            raise ValueError("L must satisfy 0 <= L < n")
        return 4.0 * math.sqrt(eps * lam * n / (n - L))
    raise ValueError(f"unknown kind {kind!r}")


def hamming_distance(r1, r2) -> float:
    """Fraction of disagreeing entries."""
    a = np.asarray(r1).ravel()
    b = np.asarray(r2).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    return float(np.count_nonzero(a != b) / a.size)


# --------------------------------------------------------------------------
# conditioning
# --------------------------------------------------------------------------

def scaled_condition_number(C, floor=1e-12) -> float:
    """``||C||_F / sigma_min(C)``; raises if ``sigma_min <= floor * sigma_max``."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] < C.shape[1]:
        raise ValueError("need a tall 2-D matrix with full column rank")
    sv = np.linalg.svd(C, compute_uv=False)
    if sv[-1] <= floor * max(sv[0], np.finfo(float).tiny):
        raise np.linalg.LinAlgError(f"sigma_min = {sv[-1]:.3g} below floor")
    return float(np.sqrt(np.sum(sv**2)) / sv[-1])


def one_bit_stack(A, signs):
    """``P = [diag(r^(1)) A; ...; diag(r^(m)) A]`` for ``signs`` of shape ``n x m``."""
    A = np.asarray(A, dtype=float)
    S = np.asarray(signs, dtype=float).reshape(A.shape[0], -1)
    return (S.T[:, :, None] * A[None]).reshape(-1, A.shape[1])


def kappa_invariance_check(A, m, seed=None, rtol=1e-8, gram_rtol=1e-10, signs=None) -> bool:
    """Check ``kappa(P) = kappa(A)``, ``P^T P = m A^T A`` and ``||P||_F^2 =
    m ||A||_F^2`` for ``P`` stacked from ``m`` random sign diagonals."""
    A = np.asarray(A, dtype=float)
    if signs is None:
        rng = as_generator(seed)
        signs = np.where(rng.random((A.shape[0], m)) < 0.5, -1, 1)
    P = one_bit_stack(A, signs)
    G = A.T @ A
    kA = scaled_condition_number(A)
    kP = scaled_condition_number(P)
    ok_k = abs(kP - kA) / kA <= rtol
    ok_g = np.max(np.abs(P.T @ P - m * G)) <= gram_rtol * np.linalg.norm(G, 2)
    ok_f = math.isclose(float(np.sum(P * P)), m * float(np.sum(A * A)), rel_tol=1e-12)
    return bool(ok_k and ok_g and ok_f)


def gaussian_complexity_mc(cloud, trials=10_000, seed=None):
    """Monte Carlo ``E sup_{x in cloud} |<g, x>|``; returns ``(mean, stderr)``.

    ``cloud`` is a ``k x d`` array of points.
    """
    X = np.atleast_2d(np.asarray(cloud, dtype=float))
    if X.size == 0:
        raise ValueError("empty point cloud")
    rng = as_generator(seed)
    vals = np.empty(trials)
    step = max(1, 2**20 // max(X.shape[1], 1))
    for start in range(0, trials, step):
        k = min(step, trials - start)
        G = rng.standard_normal((k, X.shape[1]))
        vals[start:start + k] = np.max(np.abs(G @ X.T), axis=1)
    se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
    return float(vals.mean()), se


def convergence_floor(kind, kappa=None, d=None, n=None, delta=None, c=1.0) -> float:
    """Theoretical per-iteration contraction factor.

    rka ``1 - 1/kappa^2``; prskm ``1 - 1/d``; sketch ``1 - 1/(3d)``; rip
    ``1 - (1/n)((1 - delta)/(1 + delta))^2``; gaussian ``1 - (1 - delta)^2 /
    (1.0049 d)``; block ``1 - c log(n) / kappa^2`` with ``kappa`` the scaled
    condition number of one ``n x d`` block and ``c`` an unknown absolute
    constant (1 by default).
    """
    if kind == "rka":
        if kappa is None or kappa < 1:
            raise ValueError("rka floor needs kappa >= 1")
        return 1.0 - 1.0 / kappa**2
    if kind in ("prskm", "sketch", "gaussian"):
        if d is None or d < 1:
            raise ValueError(f"{kind} floor needs d >= 1")
    if kind == "prskm":
        return 1.0 - 1.0 / d
    if kind == "sketch":
        return 1.0 - 1.0 / (3 * d)
    if kind in ("rip", "gaussian"):
        if delta is None or not 0.0 <= delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
    if kind == "rip":
        if n is None or n < 1:
            raise ValueError("rip floor needs n >= 1")
        return 1.0 - ((1 - delta) / (1 + delta)) ** 2 / n
    if kind == "gaussian":
        return 1.0 - (1 - delta) ** 2 / (1.0049 * d)
    if kind == "block":
        if kappa is None or kappa < 1 or n is None or n < 1:
            raise ValueError("block floor needs kappa >= 1 and n >= 1")
        if not c > 0:
            raise ValueError("c must be positive")
        return max(0.0, 1.0 - c * math.log(n) / kappa**2)
    raise ValueError(f"unknown kind {kind!r}")
