"""Monte Carlo harness: seeded trials, NMSE aggregation and CSV output.

Arms evaluated on the same sweep point and trial share one measurement draw
(common random numbers). Trial ``t`` at sweep point ``p`` draws its data from
``spawn(seed, p, t)``, so results do not depend on the worker count or on the
order in which trials finish.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import analysis as an
from .. import feasibility as fz
from .. import orka
from .. import sensing as se
from .. import structured as st
from .._validation import spawn
from .presets import ExperimentConfig, effective_params

__all__ = [
    "WORKERS_ENV",
    "TrialResult",
    "SummaryTable",
    "nmse",
    "run_experiment",
    "run_trials",
    "resolve_workers",
    "validate_fvp",
    "CSV_COLUMNS",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "ONEBIT_WORKERS"
CSV_COLUMNS = ["preset", "arm", "sweep_name", "sweep_value", "trial", "nmse", "iterations", "aborted"]
ABORT_LIMIT = 0.10

# failures that abort a single arm of a trial without stopping the run
_ABORTS = (FloatingPointError, np.linalg.LinAlgError)


def nmse(x_hat, x) -> float:
    """``||x_hat - x||^2 / ||x||^2`` (Frobenius for matrices)."""
    x_hat = np.asarray(getattr(x_hat, "values", x_hat), dtype=float)
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: estimate {x_hat.shape}, truth {x.shape}")
    ref = float(np.sum(x * x))
    if not ref > 0:
        raise ValueError("NMSE undefined for an all-zero ground truth")
    return float(np.sum((x_hat - x) ** 2)) / ref


@dataclass
class TrialResult:
    """One (arm, sweep point, trial) outcome. ``wall_time`` is kept in memory
    but not written to CSV, so CSV files are byte-reproducible."""

    arm: str
    sweep_value: float
    trial: int
    nmse: float
    iterations: int
    aborted: bool = False
    wall_time: float = 0.0
    message: str = ""


@dataclass
class SummaryTable:
    """Per (arm, sweep point) statistics plus the per-trial rows they come from."""

    preset: str
    sweep_name: str
    arms: list
    sweep: list
    trials: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def abort_fraction(self) -> float:
        if not self.trials:
            return 0.0
        return sum(t.aborted for t in self.trials) / len(self.trials)

    @property
    def exit_code(self) -> int:
        return 1 if self.abort_fraction > ABORT_LIMIT else 0

    def values(self, arm, sweep_value) -> np.ndarray:
        """NMSE of the non-aborted trials for one cell."""
        return np.array(
            [
                t.nmse
                for t in self.trials
                if t.arm == arm and t.sweep_value == sweep_value and not t.aborted
            ]
        )

    def stats(self, arm, sweep_value) -> dict:
        v = self.values(arm, sweep_value)
        n_abort = sum(
            1 for t in self.trials if t.arm == arm and t.sweep_value == sweep_value and t.aborted
        )
        if v.size == 0:
            nan = float("nan")
            return {"count": 0, "aborted": n_abort, "median": nan, "mean": nan, "q25": nan, "q75": nan, "iqr": nan}
        q25, med, q75 = np.percentile(v, [25, 50, 75])
        return {
            "count": int(v.size),
            "aborted": n_abort,
            "median": float(med),
            "mean": float(v.mean()),
            "q25": float(q25),
            "q75": float(q75),
            "iqr": float(q75 - q25),
        }

    def median(self, arm, sweep_value) -> float:
        return self.stats(arm, sweep_value)["median"]

    def rows(self):
        for arm in self.arms:
            for sv in self.sweep:
                yield {"arm": arm, self.sweep_name: sv, **self.stats(arm, sv)}

    def write_trials_csv(self, path):
        write_trials_csv(self.trials, self.preset, self.sweep_name, path)

    def write_summary_csv(self, path):
        cols = ["arm", "sweep_value", "count", "aborted", "median", "mean", "q25", "q75", "iqr"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for arm in self.arms:
                for sv in self.sweep:
                    s = self.stats(arm, sv)
                    w.writerow(
                        [arm, _fmt(sv), s["count"], s["aborted"]]
                        + [_fmt(s[k]) for k in ("median", "mean", "q25", "q75", "iqr")]
                    )

    def format(self) -> str:
        lines = [f"{'arm':<16}{self.sweep_name:>14}{'median':>14}{'mean':>14}{'iqr':>14}{'aborted':>9}"]
        for arm in self.arms:
            for sv in self.sweep:
                s = self.stats(arm, sv)
                lines.append(
                    f"{arm:<16}{_fmt(sv):>14}{s['median']:>14.4e}{s['mean']:>14.4e}{s['iqr']:>14.4e}{s['aborted']:>9d}"
                )
        return "\n".join(lines)

    @classmethod
    def from_csv(cls, path) -> "SummaryTable":
        """Rebuild a table from a per-trial CSV."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path} holds no trial rows")
        trials = [
            TrialResult(
                arm=r["arm"],
                sweep_value=_parse_num(r["sweep_value"]),
                trial=int(r["trial"]),
                nmse=float(r["nmse"]),
                iterations=int(r["iterations"]),
                aborted=bool(int(r["aborted"])),
            )
            for r in rows
        ]
        arms = list(dict.fromkeys(t.arm for t in trials))
        sweep = sorted(set(t.sweep_value for t in trials))
        return cls(rows[0]["preset"], rows[0]["sweep_name"], arms, sweep, trials)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _parse_num(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def write_trials_csv(trials, preset, sweep_name, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for t in trials:
            w.writerow(
                [preset, t.arm, sweep_name, _fmt(t.sweep_value), t.trial, _fmt(t.nmse), t.iterations, int(t.aborted)]
            )


# --------------------------------------------------------------------------
# data generation
# --------------------------------------------------------------------------

def _noise(p):
    sigma = float(p.get("noise_sigma", 0.0))
    return se.NoiseConfig("gaussian", sigma=sigma) if sigma > 0 else se.NoiseConfig()


def _dither(p, m):
    return se.DitherConfig(p["dither"], m=int(m), scale=float(p.get("dither_scale", 1.0)))


def _rows_for(p, sweep_value):
    task = p["task"]
    if task == "lowrank":
        n1, n2 = p["shape"]
        r = int(p["rank"])
        if p["preset"] == "fig3b" or p.get("sweep_name") == "beta":
            return int(round(sweep_value * n1 * n1 * r))
        return int(round(sweep_value * n1 * r))
    if task == "sparse":
        if p["sweep_name"] == "n":
            return int(sweep_value)
        s, d = int(p["sparsity"]), int(p["d"])
        return int(round(sweep_value * s * math.log(d / s)))
    return int(p["n"])


def _draw(p, sweep_value, rng):
    """Model, ground truth and one-bit measurements for one trial."""
    n = _rows_for(p, sweep_value)
    m = int(sweep_value) if p["task"] == "adaptive" else int(p["m"])
    if p["model"] == "matrix":
        shape = tuple(p["shape"])
        model = se.gen_matrix_sensing_model(n, shape[0], shape[1], rng)
        truth = se.gen_signal("lowrank", shape, rank=int(p["rank"]), seed=rng)
    else:
        d = int(p["d"])
        model = se.gen_gaussian_model(n, d, rng)
        truth = se.gen_signal(
            p["signal"], d, sparsity=int(p.get("sparsity", 0)), seed=rng, normalize=bool(p.get("normalize", False))
        )
    meas = se.quantize(model, truth.values, _dither(p, m), _noise(p), seed=rng)
    return model, truth.values, meas


# --------------------------------------------------------------------------
# trial bodies
# --------------------------------------------------------------------------

def _guard(arm, sweep_value, trial, fn):
    """Run one arm; failures become an aborted row."""
    t0 = time.perf_counter()
    try:
        nm, iters = fn()
    except _ABORTS as exc:
        log.warning("trial %d arm %s at %s aborted: %s", trial, arm, sweep_value, exc)
        return TrialResult(arm, sweep_value, trial, float("nan"), 0, True, time.perf_counter() - t0, str(exc))
    return TrialResult(arm, sweep_value, trial, nm, int(iters), False, time.perf_counter() - t0)


def _trial_feasibility(p, trial):
    rng = spawn(p["seed"], 0, trial)
    _, x, meas = _draw(p, None, rng)
    poly = orka.build_polyhedron(meas)
    checkpoints = [int(c) for c in p["sweep"]]
    solver_seed = int(rng.integers(2**63))
    ref = float(np.sum(x * x))
    out = []
    for arm in p["arms"]:
        scfg = fz.SolverConfig(
            **{**p["solver_cfg"], "record_every": None, "record_at": np.array(checkpoints), "seed": solver_seed}
        )
        t0 = time.perf_counter()
        try:
            xb, trace = orka.orka_solve(poly, arm, scfg, x_ref=x)
        except _ABORTS as exc:
            log.warning("trial %d arm %s aborted: %s", trial, arm, exc)
            out += [TrialResult(arm, c, trial, float("nan"), 0, True, 0.0, str(exc)) for c in checkpoints]
            continue
        wall = time.perf_counter() - t0
        at = dict(zip(trace.iterations, trace.dist_sq))
        final = nmse(xb, x)
        for c in checkpoints:
            # solvers that stop early keep their final iterate
            val = at[c] / ref if c in at and c <= trace.n_iter else final
            out.append(TrialResult(arm, c, trial, float(val), min(c, trace.n_iter), False, wall))
    return out


def _trial_adaptive(p, point, sweep_value, trial):
    rng = spawn(p["seed"], point, trial)
    _, x, meas = _draw(p, sweep_value, rng)
    x = x.reshape(-1)
    c = dict(p["solver_cfg"])
    rounds = int(c.pop("rounds"))
    solver = c.pop("solver")
    scfg = fz.SolverConfig(**c, record_every=None, seed=int(rng.integers(2**62)))
    t0 = time.perf_counter()
    try:
        xa, hist = orka.adaptive_threshold_solve(meas, orka.AdaptiveConfig(rounds=rounds, solver=solver, solver_cfg=scfg))
        if not hist.iterates:
            raise FloatingPointError("first round produced a non-finite iterate")
    except _ABORTS as exc:
        return [TrialResult(a, sweep_value, trial, float("nan"), 0, True, 0.0, str(exc)) for a in p["arms"]]
    wall = time.perf_counter() - t0
    iters = [tr.n_iter for tr in hist.traces]
    by_arm = {
        # the first round runs on the random thresholds: the random-threshold arm
        "random": (nmse(hist.iterates[0], x), iters[0]),
        "adaptive": (nmse(xa, x), sum(iters)),
    }
    return [
        TrialResult(a, sweep_value, trial, by_arm[a][0], by_arm[a][1], bool(hist.aborted and a == "adaptive"), wall)
        for a in p["arms"]
    ]


def _structured_cfg(p, seed, **kw):
    return st.StructuredConfig(**{**p["solver_cfg"], "seed": seed, **kw})


def _trial_lowrank(p, point, sweep_value, trial):
    rng = spawn(p["seed"], point, trial)
    _, X, meas = _draw(p, sweep_value, rng)
    prob = st.MatrixSensingProblem(meas, int(p["rank"]))
    seed = int(rng.integers(2**62))
    out = []
    for arm in p["arms"]:
        if arm == "svp_orka":
            def fn():
                Xb, tr = st.svp_orka_solve(prob, _structured_cfg(p, seed))
                return nmse(Xb, X), tr.n_iter
        elif arm == "factorized_orka":
            def fn():
                pair, tr = st.factorized_orka_solve(prob, _structured_cfg(p, seed))
                return nmse(pair.product(), X), tr.n_iter
        elif arm == "hsvt":
            def fn():
                return nmse(st.hsvt_baseline(prob), X), 0
        else:
            raise ValueError(f"unknown low-rank arm {arm!r}")
        out.append(_guard(arm, sweep_value, trial, fn))
    return out


def _trial_sparse(p, point, sweep_value, trial):
    rng = spawn(p["seed"], point, trial)
    model, x, meas = _draw(p, sweep_value, rng)
    s = int(p["sparsity"])
    prob = st.SparseProblem(meas, s)
    seed = int(rng.integers(2**62))
    normalize = bool(p.get("normalize", False))
    x0 = None
    if normalize:
        # ditherless data only fixes the direction; zero is trivially feasible
        x0 = st.hard_threshold(model.entries.T @ meas.signs.sum(axis=1), s)
        x0 = x0 / max(np.linalg.norm(x0), 1e-300)
    base = st.StructuredConfig(**p.get("baseline_cfg", {}))
    out = []
    for arm in p["arms"]:
        if arm in ("ht_orka", "st_orka"):
            solve = st.ht_orka_solve if arm == "ht_orka" else st.st_orka_solve

            def fn(solve=solve):
                xb, tr = solve(prob, _structured_cfg(p, seed, normalize=normalize), x0=x0)
                return nmse(xb, x), tr.n_iter
        elif arm in ("biht", "nbiht"):
            def fn(arm=arm):
                return nmse(st.biht_baseline(prob, base, normalized=arm == "nbiht"), x), base.max_iters
        else:
            raise ValueError(f"unknown sparse arm {arm!r}")
        out.append(_guard(arm, sweep_value, trial, fn))
    return out


def _job(args):
    p, point, trial = args
    task = p["task"]
    if task == "feasibility":
        return _trial_feasibility(p, trial)
    sweep_value = p["sweep"][point]
    if task == "adaptive":
        return _trial_adaptive(p, point, sweep_value, trial)
    if task == "lowrank":
        return _trial_lowrank(p, point, sweep_value, trial)
    if task == "sparse":
        return _trial_sparse(p, point, sweep_value, trial)
    raise ValueError(f"unknown task {task!r}")


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

def resolve_workers(requested=None) -> int:
    """Explicit request, else ``$ONEBIT_WORKERS``, else 1."""
    if requested is not None:
        n = int(requested)
    else:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        if not raw:
            return 1
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("worker count must be >= 1")
    return n


def run_trials(p, workers=1):
    """Run every trial of resolved params ``p``; returns sorted results."""
    if p["task"] == "feasibility":
        jobs = [(p, 0, t) for t in range(p["trials"])]
    else:
        jobs = [(p, k, t) for k in range(len(p["sweep"])) for t in range(p["trials"])]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        chunks = [_job(j) for j in jobs]
    arm_rank = {a: i for i, a in enumerate(p["arms"])}
    sweep_rank = {v: i for i, v in enumerate(p["sweep"])}
    results = [r for chunk in chunks for r in chunk]
    results.sort(key=lambda r: (arm_rank[r.arm], sweep_rank[r.sweep_value], r.trial))
    return results


def summary_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".summary.csv")


def run_experiment(cfg: ExperimentConfig) -> SummaryTable:
    """Run ``cfg``; writes the per-trial CSV (and ``<stem>.summary.csv``) when
    ``cfg.out`` is set. Aborted arms are recorded and the run continues;
    check :attr:`SummaryTable.exit_code`."""
    p = effective_params(cfg)
    workers = resolve_workers(cfg.workers)
    trials = run_trials(p, workers)
    table = SummaryTable(cfg.preset, p["sweep_name"], list(p["arms"]), list(p["sweep"]), trials, p)
    if table.abort_fraction > 0:
        log.warning("%.1f%% of trial arms aborted", 100 * table.abort_fraction)
    if cfg.out:
        table.write_trials_csv(cfg.out)
        table.write_summary_csv(summary_path(cfg.out))
    return table


# --------------------------------------------------------------------------
# FVP validation
# --------------------------------------------------------------------------

FVP_SETS = ("sparse", "dense", "lowrank")


def _fvp_signal(kind, sig_set, d, sparsity, rng):
    if kind == "dct":
        # the cosine rows are isotropic (E a a^T = I/2) only on frequencies
        # 1..(d-1)/2 with no mirror pairs, so the signal lives there
        half = (d - 1) // 2
        x = np.zeros(d)
        k = half if sig_set != "sparse" else min(sparsity, half)
        idx = 1 + rng.choice(half, size=k, replace=False)
        x[idx] = rng.standard_normal(k)
    elif sig_set == "lowrank":
        side = int(round(math.sqrt(d)))
        x = se.gen_signal("lowrank", (side, side), rank=2, seed=rng).values.ravel()
    else:
        x = se.gen_signal(sig_set, d, sparsity=sparsity, seed=rng).values
    return x / np.linalg.norm(x)


def validate_fvp(sig_set="sparse", m_prime=10_000, trials=20, seed=0, kind="gaussian", d=100, sparsity=10, lam=None):
    """FVP reports for unit-norm signals from ``sig_set``.

    Each trial draws ``m'`` fresh sensing rows with one uniform threshold per
    row on ``[-lam, lam]``; ``lam`` defaults to the realized dynamic range.
    Gaussian rows are compared with the sub-Gaussian mean, cosine rows with
    the DCT mean.
    """
    if sig_set not in FVP_SETS:
        raise ValueError(f"unknown signal set {sig_set!r}; choose from {FVP_SETS}")
    if kind not in ("gaussian", "dct"):
        raise ValueError("kind must be 'gaussian' or 'dct'")
    m_prime = int(m_prime)
    if m_prime < 1:
        raise ValueError("m_prime must be >= 1")
    if sig_set == "lowrank":
        d = int(round(math.sqrt(d))) ** 2
    reports = []
    for t in range(int(trials)):
        rng = spawn(seed, m_prime, t)
        x = _fvp_signal(kind, sig_set, d, sparsity, rng)
        model = se.gen_gaussian_model(m_prime, d, rng) if kind == "gaussian" else se.gen_dct_model(m_prime, d, rng)
        beta = se.dynamic_range(model, x) if lam is None else float(lam)
        tau = se.draw_thresholds(se.DitherConfig("uniform", m=1, scale=beta), m_prime, rng)
        reports.append(an.fvp_report(model, x, tau, beta, kind="subgaussian" if kind == "gaussian" else "dct"))
    return reports
