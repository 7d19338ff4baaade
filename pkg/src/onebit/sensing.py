"""Sampling models, ground-truth signals, dither and one-bit quantization."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import as_generator

__all__ = [
    "SamplingModel",
    "StructuredSignal",
    "DitherConfig",
    "NoiseConfig",
    "OneBitMeasurements",
    "gen_gaussian_model",
    "gen_dct_model",
    "gen_matrix_sensing_model",
    "gen_signal",
    "draw_thresholds",
    "draw_noise",
    "quantize",
    "one_bit",
    "dynamic_range",
    "make_oracle",
]

MODEL_KINDS = ("gaussian", "dct", "explicit")


@dataclass
class SamplingModel:
    """Linear sampling operator ``y = A x``.

    ``entries`` always holds the materialized ``n x d`` matrix. For matrix
    sensing the row ``j`` is the flattened (row-major) sensing matrix ``A_j``
    and ``signal_shape`` records ``(n1, n2)``.
    """

    kind: str
    entries: np.ndarray
    freqs: Optional[np.ndarray] = None
    signal_shape: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2:
            raise ValueError("entries must be a 2-D array")
        if self.signal_shape is not None:
            self.signal_shape = tuple(int(s) for s in self.signal_shape)
            if int(np.prod(self.signal_shape)) != self.entries.shape[1]:
                raise ValueError("signal_shape does not match number of columns")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]

    def apply(self, x) -> np.ndarray:
        """Clean measurements ``<a_j, x>`` (``Tr(A_j^T X)`` for matrices)."""
        x = np.asarray(getattr(x, "values", x), dtype=float)
        return self.entries @ x.reshape(-1)

    def sensing_matrices(self) -> np.ndarray:
        """Return the ``n x n1 x n2`` stack of sensing matrices."""
        if self.signal_shape is None:
            raise ValueError("model is not a matrix-sensing model")
        return self.entries.reshape((self.n,) + self.signal_shape)

    def descriptor(self) -> dict:
        out = {"kind": self.kind, "n": self.n, "d": self.d}
        if self.freqs is not None:
            out["freqs"] = [float(f) for f in self.freqs]
        else:
            out["entries"] = self.entries.ravel().tolist()
        if self.signal_shape is not None:
            out["signal_shape"] = list(self.signal_shape)
        return out

    @classmethod
    def from_descriptor(cls, desc: dict) -> "SamplingModel":
        n, d = int(desc["n"]), int(desc["d"])
        shape = desc.get("signal_shape")
        if desc.get("freqs") is not None:
            return _dct_from_freqs(np.asarray(desc["freqs"], dtype=float), d)
        entries = np.asarray(desc["entries"], dtype=float).reshape(n, d)
        return cls(desc["kind"], entries, signal_shape=shape)


@dataclass
class StructuredSignal:
    """Ground-truth signal: ``dense``, ``sparse`` (s nonzeros) or ``lowrank``."""

    role: str
    values: np.ndarray
    sparsity: int = 0
    rank: int = 0

    @property
    def shape(self):
        return self.values.shape

    def vec(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass
class DitherConfig:
    """Threshold law.

    ``law`` is one of ``"uniform"`` (U[-scale, scale]), ``"gaussian"``
    (N(0, scale^2)), ``"uniform_dr"`` (U[-beta_y, beta_y] with beta_y the
    dynamic range of the clean measurements) or ``"none"`` (zero thresholds,
    the ditherless model).
    """

    law: str = "uniform_dr"
    m: int = 1
    scale: float = 1.0

    def __post_init__(self):
        if self.law not in ("uniform", "gaussian", "uniform_dr", "none"):
            raise ValueError(f"unknown dither law {self.law!r}")
        if self.m < 1:
            raise ValueError("number of threshold sequences m must be >= 1")
        if self.law in ("uniform", "gaussian") and not self.scale > 0:
            raise ValueError("dither scale must be positive")


@dataclass
class NoiseConfig:
    """Pre-quantization noise.

    ``law``: ``"none"``, ``"gaussian"`` (std ``sigma``) or ``"impulsive"``
    (with probability ``p`` an entry is replaced by ``+-amp``, random sign).
    By default one noise vector ``z`` is drawn per measurement and shared by
    all ``m`` threshold sequences (``y_z = A x + z``); ``per_sequence=True``
    draws a fresh value for every ``(j, l)``.
    """

    law: str = "none"
    sigma: float = 0.0
    p: float = 0.0
    amp: float = 0.0
    per_sequence: bool = False

    def __post_init__(self):
        if self.law not in ("none", "gaussian", "impulsive"):
            raise ValueError(f"unknown noise law {self.law!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("impulse probability p must lie in [0, 1]")


@dataclass
class OneBitMeasurements:
    """Signs ``R`` and thresholds ``Gamma`` (both ``n x m``; column l is the
    l-th threshold sequence) together with the sampling model."""

    signs: np.ndarray
    thresholds: np.ndarray
    model: SamplingModel
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int8)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if self.signs.ndim == 1:
            self.signs = self.signs[:, None]
        if self.thresholds.ndim == 1:
            self.thresholds = self.thresholds[:, None]
        if self.signs.shape != self.thresholds.shape:
            raise ValueError("signs and thresholds must have the same shape")
        if self.signs.shape[0] != self.model.n:
            raise ValueError("measurement count does not match the model")
        if not np.all(np.abs(self.signs) == 1):
            raise ValueError("signs must be +1 or -1")

    @property
    def n(self) -> int:
        return self.signs.shape[0]

    @property
    def m(self) -> int:
        return self.signs.shape[1]

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def total(self) -> int:
        return self.n * self.m

    def with_thresholds(self, thresholds, signs=None) -> "OneBitMeasurements":
        return OneBitMeasurements(
            self.signs if signs is None else signs, thresholds, self.model, dict(self.meta)
        )

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        bits = np.packbits((self.signs > 0).astype(np.uint8).ravel())
        return {
            "format": "onebit-measurements/1",
            "n": self.n,
            "m": self.m,
            "d": self.d,
            "signs": base64.b64encode(bits.tobytes()).decode("ascii"),
            "thresholds": self.thresholds.ravel().tolist(),
            "model": self.model.descriptor(),
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "OneBitMeasurements":
        n, m = int(rec["n"]), int(rec["m"])
        bits = np.frombuffer(base64.b64decode(rec["signs"]), dtype=np.uint8)
        flat = np.unpackbits(bits)[: n * m].astype(np.int8)
        signs = (2 * flat - 1).reshape(n, m)
        thresholds = np.asarray(rec["thresholds"], dtype=float).reshape(n, m)
        model = SamplingModel.from_descriptor(rec["model"])
        if model.d != int(rec["d"]):
            raise ValueError("model descriptor disagrees with record dimension")
        return cls(signs, thresholds, model)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "OneBitMeasurements":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        path = str(path)
        if path.endswith(".npz"):
            np.savez(
                path,
                signs=self.signs,
                thresholds=self.thresholds,
                entries=self.model.entries,
                kind=np.array(self.model.kind),
                freqs=np.array([]) if self.model.freqs is None else self.model.freqs,
                signal_shape=np.array(self.model.signal_shape or (), dtype=int),
            )
        else:
            with open(path, "w") as fh:
                fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "OneBitMeasurements":
        path = str(path)
        if path.endswith(".npz"):
            with np.load(path) as z:
                freqs = z["freqs"] if z["freqs"].size else None
                shape = tuple(z["signal_shape"].tolist()) or None
                model = SamplingModel(str(z["kind"]), z["entries"], freqs=freqs, signal_shape=shape)
                return cls(z["signs"], z["thresholds"], model)
        with open(path) as fh:
            return cls.from_json(fh.read())


# generators --------------------------------------------------------------

def gen_gaussian_model(n, d, seed=None) -> SamplingModel:
    """``n x d`` matrix with i.i.d. N(0, 1) entries."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = as_generator(seed)
    return SamplingModel("gaussian", rng.standard_normal((n, d)))


def _dct_from_freqs(freqs, d) -> SamplingModel:
    t = np.arange(d)
    entries = np.cos(2.0 * np.pi * np.outer(freqs, t))
    return SamplingModel("dct", entries, freqs=np.asarray(freqs, dtype=float))


def gen_dct_model(n, d, seed=None) -> SamplingModel:
    """Random-frequency cosine rows ``cos(2 pi w_k t)``, ``w_k`` uniform on
    ``{0, 1/d, ..., (d-1)/d}``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = as_generator(seed)
    freqs = rng.integers(0, d, size=n) / d
    return _dct_from_freqs(freqs, d)


def gen_matrix_sensing_model(n, n1, n2, seed=None) -> SamplingModel:
    """``n`` Gaussian sensing matrices of size ``n1 x n2`` (flattened rows)."""
    rng = as_generator(seed)
    return SamplingModel("gaussian", rng.standard_normal((n, n1 * n2)), signal_shape=(n1, n2))


def gen_signal(role, dims, sparsity=0, rank=0, seed=None, normalize=False) -> StructuredSignal:
    """Draw a ground-truth signal.

    ``role="dense"``/``"sparse"`` take ``dims = d``; ``role="lowrank"`` takes
    ``dims = (n1, n2)`` and is the product of Gaussian ``n1 x r`` and
    ``r x n2`` factors.
    """
    rng = as_generator(seed)
    if role == "dense":
        values = rng.standard_normal(int(dims))
    elif role == "sparse":
        d = int(dims)
        if not 0 <= sparsity <= d:
            raise ValueError(f"sparsity {sparsity} outside [0, {d}]")
        values = np.zeros(d)
        support = rng.choice(d, size=sparsity, replace=False)
        values[support] = rng.standard_normal(sparsity)
        # a N(0,1) draw of exactly zero has probability zero, but keep ||x||_0 = s
        values[support[values[support] == 0.0]] = 1.0
    elif role == "lowrank":
        n1, n2 = (int(v) for v in dims)
        if not 0 <= rank <= min(n1, n2):
            raise ValueError(f"rank {rank} outside [0, {min(n1, n2)}]")
        values = rng.standard_normal((n1, rank)) @ rng.standard_normal((rank, n2))
    else:
        raise ValueError(f"unknown signal role {role!r}")
    if normalize:
        nrm = np.linalg.norm(values)
        if nrm > 0:
            values = values / nrm
    return StructuredSignal(role, values, sparsity=int(sparsity), rank=int(rank))


def dynamic_range(model, x) -> float:
    """``max_j |<a_j, x>|``."""
    y = model.apply(x)
    return float(np.max(np.abs(y))) if y.size else 0.0


def draw_thresholds(dither: DitherConfig, n, rng, beta=None) -> np.ndarray:
    """``n x m`` threshold matrix, i.i.d. over entries and sequences."""
    shape = (n, dither.m)
    if dither.law == "none":
        return np.zeros(shape)
    if dither.law == "gaussian":
        return dither.scale * rng.standard_normal(shape)
    lam = dither.scale if dither.law == "uniform" else beta
    if lam is None:
        raise ValueError("uniform_dr dither needs the dynamic range")
    return rng.uniform(-lam, lam, size=shape)


def draw_noise(noise: NoiseConfig, n, m, rng) -> np.ndarray:
    """Noise matrix broadcastable to ``n x m``."""
    cols = m if noise.per_sequence else 1
    if noise.law == "none":
        return np.zeros((n, cols))
    if noise.law == "gaussian":
        return noise.sigma * rng.standard_normal((n, cols))
    hit = rng.random((n, cols)) < noise.p
    signs = np.where(rng.random((n, cols)) < 0.5, -1.0, 1.0)
    base = noise.sigma * rng.standard_normal((n, cols)) if noise.sigma > 0 else 0.0
    return np.where(hit, noise.amp * signs, base)


def one_bit(values) -> np.ndarray:
    """Sign with ``sgn(0) = +1``."""
    return np.where(np.asarray(values) >= 0, 1, -1).astype(np.int8)


def quantize(model, x, dither=None, noise=None, seed=None, thresholds=None) -> OneBitMeasurements:
    """One-bit samples ``r_j^(l) = sgn(<a_j, x> + z_j - tau_j^(l))``.

    Explicit ``thresholds`` (``n x m``) override the dither draw.
    """
    dither = dither or DitherConfig()
    noise = noise or NoiseConfig()
    rng = as_generator(seed)
    y = model.apply(x)
    if thresholds is None:
        beta = float(np.max(np.abs(y))) if dither.law == "uniform_dr" else None
        thresholds = draw_thresholds(dither, model.n, rng, beta=beta)
    else:
        thresholds = np.asarray(thresholds, dtype=float).reshape(model.n, -1)
    z = draw_noise(noise, model.n, thresholds.shape[1], rng)
    signs = one_bit(y[:, None] + z - thresholds)
    meta = {"noise_max_abs": float(np.max(np.abs(z))) if z.size else 0.0}
    meas = OneBitMeasurements(signs, thresholds, model, meta)
    meas.meta["noise"] = np.broadcast_to(z, thresholds.shape).copy()
    return meas


def make_oracle(model, x, noise=None, seed=None):
    """Re-measurement oracle: ``oracle(thresholds) -> signs`` against a fixed
    signal, drawing fresh noise on every call."""
    noise = noise or NoiseConfig()
    rng = as_generator(seed)
    y = model.apply(x)

    def oracle(thresholds):
        thresholds = np.asarray(thresholds, dtype=float).reshape(model.n, -1)
        z = draw_noise(noise, model.n, thresholds.shape[1], rng)
        return one_bit(y[:, None] + z - thresholds)

    return oracle
