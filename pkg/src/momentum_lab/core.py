"""Shared domain types, small dense-matrix helpers and the seeding contract.

Randomness
----------
Every random quantity in the package is drawn from ``numpy.random.Generator``
backed by the PCG64 bit generator, seeded explicitly.  Independent streams
for sweep cells are derived with ``numpy.random.SeedSequence(seed,
spawn_key=(cell,))`` so results never depend on scheduling order.  Gaussian
draws use numpy's ziggurat ``standard_normal`` followed by a fixed linear
transform (a square-root factor of the noise covariance).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYMMETRY_RTOL = 1e-12
PSD_JITTER = 1e-14


class InvalidArgument(ValueError):
    """Raised when an input violates a documented precondition."""


def make_rng(seed: int, cell: int | None = None) -> np.random.Generator:
    """PCG64 generator for ``seed``; ``cell`` selects an independent sub-stream."""
    if cell is None:
        ss = np.random.SeedSequence(int(seed))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(cell),))
    return np.random.Generator(np.random.PCG64(ss))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MomentumParams:
    """Constant QHM parameters: step size, momentum decay and interpolation weight."""

    alpha: float
    beta: float
    nu: float

    def __post_init__(self):
        a, b, n = float(self.alpha), float(self.beta), float(self.nu)
        if not np.isfinite(a) or a <= 0:
            raise InvalidArgument(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= b < 1.0:
            raise InvalidArgument(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 <= n <= 1.0:
            raise InvalidArgument(f"nu must lie in [0, 1], got {self.nu}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "nu", n)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "nu": self.nu}


@dataclass(frozen=True)
class Spectrum:
    """Curvature extremes ``mu <= ell``; ``kappa = ell / mu``."""

    mu: float
    ell: float

    def __post_init__(self):
        mu, ell = float(self.mu), float(self.ell)
        if not (mu > 0 and ell > 0):
            raise InvalidArgument(f"spectrum bounds must be positive, got ({mu}, {ell})")
        if mu > ell:
            raise InvalidArgument(f"need mu <= ell, got mu={mu}, ell={ell}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "ell", ell)

    @property
    def kappa(self) -> float:
        return self.ell / self.mu

    @classmethod
    def of(cls, matrix) -> "Spectrum":
        w = np.linalg.eigvalsh(np.asarray(matrix, dtype=np.float64))
        return cls(float(w[0]), float(w[-1]))


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * (m + m.T)


def _check_square(name: str, m: np.ndarray, n: int):
    if m.shape != (n, n):
        raise InvalidArgument(f"{name} must be {n}x{n}, got shape {m.shape}")


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Square-root factor ``F`` with ``F @ F.T == cov``.

    Uses the Cholesky factor when it exists; singular PSD covariances fall back
    to a symmetric eigen square root so that a zero covariance maps to zero.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class QuadraticProblem:
    """``F(x) = 1/2 (x - x*)^T A (x - x*)`` with additive gradient noise of covariance ``noise_cov``."""

    curvature: np.ndarray
    optimum: np.ndarray
    noise_cov: np.ndarray
    seed: int | None = None
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a_raw = np.atleast_2d(np.asarray(self.curvature, dtype=np.float64))
        n = a_raw.shape[0]
        if n == 0:
            raise InvalidArgument("dim must be >= 1")
        _check_square("curvature", a_raw, n)
        scale = max(np.abs(a_raw).max(), np.finfo(float).tiny)
        if np.abs(a_raw - a_raw.T).max() > SYMMETRY_RTOL * scale:
            raise InvalidArgument("curvature is not symmetric")
        a = symmetrize(a_raw)
        if np.linalg.eigvalsh(a)[0] <= 0:
            raise InvalidArgument("curvature must be positive definite")

        xs = np.asarray(self.optimum, dtype=np.float64).reshape(-1)
        if xs.shape != (n,):
            raise InvalidArgument(f"optimum must have length {n}, got {xs.shape}")

        s_raw = np.atleast_2d(np.asarray(self.noise_cov, dtype=np.float64))
        _check_square("noise_cov", s_raw, n)
        s_scale = max(np.abs(s_raw).max(), 1.0)
        if np.abs(s_raw - s_raw.T).max() > SYMMETRY_RTOL * s_scale:
            raise InvalidArgument("noise_cov is not symmetric")
        s = symmetrize(s_raw)
        try:
            np.linalg.cholesky(s + PSD_JITTER * np.eye(n))
        except np.linalg.LinAlgError:
            raise InvalidArgument("noise_cov must be positive semidefinite") from None

        object.__setattr__(self, "curvature", _readonly(a))
        object.__setattr__(self, "optimum", _readonly(xs))
        object.__setattr__(self, "noise_cov", _readonly(s))
        object.__setattr__(self, "_factor", _readonly(noise_factor(s)))

    @property
    def dim(self) -> int:
        return self.curvature.shape[0]

    @property
    def spectrum(self) -> Spectrum:
        return Spectrum.of(self.curvature)

    @property
    def noise_chol(self) -> np.ndarray:
        return self._factor

    def loss(self, x) -> float:
        e = np.asarray(x, dtype=np.float64) - self.optimum
        return 0.5 * float(e @ self.curvature @ e)

    def grad(self, x) -> np.ndarray:
        return self.curvature @ (np.asarray(x, dtype=np.float64) - self.optimum)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "curvature": self.curvature.tolist(),
            "optimum": self.optimum.tolist(),
            "noise_cov": self.noise_cov.tolist(),
        }
        if self.seed is not None:
            d["seed"] = int(self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticProblem":
        known = {"dim", "curvature", "optimum", "noise_cov", "seed"}
        extra = set(d) - known
        if extra:
            raise InvalidArgument(f"unknown problem fields: {sorted(extra)}")
        n = int(d["dim"])
        if n < 1:
            raise InvalidArgument("dim must be >= 1")
        a = np.asarray(d["curvature"], dtype=np.float64).reshape(n, n)
        s = np.asarray(d["noise_cov"], dtype=np.float64).reshape(n, n)
        xs = np.asarray(d.get("optimum", np.zeros(n)), dtype=np.float64)
        return cls(a, xs, s, seed=d.get("seed"))

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "QuadraticProblem":
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))


@dataclass
class OptimizerState:
    """Iterate ``x``, momentum buffer ``d`` (``d^{k-1}``) and step counter ``k``."""

    x: np.ndarray
    d: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, x0) -> "OptimizerState":
        x = np.array(x0, dtype=np.float64).reshape(-1)
        return cls(x, np.zeros_like(x), 0)


def spd_eigenvalues(dim: int, spectrum: Spectrum) -> np.ndarray:
    """Log-uniformly spaced eigenvalues on ``[mu, ell]``; both endpoints exact."""
    lam = np.geomspace(spectrum.mu, spectrum.ell, dim)
    lam[0] = spectrum.mu
    if dim >= 2:
        lam[-1] = spectrum.ell
    return lam


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def random_spd_problem(dim: int, spectrum: Spectrum, noise_scale: float, seed: int) -> QuadraticProblem:
    """Random rotated quadratic with prescribed spectrum and isotropic noise ``noise_scale * I``."""
    if int(dim) < 1:
        raise InvalidArgument("dim must be >= 1")
    if noise_scale < 0:
        raise InvalidArgument("noise_scale must be nonnegative")
    dim = int(dim)
    q = random_orthogonal(dim, make_rng(seed))
    lam = spd_eigenvalues(dim, spectrum)
    a = symmetrize((q * lam) @ q.T)
    return QuadraticProblem(a, np.zeros(dim), float(noise_scale) * np.eye(dim), seed=int(seed))


def benchmark_problem(seed: int = 0) -> QuadraticProblem:
    """The 2-D synthetic benchmark: mu = 0.1, L = 10, isotropic noise variance 0.3."""
    return random_spd_problem(2, Spectrum(0.1, 10.0), 0.3, seed)


def gaussian_noise_draw(problem: QuadraticProblem, rng: np.random.Generator) -> np.ndarray:
    return problem.noise_chol @ rng.standard_normal(problem.dim)


def gaussian_noise_block(problem: QuadraticProblem, rng: np.random.Generator, count: int,
                         bound: float | None = None) -> np.ndarray:
    """``count`` independent noise vectors as rows.

    With ``bound`` set, rows whose norm exceeds it are redrawn until none do
    (truncated Gaussian).
    """
    z = rng.standard_normal((count, problem.dim)) @ problem.noise_chol.T
    if bound is not None:
        bad = np.flatnonzero(np.linalg.norm(z, axis=1) > bound)
        while bad.size:
            z[bad] = rng.standard_normal((bad.size, problem.dim)) @ problem.noise_chol.T
            bad = bad[np.linalg.norm(z[bad], axis=1) > bound]
    return z
