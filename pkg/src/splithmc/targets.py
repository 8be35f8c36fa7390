"""Concrete targets: diagonal Gaussians and the log-Gaussian Cox posterior on a grid."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.linalg.lapack import dpotri

from splithmc.core import TargetModel
from splithmc.rng import stream


class DiagonalGaussianTarget(TargetModel):
    """Centred Gaussian with independent components of standard deviations ``sigmas``."""

    def __init__(self, sigmas):
        sigmas = np.array(sigmas, dtype=float).reshape(-1)
        if sigmas.size < 1 or not np.all(sigmas > 0) or not np.all(np.isfinite(sigmas)):
            raise ValueError("sigmas must be a non-empty vector of positive reals")
        sigmas.setflags(write=False)
        self.sigmas = sigmas
        self.precision = 1.0 / sigmas**2
        self.dim = sigmas.size

    @classmethod
    def harmonic(cls, d: int) -> DiagonalGaussianTarget:
        """The test target with sigma_j = 1/j, i.e. pi(theta) ~ exp(-0.5 sum j^2 theta_j^2)."""
        return cls(1.0 / np.arange(1, d + 1))

    def log_density(self, theta):
        theta = np.asarray(theta, dtype=float)
        return -0.5 * np.sum(theta * theta * self.precision, axis=-1)

    def grad_log_density(self, theta):
        return -np.asarray(theta, dtype=float) * self.precision

    def log_density_and_grad(self, theta):
        g = self.grad_log_density(theta)
        return 0.5 * np.sum(theta * g, axis=-1), g

    def __repr__(self):
        return f"DiagonalGaussianTarget(d={self.dim})"


def standard_gaussian_1d() -> DiagonalGaussianTarget:
    return DiagonalGaussianTarget([1.0])


def gaussian_exact_draw(target: DiagonalGaussianTarget, rng: np.random.Generator, size=None):
    """Exact draws theta_j = sigma_j z_j; ``size`` prepends batch dimensions."""
    shape = (target.dim,) if size is None else tuple(np.atleast_1d(size)) + (target.dim,)
    return target.sigmas * rng.standard_normal(shape)


# --- log-Gaussian Cox process -------------------------------------------------------


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CoxModelParams:
    grid_n: int = 64
    beta: float = 1.0 / 33.0
    sigma2: float = 1.91
    mu: float = math.log(126.0) - 1.91 / 2.0
    m: float = 1.0 / 4096.0

    @classmethod
    def for_grid(cls, grid_n: int, **kw) -> CoxModelParams:
        """Parameters on an ``grid_n x grid_n`` grid of the unit square (cell area 1/grid_n^2)."""
        sigma2 = kw.pop("sigma2", 1.91)
        return cls(grid_n=grid_n, sigma2=sigma2, mu=kw.pop("mu", math.log(126.0) - sigma2 / 2.0),
                   m=1.0 / grid_n**2, **kw)

    @property
    def dim(self) -> int:
        return self.grid_n**2

    def digest(self) -> str:
        key = ";".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def cox_kernel_matrix(params: CoxModelParams) -> np.ndarray:
    n = params.grid_n
    i, j = np.divmod(np.arange(n * n), n)
    di = i[:, None] - i[None, :]
    dj = j[:, None] - j[None, :]
    dist = np.sqrt((di * di + dj * dj).astype(float))
    del di, dj
    dist *= -1.0 / (n * params.beta)
    np.exp(dist, out=dist)
    dist *= params.sigma2
    return dist


def build_cox_covariance(params: CoxModelParams):
    """Dense covariance of the latent log-intensity field and its lower Cholesky factor."""
    sigma = cox_kernel_matrix(params)
    try:
        chol = cholesky(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(f"covariance is not positive definite: {exc}") from exc
    return sigma, chol


_CACHE_MAGIC = b"SPLITHMC-CHOL 1"


def save_cholesky(path, chol: np.ndarray, params: CoxModelParams):
    """Write the packed lower triangle (row-major, float64 little-endian) after a text header."""
    d = chol.shape[0]
    header = _CACHE_MAGIC + f" d={d} hash={params.digest()}\n".encode()
    rows, cols = np.tril_indices(d)
    with open(path, "wb") as fh:
        fh.write(header)
        chol[rows, cols].astype("<f8").tofile(fh)


def load_cholesky(path, params: CoxModelParams) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline()
        if not header.startswith(_CACHE_MAGIC):
            raise ValueError(f"{path} is not a Cholesky cache file")
        fields = dict(f.split("=") for f in header[len(_CACHE_MAGIC):].decode().split())
        d = int(fields["d"])
        if fields["hash"] != params.digest() or d != params.dim:
            raise ValueError(f"{path} was built for different parameters")
        packed = np.fromfile(fh, dtype="<f8", count=d * (d + 1) // 2)
    chol = np.zeros((d, d))
    chol[np.tril_indices(d)] = packed
    return chol


def cached_cholesky(params: CoxModelParams, cache_dir=None) -> np.ndarray:
    """Cholesky factor of the Cox covariance, read from / written to ``cache_dir`` if given."""
    if cache_dir is not None:
        path = Path(cache_dir) / f"cox_chol_{params.grid_n}_{params.digest()}.bin"
        if path.exists():
            return load_cholesky(path, params)
    _, chol = build_cox_covariance(params)
    if cache_dir is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_cholesky(path, chol, params)
    return chol


class CoxTarget(TargetModel):
    """Posterior of the latent field y given grid counts x.

    log pi(y) = sum(x y - m exp(y)) - 0.5 (y - mu)^T Sigma^{-1} (y - mu), up to a constant.
    The precision matrix is formed once so that a gradient costs one dense mat-vec
    (or mat-mat for a batch of positions).
    """

    def __init__(self, params: CoxModelParams, x, chol: np.ndarray | None = None, cache_dir=None):
        x = np.asarray(x)
        if x.shape != (params.dim,) or np.any(x < 0):
            raise ValueError(f"counts must be a non-negative vector of length {params.dim}")
        self.params = params
        self.x = x.astype(float)
        self.dim = params.dim
        self.chol = cached_cholesky(params, cache_dir) if chol is None else chol
        inv, info = dpotri(self.chol, lower=1)
        if info != 0:
            raise CholeskyError(f"dpotri failed with info={info}")
        inv = np.tril(inv)
        self.precision = inv + np.tril(inv, -1).T

    def solve_cov(self, v):
        """Sigma^{-1} v by two triangular solves with the Cholesky factor."""
        w = solve_triangular(self.chol, v, lower=True, check_finite=False)
        return solve_triangular(self.chol, w, lower=True, trans="T", check_finite=False)

    def _parts(self, y):
        y = np.asarray(y, dtype=float)
        r = y - self.params.mu
        qr = r @ self.precision
        intensity = self.params.m * np.exp(y)
        return y, r, qr, intensity

    def log_density(self, y):
        y, r, qr, lam = self._parts(y)
        return np.sum(self.x * y - lam, axis=-1) - 0.5 * np.sum(r * qr, axis=-1)

    def grad_log_density(self, y):
        _, _, qr, lam = self._parts(y)
        return self.x - lam - qr

    def log_density_and_grad(self, y):
        y, r, qr, lam = self._parts(y)
        logp = np.sum(self.x * y - lam, axis=-1) - 0.5 * np.sum(r * qr, axis=-1)
        return logp, self.x - lam - qr

    def __repr__(self):
        return f"CoxTarget(grid_n={self.params.grid_n}, counts={int(self.x.sum())})"


def generate_cox_data(params: CoxModelParams, seed: int, chol: np.ndarray | None = None) -> np.ndarray:
    """Counts from the model's own prior: y ~ N(mu 1, Sigma), x_ij ~ Poisson(m exp(y_ij))."""
    if chol is None:
        _, chol = build_cox_covariance(params)
    rng = stream(seed, "data")
    y = params.mu + chol @ rng.standard_normal(params.dim)
    return rng.poisson(params.m * np.exp(y)).astype(np.int64)


def write_cox_dataset(path, x, params: CoxModelParams, seed: int):
    n = params.grid_n
    lines = [
        "# splithmc log-Gaussian Cox dataset",
        f"# grid_n={n} beta={params.beta!r} sigma2={params.sigma2!r} mu={params.mu!r} m={params.m!r} seed={seed}",
    ]
    grid = np.asarray(x).reshape(n, n)
    lines += [" ".join(str(int(v)) for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_cox_dataset(path):
    """Returns ``(x, params, seed)``."""
    meta, values = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            values.extend(int(v) for v in line.split())
    params = CoxModelParams(grid_n=int(meta["grid_n"]), beta=float(meta["beta"]),
                            sigma2=float(meta["sigma2"]), mu=float(meta["mu"]), m=float(meta["m"]))
    x = np.array(values, dtype=np.int64)
    if x.size != params.dim:
        raise ValueError(f"{path}: expected {params.dim} counts, found {x.size}")
    return x, params, int(meta.get("seed", -1))


class FixedPointResult(NamedTuple):
    y: np.ndarray
    iterations: int
    residual: float


def _conditional_factor_apply(target: CoxTarget, y, gamma, variant):
    """L(y) gamma with L(y) the lower Cholesky factor of (Sigma^{-1} + diag(lambda(y)))^{-1}."""
    if variant == "curvature":
        lam = target.params.m * np.exp(y)
    elif variant == "literal":
        lam = np.asarray(y, dtype=float)
    else:
        raise ValueError(f"unknown fixed-point variant {variant!r}")
    # With J the reversal permutation, J P J = R R^T gives P = U U^T for U = J R J upper
    # triangular, so U^{-T} is the lower Cholesky factor of P^{-1}.
    flipped = target.precision[::-1, ::-1] + np.diag(lam[::-1])
    try:
        r = cholesky(flipped, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(f"Sigma^-1 + diag(lambda) not positive definite ({variant})") from exc
    return solve_triangular(r, gamma[::-1], lower=True, trans="T", check_finite=False)[::-1]


def cox_fixed_point(target: CoxTarget, gamma, variant: str = "curvature", tol: float = 1e-12,
                    max_iter: int = 200) -> FixedPointResult:
    """Solve y = mu 1 + L(y) gamma by fixed-point iteration from y = mu 1."""
    mu = target.params.mu
    y = np.full(target.dim, mu)
    for it in range(1, max_iter + 1):
        y_new = mu + _conditional_factor_apply(target, y, gamma, variant)
        residual = float(np.linalg.norm(y_new - y))
        y = y_new
        if residual < tol:
            return FixedPointResult(y, it, residual)
    raise RuntimeError(f"fixed-point iteration did not converge in {max_iter} iterations "
                       f"(last step {residual:.3e})")


def cox_initial_state(target: CoxTarget, seed: int, variant: str = "curvature") -> np.ndarray:
    gamma = stream(seed, "init").standard_normal(target.dim)
    return cox_fixed_point(target, gamma, variant).y
