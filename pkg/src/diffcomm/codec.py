"""Seeded noise basis and the weight codec built on it.

A basis is n Gaussian vectors regenerated from shared 64-bit seeds, so both
endpoints hold identical vectors without ever transmitting them. A terminal
latent is encoded as its least-squares weights on that basis (closed-form
oracle and the gradient-descent solver), optionally truncated to the k
largest-magnitude entries. Reconstruction pins the accumulation order so the
decoded latent is bitwise identical on both sides.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import gaussian_stream, mix_seeds, solve_spd, symmetrize, SingularMatrixError


class DegenerateBasisError(ValueError):
    """Basis vectors are linearly dependent; the projection has no unique solution."""


class ConvergenceError(RuntimeError):
    """Iterative solver ran out of iterations; carries the last iterate."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(eq=False)
class SeedBasis:
    seeds: tuple
    dim: int
    vectors: np.ndarray  # n x dim float32, row i = gaussian_stream(seeds[i], dim)
    fingerprint: int

    @property
    def n(self):
        return len(self.seeds)

    def gram(self):
        # cached n x n Gram matrix in 64-bit, exactly symmetric
        if not hasattr(self, "_gram"):
            v = self.vectors.astype(np.float64)
            self._gram = symmetrize(v @ v.T)
        return self._gram


def basis_fingerprint(dim, seeds):
    """Order-sensitive identity of a basis: FNV-1a 64 over dim then each seed."""
    return mix_seeds(dim, *seeds)


def build_basis(seeds, dim):
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be pairwise distinct")
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    if dim < len(seeds):
        warnings.warn(f"basis is overcomplete: {len(seeds)} vectors in dim {dim}",
                      stacklevel=2)
    vectors = np.stack([gaussian_stream(s, dim) for s in seeds])
    return SeedBasis(seeds, dim, vectors, basis_fingerprint(dim, seeds))


@dataclass(eq=False)
class WeightVector:
    """Sparse coefficients on a basis: (index, value) entries, indices ascending."""

    n: int
    indices: np.ndarray  # int32, strictly increasing
    values: np.ndarray   # float32

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int32)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices/values must be matching 1-d arrays")
        if len(self.indices) > 0:
            if self.indices[0] < 0 or self.indices[-1] >= self.n:
                raise ValueError(f"indices must lie in [0, {self.n})")
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be strictly increasing")

    @property
    def k(self):
        return len(self.indices)

    def dense(self):
        out = np.zeros(self.n, dtype=np.float32)
        out[self.indices] = self.values
        return out


def weights_from_dense(w, n=None):
    w = np.asarray(w, dtype=np.float32)
    n = len(w) if n is None else n
    idx = np.arange(len(w), dtype=np.int32)
    return WeightVector(n, idx, w)


def _rhs(x, basis):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != basis.dim:
        raise ValueError(f"latent dim {x.shape[0]} does not match basis dim {basis.dim}")
    return x, basis.vectors.astype(np.float64) @ x


def project_exact(x_T, basis):
    """Least-squares weights via the normal equations (Cholesky oracle)."""
    _, b = _rhs(x_T, basis)
    try:
        w = solve_spd(basis.gram(), b)
    except SingularMatrixError as exc:
        raise DegenerateBasisError("basis Gram matrix is singular") from exc
    return weights_from_dense(w)


@dataclass
class GdConfig:
    lr: float = None       # default 0.5 / lambda_max(G), estimated below
    tol: float = 1e-5      # stop when ||G w - b|| <= tol * ||b||
    max_iters: int = 5000


def _power_lambda_max(g, iters=20):
    # fixed-seed start vector keeps the estimate (and so the step size) reproducible
    v = gaussian_stream(0x715EED, g.shape[0]).astype(np.float64)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        gv = g @ v
        lam = float(np.linalg.norm(gv))
        if lam == 0.0:
            return 1.0
        v = gv / lam
    return lam


def project_gd(x_T, basis, cfg=None):
    """Least-squares weights by gradient descent on ||x - sum w_i N_i||^2.

    Starts from w = 0 (the shared initializer both endpoints agree on) and
    steps along -2 (G w - b). Matches project_exact within 1e-4 relative.
    """
    cfg = cfg or GdConfig()
    _, b = _rhs(x_T, basis)
    g = basis.gram()
    lr = cfg.lr if cfg.lr is not None else 0.5 / _power_lambda_max(g)
    w = np.zeros(basis.n, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return weights_from_dense(w)
    for _ in range(cfg.max_iters):
        resid = g @ w - b
        if float(np.linalg.norm(resid)) <= cfg.tol * bnorm:
            return weights_from_dense(w)
        w -= lr * 2.0 * resid
    resid = g @ w - b
    if float(np.linalg.norm(resid)) <= cfg.tol * bnorm:
        return weights_from_dense(w)
    raise ConvergenceError(
        f"no convergence in {cfg.max_iters} iterations", weights_from_dense(w))


def truncate_topk(w, k):
    """Keep exactly the k largest-|value| entries; ties keep the lower index."""
    if not 1 <= k <= w.n:
        raise ValueError(f"k must lie in [1, {w.n}], got {k}")
    if k >= w.k:
        return WeightVector(w.n, w.indices.copy(), w.values.copy())
    order = sorted(range(w.k), key=lambda i: (-abs(float(w.values[i])), int(w.indices[i])))
    keep = sorted(order[:k])
    return WeightVector(w.n, w.indices[keep], w.values[keep])


def reconstruct(w, basis):
    """Latent from weights: sum of w_i * N_i over entries in ascending index order.

    Accumulates in 64-bit, one term at a time, and rounds once to 32-bit, so
    any two endpoints holding the same (weights, seeds, dim) produce bitwise
    identical bytes.
    """
    if w.n != basis.n:
        raise ValueError(f"weight count {w.n} does not match basis size {basis.n}")
    acc = np.zeros(basis.dim, dtype=np.float64)
    for idx, val in zip(w.indices, w.values):
        acc += np.float64(val) * basis.vectors[int(idx)].astype(np.float64)
    return acc.astype(np.float32)
