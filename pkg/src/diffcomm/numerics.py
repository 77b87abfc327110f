"""Deterministic pseudo-random generation and small dense linear algebra.

Everything here is a pure function of its inputs. The RNG side (SplitMix64 +
Box-Muller) is pinned bit-for-bit so that two endpoints holding the same seed
regenerate identical 32-bit noise vectors; the linear-algebra side backs the
projection solver and the Frechet metric.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class SingularMatrixError(ValueError):
    """Cholesky hit a non-positive pivot: the matrix is not positive definite."""


class NotPsdError(ValueError):
    """Matrix has an eigenvalue below the PSD clamp threshold."""


def splitmix64_next(state):
    """Advance a SplitMix64 counter state by one draw.

    Returns (value, next_state); both are unsigned 64-bit integers.
    """
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)), state


def splitmix64_bulk(seed, count):
    """First `count` SplitMix64 outputs for `seed`, as a uint64 array.

    SplitMix64 is counter-based, so the whole sequence vectorizes: output i
    is the finalizer applied to seed + (i+1)*golden mod 2**64.
    """
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + np.uint64(_GOLDEN) * idx
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def gaussian_stream(seed, count):
    """Deterministic standard-normal vector: `count` float32 values for `seed`.

    Raw 64-bit draws come from SplitMix64 in pairs; each raw value maps to
    u = ((raw >> 11) + 1) * 2**-53 in (0, 1], and Box-Muller turns (u1, u2)
    into z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2),
    appended in that order. Math is 64-bit, each element rounded to nearest
    once into 32-bit. For odd counts the trailing z1 is dropped, so shorter
    streams are prefixes of longer ones.
    """
    count = int(count)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    n_raw = count + (count & 1)
    raw = splitmix64_bulk(seed, n_raw)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u1 = u[0::2]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    ang = (2.0 * np.pi) * u2
    out = np.empty(n_raw, dtype=np.float64)
    out[0::2] = r * np.cos(ang)
    out[1::2] = r * np.sin(ang)
    return out[:count].astype(np.float32)


def fnv1a64(data):
    """FNV-1a 64-bit hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def mix_seeds(*values):
    """Fold unsigned 64-bit values into one derived seed (FNV-1a over LE bytes)."""
    buf = b"".join(int(v & _MASK64).to_bytes(8, "little") for v in values)
    return fnv1a64(buf)


def _require_symmetric(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not exactly symmetric")
    return a


def symmetrize(m):
    """(M + M^T) / 2, exactly symmetric under IEEE arithmetic."""
    m = np.asarray(m, dtype=np.float64)
    return (m + m.T) / 2.0


def solve_spd(g, b):
    """Solve G w = b for symmetric positive definite G via Cholesky.

    64-bit throughout; residual ||Gw - b|| stays below 1e-9 ||b|| for
    condition numbers up to ~1e6.
    """
    g = _require_symmetric(g)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (g.shape[0],):
        raise ValueError(f"rhs shape {b.shape} does not match matrix dim {g.shape[0]}")
    try:
        low = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    y = solve_triangular(low, b, lower=True)
    return solve_triangular(low.T, y, lower=False)


def symmetric_eig(a):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the largest off-diagonal magnitude drops below
    1e-12 * ||A||_F (or 100 sweeps). Returns (values, vectors) with values
    ascending and vectors in matching columns, so V diag(values) V^T == A
    up to round-off.
    """
    a = _require_symmetric(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    thresh = 1e-12 * norm
    for _ in range(100):
        off = np.abs(a - np.diag(np.diag(a)))
        if off.max(initial=0.0) <= thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    values = np.diag(a).copy()
    order = np.argsort(values)
    return values[order], v[:, order]


def sqrtm_psd(a):
    """Symmetric square root of a PSD matrix: S with S @ S ~= A.

    Eigenvalues slightly below zero (>= -1e-10 * ||A||_F) are clamped to 0;
    anything lower raises NotPsdError.
    """
    a = _require_symmetric(a)
    values, vectors = symmetric_eig(a)
    norm = float(np.linalg.norm(a))
    if np.any(values < -1e-10 * norm):
        raise NotPsdError(f"eigenvalue {values.min():.3e} below PSD clamp threshold")
    roots = np.sqrt(np.clip(values, 0.0, None))
    return symmetrize((vectors * roots) @ vectors.T)
