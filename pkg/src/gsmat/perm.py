"""Permutations stored as index arrays with O(n) application.

The convention throughout: ``sigma[i]`` is the destination index of source
``i``, so the dense matrix has a 1 at ``(sigma[i], i)`` and ``(P x)[sigma[i]]
= x[i]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Permutation",
    "identity_perm",
    "stride_perm",
    "paired_stride_perm",
    "perm_rows",
    "perm_rows_t",
    "perm_cols",
    "perm_cols_t",
]


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0, ..., n-1}, immutable after construction."""

    sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.int64)
        object.__setattr__(self, "sigma", sigma)
        if sigma.ndim != 1 or not np.array_equal(np.sort(sigma), np.arange(sigma.size)):
            raise ValueError("sigma is not a bijection on {0..n-1}")

    @property
    def n(self) -> int:
        return self.sigma.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Return P x, scattering entry i to position sigma[i]."""
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"length mismatch: expected {self.n}, got {x.shape[0]}")
        y = np.empty_like(x)
        y[self.sigma] = x
        return y

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        """Return P^T x (gather)."""
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"length mismatch: expected {self.n}, got {x.shape[0]}")
        return x[self.sigma]

    def invert(self) -> "Permutation":
        return Permutation(np.argsort(self.sigma))

    def compose(self, other: "Permutation") -> "Permutation":
        """Return the permutation p with p.apply(x) == self.apply(other.apply(x))."""
        if self.n != other.n:
            raise ValueError(f"dimension mismatch in compose: {self.n} vs {other.n}")
        return Permutation(self.sigma[other.sigma])

    def as_dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        m[self.sigma, np.arange(self.n)] = 1.0
        return m

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.sigma, np.arange(self.n)))

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "sigma": self.sigma.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Permutation":
        doc = json.loads(text)
        p = cls(np.asarray(doc["sigma"], dtype=np.int64))
        if p.n != doc["n"]:
            raise ValueError("permutation JSON: n does not match sigma length")
        return p


def identity_perm(n: int) -> Permutation:
    return Permutation(np.arange(n))


def stride_perm(k: int, n: int) -> Permutation:
    """The reshape-transpose-flatten permutation sigma(i) = (i mod k)*(n/k) + i//k."""
    if k < 1 or n < 1 or n % k != 0:
        raise ValueError(f"stride_perm requires k | n with k >= 1, got k={k}, n={n}")
    i = np.arange(n)
    return Permutation((i % k) * (n // k) + i // k)


def paired_stride_perm(k: int, n: int) -> Permutation:
    """Stride permutation acting on adjacent channel pairs.

    sigma(i) = (floor(i/2) mod k) * n/k + 2*floor(i/(2k)) + (i mod 2);
    pair (2t, 2t+1) always lands on an adjacent even-odd pair.
    """
    if k < 1 or n < 1 or n % (2 * k) != 0:
        raise ValueError(f"paired_stride_perm requires 2k | n, got k={k}, n={n}")
    i = np.arange(n)
    return Permutation((i // 2 % k) * (n // k) + 2 * (i // (2 * k)) + i % 2)


def perm_rows(p: Permutation, m: np.ndarray) -> np.ndarray:
    """P @ M."""
    return p.apply(m)


def perm_rows_t(p: Permutation, m: np.ndarray) -> np.ndarray:
    """P^T @ M."""
    return p.apply_inverse(m)


def perm_cols(p: Permutation, m: np.ndarray) -> np.ndarray:
    """M @ P."""
    if m.shape[1] != p.n:
        raise ValueError(f"column count mismatch: expected {p.n}, got {m.shape[1]}")
    return m[:, p.sigma]


def perm_cols_t(p: Permutation, m: np.ndarray) -> np.ndarray:
    """M @ P^T."""
    if m.shape[1] != p.n:
        raise ValueError(f"column count mismatch: expected {p.n}, got {m.shape[1]}")
    out = np.empty_like(m)
    out[:, p.sigma] = m
    return out
