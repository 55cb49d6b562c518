"""Group-and-shuffle matrices A = P_L (L P R) P_R.

L is block-diagonal m x s with k_L blocks of size b_L1 x b_L2, R is s x n
with k_R blocks of size b_R1 x b_R2, and P_L, P, P_R are permutations of
dimensions m, s, n. The interior permutation routes rank-one terms between
blocks, giving the block-low-rank view and the per-block SVD projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .blockdiag import BlockDiagonal
from .perm import Permutation, identity_perm, perm_cols, perm_cols_t, perm_rows, perm_rows_t, stride_perm

__all__ = [
    "GSClassSpec",
    "GSMatrix",
    "block_rank_map",
    "to_block_lowrank",
    "svd_small",
    "project",
    "gsoft_spec",
]

_SVD_SIZE_CAP = 256


@dataclass(frozen=True)
class GSClassSpec:
    """Dimensions, block counts/sizes and the three fixed permutations."""

    k_L: int
    b_L1: int
    b_L2: int
    k_R: int
    b_R1: int
    b_R2: int
    P_L: Permutation = field(repr=False)
    P: Permutation = field(repr=False)
    P_R: Permutation = field(repr=False)

    def __post_init__(self):
        if min(self.k_L, self.b_L1, self.b_L2, self.k_R, self.b_R1, self.b_R2) < 1:
            raise ValueError("block counts and sizes must be positive")
        if self.b_L2 * self.k_L != self.b_R1 * self.k_R:
            raise ValueError(
                f"inner dimensions disagree: b_L2*k_L={self.b_L2 * self.k_L} "
                f"vs b_R1*k_R={self.b_R1 * self.k_R}"
            )
        for p, dim, name in ((self.P_L, self.m, "P_L"), (self.P, self.s, "P"), (self.P_R, self.n, "P_R")):
            if p.n != dim:
                raise ValueError(f"{name} has dimension {p.n}, expected {dim}")

    @property
    def m(self) -> int:
        return self.b_L1 * self.k_L

    @property
    def n(self) -> int:
        return self.b_R2 * self.k_R

    @property
    def s(self) -> int:
        return self.b_L2 * self.k_L

    @classmethod
    def make(cls, k_L, b_L1, b_L2, k_R, b_R1, b_R2, P_L=None, P=None, P_R=None):
        """Build a spec, defaulting any missing permutation to the identity."""
        return cls(
            k_L, b_L1, b_L2, k_R, b_R1, b_R2,
            P_L if P_L is not None else identity_perm(b_L1 * k_L),
            P if P is not None else identity_perm(b_L2 * k_L),
            P_R if P_R is not None else identity_perm(b_R2 * k_R),
        )

    def to_json(self) -> str:
        doc = {
            "k_L": self.k_L, "b_L1": self.b_L1, "b_L2": self.b_L2,
            "k_R": self.k_R, "b_R1": self.b_R1, "b_R2": self.b_R2,
            "P_L": {"n": self.P_L.n, "sigma": self.P_L.sigma.tolist()},
            "P": {"n": self.P.n, "sigma": self.P.sigma.tolist()},
            "P_R": {"n": self.P_R.n, "sigma": self.P_R.sigma.tolist()},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "GSClassSpec":
        doc = json.loads(text)
        perms = {}
        for name in ("P_L", "P", "P_R"):
            perms[name] = Permutation(np.asarray(doc[name]["sigma"], dtype=np.int64))
        return cls(
            doc["k_L"], doc["b_L1"], doc["b_L2"],
            doc["k_R"], doc["b_R1"], doc["b_R2"],
            perms["P_L"], perms["P"], perms["P_R"],
        )


def gsoft_spec(d: int, b: int) -> GSClassSpec:
    """The square spec GS(P^T, P, I) with P the stride permutation P_(r, br)."""
    if d < 1 or b < 1 or d % b != 0:
        raise ValueError(f"gsoft_spec requires b | d, got d={d}, b={b}")
    r = d // b
    p = stride_perm(r, d)
    return GSClassSpec(r, b, b, r, b, b, p.invert(), p, identity_perm(d))


@dataclass(frozen=True)
class GSMatrix:
    """A concrete member of a GS class: the spec plus its L and R factors."""

    spec: GSClassSpec
    L: BlockDiagonal = field(repr=False)
    R: BlockDiagonal = field(repr=False)

    def __post_init__(self):
        sp = self.spec
        if len(self.L.blocks) != sp.k_L or any(
            b.shape != (sp.b_L1, sp.b_L2) for b in self.L.blocks
        ):
            raise ValueError(f"L must have {sp.k_L} blocks of shape ({sp.b_L1}, {sp.b_L2})")
        if len(self.R.blocks) != sp.k_R or any(
            b.shape != (sp.b_R1, sp.b_R2) for b in self.R.blocks
        ):
            raise ValueError(f"R must have {sp.k_R} blocks of shape ({sp.b_R1}, {sp.b_R2})")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A x at blockwise cost; x may carry extra trailing axes."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.spec.n:
            raise ValueError(f"length mismatch: expected {self.spec.n}, got {x.shape[0]}")
        t = self.spec.P_R.apply(x)
        t = self.R.apply(t)
        t = self.spec.P.apply(t)
        t = self.L.apply(t)
        return self.spec.P_L.apply(t)

    def apply_t(self, x: np.ndarray) -> np.ndarray:
        """A^T x."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.spec.m:
            raise ValueError(f"length mismatch: expected {self.spec.m}, got {x.shape[0]}")
        t = self.spec.P_L.apply_inverse(x)
        t = self.L.apply_t(t)
        t = self.spec.P.apply_inverse(t)
        t = self.R.apply_t(t)
        return self.spec.P_R.apply_inverse(t)

    def as_dense(self) -> np.ndarray:
        core = self.L.as_dense() @ perm_rows(self.spec.P, self.R.as_dense())
        return perm_cols(self.spec.P_R, perm_rows(self.spec.P_L, core))


def _routing(spec: GSClassSpec) -> dict:
    """Map (k1, k2) -> sorted list of interior indices i routed into that block.

    Index i is a row of R (block k2 = i // b_R1); sigma(i) is a column of L
    (block k1 = sigma(i) // b_L2).
    """
    routed: dict = {}
    sigma = spec.P.sigma
    for i in range(spec.s):
        key = (int(sigma[i]) // spec.b_L2, i // spec.b_R1)
        routed.setdefault(key, []).append(i)
    return routed


def block_rank_map(spec: GSClassSpec) -> np.ndarray:
    """k_L x k_R integer matrix of rank-one term counts routed by P."""
    ranks = np.zeros((spec.k_L, spec.k_R), dtype=np.int64)
    for (k1, k2), idx in _routing(spec).items():
        ranks[k1, k2] = len(idx)
    return ranks


def to_block_lowrank(a: GSMatrix) -> list:
    """Factor pairs (k1, k2, U, V) with block (k1, k2) of L P R equal to U @ V.T.

    Requires identity outer permutations; conjugate P_L, P_R away first.
    """
    sp = a.spec
    if not (sp.P_L.is_identity() and sp.P_R.is_identity()):
        raise ValueError(
            "to_block_lowrank requires identity outer permutations; "
            "strip P_L and P_R by conjugation first"
        )
    sigma = sp.P.sigma
    out = []
    for (k1, k2), idx in sorted(_routing(sp).items()):
        u_cols = [a.L.blocks[k1][:, int(sigma[i]) % sp.b_L2] for i in idx]
        v_cols = [a.R.blocks[k2][i % sp.b_R1, :] for i in idx]
        out.append((k1, k2, np.column_stack(u_cols), np.column_stack(v_cols)))
    return out


def svd_small(m: np.ndarray):
    """Deterministic full SVD M = U diag(s) V^T for small dense matrices.

    Sign convention: the first nonzero entry of each left singular vector is
    nonnegative, so repeated runs and golden tests agree.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("svd_small expects a matrix")
    if max(m.shape) > _SVD_SIZE_CAP:
        raise ValueError(f"svd_small size cap {_SVD_SIZE_CAP} exceeded: {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd_small: input contains NaN/Inf")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    v = vt.T
    for j in range(s.size):
        col = u[:, j]
        nz = np.nonzero(np.abs(col) > 1e-14)[0]
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return u, s, v


def project(a: np.ndarray, spec: GSClassSpec) -> GSMatrix:
    """Frobenius-nearest member of the class, by per-block truncated SVD.

    Each block of P_L^T A P_R^T is truncated to the rank the interior
    permutation routes into it; the split factors U_r sqrt(S) and sqrt(S) V_r^T
    are packed back into L and R along the routed positions.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (spec.m, spec.n):
        raise ValueError(f"shape mismatch: expected {(spec.m, spec.n)}, got {a.shape}")
    core = perm_cols_t(spec.P_R, perm_rows_t(spec.P_L, a))
    l_blocks = [np.zeros((spec.b_L1, spec.b_L2)) for _ in range(spec.k_L)]
    r_blocks = [np.zeros((spec.b_R1, spec.b_R2)) for _ in range(spec.k_R)]
    sigma = spec.P.sigma
    for (k1, k2), idx in _routing(spec).items():
        block = core[
            k1 * spec.b_L1 : (k1 + 1) * spec.b_L1,
            k2 * spec.b_R2 : (k2 + 1) * spec.b_R2,
        ]
        u, s, v = svd_small(block)
        for j, i in enumerate(idx):
            # Past the available spectrum the factors stay zero.
            if j < s.size:
                root = np.sqrt(s[j])
                l_blocks[k1][:, int(sigma[i]) % spec.b_L2] = root * u[:, j]
                r_blocks[k2][i % spec.b_R1, :] = root * v[:, j]
    return GSMatrix(spec, BlockDiagonal(tuple(l_blocks)), BlockDiagonal(tuple(r_blocks)))
