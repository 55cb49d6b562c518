"""Orthogonal fine-tuning adapters over frozen weights, plus a small trainer.

An adapter owns a frozen base weight W0 and a structured orthogonal Q built
from Cayley-parametrized blocks; the forward pass is scale * (Q W0)^T x and
Q stays orthogonal at every parameter value by construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .blockdiag import SkewGenerators, cayley_blockdiag, cayley_vjp, pack_skew_triu, unpack_skew_triu
from .gs import GSClassSpec, gsoft_spec
from .ortho import OrthoGSParams, is_orthogonal, materialize, materialize_vjp

__all__ = [
    "GSOFTAdapter",
    "DoubleGSOFTAdapter",
    "fit_orthogonal_target",
    "fit_blockdiag_target",
    "save_adapter",
    "load_adapter",
]


@dataclass(frozen=True)
class GSOFTAdapter:
    """Frozen W0 (d x n) with a learnable structured orthogonal Q (d x d)."""

    W0: np.ndarray = field(repr=False)
    q: OrthoGSParams
    scale: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.W0, dtype=np.float64)
        object.__setattr__(self, "W0", w)
        if w.ndim != 2 or w.shape[0] != self.q.spec.m:
            raise ValueError(
                f"W0 rows ({w.shape[0]}) must match the adapter dimension {self.q.spec.m}"
            )
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def init(cls, w0: np.ndarray, b: int) -> "GSOFTAdapter":
        """Identity-initialized adapter: zero generators, scale 1."""
        w0 = np.asarray(w0, dtype=np.float64)
        return cls(w0, OrthoGSParams.zeros(gsoft_spec(w0.shape[0], b)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """scale * W0^T (Q^T x), with Q applied through the structure."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.W0.shape[0]:
            raise ValueError(f"length mismatch: expected {self.W0.shape[0]}, got {x.shape[0]}")
        return self.scale * (self.W0.T @ materialize(self.q).apply_t(x))

    def merge(self) -> np.ndarray:
        """Dense merged weight scale * Q @ W0; forward equals merged^T x."""
        return self.scale * (materialize(self.q).as_dense() @ self.W0)

    def backward(self, x: np.ndarray, grad_out: np.ndarray):
        """Gradients of <grad_out, forward(x)> w.r.t. generators and scale."""
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(grad_out, dtype=np.float64)
        if x.shape[0] != self.W0.shape[0] or g.shape[0] != self.W0.shape[1]:
            raise ValueError("shape mismatch in backward")
        grad_q = self.scale * np.outer(x, self.W0 @ g)
        grads_l, grads_r = materialize_vjp(self.q, grad_q)
        grad_scale = float(g @ self.forward(x)) / self.scale
        return {"gen_L": grads_l, "gen_R": grads_r, "scale": grad_scale}


@dataclass(frozen=True)
class DoubleGSOFTAdapter:
    """Two-sided variant: forward is scale * (Q_U W0 Q_V)^T x."""

    W0: np.ndarray = field(repr=False)
    q_U: OrthoGSParams
    q_V: OrthoGSParams
    scale: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.W0, dtype=np.float64)
        object.__setattr__(self, "W0", w)
        if w.shape != (self.q_U.spec.m, self.q_V.spec.m):
            raise ValueError(
                f"W0 shape {w.shape} must match ({self.q_U.spec.m}, {self.q_V.spec.m})"
            )
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def init(cls, w0: np.ndarray, b_u: int, b_v: int) -> "DoubleGSOFTAdapter":
        w0 = np.asarray(w0, dtype=np.float64)
        return cls(
            w0,
            OrthoGSParams.zeros(gsoft_spec(w0.shape[0], b_u)),
            OrthoGSParams.zeros(gsoft_spec(w0.shape[1], b_v)),
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.W0.shape[0]:
            raise ValueError(f"length mismatch: expected {self.W0.shape[0]}, got {x.shape[0]}")
        t = materialize(self.q_U).apply_t(x)
        return self.scale * materialize(self.q_V).apply_t(self.W0.T @ t)

    def merge(self) -> np.ndarray:
        qu = materialize(self.q_U).as_dense()
        qv = materialize(self.q_V).as_dense()
        return self.scale * (qu @ self.W0 @ qv)

    def backward(self, x: np.ndarray, grad_out: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(grad_out, dtype=np.float64)
        if x.shape[0] != self.W0.shape[0] or g.shape[0] != self.W0.shape[1]:
            raise ValueError("shape mismatch in backward")
        qu = materialize(self.q_U)
        qv = materialize(self.q_V)
        grad_qu = self.scale * np.outer(x, self.W0 @ qv.apply(g))
        grad_qv = self.scale * np.outer(self.W0.T @ qu.apply_t(x), g)
        gu = materialize_vjp(self.q_U, grad_qu)
        gv = materialize_vjp(self.q_V, grad_qv)
        grad_scale = float(g @ self.forward(x)) / self.scale
        return {
            "q_U": {"gen_L": gu[0], "gen_R": gu[1]},
            "q_V": {"gen_L": gv[0], "gen_R": gv[1]},
            "scale": grad_scale,
        }


def _update_gens(g: SkewGenerators, grads, lr: float) -> SkewGenerators:
    return SkewGenerators(tuple(a - lr * d for a, d in zip(g.gens, grads)))


def fit_orthogonal_target(spec: GSClassSpec, target: np.ndarray, steps: int, lr: float):
    """Gradient descent on ||Q(theta) - target||_F^2 from identity init.

    Returns (params, losses, residuals); Q is orthogonal at every step by
    construction, and the per-step orthogonality residuals are recorded.
    Raises on divergence.
    """
    target = np.asarray(target, dtype=np.float64)
    ok, residual = is_orthogonal(target, 1e-8)
    if not ok:
        raise ValueError(f"target is not orthogonal: ||T^T T - I||_F = {residual:.3e}")
    params = OrthoGSParams.zeros(spec)
    losses, residuals = [], []
    for _ in range(steps):
        q = materialize(params).as_dense()
        diff = q - target
        loss = float(np.sum(diff * diff))
        if not np.isfinite(loss):
            raise RuntimeError("training diverged (loss is not finite); try a smaller lr")
        losses.append(loss)
        residuals.append(is_orthogonal(q, np.inf)[1])
        grads_l, grads_r = materialize_vjp(params, 2.0 * diff)
        params = replace(
            params,
            gen_L=_update_gens(params.gen_L, grads_l, lr),
            gen_R=_update_gens(params.gen_R, grads_r, lr),
        )
    return params, losses, residuals


def fit_blockdiag_target(d: int, b: int, target: np.ndarray, steps: int, lr: float):
    """Ablation arm: a single Cayley block-diagonal factor, no shuffling.

    Same loss and optimizer as fit_orthogonal_target, for like-for-like
    comparison at a matched parameter count.
    """
    if d % b != 0:
        raise ValueError(f"block size {b} must divide dimension {d}")
    target = np.asarray(target, dtype=np.float64)
    r = d // b
    gens = SkewGenerators.zeros([b] * r)
    losses = []
    for _ in range(steps):
        q = cayley_blockdiag(gens).as_dense()
        diff = q - target
        loss = float(np.sum(diff * diff))
        if not np.isfinite(loss):
            raise RuntimeError("training diverged (loss is not finite); try a smaller lr")
        losses.append(loss)
        grads = [
            cayley_vjp(gens.gens[i], 2.0 * diff[i * b : (i + 1) * b, i * b : (i + 1) * b])
            for i in range(r)
        ]
        gens = _update_gens(gens, grads, lr)
    return gens, losses


def _w0_hash(w0: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(w0, dtype=np.float64).tobytes()).hexdigest()


def save_adapter(a: GSOFTAdapter, path: str) -> None:
    """Checkpoint: W0 hash, spec JSON, strict-upper-triangle generators, scale."""
    doc = {
        "format": "GSOFT1",
        "w0_sha256": _w0_hash(a.W0),
        "spec": json.loads(a.q.spec.to_json()),
        "gen_L_triu": pack_skew_triu(a.q.gen_L),
        "gen_R_triu": pack_skew_triu(a.q.gen_R),
        "scale": a.scale,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_adapter(path: str, w0: np.ndarray) -> GSOFTAdapter:
    """Restore a checkpoint, verifying W0 against the stored hash."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "GSOFT1":
        raise ValueError("not a GSOFT checkpoint (bad format field)")
    w0 = np.asarray(w0, dtype=np.float64)
    if _w0_hash(w0) != doc["w0_sha256"]:
        raise ValueError("base weight does not match the checkpointed W0 hash")
    spec = GSClassSpec.from_json(json.dumps(doc["spec"]))
    gen_l = unpack_skew_triu(doc["gen_L_triu"], [spec.b_L1] * spec.k_L)
    gen_r = unpack_skew_triu(doc["gen_R_triu"], [spec.b_R1] * spec.k_R)
    return GSOFTAdapter(w0, OrthoGSParams(spec, gen_l, gen_r), doc["scale"])
