"""Binary container for matrices: JSON header plus contiguous f64le payload.

Layout: magic b"GSM1", little-endian uint32 header length, UTF-8 JSON header,
payload. The header carries format/kind/shape plus kind-specific metadata;
permutations store sigma in the header and have no payload. Round trips are
bit-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .blockdiag import BlockDiagonal
from .chain import GSChain
from .gs import GSClassSpec, GSMatrix
from .perm import Permutation

__all__ = ["ContainerError", "save_container", "load_container"]

_MAGIC = b"GSM1"


class ContainerError(Exception):
    """Malformed or inconsistent container file."""


def _payload(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def _encode(obj):
    if isinstance(obj, np.ndarray):
        if obj.ndim != 2:
            raise ContainerError("dense payload must be a matrix")
        header = {"kind": "dense", "shape": list(obj.shape)}
        return header, _payload([obj])
    if isinstance(obj, Permutation):
        return {"kind": "permutation", "shape": [obj.n, obj.n], "sigma": obj.sigma.tolist()}, b""
    if isinstance(obj, BlockDiagonal):
        header = {
            "kind": "blockdiag",
            "shape": [obj.rows, obj.cols],
            "block_shapes": [list(b.shape) for b in obj.blocks],
        }
        return header, _payload(obj.blocks)
    if isinstance(obj, GSMatrix):
        header = {
            "kind": "gs",
            "shape": [obj.spec.m, obj.spec.n],
            "spec": json.loads(obj.spec.to_json()),
        }
        return header, _payload(list(obj.L.blocks) + list(obj.R.blocks))
    if isinstance(obj, GSChain):
        header = {
            "kind": "chain",
            "shape": [obj.out_dim, obj.in_dim],
            "factors": [
                {
                    "block_shapes": [list(blk.shape) for blk in b.blocks],
                    "perm": p.sigma.tolist(),
                }
                for b, p in obj.factors
            ],
            "p_out": obj.p_out.sigma.tolist(),
        }
        return header, _payload([blk for b, _ in obj.factors for blk in b.blocks])
    raise ContainerError(f"unsupported object type: {type(obj).__name__}")


def save_container(obj, path: str) -> None:
    header, payload = _encode(obj)
    header = {"format": "GSM1", **header, "dtype": "f64le", "layout": "row-major"}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(payload)


def _take(buf: memoryview, offset: int, shape) -> tuple:
    count = int(np.prod(shape))
    end = offset + 8 * count
    if end > len(buf):
        raise ContainerError("payload truncated")
    arr = np.frombuffer(buf[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
    return arr, end


def load_container(path: str):
    """Load and reconstruct the stored object; raise ContainerError when malformed."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ContainerError(f"cannot read container: {exc}") from exc
    if data[:4] != _MAGIC:
        raise ContainerError("bad magic: not a GSM1 container")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ContainerError(f"malformed header JSON: {exc}") from exc
    if header.get("format") != "GSM1":
        raise ContainerError("malformed header: bad 'format' field")
    if header.get("dtype") != "f64le":
        raise ContainerError("malformed header: bad 'dtype' field")
    kind = header.get("kind")
    buf = memoryview(data[8 + hlen :])
    try:
        if kind == "dense":
            arr, end = _take(buf, 0, header["shape"])
            return arr
        if kind == "permutation":
            return Permutation(np.asarray(header["sigma"], dtype=np.int64))
        if kind == "blockdiag":
            blocks, off = [], 0
            for shape in header["block_shapes"]:
                b, off = _take(buf, off, shape)
                blocks.append(b)
            return BlockDiagonal(tuple(blocks))
        if kind == "gs":
            spec = GSClassSpec.from_json(json.dumps(header["spec"]))
            off = 0
            l_blocks, r_blocks = [], []
            for _ in range(spec.k_L):
                b, off = _take(buf, off, (spec.b_L1, spec.b_L2))
                l_blocks.append(b)
            for _ in range(spec.k_R):
                b, off = _take(buf, off, (spec.b_R1, spec.b_R2))
                r_blocks.append(b)
            return GSMatrix(spec, BlockDiagonal(tuple(l_blocks)), BlockDiagonal(tuple(r_blocks)))
        if kind == "chain":
            off = 0
            factors = []
            for fac in header["factors"]:
                blocks = []
                for shape in fac["block_shapes"]:
                    b, off = _take(buf, off, shape)
                    blocks.append(b)
                factors.append(
                    (BlockDiagonal(tuple(blocks)), Permutation(np.asarray(fac["perm"], dtype=np.int64)))
                )
            return GSChain(tuple(factors), Permutation(np.asarray(header["p_out"], dtype=np.int64)))
    except KeyError as exc:
        raise ContainerError(f"malformed header: missing field {exc}") from exc
    except ValueError as exc:
        raise ContainerError(f"inconsistent container contents: {exc}") from exc
    raise ContainerError(f"malformed header: unknown kind {kind!r}")
