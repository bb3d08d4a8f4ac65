"""Bit-exact persistence for cubes and model checkpoints.

Cube files ("HSIC"): a 24-byte header (magic, version, H, W, B, scalar
width) followed by the raw band-major little-endian payload. Checkpoints
("HSCK"): a JSON header describing the model config and every tensor,
followed by the concatenated float64 payloads and a trailing sha256 over
header plus payloads. All writes go to a temp file in the target directory
and are renamed into place, so readers never observe partial files.
"""

import dataclasses
import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from . import attention, detail
from .errors import (
    BadMagicError,
    ChecksumError,
    CubeFormatError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .model import ModelConfig, ModelParams

CUBE_MAGIC = b"HSIC"
CKPT_MAGIC = b"HSCK"
CUBE_VERSION = 1
CKPT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, H, W, B, scalar width


def _atomic_write(path, writer):
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_cube(path, x, width=8):
    """Write a (bands, height, width) cube; width selects float32/float64."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a (bands, height, width) cube, got {x.shape}")
    if width not in (4, 8):
        raise ValueError(f"scalar width must be 4 or 8, got {width}")
    b, h, w = x.shape
    payload = np.ascontiguousarray(
        x, dtype="<f4" if width == 4 else "<f8"
    ).tobytes()

    def writer(fh):
        fh.write(_HEADER.pack(CUBE_MAGIC, CUBE_VERSION, h, w, b, width))
        fh.write(payload)

    _atomic_write(path, writer)


def load_cube(path):
    """Read a cube file back as a float64 (bands, height, width) array."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncatedPayloadError(f"{path}: header cut short at {len(head)} bytes")
        magic, version, h, w, b, width = _HEADER.unpack(head)
        if magic != CUBE_MAGIC:
            raise BadMagicError(f"{path}: magic {magic!r} is not {CUBE_MAGIC!r}")
        if version != CUBE_VERSION:
            raise UnsupportedVersionError(f"{path}: unknown cube version {version}")
        if width not in (4, 8):
            raise CubeFormatError(f"{path}: scalar width {width} is not 4 or 8")
        payload = fh.read()
    expected = h * w * b * width
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise CubeFormatError(
            f"{path}: {len(payload) - expected} trailing bytes after payload"
        )
    dtype = "<f4" if width == 4 else "<f8"
    cube = np.frombuffer(payload, dtype=dtype).reshape(b, h, w)
    return cube.astype(np.float64)


def save_cube_csv(path, x):
    """Plain-text interop: long-format rows band,row,col,value."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a (bands, height, width) cube, got {x.shape}")

    def writer(fh):
        lines = ["band,row,col,value\n"]
        b, h, w = x.shape
        for i in range(b):
            for r in range(h):
                for c in range(w):
                    lines.append(f"{i},{r},{c},{float(x[i, r, c])!r}\n")
        fh.write("".join(lines).encode())

    _atomic_write(path, writer)


def load_cube_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "band,row,col,value":
            raise CubeFormatError(f"{path}: unexpected csv header {header!r}")
        entries = {}
        for line in fh:
            i, r, c, v = line.strip().split(",")
            entries[(int(i), int(r), int(c))] = float(v)
    if not entries:
        raise CubeFormatError(f"{path}: no data rows")
    b, h, w = (max(k[d] for k in entries) + 1 for d in range(3))
    if len(entries) != b * h * w:
        raise TruncatedPayloadError(
            f"{path}: {len(entries)} rows, grid needs {b * h * w}"
        )
    cube = np.empty((b, h, w))
    for (i, r, c), v in entries.items():
        cube[i, r, c] = v
    return cube


def _config_dict(params):
    cfg = params.meta.get("config")
    if not isinstance(cfg, ModelConfig):
        raise ValueError("params.meta['config'] must hold the ModelConfig")
    return dataclasses.asdict(cfg)


def save_checkpoint(path, params, adam_state=None):
    """Persist ModelParams (and optionally Adam moments) bit-exactly."""
    leaves = params.leaves()
    sections = [("param", name, np.asarray(a, dtype="<f8")) for name, a in leaves]
    if adam_state is not None:
        for name, _ in leaves:
            sections.append(("adam_m", name, np.asarray(adam_state.m[name], dtype="<f8")))
        for name, _ in leaves:
            sections.append(("adam_v", name, np.asarray(adam_state.v[name], dtype="<f8")))
    header = {
        "version": CKPT_VERSION,
        "config": _config_dict(params),
        "bands": params.bands,
        "has_priors": params.spatial_prior is not None,
        "adam_step": None if adam_state is None else adam_state.step,
        "tensors": [
            {"section": sec, "name": name, "shape": list(a.shape)}
            for sec, name, a in sections
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a).tobytes() for _, _, a in sections)
    digest = hashlib.sha256(header_bytes + body).digest()

    def writer(fh):
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(body)
        fh.write(digest)

    _atomic_write(path, writer)


def _rebuild_params(cfg, bands, has_priors, named):
    if named["dict2d"].shape[1] != bands:
        raise CubeFormatError(
            f"band count {bands} disagrees with dict2d shape {named['dict2d'].shape}"
        )
    sp = dp = None
    if has_priors:
        sp = attention.zero_spatial_prior(
            cfg.atoms2d, cfg.attn_heads, cfg.attn_stages, cfg.window
        )
        for i, st in enumerate(sp.stages):
            for nm in ("wq", "wk", "wv", "wo"):
                setattr(st, nm, named[f"sp.{i}.{nm}"])
        dp = detail.zero_detail_prior()
        for nm in ("plain", "central", "spectral", "horiz", "vert", "attn1", "attn2"):
            setattr(dp, nm, named[f"dp.{nm}"])
    return ModelParams(
        dict2d=named["dict2d"],
        dict2d_t=named["dict2d_t"],
        dict3d=named["dict3d"],
        dict3d_t=named["dict3d_t"],
        theta1_raw=named["theta1_raw"],
        theta2_raw=named["theta2_raw"],
        spatial_prior=sp,
        detail_prior=dp,
        meta={"config": cfg},
    )


def load_checkpoint(path):
    """Returns (ModelParams, AdamState or None); validates the checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 12 + 32:
        raise TruncatedPayloadError(f"{path}: {len(blob)} bytes is too short")
    if blob[:4] != CKPT_MAGIC:
        raise BadMagicError(f"{path}: magic {blob[:4]!r} is not {CKPT_MAGIC!r}")
    version, header_len = struct.unpack("<IQ", blob[4:16])
    if version != CKPT_VERSION:
        raise UnsupportedVersionError(f"{path}: unknown checkpoint version {version}")
    header_end = 16 + header_len
    if len(blob) < header_end + 32:
        raise TruncatedPayloadError(f"{path}: header overruns the file")
    header_bytes = blob[16:header_end]
    body, digest = blob[header_end:-32], blob[-32:]
    if hashlib.sha256(header_bytes + body).digest() != digest:
        raise ChecksumError(f"{path}: sha256 mismatch")
    header = json.loads(header_bytes)
    cfg = ModelConfig(**header["config"])
    arrays = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        chunk = body[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise TruncatedPayloadError(
                f"{path}: tensor {entry['name']} cut short"
            )
        offset += nbytes
        arrays[(entry["section"], entry["name"])] = (
            np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        )
    if offset != len(body):
        raise CubeFormatError(f"{path}: {len(body) - offset} trailing payload bytes")
    named = {n: a for (sec, n), a in arrays.items() if sec == "param"}
    params = _rebuild_params(cfg, header["bands"], header["has_priors"], named)
    adam = None
    if header["adam_step"] is not None:
        from .train import AdamState

        adam = AdamState(
            m={n: a for (sec, n), a in arrays.items() if sec == "adam_m"},
            v={n: a for (sec, n), a in arrays.items() if sec == "adam_v"},
            step=header["adam_step"],
        )
    return params, adam
