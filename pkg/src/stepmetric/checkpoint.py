"""Binary checkpoint format (little-endian throughout).

Layout::

    magic        4 bytes  b"ATN1"
    version      u32
    config_len   u32, then config_len bytes of UTF-8 ``key = value`` lines
    seed         i64 (-1 when unknown)
    n_tensors    u32
    per tensor:  name_len u32, name bytes, ndim u32, dims u32 * ndim,
                 float32 payload (prod(dims) * 4 bytes)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ATN1"
VERSION = 1


def encode(tensors: dict[str, np.ndarray], config_text: str = "", seed: int | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<q", -1 if seed is None else int(seed))]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n, what, tensor=None):
        if self.pos + n > len(self.buf):
            where = f" in tensor {tensor!r}" if tensor else ""
            raise CheckpointError("truncated", f"checkpoint truncated while reading {what}{where}",
                                  tensor=tensor)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what, tensor=None):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, tensor))


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], str, int | None]:
    """Inverse of :func:`encode`: returns ``(tensors, config_text, seed)``."""
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError("bad-magic", f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError("version", f"unsupported checkpoint version {version} (expected {VERSION})")
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        config_text = r.take(cfg_len, "config").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt", f"config block is not UTF-8: {exc}") from exc
    (seed,) = r.unpack("<q", "seed")
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<I", f"name length of tensor #{i}")
        name = r.take(name_len, f"name of tensor #{i}").decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<I", "ndim", name)
        dims = r.unpack(f"<{ndim}I", "dims", name)
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * size, "payload", name)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError("corrupt", f"{len(buf) - r.pos} trailing bytes after last tensor")
    return tensors, config_text, (None if seed < 0 else seed)


def write(path, tensors, config_text="", seed=None):
    Path(path).write_bytes(encode(tensors, config_text, seed))


def read(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError("corrupt", f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)


def _spec_token(spec) -> str:
    if spec.kind == "conv2d":
        return f"conv2d:{spec.in_channels}:{spec.out_channels}:{spec.kernel}:{spec.stride}:{spec.padding}"
    if spec.kind == "linear":
        return f"linear:{spec.in_features}:{spec.out_features}"
    return spec.kind


def _parse_spec(token: str):
    from .nn import LayerSpec, conv_spec, linear_spec

    kind, *sizes = token.strip().split(":")
    try:
        nums = [int(s) for s in sizes]
        if kind == "conv2d":
            return conv_spec(*nums)
        if kind == "linear":
            return linear_spec(*nums)
        return LayerSpec(kind)
    except (TypeError, ValueError) as exc:
        raise CheckpointError("corrupt", f"bad layer token {token!r}: {exc}") from exc


def model_config_text(model, extra: str = "") -> str:
    lines = [f"input_shape = {','.join(str(d) for d in model.input_shape)}",
             f"layers = {' '.join(_spec_token(s) for s in model.specs)}"]
    text = "\n".join(lines) + "\n"
    if extra:
        text += extra if extra.endswith("\n") else extra + "\n"
    return text


def save_checkpoint(model, path, extra_config: str | None = None):
    """Write ``model`` to ``path``.

    ``extra_config`` is appended to the config block; it defaults to the extra
    block the model was loaded with, so load -> save reproduces the file.
    """
    if extra_config is None:
        extra_config = getattr(model, "extra_config", "")
    write(path, model.state(), model_config_text(model, extra_config), model.seed)


def load_checkpoint(path):
    """Rebuild a float32 :class:`~stepmetric.nn.Model` from a checkpoint file.

    Returns ``(model, config_text)``.
    """
    from .nn import Model

    tensors, config_text, seed = read(path)
    fields, extra = {}, []
    for line in config_text.splitlines():
        key, sep, value = line.partition("=")
        if sep and key.strip() in ("input_shape", "layers"):
            fields[key.strip()] = value.strip()
        else:
            extra.append(line + "\n")
    try:
        shape = tuple(int(d) for d in fields["input_shape"].split(","))
        specs = [_parse_spec(t) for t in fields["layers"].split()]
    except KeyError as exc:
        raise CheckpointError("corrupt", f"config block lacks {exc}") from exc
    model = Model(specs, shape, seed=None)
    model.seed = seed
    model.extra_config = "".join(extra)
    try:
        model.load_state(tensors)
    except Exception as exc:
        raise CheckpointError("corrupt", f"tensors do not fit the stored layer chain: {exc}") from exc
    return model, config_text
