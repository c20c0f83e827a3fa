"""CompNet, FineNet and SMapNet, plus the EDMW weight file format.

Each network is described by a tuple of :class:`LayerSpec` entries and
executed by :func:`run_network` against an *ops backend*: ``INFERENCE`` runs
the fixed-order float32 kernels used by the codec, ``TAPE`` builds an
autograd graph for training.  Channel widths are read from the weight
tensors, so a weight set trained at reduced width runs through the same
code as one at the published width.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from types import SimpleNamespace
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from .errors import DigestMismatchError, FormatError, MissingWeightsError, TruncatedStreamError
from .tensor import autograd as ag
from .tensor import kernels as K


@dataclass(frozen=True)
class LayerSpec:
    """One entry of a topology table.

    kind is ``c`` (conv), ``r`` (residual block), ``u`` (x2 transposed conv)
    or ``v`` (recursive residual unit with shared weights).  ``repeat`` counts
    residual blocks for ``r`` and recursions for ``v``.
    """

    kind: str
    kernel: int
    filters: int
    stride: int = 1
    activation: str | None = "relu"
    norm: bool = True
    repeat: int = 1
    scalable: bool = True


def _c(kernel, filters, stride=1, activation="relu", norm=True, scalable=True):
    return LayerSpec("c", kernel, filters, stride, activation, norm, 1, scalable)


_ENCODER_TRUNK = (_c(7, 64), _c(3, 128, 2), _c(3, 256, 2), _c(3, 512, 2))

TOPOLOGIES: dict[str, tuple[LayerSpec, ...]] = {
    "compnet": _ENCODER_TRUNK + (_c(7, 3, activation="tanh", norm=False, scalable=False),),
    "finenet": _ENCODER_TRUNK + (
        LayerSpec("r", 3, 512, repeat=9, activation=None),
        LayerSpec("u", 3, 256),
        LayerSpec("u", 3, 128),
        LayerSpec("u", 3, 64),
        _c(7, 3, activation="tanh", norm=False, scalable=False),
    ),
    "smapnet": (
        _c(3, 64),
        LayerSpec("v", 3, 64, repeat=9, norm=False),
        _c(3, 3, activation=None, norm=False, scalable=False),
    ),
    # Final filter count is the class count L, fixed at init time.
    "segmenter": (
        _c(3, 16, scalable=False),
        _c(3, 32, scalable=False),
        _c(3, 0, activation=None, norm=False, scalable=False),
    ),
}

INPUT_CHANNELS = {"compnet": 3, "finenet": 6, "smapnet": 3, "segmenter": 3}
FULL_WIDTH = 64


INFERENCE = SimpleNamespace(
    conv=K.conv2d,
    up=K.conv2d_transpose,
    norm=K.instance_norm,
    relu=K.relu,
    tanh=K.tanh_act,
    add=lambda a, b: np.add(a, b),
    concat=lambda a, b: np.concatenate([a, b], axis=1),
)

TAPE = SimpleNamespace(
    conv=ag.conv2d,
    up=ag.conv2d_transpose,
    norm=ag.instance_norm,
    relu=ag.relu,
    tanh=ag.tanh,
    add=ag.add,
    concat=ag.concat,
)


def _param(params: Mapping, name: str):
    try:
        return params[name]
    except KeyError:
        raise MissingWeightsError(name) from None


def _activate(x, activation, ops):
    if activation == "relu":
        return ops.relu(x)
    if activation == "tanh":
        return ops.tanh(x)
    return x


def _conv_unit(x, prefix, params, ops, stride=1, norm=True, up=False):
    w, b = _param(params, prefix + ".weight"), _param(params, prefix + ".bias")
    x = ops.up(x, w, b) if up else ops.conv(x, w, b, stride)
    if norm:
        x = ops.norm(x, _param(params, prefix + ".gamma"), _param(params, prefix + ".beta"))
    return x


def run_network(name: str, x, params: Mapping, ops=INFERENCE):
    """Evaluate topology ``name`` on ``x`` with parameters looked up by name."""
    for i, spec in enumerate(TOPOLOGIES[name]):
        prefix = f"{name}.{i}"
        if spec.kind in "cu":
            x = _conv_unit(x, prefix, params, ops, spec.stride, spec.norm, up=spec.kind == "u")
            x = _activate(x, spec.activation, ops)
        elif spec.kind == "r":
            for rep in range(spec.repeat):
                p = f"{prefix}.{rep}"
                y = ops.relu(_conv_unit(x, p + ".conv1", params, ops))
                y = _conv_unit(y, p + ".conv2", params, ops)
                x = ops.add(x, y)
        elif spec.kind == "v":
            x0 = x
            for _ in range(spec.repeat):
                y = ops.relu(_conv_unit(x, prefix + ".conv1", params, ops, norm=False))
                y = _conv_unit(y, prefix + ".conv2", params, ops, norm=False)
                x = ops.relu(ops.add(x0, y))
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    return x


def _check_image_tensor(x, name):
    x = K.as_tensor(x)
    if x.shape[0] != 1 or x.shape[1] != 3:
        raise ValueError(f"{name} must be 1x3xHxW, got {x.shape}")
    return x


def forward_compnet(img_norm, w: Mapping) -> np.ndarray:
    """Down-sample a normalised image by 8 to the compact representation."""
    x = _check_image_tensor(img_norm, "compnet input")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ValueError(f"compnet needs H, W multiples of 8, got {x.shape[2:]}")
    return run_network("compnet", x, w)


def forward_finenet(up_norm, seg, w: Mapping) -> np.ndarray:
    """Synthesise an image from the up-sampled compact image and a segment map."""
    up = _check_image_tensor(up_norm, "finenet image input")
    seg = _check_image_tensor(seg, "finenet segment input")
    if up.shape != seg.shape:
        raise ValueError(f"dim mismatch: {up.shape} vs {seg.shape}")
    if up.shape[2] % 8 or up.shape[3] % 8:
        raise ValueError(f"finenet needs H, W multiples of 8, got {up.shape[2:]}")
    return run_network("finenet", INFERENCE.concat(up, seg), w)


def forward_smapnet(seg_degraded, w: Mapping) -> np.ndarray:
    """Map a degraded colour-coded segment towards the original one (unbounded output)."""
    return run_network("smapnet", _check_image_tensor(seg_degraded, "smapnet input"), w)


def param_shapes(name: str, width: int = FULL_WIDTH, classes: int | None = None) -> dict:
    """Ordered ``{param name: shape}`` for topology ``name`` at hidden width ``width``."""
    shapes = {}
    in_c = INPUT_CHANNELS[name]

    def conv(prefix, cin, cout, k, norm):
        shapes[prefix + ".weight"] = (cout, cin, k, k)
        shapes[prefix + ".bias"] = (cout,)
        if norm:
            shapes[prefix + ".gamma"] = (cout,)
            shapes[prefix + ".beta"] = (cout,)

    for i, spec in enumerate(TOPOLOGIES[name]):
        prefix = f"{name}.{i}"
        out_c = spec.filters * width // FULL_WIDTH if spec.scalable else spec.filters
        if name == "segmenter" and out_c == 0:
            if classes is None or classes < 2:
                raise ValueError("segmenter needs classes >= 2")
            out_c = classes
        if spec.kind in "cu":
            conv(prefix, in_c, out_c, spec.kernel, spec.norm)
        elif spec.kind == "r":
            if out_c != in_c:
                raise ValueError("residual block must preserve width")
            for rep in range(spec.repeat):
                conv(f"{prefix}.{rep}.conv1", in_c, out_c, spec.kernel, True)
                conv(f"{prefix}.{rep}.conv2", out_c, out_c, spec.kernel, True)
        elif spec.kind == "v":
            conv(prefix + ".conv1", in_c, out_c, spec.kernel, False)
            conv(prefix + ".conv2", out_c, out_c, spec.kernel, False)
        in_c = out_c
    return shapes


def final_layer_prefix(name: str) -> str:
    return f"{name}.{len(TOPOLOGIES[name]) - 1}."


def init_params(name: str, rng: np.random.Generator, width: int = FULL_WIDTH,
                classes: int | None = None) -> dict[str, np.ndarray]:
    """He-normal kernels, zero biases, unit gamma, zero beta.

    The second convolution of each recursive unit starts small so nine
    un-normalised recursions stay bounded.
    """
    params = {}
    for pname, shape in param_shapes(name, width, classes).items():
        kind = pname.rsplit(".", 1)[1]
        if kind == "weight":
            fan_in = shape[1] * shape[2] * shape[3]
            std = np.sqrt(2.0 / fan_in)
            if ".conv2." in pname and TOPOLOGIES[name][int(pname.split(".")[1])].kind == "v":
                std *= 0.1
            params[pname] = rng.normal(0.0, std, size=shape).astype(np.float32)
        elif kind == "gamma":
            params[pname] = np.ones(shape, dtype=np.float32)
        else:
            params[pname] = np.zeros(shape, dtype=np.float32)
    return params


# --- weight sets and the EDMW file format -----------------------------------

MAGIC = b"EDMW"
VERSION = 1
DIGEST_SIZE = 32


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Immutable, ordered collection of named float32 tensors."""

    entries: dict

    def __post_init__(self):
        frozen = {}
        for name, value in self.entries.items():
            arr = np.array(value, dtype="<f4", copy=True)
            arr.setflags(write=False)
            frozen[str(name)] = arr
        object.__setattr__(self, "entries", frozen)

    def __getitem__(self, name):
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def keys(self):
        return self.entries.keys()

    def items(self):
        return self.entries.items()

    def merged(self, other: "WeightSet | Mapping") -> "WeightSet":
        """New set with ``other``'s entries added (overriding same names)."""
        entries = dict(self.entries)
        entries.update(other.items())
        return WeightSet(entries)

    def subset(self, network: str) -> "WeightSet":
        return WeightSet({k: v for k, v in self.entries.items() if k.startswith(network + ".")})

    def has_network(self, network: str) -> bool:
        return any(k.startswith(network + ".") for k in self.entries)

    @cached_property
    def body(self) -> bytes:
        return _serialize(self.entries.items())

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.body).digest()

    def to_bytes(self) -> bytes:
        return self.body + self.digest


def _serialize(items: Iterable) -> bytes:
    items = list(items)
    if len(items) > 0xFFFF:
        raise ValueError("too many tensors for one weight file")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HH", VERSION, len(items)))
    for name, arr in items:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


def save_weights(w: WeightSet, sink) -> None:
    """Write ``w`` to a path or binary file object."""
    data = w.to_bytes()
    if isinstance(sink, (str, os.PathLike)):
        tmp = f"{os.fspath(sink)}.tmp"
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, sink)
    else:
        sink.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStreamError("weight file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return bytes(chunk)

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def weights_from_bytes(data: bytes) -> WeightSet:
    """Parse an EDMW file.

    The structure is walked first so a short file reports truncation; the
    SHA-256 trailer is then checked before any tensor is handed out.
    """
    if len(data) < 8:
        raise TruncatedStreamError("weight file is truncated")
    if data[:4] != MAGIC:
        raise FormatError("bad magic: not an EDMW weight file")
    r = _Reader(data)
    r.take(4)
    version, count = r.unpack("<HH")
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
        if name in entries:
            raise FormatError(f"duplicate tensor name {name!r}")
        entries[name] = arr
    body_end = r.pos
    stored = r.take(DIGEST_SIZE)
    if r.pos != len(data):
        raise FormatError("trailing bytes after digest")
    if hashlib.sha256(data[:body_end]).digest() != stored:
        raise DigestMismatchError("weight file digest mismatch")
    return WeightSet(entries)


def load_weights(source) -> WeightSet:
    """Read a weight set from a path, bytes, or binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return weights_from_bytes(bytes(source))
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            return weights_from_bytes(f.read())
    return weights_from_bytes(source.read())
