"""Encoder, decoder and the EDMS container.

Only the compact image and the quantised residual are transmitted.  The
segment map is recomputed from the decoded compact image on both sides,
so the synthesis the residual was taken against can be rebuilt exactly at
the decoder.
"""

from __future__ import annotations

import hashlib
import math
import struct
import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DigestMismatchError, FormatError, MissingWeightsError, SynthesisMismatchError
from .layer_codecs import decode_compact, decode_residual, dequantize, encode_compact, encode_residual, quantize_residual
from .metrics import ms_ssim, psnr, usable_scales
from .nets import forward_compnet, forward_finenet, forward_smapnet
from .segmenter import colorize, forward_segmenter, palette
from .tensor import kernels as K

MAGIC = b"EDMS"
VERSION = 1
FLAG_SYNTH_HASH = 0x01
FLAG_NO_ENHANCE = 0x02
HASH_SIZE = 8
FACTOR = 8

# magic, version, flags, Q, width, height, weight digest prefix, section lengths
_HEADER = struct.Struct("<4sBBHHH8sII")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class Container:
    q: int
    width: int
    height: int
    weight_digest: bytes
    compact: bytes
    residual: bytes
    synth_hash: bytes | None = None
    enhance: bool = True
    version: int = VERSION

    @property
    def flags(self) -> int:
        flags = 0
        if self.synth_hash is not None:
            flags |= FLAG_SYNTH_HASH
        if not self.enhance:
            flags |= FLAG_NO_ENHANCE
        return flags

    @property
    def padded_dims(self) -> tuple[int, int]:
        return padded_size(self.height), padded_size(self.width)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, self.version, self.flags, self.q, self.width, self.height,
                              self.weight_digest[:HASH_SIZE], len(self.compact), len(self.residual))
        tail = self.synth_hash[:HASH_SIZE] if self.synth_hash is not None else b""
        return header + self.compact + self.residual + tail

    @classmethod
    def from_bytes(cls, data: bytes) -> "Container":
        data = bytes(data)
        if len(data) < HEADER_SIZE:
            raise FormatError("container shorter than its header")
        magic, version, flags, q, width, height, digest, clen, rlen = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError("bad magic: not an EDMS container")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if flags & ~(FLAG_SYNTH_HASH | FLAG_NO_ENHANCE):
            raise FormatError(f"unknown flag bits {flags:#04x}")
        if not 1 <= q <= 64:
            raise FormatError(f"quantiser step {q} out of range")
        if width < FACTOR or height < FACTOR:
            raise FormatError(f"image dims {width}x{height} below minimum")
        has_hash = bool(flags & FLAG_SYNTH_HASH)
        expected = HEADER_SIZE + clen + rlen + (HASH_SIZE if has_hash else 0)
        if len(data) != expected:
            raise FormatError(f"container is {len(data)} bytes, header implies {expected}")
        body = data[HEADER_SIZE:]
        return cls(q=q, width=width, height=height, weight_digest=digest,
                   compact=body[:clen], residual=body[clen:clen + rlen],
                   synth_hash=body[clen + rlen:] if has_hash else None,
                   enhance=not flags & FLAG_NO_ENHANCE, version=version)


@dataclass
class CodecStats:
    width: int
    height: int
    header_bytes: int
    compact_bytes: int
    residual_bytes: int
    hash_bytes: int
    synth_hash: str
    psnr: float = math.nan
    ms_ssim: float = math.nan
    encode_s: float = math.nan
    decode_s: float = math.nan

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.compact_bytes + self.residual_bytes + self.hash_bytes

    @property
    def bpp(self) -> float:
        return 8.0 * self.total_bytes / (self.width * self.height)

    def section_bpp(self) -> dict:
        pixels = self.width * self.height
        return {name: 8.0 * getattr(self, f"{name}_bytes") / pixels
                for name in ("header", "compact", "residual", "hash")}


@dataclass
class Synthesis:
    """Intermediates of the shared encoder/decoder synthesis path."""

    up: np.ndarray          # normalised up-sampled compact image, 1x3xHxW
    classes: np.ndarray     # extracted class map, HxW
    segment: np.ndarray     # normalised colour-coded segment fed to SMapNet
    enhanced: np.ndarray    # segment actually fed to FineNet
    image: np.ndarray       # synthesis, HxWx3 uint8

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(np.ascontiguousarray(self.image).tobytes()).digest()


def padded_size(n: int) -> int:
    return -(-n // FACTOR) * FACTOR


def normalize(img: np.ndarray) -> np.ndarray:
    """HxWx3 values in [0, 255] -> 1x3xHxW float32 in [-1, 1]."""
    x = np.asarray(img, dtype=np.float32).transpose(2, 0, 1)[None]
    return np.ascontiguousarray(x / np.float32(127.5) - np.float32(1))


def denormalize(x: np.ndarray) -> np.ndarray:
    """1x3xHxW in [-1, 1] -> HxWx3 uint8, rounding half away from zero."""
    v = (np.asarray(x[0], dtype=np.float32) + np.float32(1)) * np.float32(127.5)
    v = np.sign(v) * np.floor(np.abs(v) + np.float32(0.5))
    return np.clip(v, 0, 255).astype(np.uint8).transpose(1, 2, 0).copy()


def pad_image(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = padded_size(h), padded_size(w)
    iy = K.reflect_index(h, ph - h)[ph - h:]
    ix = K.reflect_index(w, pw - w)[pw - w:]
    return img[iy[:, None], ix[None, :]]


def class_count(w: Mapping) -> int:
    try:
        return int(w["segmenter.2.weight"].shape[0])
    except KeyError:
        raise MissingWeightsError("segmenter.2.weight") from None


def extract_segment(compact_u8: np.ndarray, padded: tuple[int, int], w: Mapping):
    """Up-sample the compact image and segment it: (up, class map, normalised colour segment)."""
    compact = np.asarray(compact_u8, dtype=np.float32).transpose(2, 0, 1)[None]
    up = K.bilinear_resize(compact, *padded)
    up = up / np.float32(127.5) - np.float32(1)
    classes = forward_segmenter(up, w, class_count(w))
    segment = normalize(colorize(classes, palette(class_count(w))))
    return up, classes, segment


def synthesize(compact_u8: np.ndarray, padded: tuple[int, int], w: Mapping,
               enhance: bool = True) -> Synthesis:
    """Steps shared verbatim by encoder and decoder: up-sample, segment, enhance, synthesise."""
    up, classes, segment = extract_segment(compact_u8, padded, w)
    enhanced = np.clip(forward_smapnet(segment, w), -1, 1) if enhance else segment
    synth = forward_finenet(up, enhanced, w)
    return Synthesis(up, classes, segment, enhanced, denormalize(synth))


def _check_networks(w: Mapping, enhance: bool):
    needed = ["compnet", "finenet", "segmenter"] + (["smapnet"] if enhance else [])
    for net in needed:
        if not any(k.startswith(net + ".") for k in w.keys()):
            raise MissingWeightsError(f"weight set has no {net} parameters")


def _stats(container: Container, synth_digest: bytes) -> CodecStats:
    return CodecStats(
        width=container.width, height=container.height, header_bytes=HEADER_SIZE,
        compact_bytes=len(container.compact), residual_bytes=len(container.residual),
        hash_bytes=HASH_SIZE if container.synth_hash is not None else 0,
        synth_hash=synth_digest.hex())


def encode(img: np.ndarray, w, q: int, embed_hash: bool = False,
           enhance: bool = True) -> tuple[bytes, CodecStats]:
    """Compress an HxWx3 uint8 image; returns the container bytes and stats."""
    start = time.perf_counter()
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 uint8 image, got {img.dtype} {img.shape}")
    height, width = img.shape[:2]
    if height < FACTOR or width < FACTOR:
        raise ValueError(f"image must be at least {FACTOR}x{FACTOR}, got {width}x{height}")
    if width > 0xFFFF or height > 0xFFFF:
        raise ValueError("image dims must fit in 16 bits")
    if not 1 <= q <= 64:
        raise ValueError("quantiser step must be in [1, 64]")
    _check_networks(w, enhance)

    padded = pad_image(img)
    compact = denormalize(forward_compnet(normalize(padded), w))
    compact_section = encode_compact(compact)
    syn = synthesize(compact, padded.shape[:2], w, enhance)
    residual = padded.astype(np.int16) - syn.image.astype(np.int16)
    levels = quantize_residual(residual, q)
    residual_section = encode_residual(residual, q)
    digest = syn.digest
    container = Container(q=q, width=width, height=height, weight_digest=w.digest[:HASH_SIZE],
                          compact=compact_section, residual=residual_section,
                          synth_hash=digest[:HASH_SIZE] if embed_hash else None, enhance=enhance)
    data = container.to_bytes()
    encode_s = time.perf_counter() - start

    recon = _reconstruct(syn.image, dequantize(levels, q))[:height, :width]
    stats = _stats(container, digest)
    stats.encode_s = encode_s
    stats.psnr = psnr(img, recon)
    if usable_scales(img.shape):
        stats.ms_ssim = ms_ssim(img, recon)
    return data, stats


def _reconstruct(synth: np.ndarray, residual: np.ndarray) -> np.ndarray:
    return np.clip(synth.astype(np.int16) + residual, 0, 255).astype(np.uint8)


def _open(data: bytes, w) -> Container:
    container = Container.from_bytes(data)
    if container.weight_digest != w.digest[:HASH_SIZE]:
        raise DigestMismatchError("container was produced with a different weight set")
    _check_networks(w, container.enhance)
    return container


def decode(data: bytes, w) -> tuple[np.ndarray, CodecStats]:
    """Rebuild the image from container bytes using the same weight set as the encoder."""
    start = time.perf_counter()
    container = _open(data, w)
    ph, pw = container.padded_dims
    compact = decode_compact(container.compact, (ph // FACTOR, pw // FACTOR))
    syn = synthesize(compact, (ph, pw), w, container.enhance)
    digest = syn.digest
    if container.synth_hash is not None and container.synth_hash != digest[:HASH_SIZE]:
        raise SynthesisMismatchError("decoder synthesis does not match the encoder's")
    residual = decode_residual(container.residual, (ph, pw), container.q)
    img = _reconstruct(syn.image, residual)[:container.height, :container.width]
    stats = _stats(container, digest)
    stats.decode_s = time.perf_counter() - start
    return img, stats


@dataclass
class MatchReport:
    match: bool
    stored_hash: str
    recomputed_hash: str
    stats: CodecStats
    reason: str = ""

    @property
    def bpp(self) -> float:
        return self.stats.bpp


def verify_matched(data: bytes, w) -> MatchReport:
    """Recompute the synthesis from the compact layer and compare it with the stored hash."""
    container = _open(data, w)
    if container.synth_hash is None:
        raise FormatError("container carries no synthesis hash to verify against")
    ph, pw = container.padded_dims
    stored = container.synth_hash.hex()
    try:
        compact = decode_compact(container.compact, (ph // FACTOR, pw // FACTOR))
        digest = synthesize(compact, (ph, pw), w, container.enhance).digest
    except (FormatError, ArithmeticError) as exc:
        stats = _stats(container, b"")
        return MatchReport(False, stored, "", stats, reason=str(exc))
    recomputed = digest[:HASH_SIZE].hex()
    match = recomputed == stored
    return MatchReport(match, stored, recomputed, _stats(container, digest),
                       reason="" if match else "synthesis hash differs")
