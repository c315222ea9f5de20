"""Binary container for networks, PCA transforms and client/server bundles.

Layout (all integers unsigned little-endian, all floats IEEE-754 binary64 LE)::

    magic      4 bytes   b"PSV1"  (last byte is the container version)
    count      u32       number of sections
    section*   tag (4 ASCII bytes) | length u32 | payload (length bytes)

Section payloads:

``NET1``  input_dim u32 | frozen u32 | n_layers u32 | layer*
          layer = kind u8 (0 dense, 1 relu, 2 softmax)
                  dense adds: out u32 | in u32 | weight out*in f64 (row-major) | bias out f64
``PCA1``  d u32 | k u32 | mean d f64 | components k*d f64 (row-major) | eigenvalues k f64
``META``  UTF-8 JSON object

A model file holds one ``NET1``; a transform file one ``PCA1``.  A client
bundle is ``NET1`` (front) + optional ``PCA1`` + ``META`` with
``{"role": "client", "sigma": ..., "split": ...}``; a server bundle is
``NET1`` (back) + optional ``PCA1`` + ``META`` with ``{"role": "server"}``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, UnsupportedVersionError
from .nn import Dense, Network, ReLU, Softmax
from .pca import PcaTransform

MAGIC = b"PSV1"
_KINDS = {Dense: 0, ReLU: 1, Softmax: 2}


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encode_network(net: Network) -> bytes:
    out = [struct.pack("<III", net.input_dim, net.frozen, len(net.layers))]
    for layer in net.layers:
        out.append(struct.pack("<B", _KINDS[type(layer)]))
        if isinstance(layer, Dense):
            out.append(struct.pack("<II", layer.out_dim, layer.in_dim))
            out.append(_f64(layer.weight))
            out.append(_f64(layer.bias))
    return b"".join(out)


def encode_pca(t: PcaTransform) -> bytes:
    return struct.pack("<II", t.d, t.k) + _f64(t.mean) + _f64(t.components) + _f64(t.eigenvalues)


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")


def decode_network(buf: bytes) -> Network:
    r = _Reader(buf, "NET1")
    input_dim, frozen, n = r.u("<III")
    layers = []
    for _ in range(n):
        (kind,) = r.u("<B")
        if kind == 0:
            o, i = r.u("<II")
            w = r.floats(o * i).reshape(o, i)
            layers.append(Dense(w, r.floats(o)))
        elif kind == 1:
            layers.append(ReLU())
        elif kind == 2:
            layers.append(Softmax())
        else:
            raise FormatError(f"NET1: unknown layer kind {kind}")
    r.done()
    try:
        return Network(tuple(layers), input_dim, frozen=frozen)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"NET1: {exc}") from exc


def decode_pca(buf: bytes) -> PcaTransform:
    r = _Reader(buf, "PCA1")
    d, k = r.u("<II")
    mean = r.floats(d)
    comp = r.floats(k * d).reshape(k, d)
    ev = r.floats(k)
    r.done()
    return PcaTransform(mean, comp, ev)


@dataclass
class Bundle:
    network: Optional[Network] = None
    pca: Optional[PcaTransform] = None
    meta: dict = field(default_factory=dict)

    @property
    def sigma(self) -> float:
        return float(self.meta.get("sigma", 0.0))


def pack(bundle: Bundle) -> bytes:
    sections = []
    if bundle.network is not None:
        sections.append((b"NET1", encode_network(bundle.network)))
    if bundle.pca is not None:
        sections.append((b"PCA1", encode_pca(bundle.pca)))
    if bundle.meta:
        sections.append((b"META", json.dumps(bundle.meta, sort_keys=True).encode("utf-8")))
    out = [MAGIC, struct.pack("<I", len(sections))]
    for tag, payload in sections:
        out += [tag, struct.pack("<I", len(payload)), payload]
    return b"".join(out)


def unpack(buf: bytes) -> Bundle:
    if len(buf) < 4:
        raise FormatError("container shorter than its magic")
    magic = bytes(buf[:4])
    if magic[:3] == MAGIC[:3] and magic != MAGIC:
        raise UnsupportedVersionError(f"container version {magic[3:]!r} is not supported")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    r = _Reader(buf, "container")
    r.take(4)
    (count,) = r.u("<I")
    bundle = Bundle()
    seen = set()
    for _ in range(count):
        tag = r.take(4)
        (length,) = r.u("<I")
        payload = r.take(length)
        if tag in seen:
            raise FormatError(f"duplicate section {tag!r}")
        seen.add(tag)
        if tag == b"NET1":
            bundle.network = decode_network(payload)
        elif tag == b"PCA1":
            bundle.pca = decode_pca(payload)
        elif tag == b"META":
            try:
                bundle.meta = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"META: {exc}") from exc
        else:
            raise FormatError(f"unknown section tag {tag!r}")
    r.done()
    return bundle


def save_bundle(path, bundle: Bundle) -> None:
    Path(path).write_bytes(pack(bundle))


def load_bundle(path) -> Bundle:
    return unpack(Path(path).read_bytes())


def save_network(path, net: Network) -> None:
    save_bundle(path, Bundle(network=net))


def load_network(path) -> Network:
    b = load_bundle(path)
    if b.network is None:
        raise FormatError(f"{path}: no NET1 section")
    return b.network


def save_pca(path, t: PcaTransform) -> None:
    save_bundle(path, Bundle(pca=t))


def load_pca(path) -> PcaTransform:
    b = load_bundle(path)
    if b.pca is None:
        raise FormatError(f"{path}: no PCA1 section")
    return b.pca


def client_bundle(front: Network, pca: Optional[PcaTransform], sigma: float, split: int) -> Bundle:
    return Bundle(front, pca, {"role": "client", "sigma": float(sigma), "split": int(split)})


def server_bundle(back: Network, pca: Optional[PcaTransform]) -> Bundle:
    return Bundle(back, pca, {"role": "server"})
