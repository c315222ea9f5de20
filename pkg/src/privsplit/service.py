"""Client/server split inference over a length-prefixed binary protocol.

Every message travels as ``u32 LE body length | body``.  Bodies:

request   ``b"PSFR" | version u8 | request_id u32 | k u16 | k x f32``
response  ``b"PSCR" | version u8 | request_id u32 | predicted u16 | C u16 | C x f32``
error     ``b"PSER" | version u8 | request_id u32 | code u8 | n u16 | n bytes UTF-8``

All integers and floats are little-endian; floats are IEEE-754 binary32 on
the wire and widened to binary64 before any computation.  A k=8 request is
43 bytes of body plus the 4-byte prefix.
"""
from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embedding import SplitModel, classify_features, extract_features
from .errors import PrivSplitError
from .io import Bundle
from .nn import Network

log = logging.getLogger(__name__)

VERSION = 1
REQUEST_MAGIC = b"PSFR"
RESPONSE_MAGIC = b"PSCR"
ERROR_MAGIC = b"PSER"
PREFIX = struct.Struct("<I")
_HEAD = struct.Struct("<4sBI")          # magic, version, request_id
_REQ = struct.Struct("<4sBIH")          # + k
_RESP = struct.Struct("<4sBIHH")        # + predicted, C
_ERR = struct.Struct("<4sBIBH")         # + code, message length
MAX_FRAME = 1 << 20
DEFAULT_TIMEOUT = 5.0

# error frame codes
E_MALFORMED = 1
E_DIMENSION = 2
E_BAD_MAGIC = 3
E_VERSION = 4
E_INTERNAL = 5


class ProtocolError(PrivSplitError):
    code = E_MALFORMED


class TruncatedFrameError(ProtocolError):
    code = E_MALFORMED


class BadMagicError(ProtocolError):
    code = E_BAD_MAGIC


class VersionMismatchError(ProtocolError):
    code = E_VERSION


class EmptyFeatureError(ProtocolError):
    code = E_MALFORMED


class ServerError(PrivSplitError):
    """The server answered with an error frame."""

    def __init__(self, code: int, message: str, request_id: int = 0):
        self.code = code
        self.request_id = request_id
        super().__init__(f"server error {code}: {message}")


class TransportError(PrivSplitError, ConnectionError):
    pass


class ServiceUnavailableError(TransportError):
    pass


class ServiceTimeoutError(TransportError, TimeoutError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureRequest:
    request_id: int
    features: np.ndarray
    version: int = VERSION


@dataclass(frozen=True, eq=False)
class ClassResponse:
    request_id: int
    predicted_class: int
    probs: np.ndarray


def _check_head(body: bytes, magic: bytes, min_len: int) -> None:
    if len(body) < 4:
        raise TruncatedFrameError(f"frame of {len(body)} bytes has no magic")
    if body[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {bytes(body[:4])!r}")
    if len(body) < 5:
        raise TruncatedFrameError("frame ends before the version byte")
    if body[4] != VERSION:
        raise VersionMismatchError(f"protocol version {body[4]} (expected {VERSION})")
    if len(body) < min_len:
        raise TruncatedFrameError(f"frame of {len(body)} bytes is shorter than its {min_len}-byte header")


def encode_request(request_id: int, features) -> bytes:
    z = np.asarray(features, dtype=np.float64).ravel()
    if z.size == 0:
        raise EmptyFeatureError("refusing to encode an empty feature vector")
    if z.size > 0xFFFF:
        raise ProtocolError(f"feature dimension {z.size} does not fit in u16")
    return _REQ.pack(REQUEST_MAGIC, VERSION, request_id, z.size) + z.astype("<f4").tobytes()


def decode_request(body: bytes) -> FeatureRequest:
    _check_head(body, REQUEST_MAGIC, _REQ.size)
    _, version, rid, k = _REQ.unpack_from(body)
    if k == 0:
        raise EmptyFeatureError("request carries no features")
    need = _REQ.size + 4 * k
    if len(body) < need:
        raise TruncatedFrameError(f"request declares k={k} ({need} bytes) but has {len(body)}")
    if len(body) > need:
        raise ProtocolError(f"request has {len(body) - need} trailing bytes")
    z = np.frombuffer(body, dtype="<f4", count=k, offset=_REQ.size).astype(np.float64)
    return FeatureRequest(rid, z, version)


def encode_response(request_id: int, predicted_class: int, probs) -> bytes:
    p = np.asarray(probs, dtype=np.float64).ravel()
    return (_RESP.pack(RESPONSE_MAGIC, VERSION, request_id, predicted_class, p.size)
            + p.astype("<f4").tobytes())


def encode_error(request_id: int, code: int, message: str) -> bytes:
    msg = message.encode("utf-8")[:0xFFFF]
    return _ERR.pack(ERROR_MAGIC, VERSION, request_id, code, len(msg)) + msg


def decode_response(body: bytes) -> ClassResponse:
    """Decode a response body; error frames raise :class:`ServerError`."""
    if body[:4] == ERROR_MAGIC:
        _check_head(body, ERROR_MAGIC, _ERR.size)
        _, _, rid, code, n = _ERR.unpack_from(body)
        raise ServerError(code, bytes(body[_ERR.size:_ERR.size + n]).decode("utf-8", "replace"), rid)
    _check_head(body, RESPONSE_MAGIC, _RESP.size)
    _, _, rid, pred, c = _RESP.unpack_from(body)
    need = _RESP.size + 4 * c
    if len(body) != need:
        raise TruncatedFrameError(f"response declares {c} classes ({need} bytes) but has {len(body)}")
    probs = np.frombuffer(body, dtype="<f4", count=c, offset=_RESP.size).astype(np.float64)
    return ClassResponse(rid, pred, probs)


def frame(body: bytes) -> bytes:
    return PREFIX.pack(len(body)) + body


def _request_id_of(body: bytes) -> int:
    return _HEAD.unpack_from(body)[2] if len(body) >= _HEAD.size else 0


class ClassifierService:
    """Server-side logic with no transport attached; ``handle`` is pure."""

    def __init__(self, back: Network, pca=None):
        self.back = back
        self.pca = pca
        self._sm = SplitModel(Network((), back.input_dim), back, 0)

    @classmethod
    def from_bundle(cls, bundle: Bundle) -> "ClassifierService":
        if bundle.network is None:
            raise ValueError("server bundle has no network")
        return cls(bundle.network, bundle.pca)

    @property
    def feature_dim(self) -> int:
        return self.pca.k if self.pca is not None else self.back.input_dim

    def classify(self, z) -> np.ndarray:
        return classify_features(self._sm, self.pca, z)

    def handle(self, body: bytes) -> bytes:
        try:
            req = decode_request(body)
        except ProtocolError as exc:
            return encode_error(_request_id_of(body), exc.code, str(exc))
        if req.features.size != self.feature_dim:
            return encode_error(req.request_id, E_DIMENSION,
                                f"expected {self.feature_dim} features, got {req.features.size}")
        if not np.all(np.isfinite(req.features)):
            return encode_error(req.request_id, E_MALFORMED, "features must be finite")
        try:
            probs = self.classify(req.features)
        except Exception as exc:  # never let one request take the server down
            log.exception("classification failed")
            return encode_error(req.request_id, E_INTERNAL, str(exc))
        return encode_response(req.request_id, int(np.argmax(probs)), probs)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: ClassifierService = self.server.service
        sock = self.request
        while True:
            head = _recv_exact(sock, PREFIX.size)
            if head is None:
                return
            (n,) = PREFIX.unpack(head)
            if n > MAX_FRAME:
                # cannot resynchronise on an absurd length; report and hang up
                sock.sendall(frame(encode_error(0, E_MALFORMED, f"frame length {n} exceeds {MAX_FRAME}")))
                return
            body = _recv_exact(sock, n)
            if body is None:
                return
            sock.sendall(frame(service.handle(body)))


class SplitServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: ClassifierService, address):
        self.service = service
        super().__init__(address, _Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "SplitServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def serve(bundle: Bundle, address: str) -> SplitServer:
    """Bind a server for ``bundle`` and start it on a background thread.

    Raises ``OSError`` when the port is busy.
    """
    return SplitServer(ClassifierService.from_bundle(bundle), parse_address(address)).start()


class SocketTransport:
    """One persistent connection; ``exchange`` sends a body and returns the reply body."""

    def __init__(self, address: str, timeout: float = DEFAULT_TIMEOUT):
        self.address = parse_address(address)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except socket.timeout as exc:
                raise ServiceTimeoutError(f"connecting to {self.address} timed out") from exc
            except OSError as exc:
                raise ServiceUnavailableError(f"cannot reach {self.address}: {exc}") from exc
        return self._sock

    def exchange(self, body: bytes) -> bytes:
        sock = self._connect()
        try:
            sock.sendall(frame(body))
            head = _recv_exact(sock, PREFIX.size)
            reply = None if head is None else _recv_exact(sock, PREFIX.unpack(head)[0])
        except socket.timeout as exc:
            self.close()
            raise ServiceTimeoutError(f"no reply from {self.address} within {self.timeout}s") from exc
        except OSError as exc:
            self.close()
            raise ServiceUnavailableError(f"connection to {self.address} failed: {exc}") from exc
        if reply is None:
            self.close()
            raise ServiceUnavailableError(f"{self.address} closed the connection")
        return reply

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SplitClient:
    """Client half: runs the front layers, PCA and noise locally, ships only ``z``."""

    def __init__(self, bundle: Bundle, transport):
        if bundle.network is None:
            raise ValueError("client bundle has no network")
        self.sm = SplitModel(bundle.network, Network((), bundle.network.output_dim), 0)
        self.pca = bundle.pca
        self.sigma = bundle.sigma
        self.transport = transport
        self._next_id = 0

    def features(self, x, seed) -> np.ndarray:
        return extract_features(self.sm, self.pca, self.sigma, x, seed)

    def infer(self, x, seed=None, request_id: Optional[int] = None) -> ClassResponse:
        if request_id is None:
            request_id = self._next_id
            self._next_id = (self._next_id + 1) & 0xFFFFFFFF
        body = encode_request(request_id, self.features(x, seed))
        resp = decode_response(self.transport.exchange(body))
        if resp.request_id != request_id:
            raise ProtocolError(f"reply for request {resp.request_id}, expected {request_id}")
        return resp


def client_infer(bundle: Bundle, x, address: str, seed=None,
                 timeout: float = DEFAULT_TIMEOUT) -> ClassResponse:
    """One-shot inference against a running server."""
    with SocketTransport(address, timeout) as transport:
        return SplitClient(bundle, transport).infer(x, seed)
