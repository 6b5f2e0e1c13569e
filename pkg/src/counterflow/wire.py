"""Length-prefixed binary protocol for serving velocity evaluations.

Normative layout (full byte-level description in docs/protocol.md): every
frame travels as a little-endian u32 length prefix followed by that many
content bytes.  Content starts with the 4-byte magic "CFV1", a u8 message
type (0 hello, 1 eval_request, 2 eval_response, 3 error) and a u64 request
id.  Tensors cross the wire as float32, so an engine computing in float64
sees exactly one f64 -> f32 -> f64 round trip each way (reproduce it
in-process with backend.F32BoundaryBackend).

The client pipelines: requests may be issued concurrently and responses
are matched strictly by request id.  A hello/hello exchange precedes any
evaluation.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .backend import VelocityBackend, VelocityBatch, VelocityRequest
from .core import ConditionId, ConditionPair
from .errors import (
    BadMagic,
    ConditionError,
    LengthMismatch,
    ParameterError,
    ProtocolError,
    ServerError,
    ShapeError,
    TransportError,
    TruncatedFrame,
    UnknownMessageType,
)

MAGIC = b"CFV1"

MSG_HELLO = 0
MSG_EVAL_REQUEST = 1
MSG_EVAL_RESPONSE = 2
MSG_ERROR = 3

# server-reported error codes (type-3 payload)
ERR_BAD_MAGIC = 1
ERR_TRUNCATED = 2
ERR_UNKNOWN_TYPE = 3
ERR_LENGTH_MISMATCH = 4
ERR_BAD_REQUEST = 5
ERR_UNKNOWN_CONDITION = 6
ERR_SHAPE = 7
ERR_INTERNAL = 8

MAX_FRAME = 1 << 28  # 256 MiB sanity bound on declared frame length


@dataclass(frozen=True)
class Hello:
    request_id: int = 0


@dataclass(frozen=True)
class EvalItem:
    """One conditional evaluation: ids (None = null) plus an f32 tensor."""

    video_id: str | None
    text_id: str | None
    tensor: np.ndarray  # (frames, dims) float32


@dataclass(frozen=True)
class EvalRequest:
    request_id: int
    t: float
    items: tuple


@dataclass(frozen=True)
class EvalResponse:
    request_id: int
    tensors: tuple  # (frames, dims) float32 each


@dataclass(frozen=True)
class ErrorMessage:
    request_id: int
    code: int
    message: str


WireMessage = Hello | EvalRequest | EvalResponse | ErrorMessage


def _encode_string(s: str | None) -> bytes:
    raw = b"" if s is None else s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ParameterError("condition id longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def _encode_tensor(tensor: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.ndim != 2:
        raise ShapeError(f"wire tensors must be 2-D, got shape {arr.shape}")
    f, d = arr.shape
    return struct.pack("<II", f, d) + arr.tobytes(order="C")


def encode(msg: WireMessage) -> bytes:
    """Serialize a message to frame content (length prefix not included)."""
    if isinstance(msg, Hello):
        return MAGIC + struct.pack("<BQ", MSG_HELLO, msg.request_id)
    if isinstance(msg, EvalRequest):
        if not msg.items:
            raise ParameterError("eval_request must carry at least one item")
        if len(msg.items) > 0xFFFF:
            raise ParameterError("batch size exceeds 65535")
        shapes = {tuple(item.tensor.shape) for item in msg.items}
        if len(shapes) > 1:
            raise ShapeError("all eval_request tensors must share one shape")
        body = struct.pack("<dH", msg.t, len(msg.items))
        for item in msg.items:
            body += _encode_string(item.video_id)
            body += _encode_string(item.text_id)
            body += _encode_tensor(item.tensor)
        return MAGIC + struct.pack("<BQ", MSG_EVAL_REQUEST, msg.request_id) + body
    if isinstance(msg, EvalResponse):
        if not msg.tensors:
            raise ParameterError("eval_response must carry at least one tensor")
        body = struct.pack("<H", len(msg.tensors))
        for tensor in msg.tensors:
            body += _encode_tensor(tensor)
        return MAGIC + struct.pack("<BQ", MSG_EVAL_RESPONSE, msg.request_id) + body
    if isinstance(msg, ErrorMessage):
        raw = msg.message.encode("utf-8")[:0xFFFF]
        body = struct.pack("<HH", msg.code, len(raw)) + raw
        return MAGIC + struct.pack("<BQ", MSG_ERROR, msg.request_id) + body
    raise ParameterError(f"cannot encode {type(msg).__name__}")


class _Cursor:
    """Bounds-checked reader over frame content."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFrame(f"frame ended {self.pos + n - len(self.buf)} bytes early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str | None:
        (n,) = self.unpack("<H")
        raw = self.take(n)
        return raw.decode("utf-8") if n else None

    def tensor(self) -> np.ndarray:
        f, d = self.unpack("<II")
        if f < 1 or d < 1:
            raise LengthMismatch(f"tensor declares empty shape ({f}, {d})")
        raw = self.take(4 * f * d)
        return np.frombuffer(raw, dtype="<f4").reshape(f, d).copy()

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise LengthMismatch(f"{len(self.buf) - self.pos} unconsumed bytes in frame")


def decode(content: bytes) -> WireMessage:
    """Parse frame content; decode(encode(m)) == m bit-exactly."""
    cur = _Cursor(content)
    if cur.take(4) != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}")
    msg_type, request_id = cur.unpack("<BQ")
    if msg_type == MSG_HELLO:
        cur.done()
        return Hello(request_id)
    if msg_type == MSG_EVAL_REQUEST:
        t, batch = cur.unpack("<dH")
        if batch == 0:
            raise LengthMismatch("eval_request declares an empty batch")
        items = []
        for _ in range(batch):
            video_id = cur.string()
            text_id = cur.string()
            items.append(EvalItem(video_id, text_id, cur.tensor()))
        cur.done()
        return EvalRequest(request_id, t, tuple(items))
    if msg_type == MSG_EVAL_RESPONSE:
        (batch,) = cur.unpack("<H")
        if batch == 0:
            raise LengthMismatch("eval_response declares an empty batch")
        tensors = tuple(cur.tensor() for _ in range(batch))
        cur.done()
        return EvalResponse(request_id, tensors)
    if msg_type == MSG_ERROR:
        code, n = cur.unpack("<HH")
        message = cur.take(n).decode("utf-8")
        cur.done()
        return ErrorMessage(request_id, code, message)
    raise UnknownMessageType(f"message type {msg_type}")


# --- framing over a socket --------------------------------------------------


def send_frame(sock: socket.socket, content: bytes) -> None:
    sock.sendall(struct.pack("<I", len(content)) + content)


def _recv_exact(sock: socket.socket, n: int, at_boundary: bool) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if at_boundary and got == 0:
                return None
            raise TruncatedFrame(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one frame's content; None when the peer closed cleanly."""
    head = _recv_exact(sock, 4, at_boundary=True)
    if head is None:
        return None
    (length,) = struct.unpack("<I", head)
    if length > MAX_FRAME:
        raise LengthMismatch(f"declared frame length {length} exceeds limit")
    return _recv_exact(sock, length, at_boundary=False)


def parse_endpoint(endpoint) -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint
    host, sep, port = str(endpoint).rpartition(":")
    if not sep or not port.isdigit():
        raise ParameterError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


# --- client -----------------------------------------------------------------


class RemoteBackend(VelocityBackend):
    """Velocity backend proxied over the wire protocol.

    Safe for concurrent evaluate calls: requests are pipelined on one
    connection and responses matched by request id in a reader thread.
    """

    thread_safe = True

    def __init__(self, endpoint, timeout: float = 30.0):
        self.endpoint = parse_endpoint(endpoint)
        self.timeout = timeout
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict = {}
        self._next_id = 1
        self._closed = False
        try:
            self._sock = socket.create_connection(self.endpoint, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {self.endpoint}: {exc}") from exc
        self._sock.settimeout(timeout)
        try:
            send_frame(self._sock, encode(Hello(0)))
            content = recv_frame(self._sock)
            if content is None:
                raise TransportError("server closed during handshake")
            reply = decode(content)
            if not isinstance(reply, Hello):
                raise ProtocolError(f"expected hello ack, got {type(reply).__name__}")
        except (OSError, socket.timeout) as exc:
            self._sock.close()
            raise TransportError(f"handshake failed: {exc}") from exc
        except Exception:
            self._sock.close()
            raise
        self._sock.settimeout(None)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # each pending entry is [event, result-or-None, exception-or-None]
    def _read_loop(self) -> None:
        try:
            while True:
                content = recv_frame(self._sock)
                if content is None:
                    self._fail_all(TransportError("server closed the connection"))
                    return
                msg = decode(content)
                if isinstance(msg, EvalResponse):
                    self._resolve(msg.request_id, result=msg)
                elif isinstance(msg, ErrorMessage):
                    self._resolve(
                        msg.request_id, error=ServerError(msg.code, msg.message)
                    )
                else:
                    raise ProtocolError(f"unexpected {type(msg).__name__} mid-session")
        except Exception as exc:  # noqa: BLE001 - every reader failure poisons the pipe
            self._fail_all(exc if isinstance(exc, Exception) else TransportError(str(exc)))

    def _resolve(self, request_id: int, result=None, error=None) -> None:
        with self._state_lock:
            entry = self._pending.pop(request_id, None)
        if entry is None:
            raise ProtocolError(f"response for unknown request id {request_id}")
        entry[1] = result
        entry[2] = error
        entry[0].set()

    def _fail_all(self, exc: Exception) -> None:
        with self._state_lock:
            pending = list(self._pending.values())
            self._pending.clear()
            self._closed = True
        for entry in pending:
            entry[1] = None
            entry[2] = exc
            entry[0].set()

    def evaluate(self, batch: VelocityBatch) -> list[np.ndarray]:
        with self._state_lock:
            if self._closed:
                raise TransportError("connection is closed")
            request_id = self._next_id
            self._next_id += 1
            entry = [threading.Event(), None, None]
            self._pending[request_id] = entry
        items = tuple(
            EvalItem(
                r.cond.video.id,
                r.cond.text.id,
                r.latent.astype(np.float32),
            )
            for r in batch
        )
        try:
            payload = encode(EvalRequest(request_id, batch.t, items))
            with self._write_lock:
                send_frame(self._sock, payload)
        except OSError as exc:
            with self._state_lock:
                self._pending.pop(request_id, None)
            raise TransportError(f"send failed: {exc}") from exc
        if not entry[0].wait(self.timeout):
            with self._state_lock:
                self._pending.pop(request_id, None)
            raise TransportError(f"timed out after {self.timeout}s waiting for request {request_id}")
        if entry[2] is not None:
            raise entry[2]
        response = entry[1]
        if len(response.tensors) != len(batch):
            raise ProtocolError(
                f"expected {len(batch)} velocities, got {len(response.tensors)}"
            )
        out = []
        for r, tensor in zip(batch, response.tensors):
            if tensor.shape != r.latent.shape:
                raise ShapeError(f"velocity shape {tensor.shape} != latent {r.latent.shape}")
            out.append(tensor.astype(np.float64))
        return out

    def close(self) -> None:
        with self._state_lock:
            self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --- in-process loopback server ----------------------------------------------


class BackendServer:
    """Serve any in-process backend over the wire protocol (loopback tests).

    Connections are handled one at a time; frames within a connection are
    answered in arrival order.  Backend exceptions become type-3 messages
    and the connection survives; protocol violations get a type-3 then the
    connection closes.
    """

    def __init__(self, backend: VelocityBackend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.endpoint = "%s:%d" % self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    def start(self) -> "BackendServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)
        self._listener.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                try:
                    self._handle_connection(conn)
                except (OSError, TruncatedFrame):
                    pass  # peer went away; wait for the next connection

    def _handle_connection(self, conn: socket.socket) -> None:
        content = recv_frame(conn)
        if content is None:
            return
        try:
            msg = decode(content)
        except BadMagic:
            send_frame(conn, encode(ErrorMessage(0, ERR_BAD_MAGIC, "bad magic")))
            return
        if not isinstance(msg, Hello):
            send_frame(conn, encode(ErrorMessage(0, ERR_BAD_REQUEST, "hello required first")))
            return
        send_frame(conn, encode(Hello(msg.request_id)))

        while not self._stop.is_set():
            content = recv_frame(conn)
            if content is None:
                return
            try:
                msg = decode(content)
            except BadMagic as exc:
                send_frame(conn, encode(ErrorMessage(0, ERR_BAD_MAGIC, str(exc))))
                return
            except UnknownMessageType as exc:
                send_frame(conn, encode(ErrorMessage(0, ERR_UNKNOWN_TYPE, str(exc))))
                return
            except (TruncatedFrame, LengthMismatch) as exc:
                send_frame(conn, encode(ErrorMessage(0, ERR_LENGTH_MISMATCH, str(exc))))
                return
            if not isinstance(msg, EvalRequest):
                send_frame(
                    conn, encode(ErrorMessage(0, ERR_BAD_REQUEST, "expected eval_request"))
                )
                return
            send_frame(conn, self._answer(msg))

    def _answer(self, msg: EvalRequest) -> bytes:
        try:
            requests = [
                VelocityRequest(
                    item.tensor.astype(np.float64),
                    msg.t,
                    ConditionPair(
                        ConditionId("video", item.video_id), ConditionId("text", item.text_id)
                    ),
                )
                for item in msg.items
            ]
            velocities = self.backend.evaluate(VelocityBatch(requests))
            tensors = tuple(v.astype(np.float32) for v in velocities)
            return encode(EvalResponse(msg.request_id, tensors))
        except ConditionError as exc:
            return encode(ErrorMessage(msg.request_id, ERR_UNKNOWN_CONDITION, str(exc)))
        except ShapeError as exc:
            return encode(ErrorMessage(msg.request_id, ERR_SHAPE, str(exc)))
        except Exception as exc:  # noqa: BLE001 - model errors must not drop the link
            return encode(ErrorMessage(msg.request_id, ERR_INTERNAL, str(exc)))
