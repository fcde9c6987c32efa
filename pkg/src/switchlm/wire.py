"""Length-delimited JSON wire protocol and single-model backend servers.

Framing: ASCII decimal payload length, a newline, then the UTF-8 JSON
payload. Requests are {"v": 1, "method": ..., "params": {...}}; responses
are {"v": 1, "result": {...}} or {"v": 1, "error": {"message": ...}}.
Floats ride as shortest round-trippable decimals (standard JSON repr), so a
float32 tensor survives the trip bit-exactly after a cast back.

Backend methods:
  hidden_state  {"context": text}                  -> {"h": [d floats]}
  word_logits   {"context": text}                  -> {"logits": [|V| floats]}
  generate      {"context": text, "max_new_tokens": n} -> {"text": ...}
  fingerprint   {}                                 -> {"fingerprint": hex}

fingerprint is a startup handshake extension so a gateway can refuse a head
that was trained against a different backbone without trusting config paths.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading

import numpy as np

from . import backbone as bb
from .orchestrator import LocalBackend

PROTOCOL_VERSION = 1
MAX_MESSAGE_BYTES = 64 * 1024 * 1024


class WireError(RuntimeError):
    """Framing, validation, or transport failure; message names the field."""


# -- framing ---------------------------------------------------------------------


def write_message(stream, obj: dict) -> None:
    payload = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    stream.write(str(len(payload)).encode("ascii") + b"\n" + payload)
    stream.flush()


def read_message(stream) -> dict | None:
    """One framed JSON object, or None at a clean EOF between messages."""
    header = stream.readline(32)
    if not header:
        return None
    if not header.endswith(b"\n") or not header[:-1].isdigit():
        raise WireError(f"malformed length header {header!r}")
    length = int(header[:-1])
    if length > MAX_MESSAGE_BYTES:
        raise WireError(f"message of {length} bytes exceeds limit {MAX_MESSAGE_BYTES}")
    payload = b""
    while len(payload) < length:
        chunk = stream.read(length - len(payload))
        if not chunk:
            raise WireError(f"stream ended mid-message ({len(payload)}/{length} bytes)")
        payload += chunk
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"payload is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise WireError("payload must be a JSON object")
    return obj


def require_field(params: dict, field: str, kind) -> object:
    if field not in params:
        raise WireError(f"missing field {field!r}")
    value = params[field]
    if not isinstance(value, kind):
        raise WireError(f"field {field!r} has wrong type {type(value).__name__}")
    return value


# -- backend server -----------------------------------------------------------------


class _BackendHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                req = read_message(self.rfile)
            except WireError as exc:
                write_message(self.wfile, error_response(str(exc)))
                return
            if req is None:
                return
            write_message(self.wfile, _dispatch(self.server.backend, req))


def error_response(message: str) -> dict:
    return {"v": PROTOCOL_VERSION, "error": {"message": message}}


def _dispatch(backend: LocalBackend, req: dict) -> dict:
    try:
        if req.get("v") != PROTOCOL_VERSION:
            raise WireError(f"protocol version mismatch: got {req.get('v')!r}, "
                            f"speak {PROTOCOL_VERSION}")
        method = require_field(req, "method", str)
        params = req.get("params", {})
        if not isinstance(params, dict):
            raise WireError("field 'params' has wrong type")
        if method == "hidden_state":
            h = backend.hidden_state(require_field(params, "context", str))
            result = {"h": [float(x) for x in h]}
        elif method == "word_logits":
            z = backend.word_logits(require_field(params, "context", str))
            result = {"logits": [float(x) for x in z]}
        elif method == "generate":
            text = backend.generate(
                require_field(params, "context", str),
                int(require_field(params, "max_new_tokens", int)),
            )
            result = {"text": text}
        elif method == "fingerprint":
            result = {"fingerprint": bb.fingerprint(backend.model)}
        else:
            raise WireError(f"unknown method {method!r}")
        return {"v": PROTOCOL_VERSION, "result": result}
    except WireError as exc:
        return error_response(str(exc))
    except Exception as exc:
        return error_response(f"{type(exc).__name__}: {exc}")


class BackendServer(socketserver.ThreadingTCPServer):
    """Serves one model over the wire protocol; one thread per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, backend: LocalBackend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _BackendHandler)
        self.backend = backend

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def serve_in_thread(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve_backend(model: bb.BackboneModel, name: str, host: str, port: int) -> BackendServer:
    return BackendServer(LocalBackend(name=name, model=model), host, port)


# -- client -------------------------------------------------------------------------


class RemoteBackend:
    """Client handle satisfying the in-process backend interface.

    One persistent connection, one in-flight request at a time (the lock is
    the per-backend serialization default). Capability checks happen
    client-side before anything touches the network.
    """

    def __init__(self, name: str, address: str, capabilities=("generate",), timeout_s: float = 30.0):
        self.name = name
        self.address = address
        self.capabilities = tuple(capabilities)
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._stream = None

    def connect(self) -> None:
        host, _, port = self.address.rpartition(":")
        if not host or not port.isdigit():
            raise WireError(f"bad address {self.address!r}, want host:port")
        sock = socket.create_connection((host, int(port)), timeout=self.timeout_s)
        self._sock = sock
        self._stream = sock.makefile("rwb")

    def close(self) -> None:
        if self._stream is not None:
            self._stream.close()
            self._sock.close()
            self._stream = self._sock = None

    def _rpc(self, method: str, params: dict) -> dict:
        with self._lock:
            try:
                if self._stream is None:
                    self.connect()
                write_message(self._stream, {"v": PROTOCOL_VERSION, "method": method, "params": params})
                resp = read_message(self._stream)
            except (OSError, WireError) as exc:
                self.close()
                raise WireError(f"backend {self.name!r} at {self.address}: {exc}") from exc
        if resp is None:
            self.close()
            raise WireError(f"backend {self.name!r} closed the connection")
        if "error" in resp:
            raise WireError(f"backend {self.name!r}: {resp['error'].get('message', 'unknown error')}")
        result = resp.get("result")
        if not isinstance(result, dict):
            raise WireError("missing field 'result'")
        return result

    def _need(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise WireError(
                f"backend {self.name!r} does not declare capability {capability!r}"
            )

    def hidden_state(self, context: str) -> np.ndarray:
        self._need("hidden_state")
        result = self._rpc("hidden_state", {"context": context})
        return _float_array(result, "h")

    def word_logits(self, context: str) -> np.ndarray:
        self._need("word_logits")
        result = self._rpc("word_logits", {"context": context})
        return _float_array(result, "logits")

    def generate(self, context: str, max_new_tokens: int) -> str:
        self._need("generate")
        result = self._rpc("generate", {"context": context, "max_new_tokens": int(max_new_tokens)})
        text = result.get("text")
        if not isinstance(text, str):
            raise WireError("missing or non-string field 'text'")
        return text

    def fingerprint(self) -> str:
        result = self._rpc("fingerprint", {})
        fp = result.get("fingerprint")
        if not isinstance(fp, str):
            raise WireError("missing or non-string field 'fingerprint'")
        return fp


def _float_array(result: dict, field: str) -> np.ndarray:
    values = result.get(field)
    if not isinstance(values, list) or not all(isinstance(x, (int, float)) for x in values):
        raise WireError(f"missing or non-numeric field {field!r}")
    return np.asarray(values, dtype=np.float32)
