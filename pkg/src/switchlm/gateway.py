"""Single-endpoint gateway: one chat surface over pluggable model backends.

The gateway owns the expert-token head and applies it to the meta backend's
hidden states itself, so experts plug in without touching the meta model.
Each request runs an isolated generation session; backend calls are
serialized per backend by default. With tracing disabled (the default) the
response schema never mentions experts, so the collaboration is invisible.

Config is a JSON file; SWITCHLM_LISTEN and SWITCHLM_HEAD override the
listen address and head path without editing it.
"""

from __future__ import annotations

import json
import os
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import backbone as bb
from .head import ExpertTokenHead, HeadError, attach, load_head
from .orchestrator import Limits, LocalBackend, generate, trace_record
from .vocab import Vocabulary
from .wire import (
    PROTOCOL_VERSION,
    RemoteBackend,
    WireError,
    error_response,
    read_message,
    require_field,
    write_message,
)

LISTEN_ENV = "SWITCHLM_LISTEN"
HEAD_ENV = "SWITCHLM_HEAD"


class GatewayError(RuntimeError):
    """Bad gateway configuration or startup failure."""


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    kind: str  # "in-process" or "remote"
    address: str | None = None
    capabilities: tuple[str, ...] = ("generate",)
    checkpoint: str | None = None
    vocabulary: str | None = None

    def __post_init__(self):
        if self.kind not in ("in-process", "remote"):
            raise GatewayError(f"backend {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "remote" and not self.address:
            raise GatewayError(f"backend {self.name!r}: remote backend needs an address")
        if self.kind == "in-process" and not (self.checkpoint and self.vocabulary):
            raise GatewayError(
                f"backend {self.name!r}: in-process backend needs checkpoint and vocabulary"
            )


@dataclass(frozen=True)
class GatewayConfig:
    meta: BackendDescriptor
    experts: tuple[BackendDescriptor, ...]
    head_path: str
    vocabulary_path: str
    limits: Limits = field(default_factory=Limits)
    listen: str = "127.0.0.1:0"
    timeout_s: float = 30.0
    include_trace: bool = False
    backend_concurrency: int = 1

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise GatewayError("timeout must be positive")
        if self.backend_concurrency < 1:
            raise GatewayError("backend_concurrency must be >= 1")
        for cap in ("hidden_state", "word_logits"):
            if cap not in self.meta.capabilities:
                raise GatewayError(f"meta backend must expose {cap}")


def _descriptor_from_json(obj: dict) -> BackendDescriptor:
    return BackendDescriptor(
        name=obj["name"],
        kind=obj.get("kind", "in-process"),
        address=obj.get("address"),
        capabilities=tuple(obj.get("capabilities", ("generate",))),
        checkpoint=obj.get("checkpoint"),
        vocabulary=obj.get("vocabulary"),
    )


def load_gateway_config(path: str | Path) -> GatewayConfig:
    """Parse a gateway config file, applying environment overrides."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GatewayError(f"config is not valid JSON: {exc}") from exc
    limits_doc = doc.get("limits", {})
    meta_doc = dict(doc["meta"])
    meta_doc.setdefault("capabilities", ("hidden_state", "word_logits", "generate"))
    return GatewayConfig(
        meta=_descriptor_from_json(meta_doc),
        experts=tuple(_descriptor_from_json(e) for e in doc.get("experts", [])),
        head_path=os.environ.get(HEAD_ENV, doc["head"]),
        vocabulary_path=doc["vocabulary"],
        limits=Limits(
            max_new_tokens=int(limits_doc.get("max_new_tokens", 128)),
            max_switches=int(limits_doc.get("max_switches", 1)),
        ),
        listen=os.environ.get(LISTEN_ENV, doc.get("listen", "127.0.0.1:0")),
        timeout_s=float(doc.get("timeout_s", 30.0)),
        include_trace=bool(doc.get("include_trace", False)),
        backend_concurrency=int(doc.get("backend_concurrency", 1)),
    )


class _SerializedBackend:
    """Caps in-flight requests per backend; default one at a time."""

    def __init__(self, inner, slots: int):
        self._inner = inner
        self._sem = threading.Semaphore(slots)
        self.name = getattr(inner, "name", "?")
        self.capabilities = getattr(inner, "capabilities", ())

    def __getattr__(self, attr):
        fn = getattr(self._inner, attr)
        if not callable(fn):
            return fn

        def guarded(*args, **kwargs):
            with self._sem:
                return fn(*args, **kwargs)

        return guarded


def build_backend(desc: BackendDescriptor, timeout_s: float = 30.0):
    """Turn a descriptor into a live handle; connects or loads immediately."""
    if desc.kind == "remote":
        backend = RemoteBackend(
            desc.name, desc.address, capabilities=desc.capabilities, timeout_s=timeout_s
        )
        backend.connect()
        return backend
    model = bb.load_checkpoint(desc.checkpoint, Vocabulary.load(desc.vocabulary))
    return LocalBackend(name=desc.name, model=model)


def _backend_fingerprint(backend) -> str:
    if isinstance(backend, RemoteBackend):
        return backend.fingerprint()
    return bb.fingerprint(backend.model)


@dataclass
class Gateway:
    config: GatewayConfig
    vocab: Vocabulary
    head: ExpertTokenHead
    meta: object
    experts: list

    @classmethod
    def start(cls, config: GatewayConfig) -> "Gateway":
        """Load everything and verify compatibility; refuses on any failure."""
        vocab = Vocabulary.load(config.vocabulary_path)
        head = load_head(config.head_path)
        try:
            meta = build_backend(config.meta, config.timeout_s)
            experts = [build_backend(d, config.timeout_s) for d in config.experts]
        except (OSError, WireError) as exc:
            raise GatewayError(f"backend unreachable at startup: {exc}") from exc
        if _backend_fingerprint(meta) != head.backbone_fingerprint:
            raise GatewayError(
                "fingerprint mismatch: head was trained against a different meta backbone"
            )
        if isinstance(meta, LocalBackend):
            attach(head, meta.model)
        names = [d.name for d in config.experts]
        if list(head.names()) != names:
            raise GatewayError(
                f"expert order mismatch: head rows {list(head.names())} vs config {names}"
            )
        slots = config.backend_concurrency
        return cls(
            config=config,
            vocab=vocab,
            head=head,
            meta=_SerializedBackend(meta, slots),
            experts=[_SerializedBackend(e, slots) for e in experts],
        )

    def chat_generate(self, query: str, max_new_tokens: int | None = None) -> dict:
        """One isolated session; the response body hides the machinery."""
        limits = self.config.limits
        if max_new_tokens is not None:
            limits = Limits(max_new_tokens=max_new_tokens, max_switches=limits.max_switches)
        result = generate(query, self.meta, self.head, self.experts, self.vocab, limits)
        body = {"response": result.response}
        if self.config.include_trace:
            body["trace"] = trace_record(result)
        return body

    def close(self) -> None:
        for backend in (self.meta, *self.experts):
            close_fn = getattr(backend, "close", None)
            if callable(close_fn):
                close_fn()


class _GatewayHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                req = read_message(self.rfile)
            except WireError as exc:
                write_message(self.wfile, error_response(str(exc)))
                return
            if req is None:
                return
            write_message(self.wfile, self._respond(req))

    def _respond(self, req: dict) -> dict:
        try:
            if req.get("v") != PROTOCOL_VERSION:
                raise WireError(
                    f"protocol version mismatch: got {req.get('v')!r}, speak {PROTOCOL_VERSION}"
                )
            method = require_field(req, "method", str)
            if method != "chat_generate":
                raise WireError(f"unknown method {method!r}")
            params = req.get("params", {})
            if not isinstance(params, dict):
                raise WireError("field 'params' has wrong type")
            query = require_field(params, "query", str)
            max_new = params.get("max_new_tokens")
            if max_new is not None and not isinstance(max_new, int):
                raise WireError("field 'max_new_tokens' has wrong type")
            body = self.server.gateway.chat_generate(query, max_new)
            return {"v": PROTOCOL_VERSION, "result": body}
        except WireError as exc:
            return error_response(str(exc))
        except Exception as exc:
            return error_response(f"{type(exc).__name__}: {exc}")


class GatewayServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, gateway: Gateway):
        host, _, port = gateway.config.listen.rpartition(":")
        if not host or not port.isdigit():
            raise GatewayError(f"bad listen address {gateway.config.listen!r}, want host:port")
        super().__init__((host, int(port)), _GatewayHandler)
        self.gateway = gateway

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def serve_in_thread(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


class GatewayClient:
    """Client for the chat endpoint; schema-identical to a single-model chat."""

    def __init__(self, address: str, timeout_s: float = 30.0):
        self._backend = RemoteBackend("gateway", address, capabilities=(), timeout_s=timeout_s)

    def chat_generate(self, query: str, max_new_tokens: int | None = None) -> dict:
        params: dict = {"query": query}
        if max_new_tokens is not None:
            params["max_new_tokens"] = int(max_new_tokens)
        try:
            return self._backend._rpc("chat_generate", params)
        except WireError as exc:
            raise GatewayError(str(exc)) from exc

    def close(self) -> None:
        self._backend.close()
