"""HTTP/1.1 execution layer: sockets, framing, object pool, sequences.

Requests go out on a fresh TCP connection each, as raw bytes, because the
whole point of a fuzzer is that nothing between the grammar and the wire
"helpfully" rewrites the message. Responses are parsed with the three
framing rules (Content-Length, chunked, connection close) and classified as
Valid (2xx), Bug (matches the configured error classes, 5xx by default) or
Invalid (everything else; redirects are never followed).

While a sequence runs, values extracted from 2xx responses live in a
DynamicObjectPool private to that one execution. Consumers receive values in
production order; once every value of a type has been consumed, later
consumers reuse the most recent one, which is how destroyed-object reuse
turns into an observable 4xx instead of a dead end.
"""

from __future__ import annotations

import json
import logging
import socket
import ssl
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

from .grammar import ProducerSpec, RenderedRequest, RequestTemplate, ResourceType

logger = logging.getLogger(__name__)

DEFAULT_AUTH_HEADER = "PRIVATE-TOKEN"
_MAX_HEAD_BYTES = 1 << 20
_MAX_BODY_BYTES = 1 << 26


class ExecutorError(Exception):
    pass


class TransportFailure(ExecutorError):
    """A single request failed below HTTP: connect/write/read/framing."""

    def __init__(self, phase: str, detail: str):
        super().__init__(f"{phase}: {detail}")
        self.phase = phase


class TargetUnreachable(ExecutorError):
    """The no-op reachability probe could not open a TCP connection."""


class UnresolvableConsumer(ExecutorError):
    """The pool holds no value at all for a consumed resource type.

    With sound dependency inference this indicates a bug in the engine or
    the grammar, not in the target.
    """


class BodyParseError(ExecutorError):
    """A 2xx response body was not parseable for object extraction."""


class ResponseClass:
    VALID = "valid"
    INVALID = "invalid"
    BUG = "bug"


DEFAULT_ERROR_STATUS_CLASSES = ("5xx",)


def _match_status(status: int, pattern: str) -> bool:
    if pattern.isdigit():
        return status == int(pattern)
    return len(pattern) == 3 and str(status // 100) == pattern[0] and pattern[1:].lower() == "xx"


def validate_status_patterns(patterns: Sequence[str]) -> tuple[str, ...]:
    for p in patterns:
        ok = (p.isdigit() and len(p) == 3) or (
            len(p) == 3 and p[0].isdigit() and p[1:].lower() == "xx"
        )
        if not ok:
            raise ExecutorError(f"bad status pattern {p!r} (want e.g. '5xx' or '503')")
    return tuple(patterns)


def classify_status(status: int, error_classes: Sequence[str] = DEFAULT_ERROR_STATUS_CLASSES) -> str:
    """Total classification: bug patterns first, then 2xx, then invalid."""
    if any(_match_status(status, p) for p in error_classes):
        return ResponseClass.BUG
    if 200 <= status <= 299:
        return ResponseClass.VALID
    return ResponseClass.INVALID


def status_class_label(status: int) -> str:
    if 100 <= status <= 599:
        return f"{status // 100}xx"
    return "other"


@dataclass(frozen=True)
class ConnectionConfig:
    host: str
    port: int
    secure: bool = False
    connect_timeout: float = 5.0
    read_timeout: float = 30.0


@dataclass
class AuthConfig:
    """Where the auth header comes from. Tokens never travel via argv."""

    header_name: str = DEFAULT_AUTH_HEADER
    token: str | None = None
    token_file: Path | None = None

    def current_token(self) -> str | None:
        if self.token_file is not None:
            try:
                return Path(self.token_file).read_text().strip() or None
            except OSError as exc:
                logger.warning("could not refresh auth token: %s", exc)
                return self.token
        return self.token

    def header_line(self) -> bytes | None:
        token = self.current_token()
        if token is None:
            return None
        return f"{self.header_name}: {token}\r\n".encode("utf-8")


@dataclass(frozen=True)
class HttpExchange:
    """One request/response pair, bytes as they crossed the wire."""

    request: bytes
    status: int
    reason: str
    headers: tuple[tuple[str, str], ...]
    body: bytes
    started: float
    duration: float

    def header(self, name: str) -> str | None:
        lowered = name.lower()
        for key, value in self.headers:
            if key.lower() == lowered:
                return value
        return None

    def response_head(self) -> bytes:
        lines = [f"HTTP/1.1 {self.status} {self.reason}".encode("utf-8")]
        lines += [f"{k}: {v}".encode("utf-8") for k, v in self.headers]
        return b"\r\n".join(lines) + b"\r\n\r\n"


def inject_header(request: bytes, header_line: bytes) -> bytes:
    """Insert one header line immediately before the blank line."""
    head, sep, rest = request.partition(b"\r\n\r\n")
    if not sep:
        raise ExecutorError("request has no header/body separator")
    if not header_line.endswith(b"\r\n"):
        header_line += b"\r\n"
    return head + b"\r\n" + header_line + b"\r\n" + rest


def redact_header_value(message: bytes, header_name: str) -> bytes:
    """Replace a header's value with [FILTERED] so secrets never hit disk."""
    head, sep, rest = message.partition(b"\r\n\r\n")
    needle = header_name.lower().encode("latin-1") + b":"
    lines = []
    for line in head.split(b"\r\n"):
        if line.lower().startswith(needle):
            lines.append(line.split(b":", 1)[0] + b": [FILTERED]")
        else:
            lines.append(line)
    return b"\r\n".join(lines) + sep + rest


def probe_target(conn: ConnectionConfig) -> None:
    """No-op reachability check: open and close one TCP connection."""
    try:
        sock = socket.create_connection((conn.host, conn.port), timeout=conn.connect_timeout)
        sock.close()
    except OSError as exc:
        raise TargetUnreachable(f"{conn.host}:{conn.port} is unreachable: {exc}") from exc


def send_request(request: bytes, conn: ConnectionConfig) -> HttpExchange:
    """One complete HTTP/1.1 round trip on a dedicated connection."""
    started = time.time()
    t0 = time.monotonic()
    try:
        sock = socket.create_connection((conn.host, conn.port), timeout=conn.connect_timeout)
    except OSError as exc:
        raise TransportFailure("connect", str(exc)) from exc
    try:
        if conn.secure:
            context = ssl.create_default_context()
            context.check_hostname = False
            context.verify_mode = ssl.CERT_NONE
            try:
                sock = context.wrap_socket(sock, server_hostname=conn.host)
            except (OSError, ssl.SSLError) as exc:
                raise TransportFailure("connect", f"TLS handshake failed: {exc}") from exc
        sock.settimeout(conn.read_timeout)
        try:
            sock.sendall(request)
        except OSError as exc:
            raise TransportFailure("write", str(exc)) from exc
        status, reason, headers, body = _read_response(sock)
    finally:
        try:
            sock.close()
        except OSError:
            pass
    return HttpExchange(
        request=request,
        status=status,
        reason=reason,
        headers=headers,
        body=body,
        started=started,
        duration=time.monotonic() - t0,
    )


def _read_exact(sock: socket.socket, buffer: bytearray, count: int) -> bytes:
    while len(buffer) < count:
        chunk = _recv(sock)
        if not chunk:
            raise TransportFailure("frame", "connection closed mid-body")
        buffer.extend(chunk)
    out = bytes(buffer[:count])
    del buffer[:count]
    return out


def _recv(sock: socket.socket) -> bytes:
    try:
        return sock.recv(65536)
    except socket.timeout as exc:
        raise TransportFailure("read", "timed out waiting for response") from exc
    except OSError as exc:
        raise TransportFailure("read", str(exc)) from exc


def _read_line(sock: socket.socket, buffer: bytearray) -> bytes:
    while b"\r\n" not in buffer:
        chunk = _recv(sock)
        if not chunk:
            raise TransportFailure("frame", "connection closed inside chunked framing")
        buffer.extend(chunk)
    line, _, rest = bytes(buffer).partition(b"\r\n")
    del buffer[: len(line) + 2]
    return line


def _read_response(sock: socket.socket) -> tuple[int, str, tuple[tuple[str, str], ...], bytes]:
    buffer = bytearray()
    while b"\r\n\r\n" not in buffer:
        chunk = _recv(sock)
        if not chunk:
            raise TransportFailure("frame", "connection closed before response head")
        buffer.extend(chunk)
        if len(buffer) > _MAX_HEAD_BYTES:
            raise TransportFailure("frame", "response head too large")
    head, _, remainder = bytes(buffer).partition(b"\r\n\r\n")
    buffer = bytearray(remainder)

    lines = head.split(b"\r\n")
    parts = lines[0].split(None, 2)
    if len(parts) < 2 or not parts[0].startswith(b"HTTP/"):
        raise TransportFailure("frame", f"bad status line {lines[0]!r}")
    try:
        status = int(parts[1])
    except ValueError as exc:
        raise TransportFailure("frame", f"bad status code in {lines[0]!r}") from exc
    reason = parts[2].decode("latin-1") if len(parts) == 3 else ""

    headers: list[tuple[str, str]] = []
    for raw in lines[1:]:
        name, sep, value = raw.partition(b":")
        if sep:
            headers.append((name.decode("latin-1").strip(), value.decode("latin-1").strip()))

    def header(name: str) -> str | None:
        for key, value in headers:
            if key.lower() == name:
                return value
        return None

    transfer = (header("transfer-encoding") or "").lower()
    if "chunked" in transfer:
        body = bytearray()
        while True:
            size_line = _read_line(sock, buffer)
            try:
                size = int(size_line.split(b";", 1)[0].strip(), 16)
            except ValueError as exc:
                raise TransportFailure("frame", f"bad chunk size {size_line!r}") from exc
            if size == 0:
                # consume trailer lines until the final blank
                while _read_line(sock, buffer) != b"":
                    pass
                break
            body.extend(_read_exact(sock, buffer, size))
            if _read_exact(sock, buffer, 2) != b"\r\n":
                raise TransportFailure("frame", "chunk missing terminator")
            if len(body) > _MAX_BODY_BYTES:
                raise TransportFailure("frame", "response body too large")
        return status, reason, tuple(headers), bytes(body)

    length_value = header("content-length")
    if length_value is not None:
        try:
            length = int(length_value)
        except ValueError as exc:
            raise TransportFailure("frame", f"bad Content-Length {length_value!r}") from exc
        if length > _MAX_BODY_BYTES:
            raise TransportFailure("frame", "response body too large")
        return status, reason, tuple(headers), _read_exact(sock, buffer, length)

    # No framing header: read until the server closes the connection.
    body = bytearray(buffer)
    while True:
        chunk = _recv(sock)
        if not chunk:
            break
        body.extend(chunk)
        if len(body) > _MAX_BODY_BYTES:
            raise TransportFailure("frame", "response body too large")
    return status, reason, tuple(headers), bytes(body)


class Transport(Protocol):
    def roundtrip(self, request: bytes) -> HttpExchange: ...


class SocketTransport:
    """Production transport: auth injection plus one socket per request."""

    def __init__(self, conn: ConnectionConfig, auth: AuthConfig | None = None):
        self.conn = conn
        self.auth = auth

    def roundtrip(self, request: bytes) -> HttpExchange:
        if self.auth is not None:
            line = self.auth.header_line()
            if line is not None:
                request = inject_header(request, line)
        return send_request(request, self.conn)


# --------------------------------------------------------------------------
# Dynamic objects


def value_to_text(value) -> str:
    """Render an extracted JSON value as request text."""
    if isinstance(value, str):
        return value
    if value is True:
        return "true"
    if value is False:
        return "false"
    if value is None:
        return "null"
    return str(value)


@dataclass
class _PoolEntry:
    value: object
    consumed: bool = False


class DynamicObjectPool:
    """Values extracted during one sequence execution, FIFO per type."""

    def __init__(self, external_values: Mapping[ResourceType, str] | None = None):
        self._values: dict[ResourceType, list[_PoolEntry]] = {}
        self._external = dict(external_values or {})

    def add(self, resource: ResourceType, value: object) -> None:
        self._values.setdefault(resource, []).append(_PoolEntry(value))

    def resolve(self, resource: ResourceType) -> object:
        """Earliest unconsumed value; after exhaustion, reuse the newest."""
        entries = self._values.get(resource, [])
        for entry in entries:
            if not entry.consumed:
                entry.consumed = True
                return entry.value
        if entries:
            return entries[-1].value
        if resource in self._external:
            return self._external[resource]
        raise UnresolvableConsumer(f"no value of type {resource} was ever produced")

    def size(self) -> int:
        return sum(len(v) for v in self._values.values())

    def values_of(self, resource: ResourceType) -> list[object]:
        return [e.value for e in self._values.get(resource, [])]


_warned_missing_paths: set[tuple[str, str]] = set()


def extract_objects(
    exchange: HttpExchange, producers: Sequence[ProducerSpec]
) -> list[tuple[ResourceType, object]]:
    """Pull produced values out of a 2xx response body.

    Raises BodyParseError when the body is not structured; a missing
    extraction path is only a warning (that producer yields nothing),
    and only the first occurrence per producer is logged.
    """
    if not producers:
        return []
    try:
        parsed = json.loads(exchange.body.decode("utf-8")) if exchange.body else None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BodyParseError(f"response body is not valid JSON: {exc}") from exc

    out: list[tuple[ResourceType, object]] = []
    for spec in producers:
        node = parsed
        ok = True
        for step in spec.extraction_path:
            if isinstance(step, int) and not isinstance(step, bool):
                if isinstance(node, list) and -len(node) <= step < len(node):
                    node = node[step]
                else:
                    ok = False
                    break
            else:
                if isinstance(node, dict) and step in node:
                    node = node[step]
                else:
                    ok = False
                    break
        if ok:
            out.append((spec.resource, node))
        else:
            key = (spec.resource.name, repr(spec.extraction_path))
            if key not in _warned_missing_paths:
                _warned_missing_paths.add(key)
                logger.warning(
                    "producer %s: extraction path %r missing in response "
                    "(further occurrences suppressed)",
                    spec.resource,
                    list(spec.extraction_path),
                )
    return out


# --------------------------------------------------------------------------
# Sequence execution


@dataclass
class ExecutionResult:
    exchanges: list[HttpExchange]
    final_class: str
    steps_executed: int
    extracted: int = 0
    failure: str | None = None

    @property
    def completed(self) -> bool:
        return self.final_class == ResponseClass.VALID


@dataclass(frozen=True)
class ExchangeContext:
    """What the telemetry sink is told alongside each exchange."""

    test_index: int
    sequence_length: int
    step_index: int
    template_id: str
    rendering_index: int = 0


class SequenceExecutor:
    """Executes rendered request sequences against one transport."""

    def __init__(
        self,
        transport: Transport,
        template_lookup: Callable[[str], RequestTemplate],
        error_classes: Sequence[str] = DEFAULT_ERROR_STATUS_CLASSES,
        external_values: Mapping[ResourceType, str] | None = None,
        sink=None,
    ):
        self.transport = transport
        self.template_lookup = template_lookup
        self.error_classes = tuple(error_classes)
        self.external_values = dict(external_values or {})
        self.sink = sink

    def execute_sequence(
        self,
        steps: Sequence[RenderedRequest],
        test_index: int = 0,
    ) -> ExecutionResult:
        """Run the steps in order with a fresh pool.

        Execution stops at the first non-2xx step; the returned class is the
        last executed step's class (an empty sequence is trivially valid).
        Transport failures are recorded and reported as Invalid.
        """
        pool = DynamicObjectPool(self.external_values)
        exchanges: list[HttpExchange] = []
        extracted = 0
        attempted = 0
        final_class = ResponseClass.VALID
        failure: str | None = None

        for step_index, rendered in enumerate(steps):
            attempted += 1
            try:
                values: dict[ResourceType, bytes] = {}
                for resource in rendered.consumer_resources():
                    values[resource] = value_to_text(pool.resolve(resource)).encode("utf-8")
            except UnresolvableConsumer as exc:
                # Dependency checking should make this impossible; if it
                # happens anyway the run must not crash mid-campaign.
                failure = f"step {step_index + 1}: {exc}"
                logger.error("%s", failure)
                final_class = ResponseClass.INVALID
                break
            request = rendered.assemble(values)

            context = ExchangeContext(
                test_index=test_index,
                sequence_length=len(steps),
                step_index=step_index,
                template_id=rendered.template_id,
                rendering_index=rendered.rendering_index,
            )
            try:
                exchange = self.transport.roundtrip(request)
            except TransportFailure as exc:
                failure = f"step {step_index + 1} {exc.phase} failure: {exc}"
                logger.warning("%s", failure)
                final_class = ResponseClass.INVALID
                if self.sink is not None:
                    self.sink.record_failure(context, exc.phase, str(exc))
                break

            exchanges.append(exchange)
            final_class = classify_status(exchange.status, self.error_classes)
            if self.sink is not None:
                self.sink.record_exchange(exchange, context)

            if final_class != ResponseClass.VALID:
                break

            template = self.template_lookup(rendered.template_id)
            if template.producers:
                try:
                    for resource, value in extract_objects(exchange, template.producers):
                        pool.add(resource, value)
                        extracted += 1
                except BodyParseError as exc:
                    logger.warning("%s: %s", rendered.template_id, exc)

        return ExecutionResult(
            exchanges=exchanges,
            final_class=final_class,
            steps_executed=attempted,
            extracted=extracted,
            failure=failure,
        )
