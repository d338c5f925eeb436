"""Black-box classifier adapters and the external wire protocol.

A classifier is anything with ``predict(x) -> probs`` (a probability
vector over ``class_count`` classes), plus a ``query_count`` that grows by
one per successful predict call. Attacks only ever see this surface.

Toy weights file: line 1 is a JSON header such as
``{"kind": "linear", "shapes": [[2, 12], [2]], "Y": 2, "input": [2, 2, 3]}``
terminated by a newline, followed by the tensors' little-endian float32
payloads concatenated in header order. ``linear`` computes
softmax(W x + b); ``mlp`` alternates affine and ReLU layers with a softmax
after the last affine.

Wire protocol (one JSON object per line, over the stdio pipes of a
spawned process or one HTTP POST body per message):

    request:  {"id": <uint64>, "shape": [H, W, C],
               "data": "<base64 of little-endian f32, row-major>"}
    response: {"id": <same>, "probs": [p1, ..., pY]}
    error:    {"id": <same>, "error": "<message>"}

Request ids strictly increase per connection; responses are matched by id
and stale ids from abandoned (timed-out) requests are tolerated. One
request may be outstanding per connection at a time; the adapter enforces
this with a lock, so a shared connection serializes concurrent callers.
"""

from __future__ import annotations

import base64
import json
import subprocess
import sys
import threading
import urllib.error
import urllib.request
from pathlib import Path
from queue import Empty, Queue

import numpy as np

__all__ = [
    "ModelError",
    "ProtocolError",
    "TransportError",
    "ToyModel",
    "load_toy_model",
    "save_toy_model",
    "ExternalModel",
    "connect_external",
    "encode_request",
]


class ModelError(Exception):
    """Base class for adapter failures."""


class ProtocolError(ModelError):
    """The peer answered, but not according to the wire protocol."""

    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(
            message if request_id is None else f"request {request_id}: {message}"
        )
        self.request_id = request_id


class TransportError(ModelError):
    """The peer could not be reached, died, or timed out."""


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


class ToyModel:
    """In-process linear or MLP classifier over flattened image tensors.

    Weights are held as float32 (the file payload precision) and the
    forward pass runs in float64, so save/load round-trips preserve
    predictions bit-exactly. Instances are immutable and thread-safe; the
    query counter is guarded by a lock.
    """

    def __init__(self, kind: str, layers, input_shape, class_count: int):
        if kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.layers = [
            (np.ascontiguousarray(w, dtype=np.float32), np.ascontiguousarray(b, dtype=np.float32))
            for w, b in layers
        ]
        self.input_shape = tuple(int(s) for s in input_shape)
        self.class_count = int(class_count)
        self._queries = 0
        self._lock = threading.Lock()
        self._validate_chain()

    def _validate_chain(self):
        if self.kind == "linear" and len(self.layers) != 1:
            raise ValueError("linear model must have exactly one affine layer")
        expected = int(np.prod(self.input_shape))
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
            if w.shape[1] != expected:
                raise ValueError(
                    f"layer {i} expects input {w.shape[1]}, previous layer gives {expected}"
                )
            expected = w.shape[0]
        if expected != self.class_count:
            raise ValueError(
                f"final layer width {expected} != declared class count {self.class_count}"
            )

    @property
    def query_count(self) -> int:
        return self._queries

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ValueError(f"input shape {x.shape} != model input {self.input_shape}")
        h = x.ravel()
        for w, b in self.layers[:-1]:
            h = np.maximum(w.astype(np.float64) @ h + b.astype(np.float64), 0.0)
        w, b = self.layers[-1]
        probs = _softmax(w.astype(np.float64) @ h + b.astype(np.float64))
        with self._lock:
            self._queries += 1
        return probs


def save_toy_model(model: ToyModel, path) -> None:
    tensors = [t for pair in model.layers for t in pair]
    header = json.dumps(
        {
            "kind": model.kind,
            "shapes": [list(t.shape) for t in tensors],
            "Y": model.class_count,
            "input": list(model.input_shape),
        },
        separators=(",", ":"),
    )
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        for tensor in tensors:
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_toy_model(path) -> ToyModel:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError("missing header line")
    try:
        header = json.loads(raw[:newline].decode("ascii"))
        kind = header["kind"]
        shapes = [tuple(s) for s in header["shapes"]]
        class_count = int(header["Y"])
        input_shape = tuple(header["input"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"malformed toy model header: {exc}") from exc
    if len(shapes) % 2 != 0:
        raise ValueError("shapes must come in (weight, bias) pairs")
    itemsize = 4
    total = sum(int(np.prod(s)) for s in shapes) * itemsize
    payload = raw[newline + 1 :]
    if len(payload) != total:
        raise ValueError(f"payload is {len(payload)} bytes, expected {total}")
    tensors = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        tensors.append(
            np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        )
        offset += count * itemsize
    layers = list(zip(tensors[0::2], tensors[1::2]))
    return ToyModel(kind, layers, input_shape, class_count)


def encode_request(request_id: int, x: np.ndarray) -> str:
    data = base64.b64encode(
        np.ascontiguousarray(x, dtype="<f4").tobytes()
    ).decode("ascii")
    return json.dumps(
        {"id": request_id, "shape": list(x.shape), "data": data},
        separators=(",", ":"),
    )


class _StdioTransport:
    """Line protocol over the pipes of a spawned server process."""

    def __init__(self, command):
        self.command = list(command)
        self._proc = None
        self._lines: Queue = Queue()
        self._start()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=sys.stderr.fileno() if hasattr(sys.stderr, "fileno") else None,
                text=True,
            )
        except OSError as exc:
            raise TransportError(f"failed to spawn {self.command}: {exc}") from exc
        self._lines = Queue()
        thread = threading.Thread(
            target=self._pump, args=(self._proc.stdout, self._lines), daemon=True
        )
        thread.start()

    @staticmethod
    def _pump(stream, sink: Queue):
        for line in stream:
            sink.put(line)
        sink.put(None)

    def send(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"server pipe closed: {exc}") from exc

    def recv(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except Empty:
            raise TransportError(f"no response within {timeout} s") from None
        if line is None:
            raise TransportError("server closed its output")
        return line

    def restart(self):
        self.close()
        self._start()

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class _HttpTransport:
    """One POST per message; the response body is the reply line."""

    def __init__(self, url: str):
        self.url = url

    def roundtrip(self, line: str, timeout: float) -> str:
        request = urllib.request.Request(
            self.url,
            data=(line + "\n").encode("ascii"),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(request, timeout=timeout) as response:
                return response.read().decode("utf-8")
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise TransportError(f"POST to {self.url} failed: {exc}") from exc

    def restart(self):
        pass

    def close(self):
        pass


class ExternalModel:
    """Classifier speaking the wire protocol over a serial connection.

    ``class_count`` may be declared up front or adopted from the first
    response; later responses of a different length raise ProtocolError.
    One transport-level failure per predict is retried once after a
    restart; protocol violations are never retried.
    """

    def __init__(self, transport, *, class_count: int | None = None, timeout: float = 30.0):
        self._transport = transport
        self.class_count = class_count
        self.timeout = timeout
        self._queries = 0
        self._next_id = 1
        self._abandoned: set[int] = set()
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._queries

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with self._lock:
            for attempt in (0, 1):
                request_id = self._next_id
                self._next_id += 1
                try:
                    probs = self._roundtrip(request_id, x)
                except TransportError:
                    if attempt == 1:
                        raise
                    self._transport.restart()
                    continue
                self._queries += 1
                return probs
        raise AssertionError("unreachable")

    def _roundtrip(self, request_id: int, x: np.ndarray) -> np.ndarray:
        line = encode_request(request_id, x)
        if hasattr(self._transport, "roundtrip"):
            reply = self._transport.roundtrip(line, self.timeout)
            return self._parse(reply, request_id)
        self._transport.send(line)
        while True:
            try:
                reply = self._transport.recv(self.timeout)
            except TransportError:
                self._abandoned.add(request_id)
                raise
            obj = self._decode(reply, request_id)
            got = obj.get("id")
            if got == request_id:
                return self._validate(obj, request_id)
            if got in self._abandoned:
                self._abandoned.discard(got)
                continue  # stale reply to a timed-out request
            raise ProtocolError(f"response id {got!r} does not match", request_id)

    def _parse(self, reply: str, request_id: int) -> np.ndarray:
        obj = self._decode(reply, request_id)
        if obj.get("id") != request_id:
            raise ProtocolError(f"response id {obj.get('id')!r} does not match", request_id)
        return self._validate(obj, request_id)

    @staticmethod
    def _decode(reply: str, request_id: int) -> dict:
        try:
            obj = json.loads(reply)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"response is not JSON: {exc}", request_id) from exc
        if not isinstance(obj, dict):
            raise ProtocolError("response is not a JSON object", request_id)
        return obj

    def _validate(self, obj: dict, request_id: int) -> np.ndarray:
        if "error" in obj:
            raise ProtocolError(f"server error: {obj['error']}", request_id)
        probs = obj.get("probs")
        if not isinstance(probs, list) or not all(
            isinstance(p, (int, float)) for p in probs
        ):
            raise ProtocolError("response lacks a numeric probs list", request_id)
        if self.class_count is None:
            if len(probs) < 2:
                raise ProtocolError("probability vector shorter than 2", request_id)
            self.class_count = len(probs)
        elif len(probs) != self.class_count:
            raise ProtocolError(
                f"expected {self.class_count} probabilities, got {len(probs)}",
                request_id,
            )
        vector = np.asarray(probs, dtype=np.float64)
        if (vector < 0).any() or abs(float(vector.sum()) - 1.0) > 1e-5:
            raise ProtocolError("probabilities are not on the simplex", request_id)
        return vector

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def connect_external(
    command=None,
    url: str | None = None,
    *,
    class_count: int | None = None,
    timeout: float = 30.0,
) -> ExternalModel:
    """Open a connection to an external model server.

    Pass either ``command`` (argv list; spawned and spoken to over stdio)
    or ``url`` (one HTTP POST per query).
    """
    if (command is None) == (url is None):
        raise ValueError("pass exactly one of command or url")
    transport = _StdioTransport(command) if command is not None else _HttpTransport(url)
    return ExternalModel(transport, class_count=class_count, timeout=timeout)
