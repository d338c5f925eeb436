"""Reference model server for the line-oriented wire protocol.

Serves a toy weights file over stdio (default) or HTTP. Run with:

    python -m pxattack.modelserver --weights model.toy
    python -m pxattack.modelserver --weights model.toy --http 8431

``--fail-after N`` makes the process exit abruptly after N successful
responses; integration tests use it to simulate a crashing server.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np

from .models import load_toy_model


def handle_line(line: str, model) -> str:
    """Produce the JSON response line for one request line."""
    request_id = 0
    try:
        obj = json.loads(line)
        request_id = obj.get("id", 0)
        shape = tuple(obj["shape"])
        payload = base64.b64decode(obj["data"], validate=True)
    except Exception as exc:  # noqa: BLE001 - reported to the client
        return json.dumps({"id": request_id, "error": f"bad request: {exc}"})
    count = int(np.prod(shape)) if shape else 0
    if count <= 0 or len(payload) != count * 4:
        return json.dumps(
            {"id": request_id, "error": f"payload/shape mismatch for shape {list(shape)}"}
        )
    x = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    try:
        probs = model.predict(x)
    except ValueError as exc:
        return json.dumps({"id": request_id, "error": str(exc)})
    return json.dumps({"id": request_id, "probs": probs.tolist()})


def serve_stdio(model, fail_after: int | None = None) -> None:
    served = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        reply = handle_line(line, model)
        sys.stdout.write(reply + "\n")
        sys.stdout.flush()
        if "probs" in json.loads(reply):
            served += 1
            if fail_after is not None and served >= fail_after:
                sys.exit(1)


def serve_http(model, port: int, fail_after: int | None = None) -> None:
    state = {"served": 0}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 - http.server API
            length = int(self.headers.get("Content-Length", 0))
            line = self.rfile.read(length).decode("utf-8").strip()
            reply = handle_line(line, model)
            body = (reply + "\n").encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            if "probs" in json.loads(reply):
                state["served"] += 1
                if fail_after is not None and state["served"] >= fail_after:
                    sys.exit(1)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", port), Handler)
    print(f"serving on port {server.server_port}", file=sys.stderr, flush=True)
    server.serve_forever()


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--weights", required=True, help="toy weights file")
    parser.add_argument("--http", type=int, metavar="PORT", help="serve HTTP instead of stdio")
    parser.add_argument("--fail-after", type=int, metavar="N", help="crash after N responses")
    args = parser.parse_args(argv)
    model = load_toy_model(args.weights)
    if args.http is not None:
        serve_http(model, args.http, args.fail_after)
    else:
        serve_stdio(model, args.fail_after)


if __name__ == "__main__":
    main()
