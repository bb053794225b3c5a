"""Deterministic mock inference server for exercising the prompt harness.

Speaks the JSON-over-HTTP wire contract from docs/icl.md and answers by a
fixed keyword rule over the synthetic generator's cue table, so a run
against synthetic instances produces a confusion matrix that tests can
compute in advance:

* a sentence cued for "ADE-Drug" is answered as "Route-Drug" (a systematic
  confusion);
* a sentence cued for "Form-Drug" gets a reply no parser can map (lands in
  the reject bucket);
* every other cue is answered with its correct category index;
* prompts whose final Input line matches no cue get "banana".

``rule_response`` is importable for in-process use via
``incontext.CallableClient(rule_response)``.

Run: ``python -m relex.mockserver --port 8751``
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .incontext import N2C2_CATEGORIES
from .synthetic import CLASS_CUES

CONFUSED_AS = {"ADE-Drug": "Route-Drug"}
UNPARSEABLE_CLASS = "Form-Drug"
_UNPARSEABLE_REPLY = "could be anything, really"
_NO_MATCH_REPLY = "banana"

_INPUT_RE = re.compile(r"Input: '(.*?)', '(.*?)', '(.*?)'")

_CUE_TO_CLASS = {cue: label for label, cues in CLASS_CUES.items() for cue in cues}


def classify_tokens(tokens: str) -> str | None:
    """The mock's ground rule: first cue word found wins."""
    for word in tokens.split():
        label = _CUE_TO_CLASS.get(word)
        if label is not None:
            return label
    return None


def rule_response(prompt: str) -> str:
    """Deterministic reply for a rendered prompt (uses its final Input line)."""
    matches = _INPUT_RE.findall(prompt)
    if not matches:
        return _NO_MATCH_REPLY
    tokens = matches[-1][0]
    label = classify_tokens(tokens)
    if label is None:
        return _NO_MATCH_REPLY
    if label == UNPARSEABLE_CLASS:
        return _UNPARSEABLE_REPLY
    label = CONFUSED_AS.get(label, label)
    return str(N2C2_CATEGORIES.index(label))


def expected_category(gold_label: str) -> str | None:
    """What the mock will effectively predict for a synthetic instance of
    the given class; None means the reply is unparseable."""
    if gold_label == UNPARSEABLE_CLASS:
        return None
    return CONFUSED_AS.get(gold_label, gold_label)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            text = rule_response(payload["prompt"])
        except (ValueError, KeyError) as exc:
            self.send_response(400)
            self.end_headers()
            self.wfile.write(str(exc).encode("utf-8"))
            return
        body = json.dumps({"text": text, "finish_reason": "stop"}).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        pass  # keep the test output quiet


def serve(host: str = "127.0.0.1", port: int = 8751) -> ThreadingHTTPServer:
    """Bind and return the server (caller runs serve_forever or a thread)."""
    return ThreadingHTTPServer((host, port), _Handler)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Deterministic mock inference server.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8751)
    args = parser.parse_args(argv)
    server = serve(args.host, args.port)
    print(f"mock server listening on http://{args.host}:{server.server_address[1]}/",
          file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
