"""Local HTTP fixture serving a history archive for tests and demos.

Routes:
  GET /history?lat=..&lon=..&heading=..&max=..[&before=..] -> JSON rows
      {"image_url", "date", "lat", "lon", "heading"}
  GET /image/<relpath>  -> the archive image transcoded to PNG
  GET /stats            -> {"hits", "history", "image"} request counters
"""

from __future__ import annotations

import json
import os
import threading
from datetime import date
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlparse

from . import codecs
from .history import HistoryQuery, MatchPolicy, filter_entries, load_manifest


class _Handler(BaseHTTPRequestHandler):
    server_version = "HistoryFixture/1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, doc) -> None:
        self._send(status, json.dumps(doc).encode(), "application/json")

    def do_GET(self):  # noqa: N802 (http.server API)
        fixture: "HistoryFixtureServer" = self.server.fixture  # type: ignore[attr-defined]
        parsed = urlparse(self.path)
        if parsed.path == "/stats":
            self._send_json(200, fixture.stats())
            return
        if parsed.path == "/history":
            fixture.count("history")
            if fixture.force_history_status is not None:
                self._send_json(fixture.force_history_status, {"error": "forced failure"})
                return
            try:
                qs = parse_qs(parsed.query)
                query = HistoryQuery(
                    location=(float(qs["lat"][0]), float(qs["lon"][0])),
                    heading=float(qs["heading"][0]),
                    max_records=int(qs.get("max", ["3"])[0]),
                    before=date.fromisoformat(qs["before"][0]) if "before" in qs else None,
                )
            except (KeyError, ValueError) as exc:
                self._send_json(400, {"error": str(exc)})
                return
            entries = filter_entries(load_manifest(fixture.root).entries, query, fixture.policy)
            rows = [
                {
                    "image_url": f"{fixture.url}/image/{e.path}",
                    "date": e.capture_date.isoformat(),
                    "lat": e.lat,
                    "lon": e.lon,
                    "heading": e.heading,
                }
                for e in entries
            ]
            self._send_json(200, rows)
            return
        if parsed.path.startswith("/image/"):
            fixture.count("image")
            rel = unquote(parsed.path[len("/image/") :])
            full = os.path.realpath(os.path.join(fixture.root, rel))
            if not full.startswith(os.path.realpath(fixture.root) + os.sep):
                self._send_json(403, {"error": "path escapes archive"})
                return
            try:
                img = codecs.load_image(full)
            except (OSError, ValueError):
                self._send_json(404, {"error": f"no readable image at {rel}"})
                return
            self._send(200, codecs.encode_image(img, "png"), "image/png")
            return
        self._send_json(404, {"error": "unknown path"})


class HistoryFixtureServer:
    """Threaded archive server; use as a context manager in tests."""

    def __init__(self, root, host: str = "127.0.0.1", port: int = 0, policy: MatchPolicy = MatchPolicy()):
        self.root = str(root)
        self.policy = policy
        self.force_history_status: int | None = None
        self._counters = {"history": 0, "image": 0}
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.fixture = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def count(self, kind: str) -> None:
        with self._lock:
            self._counters[kind] += 1

    def stats(self) -> dict:
        with self._lock:
            return {
                "hits": self._counters["history"] + self._counters["image"],
                "history": self._counters["history"],
                "image": self._counters["image"],
            }

    def start(self) -> "HistoryFixtureServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "HistoryFixtureServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
