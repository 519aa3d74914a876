"""HTTP front end: ``POST /<operation>`` with a JSON body."""

from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .service import Notary
from .wire import OPS, NotaryAPI

log = logging.getLogger(__name__)


def make_server(notary: Notary, host: str = "127.0.0.1", port: int = 8700) -> ThreadingHTTPServer:
    api = NotaryAPI(notary)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            op = self.path.strip("/")
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length)
            status = 200 if op in OPS else 404
            out = api.handle_bytes(op, body)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def run_ticker(notary: Notary, stop: threading.Event, interval: float = 1.0) -> threading.Thread:
    """Background thread finalizing due epochs and applying retention."""

    def loop():
        while not stop.wait(interval):
            try:
                notary.tick()
            except Exception:  # keep serving; the failure is logged
                log.exception("tick failed")

    t = threading.Thread(target=loop, name="notary-ticker", daemon=True)
    t.start()
    return t


def serve(notary: Notary, host: str, port: int) -> None:
    server = make_server(notary, host, port)
    stop = threading.Event()
    run_ticker(notary, stop)
    log.info("notary listening on %s:%d", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        server.server_close()
