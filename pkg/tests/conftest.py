import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


def chat_body(content):
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


class MockChatServer:
    """Local chat-completions endpoint replaying a scripted list of (status, body) replies.

    When the script runs out, ``default`` (a callable of the request JSON) answers.
    """

    def __init__(self):
        self.script = []
        self.requests = []
        self.default = None
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                req = json.loads(self.rfile.read(n))
                server.requests.append({"json": req, "auth": self.headers.get("Authorization")})
                if server.script:
                    status, body = server.script.pop(0)
                elif server.default:
                    status, body = 200, server.default(req)
                else:
                    status, body = 500, {"error": "no scripted reply"}
                payload = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def chat_server():
    srv = MockChatServer()
    yield srv
    srv.close()


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(records, name="data.jsonl"):
        p = tmp_path / name
        with open(p, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
        return p
    return _write


# acceptance verdicts, printed as one line per criterion at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
