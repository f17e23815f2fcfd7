"""In-process chat-completion server for generator and end-to-end tests.

Speaks the same wire format as the real endpoint: POST /chat/completions with
{model, messages, temperature, max_tokens}, responding with
{choices: [{message: {content: ...}}]}. Responses are served from a scripted
queue; the entry "HTTP:500" forces a server error and "HANG" forces a short
stall so clients can exercise timeouts.
"""

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

VALID_RESPONSE = """\
Layers whose weights carry most of the norm, and whose activations stay
information-dense, degrade the output most when quantized; deeper layers
matter less.

```
w_l2 * a_entropy
```
"""

MALFORMED_RESPONSE = "I think the answer is forty-two, no formula needed."


class MockLlmServer:
    def __init__(self, script=None, default=VALID_RESPONSE):
        self.script = list(script or [])
        self.default = default
        self.requests = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    outer.requests.append(
                        {"path": self.path, "body": body,
                         "auth": self.headers.get("Authorization")})
                    entry = outer.script.pop(0) if outer.script else outer.default
                if entry == "HTTP:500":
                    self.send_error(500, "scripted failure")
                    return
                if entry == "HANG":
                    time.sleep(2.0)
                    entry = outer.default
                payload = {"choices": [{"message": {"content": entry}}]}
                data = json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)

    @property
    def base_url(self):
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
