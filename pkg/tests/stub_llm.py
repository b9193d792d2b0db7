"""A tiny chat-completions server for exercising the LLM client offline."""

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    """Answers each POST with ``responder(request_body) -> str`` wrapped as a chat reply.

    Every request body is kept in ``requests`` so tests can inspect the
    conversation the client sent.
    """

    def __init__(self, responder):
        self.responder = responder
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append({"body": body, "auth": self.headers.get("Authorization")})
                content = stub.responder(body)
                if content is None:
                    self.send_response(503)
                    self.end_headers()
                    return
                out = json.dumps({"choices": [{"message": {"role": "assistant",
                                                           "content": content}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self):
        host, port = self._httpd.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._httpd.shutdown()
        self._httpd.server_close()


def scripted(replies):
    """Responder that returns ``replies`` in order, repeating the last one."""
    queue = list(replies)

    def respond(_body):
        return queue.pop(0) if len(queue) > 1 else queue[0]

    return respond


def tuning_responder(omegas, beta=3.1623):
    """Central prompt gets agent 1; task prompts walk through ``omegas`` by history length."""

    def respond(body):
        system = body["messages"][0]["content"]
        if system.startswith("You are an expert control engineer tasked"):
            return json.dumps({"Task Requirement": "first-order plant", "Task Analysis": "stable",
                               "Agent": "Agent 1 for first-order stable systems"})
        user = body["messages"][1]["content"]
        k = len(re.findall(r"^Design \d+:", user, re.MULTILINE))
        w = omegas[min(k, len(omegas) - 1)]
        return "```json\n" + json.dumps({"design": f"try omega_L={w}",
                                         "parameter": f"[{w}, {beta}]"}) + "\n```"

    return respond
