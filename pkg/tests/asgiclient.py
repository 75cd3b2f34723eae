"""Minimal synchronous ASGI client for high-volume in-process testing.

Drives the service app over a private event loop with one coroutine per
request.  Unlike the full test client (which spins a portal thread per
request), per-request overhead stays flat over tens of thousands of calls,
which the acceptance suite depends on.
"""

import asyncio
import json
import urllib.parse


class Response:
    def __init__(self, status_code, headers, content):
        self.status_code = status_code
        self.headers = headers
        self.content = content

    @property
    def text(self):
        return self.content.decode()

    def json(self):
        return json.loads(self.content)


class AsgiClient:
    """Speaks plain ASGI; interface-compatible with the parts of an HTTP
    client that RemoteStorage uses (get/put/delete returning Response)."""

    def __init__(self, app):
        self._app = app
        self._loop = asyncio.new_event_loop()

    def request(self, method, url, params=None, content=b"", headers=None):
        query = urllib.parse.urlencode(params or {})
        hdrs = [(b"host", b"testserver")]
        body = content if isinstance(content, bytes) else content.encode()
        for k, v in (headers or {}).items():
            hdrs.append((k.lower().encode(), v.encode()))
        hdrs.append((b"content-length", str(len(body)).encode()))
        scope = {
            "type": "http",
            "asgi": {"version": "3.0", "spec_version": "2.3"},
            "http_version": "1.1",
            "method": method.upper(),
            "scheme": "http",
            "path": url,
            "raw_path": url.encode(),
            "query_string": query.encode(),
            "root_path": "",
            "headers": hdrs,
            "client": ("testclient", 50000),
            "server": ("testserver", 80),
        }
        return self._loop.run_until_complete(self._exchange(scope, body))

    async def _exchange(self, scope, body):
        received = {"sent": False}
        status = {}
        headers = {}
        chunks = []

        async def receive():
            if received["sent"]:
                return {"type": "http.disconnect"}
            received["sent"] = True
            return {"type": "http.request", "body": body, "more_body": False}

        async def send(message):
            if message["type"] == "http.response.start":
                status["code"] = message["status"]
                headers.update({
                    k.decode(): v.decode() for k, v in message.get("headers", [])
                })
            elif message["type"] == "http.response.body":
                chunks.append(message.get("body", b""))

        await self._app(scope, receive, send)
        return Response(status["code"], headers, b"".join(chunks))

    def get(self, url, params=None, headers=None):
        return self.request("GET", url, params=params, headers=headers)

    def post(self, url, params=None, content=b"", json_body=None, headers=None):
        if json_body is not None:
            content = json.dumps(json_body).encode()
            headers = {**(headers or {}), "content-type": "application/json"}
        return self.request("POST", url, params=params, content=content, headers=headers)

    def put(self, url, params=None, content=b"", headers=None):
        return self.request("PUT", url, params=params, content=content, headers=headers)

    def delete(self, url, params=None, headers=None):
        return self.request("DELETE", url, params=params, headers=headers)

    def close(self):
        self._loop.close()
