"""Pluggable persistence: ClusterStorage interface with three backends.

All backends address documents by :class:`ClusterPath` and store canonical
XML bodies.  ``put(expected_absent=True)`` is a compare-and-set used by the
kernel to enforce append-only event logs; Event and Workflow clusters are
immutable once written.
"""

from __future__ import annotations

import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

from .errors import (
    AlreadyExists,
    ImmutableCluster,
    NotFound,
    StorageError,
    StorageUnavailable,
)
from .model import utcnow
from .paths import IMMUTABLE_KINDS, ClusterKind, ClusterPath, ItemPath


@dataclass(frozen=True)
class StoredDocument:
    path: ClusterPath
    body: bytes
    written_at: datetime = field(default_factory=utcnow)

    def __post_init__(self):
        try:
            ET.fromstring(self.body)
        except ET.ParseError as exc:
            raise StorageError(f"document body is not well-formed XML: {exc}") from exc


class ClusterStorage:
    """Interface all backends implement."""

    def put(self, doc: StoredDocument, expected_absent: bool = False) -> None:
        raise NotImplementedError

    def get(self, path: ClusterPath) -> StoredDocument:
        raise NotImplementedError

    def list(
        self, item: ItemPath, kind: ClusterKind, prefix: str = ""
    ) -> list[ClusterPath]:
        raise NotImplementedError

    def delete(self, path: ClusterPath) -> None:
        raise NotImplementedError

    def list_items(self) -> list[ItemPath]:
        raise NotImplementedError

    def close(self) -> None:
        pass


def _check_deletable(path: ClusterPath) -> None:
    if path.kind in IMMUTABLE_KINDS:
        raise ImmutableCluster(f"{path.kind.value} cluster is append-only")


class MemoryStorage(ClusterStorage):
    """In-process dictionary backend; the reference for interchangeability tests."""

    def __init__(self):
        # cluster-indexed so list() never scans unrelated items
        self._clusters: dict[tuple[str, str], dict[str, StoredDocument]] = {}
        self._lock = threading.Lock()

    def _cluster(self, path: ClusterPath) -> dict[str, StoredDocument]:
        return self._clusters.setdefault((path.item.uuid, path.kind.value), {})

    def put(self, doc: StoredDocument, expected_absent: bool = False) -> None:
        with self._lock:
            cluster = self._cluster(doc.path)
            if doc.path.path in cluster:
                if expected_absent:
                    raise AlreadyExists(f"document exists: {doc.path}")
                if doc.path.kind in IMMUTABLE_KINDS:
                    raise ImmutableCluster(
                        f"{doc.path.kind.value} documents cannot be overwritten"
                    )
            cluster[doc.path.path] = doc

    def get(self, path: ClusterPath) -> StoredDocument:
        with self._lock:
            doc = self._cluster(path).get(path.path)
        if doc is None:
            raise NotFound(f"no document at {path}")
        return doc

    def list(
        self, item: ItemPath, kind: ClusterKind, prefix: str = ""
    ) -> list[ClusterPath]:
        with self._lock:
            cluster = self._clusters.get((item.uuid, kind.value), {})
            paths = [p for p in cluster if p.startswith(prefix)]
        return [ClusterPath(item, kind, p) for p in sorted(paths)]

    def delete(self, path: ClusterPath) -> None:
        _check_deletable(path)
        with self._lock:
            cluster = self._cluster(path)
            if path.path not in cluster:
                raise NotFound(f"no document at {path}")
            del cluster[path.path]

    def list_items(self) -> list[ItemPath]:
        with self._lock:
            return sorted({ItemPath(uuid) for uuid, _ in self._clusters})


class FileStorage(ClusterStorage):
    """XML-files-on-disk backend: ``<root>/items/<uuid>/<kind>/<path>.xml``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        try:
            (self.root / "items").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageUnavailable(f"cannot open store root {root}: {exc}") from exc
        self._lock = threading.Lock()

    def _file(self, path: ClusterPath) -> Path:
        return self.root / "items" / path.item.uuid / path.kind.value / (path.path + ".xml")

    def put(self, doc: StoredDocument, expected_absent: bool = False) -> None:
        target = self._file(doc.path)
        with self._lock:
            if target.exists():
                if expected_absent:
                    raise AlreadyExists(f"document exists: {doc.path}")
                if doc.path.kind in IMMUTABLE_KINDS:
                    raise ImmutableCluster(
                        f"{doc.path.kind.value} documents cannot be overwritten"
                    )
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                tmp = target.with_suffix(".xml.tmp")
                tmp.write_bytes(doc.body)
                tmp.replace(target)
            except OSError as exc:
                raise StorageUnavailable(f"write failed for {doc.path}: {exc}") from exc

    def get(self, path: ClusterPath) -> StoredDocument:
        target = self._file(path)
        if not target.exists():
            raise NotFound(f"no document at {path}")
        try:
            body = target.read_bytes()
        except OSError as exc:
            raise StorageUnavailable(f"read failed for {path}: {exc}") from exc
        return StoredDocument(path, body, datetime.fromtimestamp(target.stat().st_mtime))

    def list(
        self, item: ItemPath, kind: ClusterKind, prefix: str = ""
    ) -> list[ClusterPath]:
        base = self.root / "items" / item.uuid / kind.value
        if not base.is_dir():
            return []
        rels = []
        for f in base.rglob("*.xml"):
            rel = f.relative_to(base).as_posix()[: -len(".xml")]
            if rel.startswith(prefix):
                rels.append(rel)
        return [ClusterPath(item, kind, rel) for rel in sorted(rels)]

    def delete(self, path: ClusterPath) -> None:
        _check_deletable(path)
        target = self._file(path)
        if not target.exists():
            raise NotFound(f"no document at {path}")
        try:
            target.unlink()
        except OSError as exc:
            raise StorageUnavailable(f"delete failed for {path}: {exc}") from exc

    def list_items(self) -> list[ItemPath]:
        base = self.root / "items"
        if not base.is_dir():
            return []
        return sorted(ItemPath(p.name) for p in base.iterdir() if p.is_dir())


class RemoteStorage(ClusterStorage):
    """Client backend speaking the service's /storage HTTP endpoints.

    ``client`` may be any httpx-compatible client; passing one bound to an
    ASGI transport lets tests exercise the full wire path in-process.
    """

    def __init__(self, base_url: str = "", client=None):
        if client is None:
            import httpx

            client = httpx.Client(base_url=base_url, timeout=30.0)
        self._client = client

    def _url(self, path: ClusterPath) -> str:
        return f"/storage/{path.item}/{path.kind.value}/{path.path}"

    @staticmethod
    def _raise_for(resp) -> None:
        code = None
        try:
            code = resp.json().get("code")
        except Exception:
            pass
        message = f"remote storage error {resp.status_code}: {code}"
        if code == "AlreadyExists":
            raise AlreadyExists(message)
        if code == "ImmutableCluster":
            raise ImmutableCluster(message)
        if code == "NotFound" or resp.status_code == 404:
            raise NotFound(message)
        raise StorageUnavailable(message)

    def put(self, doc: StoredDocument, expected_absent: bool = False) -> None:
        resp = self._client.put(
            self._url(doc.path),
            params={"expected_absent": "true" if expected_absent else "false"},
            content=doc.body,
            headers={"content-type": "application/xml"},
        )
        if resp.status_code not in (200, 201):
            self._raise_for(resp)

    def get(self, path: ClusterPath) -> StoredDocument:
        resp = self._client.get(self._url(path))
        if resp.status_code != 200:
            self._raise_for(resp)
        return StoredDocument(path, resp.content)

    def list(
        self, item: ItemPath, kind: ClusterKind, prefix: str = ""
    ) -> list[ClusterPath]:
        resp = self._client.get(
            f"/storage/{item}/{kind.value}", params={"prefix": prefix}
        )
        if resp.status_code != 200:
            self._raise_for(resp)
        return [ClusterPath(item, kind, p) for p in resp.json()["paths"]]

    def delete(self, path: ClusterPath) -> None:
        resp = self._client.delete(self._url(path))
        if resp.status_code not in (200, 204):
            self._raise_for(resp)

    def list_items(self) -> list[ItemPath]:
        resp = self._client.get("/storage")
        if resp.status_code != 200:
            self._raise_for(resp)
        return [ItemPath.parse(i) for i in resp.json()["items"]]

    def close(self) -> None:
        self._client.close()
