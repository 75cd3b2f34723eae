"""Addresses used by the pluggable storage layer.

Every provenance element of one workflow Item lives in a named cluster and
is reachable via a (item, cluster kind, relative path) triple.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass
from enum import Enum

from .errors import StorageError

_SEGMENT_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True, order=True)
class ItemPath:
    """Globally unique identity of one Item, rendered as canonical hex."""

    uuid: str

    @staticmethod
    def new() -> "ItemPath":
        return ItemPath(uuid.uuid4().hex)

    @staticmethod
    def parse(text: str) -> "ItemPath":
        if not re.fullmatch(r"[0-9a-f]{32}", text):
            raise StorageError(f"not a valid item id: {text!r}")
        return ItemPath(text)

    def __str__(self) -> str:
        return self.uuid


class ClusterKind(str, Enum):
    PROPERTY = "property"
    WORKFLOW = "workflow"
    EVENT = "event"
    OUTCOME = "outcome"
    VIEW = "view"
    COLLECTION = "collection"
    AGENT = "agent"


#: Clusters that are append-only: never overwritten, never deleted.
IMMUTABLE_KINDS = frozenset({ClusterKind.EVENT, ClusterKind.WORKFLOW})


@dataclass(frozen=True, order=True)
class ClusterPath:
    """Slash-separated address of one stored document inside an Item."""

    item: ItemPath
    kind: ClusterKind
    path: str

    def __post_init__(self):
        segments = self.path.split("/")
        for seg in segments:
            if not seg:
                raise StorageError(f"empty path segment in {self.path!r}")
            if seg in (".", ".."):
                raise StorageError(f"illegal path segment {seg!r}")
            if not _SEGMENT_RE.match(seg):
                raise StorageError(f"illegal characters in segment {seg!r}")

    def __str__(self) -> str:
        return f"{self.item}/{self.kind.value}/{self.path}"
