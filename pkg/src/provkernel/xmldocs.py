"""Canonical XML document bodies for the storage layer (storage.v1).

Each stored document is a UTF-8 XML file with one root element named after
its cluster kind.  The content is a deterministic embedding of a JSON-like
mapping: keys become ``<f k="...">`` elements sorted by key, list entries
become ``<li>`` elements in order, and scalars carry a ``t`` attribute so
values round-trip with their types intact.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Any

from .errors import ParseError


def _encode_value(parent: ET.Element, value: Any) -> None:
    if value is None:
        parent.set("t", "null")
    elif isinstance(value, bool):
        parent.set("t", "bool")
        parent.text = "true" if value else "false"
    elif isinstance(value, int):
        parent.set("t", "int")
        parent.text = str(value)
    elif isinstance(value, float):
        parent.set("t", "num")
        parent.text = repr(value)
    elif isinstance(value, str):
        parent.set("t", "str")
        parent.text = value
    elif isinstance(value, dict):
        parent.set("t", "map")
        for key in sorted(value):
            child = ET.SubElement(parent, "f", {"k": str(key)})
            _encode_value(child, value[key])
    elif isinstance(value, (list, tuple)):
        parent.set("t", "list")
        for entry in value:
            child = ET.SubElement(parent, "li")
            _encode_value(child, entry)
    else:
        raise TypeError(f"cannot encode {type(value).__name__} into storage.v1")


def _decode_value(elem: ET.Element) -> Any:
    t = elem.get("t")
    text = elem.text or ""
    if t == "null":
        return None
    if t == "bool":
        return text == "true"
    if t == "int":
        return int(text)
    if t == "num":
        return float(text)
    if t == "str":
        return text
    if t == "map":
        return {child.get("k"): _decode_value(child) for child in elem}
    if t == "list":
        return [_decode_value(child) for child in elem]
    raise ParseError(f"unknown storage.v1 value type {t!r}")


def encode_document(root_tag: str, payload: dict) -> bytes:
    """Serialize ``payload`` under a ``<root_tag>`` element, byte-deterministic."""
    root = ET.Element(root_tag)
    _encode_value(root, payload)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def decode_document(body: bytes, expected_tag: str | None = None) -> dict:
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise ParseError(f"malformed stored document: {exc}") from exc
    if expected_tag is not None and root.tag != expected_tag:
        raise ParseError(f"expected <{expected_tag}> root, found <{root.tag}>")
    value = _decode_value(root)
    if not isinstance(value, dict):
        raise ParseError("stored document root must encode a mapping")
    return value
