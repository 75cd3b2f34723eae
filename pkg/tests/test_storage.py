import pytest

from provkernel.errors import (
    AlreadyExists,
    ImmutableCluster,
    NotFound,
    ParseError,
    StorageError,
)
from provkernel.paths import ClusterKind, ClusterPath, ItemPath
from provkernel.storage import FileStorage, StoredDocument
from provkernel.xmldocs import decode_document, encode_document

ITEM = ItemPath.new()


def doc(kind, path, payload=None):
    body = encode_document(kind.value, payload or {"k": "v"})
    return StoredDocument(ClusterPath(ITEM, kind, path), body)


class TestClusterPath:
    def test_rejects_empty_segment(self):
        with pytest.raises(StorageError):
            ClusterPath(ITEM, ClusterKind.VIEW, "a//b")

    def test_rejects_dotdot(self):
        with pytest.raises(StorageError):
            ClusterPath(ITEM, ClusterKind.VIEW, "a/../b")

    def test_rejects_illegal_chars(self):
        with pytest.raises(StorageError):
            ClusterPath(ITEM, ClusterKind.VIEW, "a/b c")


class TestXmlDocs:
    def test_roundtrip_nested(self):
        payload = {
            "s": "text", "i": 3, "f": 1.5, "b": True, "n": None,
            "list": [1, "two", {"x": False}],
            "map": {"zz": "last", "aa": "first"},
        }
        body = encode_document("property", payload)
        assert decode_document(body, "property") == payload

    def test_deterministic_bytes(self):
        payload = {"b": 1, "a": {"y": 2, "x": 3}}
        assert encode_document("event", payload) == encode_document("event", payload)

    def test_wrong_root_rejected(self):
        body = encode_document("event", {"a": 1})
        with pytest.raises(ParseError):
            decode_document(body, "outcome")

    def test_body_must_be_xml(self):
        with pytest.raises(StorageError):
            StoredDocument(ClusterPath(ITEM, ClusterKind.VIEW, "v"), b"not xml")


class TestBackendContract:
    def test_put_get_roundtrip(self, storage):
        d = doc(ClusterKind.EVENT, "events/0001/000001")
        storage.put(d, expected_absent=True)
        assert storage.get(d.path).body == d.body

    def test_cas_rejects_second_put(self, storage):
        d = doc(ClusterKind.EVENT, "events/0001/000001")
        storage.put(d, expected_absent=True)
        with pytest.raises(AlreadyExists):
            storage.put(d, expected_absent=True)

    def test_get_unknown_is_notfound(self, storage):
        with pytest.raises(NotFound):
            storage.get(ClusterPath(ITEM, ClusterKind.VIEW, "missing"))

    def test_list_sorted_with_prefix(self, storage):
        for p in ("events/0001/000002", "events/0001/000001", "events/0002/000003"):
            storage.put(doc(ClusterKind.EVENT, p), expected_absent=True)
        got = storage.list(ITEM, ClusterKind.EVENT, "events/0001/")
        assert [p.path for p in got] == ["events/0001/000001", "events/0001/000002"]
        assert storage.list(ITEM, ClusterKind.EVENT, "events/") == sorted(
            storage.list(ITEM, ClusterKind.EVENT, "events/")
        )

    def test_empty_store_lists_nothing(self, storage):
        assert storage.list(ITEM, ClusterKind.EVENT, "") == []

    def test_delete_view_ok_event_immutable(self, storage):
        v = doc(ClusterKind.VIEW, "latest-outcome/0001/a")
        storage.put(v)
        storage.delete(v.path)
        with pytest.raises(NotFound):
            storage.get(v.path)
        e = doc(ClusterKind.EVENT, "events/0001/000001")
        storage.put(e, expected_absent=True)
        with pytest.raises(ImmutableCluster):
            storage.delete(e.path)

    def test_delete_missing_view_notfound(self, storage):
        with pytest.raises(NotFound):
            storage.delete(ClusterPath(ITEM, ClusterKind.VIEW, "missing"))

    def test_workflow_cluster_never_overwritten(self, storage):
        w = doc(ClusterKind.WORKFLOW, "versions/0001")
        storage.put(w)
        with pytest.raises(ImmutableCluster):
            storage.put(doc(ClusterKind.WORKFLOW, "versions/0001", {"other": 1}))

    def test_overwrite_mutable_kind(self, storage):
        v1 = doc(ClusterKind.VIEW, "ptr", {"target": "a"})
        v2 = doc(ClusterKind.VIEW, "ptr", {"target": "b"})
        storage.put(v1)
        storage.put(v2)
        assert decode_document(storage.get(v1.path).body, "view") == {"target": "b"}


class TestFilePersistence:
    def test_survives_reopen(self, tmp_path):
        root = tmp_path / "store"
        s1 = FileStorage(root)
        d = doc(ClusterKind.EVENT, "events/0001/000001", {"seq": 1})
        s1.put(d, expected_absent=True)
        s1.put(doc(ClusterKind.PROPERTY, "item", {"name": "wf"}))

        s2 = FileStorage(root)
        assert s2.get(d.path).body == d.body
        assert [p.path for p in s2.list(ITEM, ClusterKind.EVENT, "")] == [
            "events/0001/000001"
        ]
        assert s2.list_items() == [ITEM]

    def test_layout_is_inspectable(self, tmp_path):
        root = tmp_path / "store"
        s = FileStorage(root)
        s.put(doc(ClusterKind.OUTCOME, "outcomes/0001/a/000002"))
        expected = root / "items" / ITEM.uuid / "outcome" / "outcomes" / "0001" / "a" / "000002.xml"
        assert expected.is_file()
