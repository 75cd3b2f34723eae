import random
from pathlib import Path

import pytest

from provkernel import (
    ActivityNode,
    AgentDesc,
    ExternalSource,
    InputBinding,
    MemoryStorage,
    SingleKind,
    WorkflowSpec,
)
from provkernel.errors import EmptyExecution, InvalidGraph, ParseError, SchemaViolation
from provkernel.executor import FaultEntry, FaultPlan, SimulatedGridExecutor
from provkernel.kernel import ProvenanceKernel
from provkernel.opm import (
    OpmEdge,
    OpmEdgeKind,
    OpmGraph,
    OpmNode,
    OpmNodeKind,
    export_xml,
    import_xml,
    isomorphic,
    to_opm,
    validate_graph,
)

from genutil import AGENT, chain_spec, random_opm_graph, run_random_pipeline

FIXTURES = Path(__file__).resolve().parent.parent / "docs" / "fixtures"


def run_single_node(kernel, payload=b"image-group-1"):
    spec = WorkflowSpec(
        name="one",
        nodes=(ActivityNode("n", SingleKind("checksum"),
                            declared_inputs=("x",), declared_outputs=("out",)),),
        bindings=(InputBinding("n", "x", ExternalSource("seed")),),
    )
    item = kernel.create_item(spec, [AGENT])
    ref = kernel.payloads(item).save("seed", payload, "bytes")
    execution = kernel.start_execution(item, 1, {"seed": ref})
    kernel.run_to_completion(execution, SimulatedGridExecutor(agent=AGENT))
    return execution


class TestMapping:
    def test_single_node_counts_by_rule(self, mem_kernel):
        graph = to_opm(mem_kernel, run_single_node(mem_kernel))
        kinds = [n.kind for n in graph.nodes]
        assert kinds.count(OpmNodeKind.PROCESS) == 1
        assert kinds.count(OpmNodeKind.ARTIFACT) == 2
        assert kinds.count(OpmNodeKind.AGENT) == 1
        edge_kinds = sorted(e.kind.value for e in graph.edges)
        assert edge_kinds == [
            "used", "wasControlledBy", "wasDerivedFrom", "wasGeneratedBy"
        ]

    def test_chain_triggered_by(self, mem_kernel):
        item = mem_kernel.create_item(chain_spec(), [AGENT])
        ref = mem_kernel.payloads(item).save("seed", b"x", "bytes")
        execution = mem_kernel.start_execution(item, 1, {"seed": ref})
        mem_kernel.run_to_completion(execution, SimulatedGridExecutor(agent=AGENT))
        graph = to_opm(mem_kernel, execution)
        triggered = {
            (e.src, e.dst) for e in graph.edges if e.kind is OpmEdgeKind.WAS_TRIGGERED_BY
        }
        assert ("proc:1:n1", "proc:1:n0") in triggered
        assert ("proc:1:n2", "proc:1:n1") in triggered

    def test_never_started_node_has_no_process(self, mem_kernel):
        item = mem_kernel.create_item(chain_spec(), [AGENT])
        ref = mem_kernel.payloads(item).save("seed", b"x", "bytes")
        execution = mem_kernel.start_execution(item, 1, {"seed": ref})
        mem_kernel.run_to_completion(
            execution,
            SimulatedGridExecutor(
                faults=FaultPlan((FaultEntry("n1", "always"),)), agent=AGENT
            ),
        )
        graph = to_opm(mem_kernel, execution)
        process_ids = {n.id for n in graph.nodes if n.kind is OpmNodeKind.PROCESS}
        assert process_ids == {"proc:1:n0", "proc:1:n1"}  # n2 never ran
        failed = next(n for n in graph.nodes if n.id == "proc:1:n1")
        assert ("status", "failed") in failed.attrs

    def test_empty_execution_rejected(self, mem_kernel):
        item = mem_kernel.create_item(chain_spec(), [AGENT])
        ref = mem_kernel.payloads(item).save("seed", b"x", "bytes")
        execution = mem_kernel.start_execution(item, 1, {"seed": ref})
        with pytest.raises(EmptyExecution):
            to_opm(mem_kernel, execution)

    def test_every_process_controlled_and_outputs_generated_once(self, mem_kernel):
        rng = random.Random(31)
        for _ in range(15):
            _, _, execution, _ = run_random_pipeline(mem_kernel, rng, 10)
            try:
                graph = to_opm(mem_kernel, execution)
            except EmptyExecution:
                continue
            assert validate_graph(graph) == []
            controlled = {e.src for e in graph.edges if e.kind is OpmEdgeKind.WAS_CONTROLLED_BY}
            for node in graph.nodes:
                if node.kind is OpmNodeKind.PROCESS:
                    assert node.id in controlled
            generated = [
                (e.src, e.dst) for e in graph.edges if e.kind is OpmEdgeKind.WAS_GENERATED_BY
            ]
            assert len(generated) == len(set(generated))


class TestValidateGraph:
    def test_empty_graph_clean(self):
        assert validate_graph(OpmGraph()) == []

    def test_typing_violation(self):
        g = OpmGraph(
            nodes=(OpmNode("a", OpmNodeKind.ARTIFACT), OpmNode("p", OpmNodeKind.PROCESS)),
            edges=(OpmEdge(OpmEdgeKind.USED, "a", "p", "r"),),  # backwards
        )
        violations = validate_graph(g)
        assert len(violations) == 1 and violations[0].rule == "edge-typing"

    def test_cycle_violation_matches_dfs_oracle(self):
        g = OpmGraph(
            nodes=(OpmNode("x", OpmNodeKind.ARTIFACT), OpmNode("y", OpmNodeKind.ARTIFACT)),
            edges=(
                OpmEdge(OpmEdgeKind.WAS_DERIVED_FROM, "x", "y"),
                OpmEdge(OpmEdgeKind.WAS_DERIVED_FROM, "y", "x"),
            ),
        )
        assert [v.rule for v in validate_graph(g)] == ["acyclic"]

    def test_dangling_endpoint(self):
        g = OpmGraph(
            nodes=(OpmNode("p", OpmNodeKind.PROCESS),),
            edges=(OpmEdge(OpmEdgeKind.USED, "p", "ghost", "r"),),
        )
        assert any(v.rule == "endpoint-exists" for v in validate_graph(g))


class TestXmlInterchange:
    def test_empty_graph_skeleton(self):
        body = export_xml(OpmGraph())
        assert body == (
            b"<?xml version='1.0' encoding='utf-8'?>\n"
            b'<opmGraph version="1.1"><processes /><artifacts /><agents />'
            b"<causalDependencies /></opmGraph>"
        )

    def test_export_deterministic(self):
        g = random_opm_graph(random.Random(1))
        assert export_xml(g) == export_xml(g)

    def test_golden_fixture(self, mem_kernel):
        graph = to_opm(mem_kernel, run_single_node(mem_kernel))
        assert export_xml(graph) == (FIXTURES / "single_node.opm.xml").read_bytes()

    def test_roundtrip_200_random_graphs(self):
        rng = random.Random(2024)
        for _ in range(200):
            g = random_opm_graph(rng)
            assert isomorphic(import_xml(export_xml(g)), g)

    def test_truncated_document(self):
        body = export_xml(random_opm_graph(random.Random(3)))
        with pytest.raises(ParseError):
            import_xml(body[: len(body) // 2])

    def test_unknown_element_rejected(self):
        body = (
            b"<?xml version='1.0' encoding='utf-8'?>\n"
            b'<opmGraph version="1.1"><processes /><artifacts /><agents />'
            b"<causalDependencies /><extras /></opmGraph>"
        )
        with pytest.raises(SchemaViolation):
            import_xml(body)

    def test_unknown_attribute_rejected(self):
        body = (
            b"<?xml version='1.0' encoding='utf-8'?>\n"
            b'<opmGraph version="1.1"><processes><process id="p" bogus="1" /></processes>'
            b"<artifacts /><agents /><causalDependencies /></opmGraph>"
        )
        with pytest.raises(SchemaViolation):
            import_xml(body)

    def test_dangling_edge_rejected(self):
        body = (
            b"<?xml version='1.0' encoding='utf-8'?>\n"
            b'<opmGraph version="1.1"><processes /><artifacts /><agents />'
            b'<causalDependencies><wasTriggeredBy from="p1" to="p2" /></causalDependencies>'
            b"</opmGraph>"
        )
        with pytest.raises(InvalidGraph):
            import_xml(body)


class TestIsomorphic:
    def test_reflexive(self):
        g = random_opm_graph(random.Random(5))
        assert isomorphic(g, g)

    def test_attr_change_detected(self):
        g = OpmGraph(nodes=(OpmNode("p", OpmNodeKind.PROCESS, attrs=(("k", "1"),)),))
        h = OpmGraph(nodes=(OpmNode("p", OpmNodeKind.PROCESS, attrs=(("k", "2"),)),))
        assert not isomorphic(g, h)

    def test_order_insensitive(self):
        g = random_opm_graph(random.Random(6))
        shuffled = OpmGraph(tuple(reversed(g.nodes)), tuple(reversed(g.edges)))
        assert isomorphic(g, shuffled)
