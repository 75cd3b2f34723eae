"""Workflow provenance kernel.

Captures, stores, queries, reconstructs and validates the full lifecycle of
pipeline analyses, and exchanges captured provenance as Open Provenance
Model graphs in a canonical XML format.
"""

from .analysis import (
    AnnotationHit,
    Comparator,
    ComparisonReport,
    Expectation,
    ExpectationResult,
    FindingKind,
    OutcomeDiff,
    ReferenceDataset,
    ResultReport,
    Severity,
    ValidationFinding,
    ancestor_closure,
    compare_analyses,
    reconstruct_part,
    reconstruct_spec,
    refset_from_dict,
    refset_to_dict,
    search_annotations,
    validate_offline,
    validate_online,
    validate_spec,
)
from .errors import (
    AlreadyExists,
    CycleIntroduced,
    InvalidGraph,
    InvalidTransition,
    MalformedSpec,
    MissingInput,
    NotEligible,
    NotFound,
    ProvError,
    UnknownAgent,
    UnknownExecution,
    UnknownItem,
    UnknownNode,
    UnknownScript,
    UnknownVersion,
)
from .executor import (
    BUILTIN_SCRIPTS,
    FaultEntry,
    FaultPlan,
    SimulatedGridExecutor,
    TaskRegistry,
)
from .kernel import (
    ActivityState,
    AgentDesc,
    Event,
    ExecutionId,
    ExecutionStatus,
    Outcome,
    ProvenanceKernel,
    Transition,
    apply_transition,
)
from .model import (
    ActivityNode,
    Annotation,
    CompositeKind,
    DataRef,
    Dependency,
    ExternalSource,
    InputBinding,
    SingleKind,
    UpstreamSource,
    VersionInfo,
    WorkflowSpec,
    canonical_json,
    flatten,
    structural_hash,
    utcnow,
)
from .opm import (
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
from .paths import ClusterKind, ClusterPath, ItemPath
from .service import ServiceConfig, create_app
from .storage import FileStorage, MemoryStorage, RemoteStorage

__all__ = [
    "ActivityNode", "ActivityState", "AgentDesc", "AlreadyExists", "Annotation",
    "AnnotationHit", "BUILTIN_SCRIPTS", "ClusterKind", "ClusterPath",
    "Comparator", "ComparisonReport", "CompositeKind", "CycleIntroduced",
    "DataRef", "Dependency", "Event", "ExecutionId", "ExecutionStatus",
    "Expectation", "ExpectationResult", "ExternalSource", "FaultEntry",
    "FaultPlan", "FileStorage", "FindingKind", "InputBinding", "InvalidGraph",
    "InvalidTransition", "ItemPath", "MalformedSpec", "MemoryStorage",
    "MissingInput", "NotEligible", "NotFound", "OpmEdge", "OpmEdgeKind",
    "OpmGraph", "OpmNode", "OpmNodeKind", "Outcome", "OutcomeDiff", "ProvError",
    "ProvenanceKernel", "ReferenceDataset", "RemoteStorage", "ResultReport",
    "ServiceConfig", "Severity", "SimulatedGridExecutor", "SingleKind",
    "TaskRegistry", "Transition", "UnknownAgent", "UnknownExecution",
    "UnknownItem", "UnknownNode", "UnknownScript", "UnknownVersion",
    "UpstreamSource", "ValidationFinding", "VersionInfo", "WorkflowSpec",
    "ancestor_closure", "apply_transition", "canonical_json",
    "compare_analyses", "create_app", "export_xml", "flatten", "import_xml",
    "isomorphic", "reconstruct_part", "reconstruct_spec", "refset_from_dict",
    "refset_to_dict", "search_annotations", "structural_hash", "to_opm",
    "utcnow", "validate_graph", "validate_offline", "validate_online",
    "validate_spec",
]

__version__ = "0.1.0"
