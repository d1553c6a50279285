"""Environment-aware subgraph explanations for graph classifiers.

The package generates synthetic motif-graph benchmarks with known
ground-truth explanations, trains a small message-passing classifier,
clusters graphs into structure and feature environments, and learns a
variational generator whose probability maps are decoded into compact
explanatory subgraphs. Everything runs on numpy plus scikit-learn; the
``envexplain`` console script drives the full pipeline.
"""

from envexplain.classifier import GraphClassifier
from envexplain.config import ConfigError, RunConfig, config_hash, load_config
from envexplain.datagen import GenConfig, generate, split
from envexplain.environments import EnvironmentAnalyzer
from envexplain.explainer import SubgraphExplainer
from envexplain.graphs import (
    Dataset,
    Explanation,
    Graph,
    complement_graph,
    export_dot,
    induced_subgraph,
    validate_explanation,
)
from envexplain.metrics import (
    GraphMetrics,
    MetricsReport,
    evaluate,
    fidelity,
    gef,
    random_edge_explanation,
    top_degree_explanation,
    write_reports,
)
from envexplain.sampling import (
    ReconConfig,
    reconstruct_edge_first,
    runtime_probe,
    sample_subgraph_train,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Dataset",
    "EnvironmentAnalyzer",
    "Explanation",
    "GenConfig",
    "Graph",
    "GraphClassifier",
    "GraphMetrics",
    "MetricsReport",
    "ReconConfig",
    "RunConfig",
    "SubgraphExplainer",
    "complement_graph",
    "config_hash",
    "evaluate",
    "export_dot",
    "fidelity",
    "gef",
    "generate",
    "induced_subgraph",
    "load_config",
    "random_edge_explanation",
    "reconstruct_edge_first",
    "runtime_probe",
    "sample_subgraph_train",
    "split",
    "top_degree_explanation",
    "validate_explanation",
    "write_reports",
]
