"""Continual flow-based intrusion detection: a transformer detector, an
identifier with an open ``0_other`` class, GMM discovery of new attack
clusters and head growth with exemplar replay."""

from .clustering import ClusterSelection, DiagonalGaussianMixture, fit_gmm, predict_cluster, select_k, silhouette_score
from .detection import FlowDetector, route, train_detector
from .encoder import TransformerFlowClassifier
from .flowdata import Dataset, SyntheticSpec, generate_synthetic, ingest_csv, split, subsample
from .identification import OTHER, FlowIdentifier, LabelRegistry, ReplayStore
from .metrics import ConfusionMatrix, MetricReport
from .pipeline import PipelineState, export_report, run_all, run_baseline, run_chunk
from .textenc import FlowTextEncoder

__version__ = "0.1.0"

__all__ = [
    "OTHER",
    "ClusterSelection",
    "ConfusionMatrix",
    "Dataset",
    "DiagonalGaussianMixture",
    "FlowDetector",
    "FlowIdentifier",
    "FlowTextEncoder",
    "LabelRegistry",
    "MetricReport",
    "PipelineState",
    "ReplayStore",
    "SyntheticSpec",
    "TransformerFlowClassifier",
    "export_report",
    "fit_gmm",
    "generate_synthetic",
    "ingest_csv",
    "predict_cluster",
    "route",
    "run_all",
    "run_baseline",
    "run_chunk",
    "select_k",
    "silhouette_score",
    "split",
    "subsample",
    "train_detector",
]
