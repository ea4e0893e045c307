"""Flow-based DDoS detection: pcap flow features, from-scratch classifiers, evaluation."""
__version__ = "0.1.0"

from .dataset import LabeledDataset, balance, load_csv, split
from .ensembles import BoostedTreesClassifier, RandomForestClassifier
from .flowmeter import FlowTable, extract_flows, finalize_features, parse_pcap
from .metrics import classification_report, confusion_matrix, metric_suite, one_vs_rest, roc_auc
from .model_store import load, save
from .schema import FEATURE_NAMES, LABELS
from .svm import LinearSVMClassifier
from .tree import DecisionTreeClassifier

__all__ = [
    "BoostedTreesClassifier",
    "DecisionTreeClassifier",
    "FEATURE_NAMES",
    "FlowTable",
    "LABELS",
    "LabeledDataset",
    "LinearSVMClassifier",
    "RandomForestClassifier",
    "balance",
    "classification_report",
    "confusion_matrix",
    "extract_flows",
    "finalize_features",
    "load",
    "load_csv",
    "metric_suite",
    "one_vs_rest",
    "parse_pcap",
    "roc_auc",
    "save",
    "split",
]
