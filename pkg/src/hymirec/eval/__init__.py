from .data import ItemStore, Split, UserSequence
from .metrics import MetricsReport, ndcg_at_k, recall_at_k
from .synthetic import SyntheticData, SyntheticSpec, generate_synthetic

__all__ = ["ItemStore", "Split", "UserSequence", "MetricsReport", "ndcg_at_k", "recall_at_k",
           "SyntheticData", "SyntheticSpec", "generate_synthetic"]
