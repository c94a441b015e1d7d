from src.analysis.features import FeatureDump, feature_dump, feature_dump_csv, save_feature_dump
from src.analysis.plotting import embedding_svg, roc_svg, save_embedding_svg, save_roc_svg
from src.analysis.roc import RocResult, mann_whitney_auc, roc_auc, roc_csv, save_roc
from src.analysis.split import Split, load_split, save_split, split_50_50
from src.analysis.tsne import Embedding2D, embedding_csv, joint_probabilities, kl_divergence, save_embedding, tsne

__all__ = [
    "FeatureDump",
    "feature_dump",
    "feature_dump_csv",
    "save_feature_dump",
    "embedding_svg",
    "roc_svg",
    "save_embedding_svg",
    "save_roc_svg",
    "RocResult",
    "mann_whitney_auc",
    "roc_auc",
    "roc_csv",
    "save_roc",
    "Split",
    "load_split",
    "save_split",
    "split_50_50",
    "Embedding2D",
    "embedding_csv",
    "joint_probabilities",
    "kl_divergence",
    "save_embedding",
    "tsne",
]
