from src.mspnet.dataset import LabeledSubject, stack_subjects
from src.mspnet.model import (
    MSPNetModel,
    branch_forward,
    fuse_and_classify,
    init_parameters,
    predict_proba,
    tnet_forward,
)
from src.mspnet.training import load_model, save_model, train

__all__ = [
    "LabeledSubject",
    "MSPNetModel",
    "branch_forward",
    "fuse_and_classify",
    "init_parameters",
    "load_model",
    "predict_proba",
    "save_model",
    "stack_subjects",
    "tnet_forward",
    "train",
]
