from src.baseline.gbt import GbtModel, TreeNode, load_gbt, predict_gbt, save_gbt, train_gbt

__all__ = ["GbtModel", "TreeNode", "load_gbt", "predict_gbt", "save_gbt", "train_gbt"]
