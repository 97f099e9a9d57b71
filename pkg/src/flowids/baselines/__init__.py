"""Comparison models: KNN, random forest, RBF-kernel SVM and network variants."""
from .forest import ForestModel, Tree, forest_fit, forest_predict
from .knn import KnnModel, knn_fit, knn_predict
from .networks import cnn_lstm_softmax_config, cnn_only_config, dnn5_config, model_config_for
from .svm import RbfSvmModel, kkt_violation, rbf_kernel, rbf_svm_decision, rbf_svm_fit, rbf_svm_predict

__all__ = [
    "ForestModel", "Tree", "forest_fit", "forest_predict",
    "KnnModel", "knn_fit", "knn_predict",
    "cnn_lstm_softmax_config", "cnn_only_config", "dnn5_config", "model_config_for",
    "RbfSvmModel", "kkt_violation", "rbf_kernel", "rbf_svm_decision", "rbf_svm_fit", "rbf_svm_predict",
]
