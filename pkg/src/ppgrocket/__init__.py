"""Random-convolution-kernel features and PPG baselines for hypertension detection."""

from .classifiers import (
    BalancedRandomForestClassifier,
    BalancedRidgeClassifier,
    ForestConfig,
    feature_importance,
    fit_balanced_forest,
    fit_ridge,
    predict_forest,
    predict_ridge,
)
from .metrics import ConfusionMatrix, MetricReport, confusion, report
from .ppg_features import (
    HeartRateExtractor,
    MorphologicalFeatureExtractor,
    ampd_peaks,
    detect_keypoints,
    heart_rate,
    morphological_features,
)
from .rocket import (
    RandomKernelTransform,
    TransformModel,
    dilated_convolve,
    dilation_schedule,
    enumerate_kernels,
    fit_biases,
    ppv,
    transform,
    transform_batch,
)
from .signal_model import (
    Dataset,
    PpgRecord,
    PulseShape,
    SynthParams,
    binarize_label,
    load_dataset,
    save_dataset,
    split_by_subject,
    subsample_training,
    synth_ppg,
)

__version__ = "0.1.0"
