from training.ablation import AblationStudy, run_ablation, study_variants
from training.data import Sample, SampleSet, build_datasets, iterate_batches, to_batch, weaken_labels
from training.inference import (
    detect_images,
    evaluate,
    infer,
    predict_samples,
    resolve_model,
    scale_by_size,
    scale_spread,
)
from training.step import TrainState, ground_truth, prepare_sample, train_step
from training.symmetry import AngleNet, SymmetryReport, axis_error, verify_symmetry
from training.trainer import TrainResult, build_state, lr_factor, refresh_suggestions, train
