"""Voxelwise encoding models with cross-modality transfer evaluation."""

from .data_model import (AlignmentMap, DesignMatrix, FeatureMatrix,
                         ResponseMatrix, ScoreMap, WeightSet, read_store,
                         write_store)
from .errors import (ArgError, CorruptError, DataError, FormatError, IoError,
                     TrialError, XencError)
from .ridge import (RidgeConfig, cv_select_lambda, fit_encoding_model, predict,
                    raw_space_weights, score_correlation, svd_ridge_solve)
from .temporal import (DelaySpec, LanczosConfig, build_design, lanczos_resample,
                       make_delayed_design)
from .alignment import apply_alignment, fit_alignment
from .transfer import (ScanScoreTable, compare_feature_sets,
                       cross_modality_scores, layer_select_bootstrap,
                       performance_ratio, sign_flip_correct,
                       within_modality_scores)
from .stats import (PermConfig, bh_fdr, blockwise_null_scores,
                    paired_t_test_one_sided, pc_spatial_corr_test,
                    voxel_significance)
from .pca import (PcaBasis, collapse_delays, fit_pca, project_features,
                  project_weights, select_top_voxels)
from .synth import World, WorldSpec, generate_null_world, generate_world

__version__ = "0.1.0"
