"""veriface: face verification with per-client 2D discriminant templates
and skin-chroma score fusion."""

from .colorfeat import (ChromaHistogram, GaussianSummary, average_histograms,
                        chroma_histogram, fit_gaussian, histogram_distance,
                        opponent_chroma, opponent_histogram)
from .config import RunConfig
from .decision import (DecisionPolicy, ScorePair, VerdictRecord, apply_policy,
                       calibrate_eer, color_score, fuse, grey_score,
                       normalize_scores, score_pair, verify)
from .discriminant import (ClientTemplate, ScatterSet, build_all_templates,
                           build_client_template, client_scatters,
                           fisher_directions, nonsingularity_check)
from .errors import (AlignmentError, ConfigError, DegenerateClientError,
                     EmptyMaskError, ImageFormatError, ManifestError,
                     ModelFormatError, SingularScatterError,
                     UnknownClientError, VerifaceError)
from .evaluation import (EvalReport, ProtocolPartition, compute_rates,
                         csf_baseline, partition, run_comparison)
from .imaging import (FaceSample, GeometryConfig, RawImage, SkinBounds,
                      align_and_crop, load_image, rgb_to_ycbcr, save_ppm,
                      skin_mask)
from .manifest import ManifestRecord, load_face_sample, load_manifest, save_manifest
from .model import FeatureParams, ModelFile, load_model, save_model
from .subspace import (PcaStage, column_total_scatter, fit_pca_stage,
                       pca_project, pca_project_all, row_total_scatter,
                       top_eigvecs_sym)
from .synth import synth_generate
from .training import calibrate_model, train_model

__version__ = "0.1.0"
