"""Post-processing toolkit for multi-tissue breast DCE-MRI segmentation.

The package operates on probability maps and detector box proposals
supplied as files: volume I/O and registration (volume), MIP detector
inputs (mip), 2D-to-3D tumor box fusion (boxes), tissue-contact
plausibility heuristics (heuristics), temperature calibration
(calibration), evaluation metrics (metrics), and a synthetic phantom
harness (phantom, augment).  The cli module drives whole cases.
"""

from .augment import AugmentSpec, augment, sample_training_crop
from .boxes import (Box2D, Box3D, BoxProposal2D, assemble_box3d, fuse_axial,
                    fuse_sagittal, read_proposals, write_proposals)
from .calibration import ece, fit_temperature, sample_voxel_logits, softmax_with_temperature
from .components import ComponentSet, connected_components, contact_area
from .heuristics import (HeuristicConfig, apply_contact_rules, argmax_labels,
                         hysteresis_tumor, merge_probabilities, run_heuristics,
                         suppress_outside_box, suppress_vasculature)
from .metrics import (MetricReport, aggregate_reports, dice, evaluate_case,
                      fp_component_count, format_table, robust_hausdorff,
                      UndefinedMetricError)
from .mip import (MipImage, make_mip, median_filter_axis, normalize_imagenet,
                  read_mip, write_mip)
from .phantom import (DegradationSpec, PhantomInfeasibleError, PhantomSpec,
                      generate_phantom, simulate_model_outputs)
from .pipeline import PipelineConfig, fuse_case_boxes, prepare_case, segment_case
from .tissues import (ADIPOSE, AIR, CHEST, CLASS_NAMES, GLAND, N_CLASSES, SKIN,
                      TUMOR, VESSEL)
from .volume import (CaseBundle, LabelMap, ProbMap, Volume, read_labelmap,
                     read_probmap, read_volume, register_phase_correlation,
                     resample_isotropic, translate_volume, write_volume)

__version__ = "0.1.0"
