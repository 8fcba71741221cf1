"""warpbench: document-warp geometry, synthetic ground truth, and rectification metrics."""

from .version import TOOLKIT_VERSION as __version__
from .errors import (
    WarpbenchError, FormatError, ShapeError, ValidationError, ConfigError,
    InversionError, ProjectionError, ProbeError,
)
from .raster import (
    FloatMap2D, BinaryMask, Image, bilinear_sample, sample_many, pixel_centers,
    read_fmap, write_fmap, fmap_bytes, fmap_from_bytes, read_image, write_image,
)
from .warpfield import (
    BackwardMap, ForwardMap, AngleMap, identity_backward_map, apply_backward_map,
    invert_forward_map, angle_from_backward_map, warp_polygon, roundtrip_residual_px,
    save_field, load_backward_map, load_forward_map,
)
from .angles import (
    polar_from_channels, channels_from_polar, angular_distance, wrap_angle,
    angle_loss, angle_loss_theta_grad, AngleLossResult,
)
from .mesh import (
    Mesh, build_grid_mesh, flat_grid_mesh, mean_curvature, curvature_mask,
    default_curvature_threshold, read_mesh, write_mesh,
)
from .synth import (
    GenConfig, WordBox, SampleBundle, render_text_layout, fold_mesh, project_mesh,
    generate_sample, save_bundle, load_bundle, bundle_self_check,
    mean_text_angular_deformation, crease_distance_px,
)
from .losses import (
    PredictionSet, LossBreakdown, loss_3d, loss_combined,
    loss_3d_value_and_grad, loss_combined_value_and_grad, finite_diff_check,
)
from .evaluation import (
    polygon_intersection_area, shoelace_area, convex_hull, hungarian_match,
    levenshtein, MatchPair, match_word_boxes, edit_distance_score, epe, ms_ssim,
    OcrConfig, simulate_ocr, quad_distortion, EvalReport, evaluate, identity_map,
    transfer_words,
)
