"""Raw-moment (RM) shape loss for segmentation: coordinate grids, moment maps,
loss functions, a numpy autodiff U-Net, synthetic data and evaluation metrics."""
from .errors import (ConfigurationError, DatasetError, DegenerateMassError, DimensionError,
                     DivergenceError, IntegrityError, LabelError, ManifestError, NumericError,
                     RMLossError, UndefinedDistanceError, VersionError, ExtentMismatchError)
from .grid import CoordGrid, GridConvention, make_grid, make_grid_2d, make_grid_3d
from .losses import (PRESET_ALIASES, PRESETS, LossValue, Reduction, RmConfig, ce_loss, dice_loss, mse_loss,
                     preset, resolve_preset, rm_loss, rm_loss_multi, total_loss)
from .metrics import MetricsReport, dice_jaccard, evaluate_masks, hd95_asd
from .moments import MomentOrder, central_moment, centroid, mu_map, raw_moment
from .estimator import MomentFeatures, RMSegmenter

__version__ = "0.1.0"
