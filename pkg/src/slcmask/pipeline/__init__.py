from .checkpoint import CorruptCheckpoint, load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .infer import Detection, infer, paste_mask
from .model import MaskRCNN
from .targets import propose, rpn_targets, sample_rois, split_counts
from .train import LOG_COLUMNS, TrainResult, TrainingDiverged, compute_losses, train, write_loss_log

__all__ = [name for name in dir() if not name.startswith("_")]
