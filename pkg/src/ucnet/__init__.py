"""UCNet: universal color-image steganalysis with fixed residual filters and a grouped residual CNN."""

from .channelrep import ChannelRep, ColorPlanes, Domain, channel_representation, split_rgb
from .errors import (CheckpointError, ConfigError, ConfigMismatch, DigestMismatch, ImageFormatError,
                     JpegError, ManifestError, UcnetError)
from .filterbank import FilterBank, Kernel, PadMode, ResidualConfig, apply_bank, full_bank
from .model import DESK_CONFIG, LayerKind, LayerSpec, Model, UcnetConfig, build_model, load_checkpoint, save_checkpoint
from .nncore import Mode
from .stegosim import EmbedSpec, inverse_ternary_entropy, jpeg_embed, lsbm_embed, ternary_entropy
from .traineval import Metrics, PairRecord, TrainConfig, evaluate, p_e, train

__version__ = "0.1.0"
