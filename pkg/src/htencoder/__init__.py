"""Hierarchical transformer encoders for dialog response generation, on a small numpy autograd core."""

from .config import HtEncoderConfig, ModelConfig, ModelVariant, desk, preset, tiny
from .encoder import EncodedContext, convert_standard_encoder, encode
from .masking import CtScheme, UtteranceLayout, build_ct_mask, build_layout, build_ut_mask
from .metrics import EvalReport, bleu, combined_score, entity_f1
from .models import DialogModel, build_model

__version__ = "0.1.0"
