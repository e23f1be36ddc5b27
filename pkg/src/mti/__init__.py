"""Multi-target non-intrusive speech intelligibility prediction toolkit."""

__version__ = "0.1.0"

from .audio import Waveform, load_wav
from .embeddings import EmbeddingSeq, align_to_frames, read_embeddings, write_embeddings
from .errors import MtiError
from .features import FrameFeatures, StftConfig, assemble_features, frame_count, lfb_forward, lfb_init, stft_power
from .manifest import ManifestRecord, SynthConfig, gen_synthetic, load_manifest, split_train_val
from .metrics import lcc, mse, srcc, wer
from .model import ForwardOutput, ModelConfig, MultiTargetNet, forward_utterance, gap, init_params
from .training import LossConfig, OptimConfig, load_model, multitask_loss, save_model, train, transfer_init
