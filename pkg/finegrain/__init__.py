from ._version import __version__
from .config import Config, ConfigError
from .corpus import AnnotationRecord, LabelHierarchy, Manifest, TokenSequence, Vocabulary
from .toyworld import ToySpec, generate_toy_corpus, generate_toy_video
from .encoder import EncoderConfig, build_encoder
from .heads import JointModel
from .training import TrainConfig, Trainer, evaluate_model, fit_linear_probe, train_model
from .transfer import EpisodeSpec, get_adapter, run_benchmark
from .explain import grad_cam_class, grad_cam_token
from .utils import setup_logging
