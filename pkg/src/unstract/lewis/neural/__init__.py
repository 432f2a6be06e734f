from .model import AttentionRecord, ModelBundle, ModelConfig, encode, new_model  # noqa: F401
from .optim import TrainConfig  # noqa: F401
from .serialization import load, save  # noqa: F401
from .training import TrainResult, gradient_check, train  # noqa: F401
