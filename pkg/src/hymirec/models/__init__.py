from .interest import InterestModel, ModelConfig, pad_left
from .optim import Adam, cosine_schedule

__all__ = ["InterestModel", "ModelConfig", "pad_left", "Adam", "cosine_schedule"]
