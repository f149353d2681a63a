from . import tensor
from .tensor import Tensor, no_grad
from .layers import (
    Module,
    Linear,
    Conv2d,
    BatchNorm1d,
    BatchNorm2d,
    LayerNorm,
    CBR,
    CGL,
    LGL,
    GfeUnit,
    ProjectionHead,
    Reducer,
    ClusterProjector,
    ClassifierHead,
)
from .optim import Adam
from .gradcheck import gradcheck
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError
