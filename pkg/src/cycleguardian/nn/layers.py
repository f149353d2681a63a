"""Parameterized building blocks: Module registry, conv/linear/norm layers,
and the composite units used by the encoder and fusion stages."""

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class with recursive parameter/buffer discovery.

    Trainable tensors are plain attributes (requires_grad=True); persistent
    non-trainable state goes through register_buffer. Names are dotted paths.
    """

    def __init__(self):
        self.training = True
        self._buffers = {}

    def register_buffer(self, name, value):
        self._buffers[name] = value

    def _children(self):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        out = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((prefix + name, val))
        for name, child in self._children():
            out.extend(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        out = [(prefix + k, v) for k, v in self._buffers.items()]
        for name, child in self._children():
            out.extend(child.named_buffers(prefix + name + "."))
        return out

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        d = {k: np.array(v.data) for k, v in self.named_parameters()}
        d.update({k: np.array(v) for k, v in self.named_buffers()})
        return d

    def load_state_dict(self, d):
        own_p = dict(self.named_parameters())
        own_b = dict(self.named_buffers())
        missing = (set(own_p) | set(own_b)) - set(d)
        extra = set(d) - (set(own_p) | set(own_b))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in d.items():
            if k in own_p:
                if own_p[k].data.shape != v.shape:
                    raise ValueError(f"shape mismatch for {k}: {own_p[k].data.shape} vs {v.shape}")
                own_p[k].data = v.astype(own_p[k].data.dtype, copy=True)
            else:
                if own_b[k].shape != v.shape:
                    raise ValueError(f"shape mismatch for {k}: {own_b[k].shape} vs {v.shape}")
                self._assign_buffer(k, v)

    def _assign_buffer(self, dotted, value):
        parts = dotted.split(".")
        mod = self
        i = 0
        while i < len(parts) - 1:
            part = parts[i]
            val = vars(mod).get(part)
            if isinstance(val, Module):
                mod = val
                i += 1
            elif isinstance(val, (list, tuple)) and i + 1 < len(parts) and parts[i + 1].isdigit():
                mod = val[int(parts[i + 1])]
                i += 2
            else:
                raise KeyError(f"no module path for buffer {dotted}")
        key = parts[-1]
        if key not in mod._buffers:
            raise KeyError(f"no buffer {dotted}")
        mod._buffers[key] = value.astype(mod._buffers[key].dtype, copy=True)

    def param_count(self):
        return sum(p.data.size for p in self.parameters())


def kaiming_uniform(rng, shape, fan_in, dtype):
    """ReLU-gain uniform init: bound = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.weight = Tensor(kaiming_uniform(rng, (in_features, out_features), in_features, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)

    __call__ = forward


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, pad=1, rng=None, dtype=np.float32):
        super().__init__()
        k = kernel_size
        fan_in = in_channels * k * k
        self.stride = stride
        self.pad = pad
        self.weight = Tensor(kaiming_uniform(rng, (out_channels, in_channels, k, k), fan_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    __call__ = forward


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x):
        c = self.gamma.data.shape[0]
        g = T.reshape(self.gamma, (1, c, 1, 1))
        b = T.reshape(self.beta, (1, c, 1, 1))
        if self.training:
            mu = T.tmean(x, axis=(0, 2, 3), keepdims=True)
            diff = T.sub(x, mu)
            var = T.tmean(T.mul(diff, diff), axis=(0, 2, 3), keepdims=True)
            n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            rm = self._buffers["running_mean"]
            rv = self._buffers["running_var"]
            self._buffers["running_mean"] = ((1 - self.momentum) * rm + self.momentum * mu.data.reshape(-1)).astype(rm.dtype)
            self._buffers["running_var"] = ((1 - self.momentum) * rv + self.momentum * unbiased).astype(rv.dtype)
            xhat = T.div(diff, T.sqrt(T.add(var, self.eps)))
        else:
            rm = self._buffers["running_mean"].reshape(1, c, 1, 1)
            rv = self._buffers["running_var"].reshape(1, c, 1, 1)
            xhat = T.div(T.sub(x, rm), np.sqrt(rv + self.eps))
        return T.add(T.mul(xhat, g), b)

    __call__ = forward


class BatchNorm1d(Module):
    def __init__(self, features, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(features, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(features, dtype=dtype))
        self.register_buffer("running_var", np.ones(features, dtype=dtype))

    def forward(self, x):
        if self.training:
            mu = T.tmean(x, axis=0, keepdims=True)
            diff = T.sub(x, mu)
            var = T.tmean(T.mul(diff, diff), axis=0, keepdims=True)
            n = x.data.shape[0]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            rm = self._buffers["running_mean"]
            rv = self._buffers["running_var"]
            self._buffers["running_mean"] = ((1 - self.momentum) * rm + self.momentum * mu.data.reshape(-1)).astype(rm.dtype)
            self._buffers["running_var"] = ((1 - self.momentum) * rv + self.momentum * unbiased).astype(rv.dtype)
            xhat = T.div(diff, T.sqrt(T.add(var, self.eps)))
        else:
            rm = self._buffers["running_mean"]
            rv = self._buffers["running_var"]
            xhat = T.div(T.sub(x, rm), np.sqrt(rv + self.eps))
        return T.add(T.mul(xhat, self.gamma), self.beta)

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, features, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(features, dtype=dtype), requires_grad=True)

    def forward(self, x):
        mu = T.tmean(x, axis=-1, keepdims=True)
        diff = T.sub(x, mu)
        var = T.tmean(T.mul(diff, diff), axis=-1, keepdims=True)
        xhat = T.div(diff, T.sqrt(T.add(var, self.eps)))
        return T.add(T.mul(xhat, self.gamma), self.beta)

    __call__ = forward


class CBR(Module):
    """Conv -> BatchNorm -> ReLU, stride-2 downsampling stage."""

    def __init__(self, in_channels, out_channels, rng, stride=2, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, stride, 1, rng, dtype)
        self.bn = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))

    __call__ = forward


class LGL(Module):
    """Linear -> GELU -> LayerNorm."""

    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.linear = Linear(in_features, out_features, rng, dtype)
        self.norm = LayerNorm(out_features, dtype=dtype)

    def forward(self, x):
        return self.norm(T.gelu(self.linear(x)))

    __call__ = forward


class CGL(Module):
    """Conv -> GELU -> LayerNorm (normalized over channels at each position)."""

    def __init__(self, in_channels, out_channels, rng, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, stride, 1, rng, dtype)
        self.norm = LayerNorm(out_channels, dtype=dtype)

    def forward(self, x):
        y = T.gelu(self.conv(x))
        y = T.transpose(y, (0, 2, 3, 1))
        y = self.norm(y)
        return T.transpose(y, (0, 3, 1, 2))

    __call__ = forward


class GfeUnit(Module):
    """Group feature encoder: three CBR stages then a linear projection.

    Input is one group slice per sample, shape (B, C_in, F, G); output (B, D_g).
    """

    def __init__(self, rng, in_channels=3, widths=(16, 32, 64), d_g=128, input_hw=(84, 20), dtype=np.float32):
        super().__init__()
        chans = (in_channels,) + tuple(widths)
        self.stages = [CBR(chans[i], chans[i + 1], rng, stride=2, dtype=dtype) for i in range(len(widths))]
        h, w = input_hw
        for _ in widths:
            h = (h + 2 - 3) // 2 + 1
            w = (w + 2 - 3) // 2 + 1
        self.flat_dim = widths[-1] * h * w
        self.proj = Linear(self.flat_dim, d_g, rng, dtype)

    def forward(self, x):
        y = x
        for stage in self.stages:
            y = stage(y)
        y = T.reshape(y, (y.shape[0], self.flat_dim))
        return self.proj(y)

    __call__ = forward


class ProjectionHead(Module):
    """Two affine layers with BatchNorm and ReLU between, D_z -> D_z."""

    def __init__(self, d_z, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d_z, d_z, rng, dtype)
        self.bn = BatchNorm1d(d_z, dtype=dtype)
        self.fc2 = Linear(d_z, d_z, rng, dtype)

    def forward(self, x):
        return self.fc2(T.relu(self.bn(self.fc1(x))))

    __call__ = forward


class Reducer(Module):
    """Affine encoder D_g -> D_e with a mirror decoder for reconstruction warm-up."""

    def __init__(self, d_g, d_e, rng, dtype=np.float32):
        super().__init__()
        self.enc = Linear(d_g, d_e, rng, dtype)
        self.dec = Linear(d_e, d_g, rng, dtype)

    def forward(self, x):
        return self.enc(x)

    __call__ = forward

    def reconstruct(self, x):
        return self.dec(self.enc(x))


class ClusterProjector(Module):
    """Shared per-cluster projection F_theta: pooled D_g -> D_c."""

    def __init__(self, d_g, d_c, rng, dtype=np.float32):
        super().__init__()
        self.block = LGL(d_g, d_c, rng, dtype)
        self.out = Linear(d_c, d_c, rng, dtype)

    def forward(self, x):
        return self.out(self.block(x))

    __call__ = forward


class ClassifierHead(Module):
    def __init__(self, d_z, n_classes, rng, dtype=np.float32):
        super().__init__()
        self.fc = Linear(d_z, n_classes, rng, dtype)

    def forward(self, z):
        return self.fc(z)

    __call__ = forward
