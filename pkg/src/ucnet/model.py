"""UCNet assembly: 1x1 stem over the 186-plane channel representation, a stack of
three residual layer types, and a global-average-pooling + fully connected head.

Layer types:

* TYPE1  ``relu(relu(bn(conv3x3(x))) + x)``, identity shortcut, width preserved.
* TYPE2  ``relu(bn(conv3x3_s2(x)) + bn(conv1x1_s2(x)))``, projection shortcut,
  halves the spatial size and may change width.
* TYPE3  as TYPE1 with a grouped 3x3 convolution.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import container
from .channelrep import ChannelRep, ColorPlanes, Domain, channel_representation
from .errors import CheckpointError, ConfigError, ConfigMismatch
from .filterbank import FilterBank, PadMode, ResidualConfig, full_bank
from .nncore import (BnParams, ConvParams, Mode, batch_norm_backward, batch_norm_forward,
                     conv2d_backward, conv2d_forward, fully_connected, fully_connected_grad,
                     global_avg_pool, global_avg_pool_grad, relu, relu_grad)

REP_CHANNELS = 186


class LayerKind(enum.Enum):
    TYPE1 = "T1"
    TYPE2 = "T2"
    TYPE3 = "T3"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    width_in: int
    width_out: int
    groups: int = 1

    def __post_init__(self):
        kind = LayerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.width_in < 1 or self.width_out < 1:
            raise ConfigError("layer widths must be positive")
        if kind in (LayerKind.TYPE1, LayerKind.TYPE3) and self.width_in != self.width_out:
            raise ConfigError(f"{kind.name} needs width_in == width_out for its identity shortcut, "
                              f"got {self.width_in} -> {self.width_out}")
        if kind is LayerKind.TYPE3:
            if self.groups < 1 or self.width_in % self.groups:
                raise ConfigError(f"TYPE3 groups={self.groups} must divide width {self.width_in}")
        elif self.groups != 1:
            raise ConfigError(f"{kind.name} does not take groups")

    def token(self) -> str:
        tok = f"{self.kind.value}:{self.width_in}:{self.width_out}"
        return tok + (f":{self.groups}" if self.kind is LayerKind.TYPE3 else "")

    @classmethod
    def from_token(cls, token: str) -> "LayerSpec":
        parts = token.strip().split(":")
        try:
            kind = LayerKind(parts[0])
            nums = [int(v) for v in parts[1:]]
        except ValueError:
            raise ConfigError(f"bad layer token {token!r}") from None
        if len(nums) == 1:
            nums = [nums[0], nums[0]]
        return cls(kind, *nums)


def T1(width):
    return LayerSpec(LayerKind.TYPE1, width, width)


def T2(width_in, width_out):
    return LayerSpec(LayerKind.TYPE2, width_in, width_out)


def T3(width, groups):
    return LayerSpec(LayerKind.TYPE3, width, width, groups)


@dataclass(frozen=True)
class UcnetConfig:
    stem_width: int = 32
    stages: tuple = (T3(32, 4), T1(32), T2(32, 64), T3(64, 4), T1(64), T2(64, 128), T1(128))
    truncation_T: float = 3.0
    domain: Domain = Domain.SPATIAL_RGB
    classes: int = 2
    pad_mode: PadMode = PadMode.ZERO
    input_channels: int = REP_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        object.__setattr__(self, "pad_mode", PadMode(self.pad_mode))
        if self.input_channels != REP_CHANNELS:
            raise ConfigError(f"stem input must have {REP_CHANNELS} channels")
        if self.classes != 2:
            raise ConfigError("UCNet is a binary cover/stego classifier (classes=2)")
        if not self.truncation_T > 0:
            raise ConfigError("truncation_T must be positive")
        width = self.stem_width
        for i, st in enumerate(self.stages):
            if st.width_in != width:
                raise ConfigError(f"stage {i} expects width {st.width_in}, previous layer gives {width}")
            width = st.width_out

    @property
    def final_width(self) -> int:
        return self.stages[-1].width_out if self.stages else self.stem_width

    @property
    def residual_config(self) -> ResidualConfig:
        return ResidualConfig(self.truncation_T, self.pad_mode)

    def to_dict(self) -> dict[str, str]:
        return OrderedDict([
            ("stem_width", str(self.stem_width)),
            ("stages", ",".join(s.token() for s in self.stages)),
            ("truncation_T", repr(float(self.truncation_T))),
            ("domain", self.domain.value),
            ("classes", str(self.classes)),
            ("pad_mode", self.pad_mode.value),
            ("input_channels", str(self.input_channels)),
        ])

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "UcnetConfig":
        try:
            stages = tuple(LayerSpec.from_token(t) for t in d["stages"].split(",") if t)
            return cls(stem_width=int(d["stem_width"]), stages=stages,
                       truncation_T=float(d["truncation_T"]), domain=Domain(d["domain"]),
                       classes=int(d.get("classes", 2)), pad_mode=PadMode(d.get("pad_mode", "ZERO")),
                       input_channels=int(d.get("input_channels", REP_CHANNELS)))
        except KeyError as exc:
            raise CheckpointError(f"config block lacks field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise CheckpointError(f"bad config block: {exc}") from None


DESK_CONFIG = UcnetConfig()


# --------------------------------------------------------------------------- layers

class _ConvBN:
    def __init__(self, name, conv: ConvParams, bn: BnParams):
        self.name, self.conv, self.bn = name, conv, bn
        self._cache = None

    def params(self):
        yield f"{self.name}.conv.weight", self.conv.weight
        yield f"{self.name}.bn.gamma", self.bn.gamma
        yield f"{self.name}.bn.beta", self.bn.beta

    def buffers(self):
        yield f"{self.name}.bn.running_mean", self.bn.running_mean
        yield f"{self.name}.bn.running_var", self.bn.running_var

    def forward(self, x, mode):
        z, ccache = conv2d_forward(x, self.conv)
        y, bcache = batch_norm_forward(z, self.bn, mode)
        self._cache = (ccache, bcache)
        return y

    def backward(self, gy, grads, need_input_grad=True):
        ccache, bcache = self._cache
        gz, ggamma, gbeta = batch_norm_backward(bcache, gy)
        gx, gw, _ = conv2d_backward(ccache, gz, need_input_grad)
        grads[f"{self.name}.bn.gamma"] = ggamma
        grads[f"{self.name}.bn.beta"] = gbeta
        grads[f"{self.name}.conv.weight"] = gw
        return gx


class _Stem:
    def __init__(self, name, cb):
        self.name, self.cb = name, cb
        self.units = [cb]

    def forward(self, x, mode):
        z = self.cb.forward(x, mode)
        self._z = z
        return relu(z)

    def backward(self, gy, grads):
        # the input is the fixed channel representation: no gradient needed
        return self.cb.backward(relu_grad(self._z, gy), grads, need_input_grad=False)


class _IdentityBlock:
    """TYPE1 and TYPE3: relu(relu(bn(conv(x))) + x)."""

    def __init__(self, name, cb):
        self.name, self.cb = name, cb
        self.units = [cb]

    def forward(self, x, mode):
        z = self.cb.forward(x, mode)
        s = relu(z) + x
        self._z, self._s = z, s
        return relu(s)

    def backward(self, gy, grads):
        gs = relu_grad(self._s, gy)
        return self.cb.backward(relu_grad(self._z, gs), grads) + gs


class _DownBlock:
    """TYPE2: relu(bn(conv3x3_s2(x)) + bn(conv1x1_s2(x)))."""

    def __init__(self, name, main, short):
        self.name, self.main, self.short = name, main, short
        self.units = [main, short]

    def forward(self, x, mode):
        s = self.main.forward(x, mode) + self.short.forward(x, mode)
        self._s = s
        return relu(s)

    def backward(self, gy, grads):
        gs = relu_grad(self._s, gy)
        return self.main.backward(gs, grads) + self.short.backward(gs, grads)


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _conv_bn(rng, name, c_in, c_out, k, stride, groups, dtype):
    fan_in = (c_in // groups) * k * k
    w = _he_normal(rng, (c_out, c_in // groups, k, k), fan_in, dtype)
    return _ConvBN(name, ConvParams(w, None, stride, k // 2, groups), BnParams.identity(c_out, dtype))


class Model:
    """UCNet with a fixed (non-trainable) filter bank and named parameter tensors."""

    def __init__(self, config: UcnetConfig, seed: int = 0, dtype=np.float32, bank: FilterBank | None = None):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.bank = bank if bank is not None else full_bank()
        rng = np.random.default_rng(seed)
        c = config
        self.blocks = [_Stem("stem", _conv_bn(rng, "stem", c.input_channels, c.stem_width, 1, 1, 1, dtype))]
        for i, st in enumerate(c.stages):
            name = f"stage{i}"
            if st.kind is LayerKind.TYPE2:
                main = _conv_bn(rng, name + ".main", st.width_in, st.width_out, 3, 2, 1, dtype)
                short = _conv_bn(rng, name + ".short", st.width_in, st.width_out, 1, 2, 1, dtype)
                self.blocks.append(_DownBlock(name, main, short))
            else:
                self.blocks.append(_IdentityBlock(name, _conv_bn(rng, name, st.width_in, st.width_out, 3, 1,
                                                                 st.groups, dtype)))
        width = c.final_width
        self.fc_weight = _he_normal(rng, (width, c.classes), width, dtype)
        self.fc_bias = np.zeros(c.classes, dtype)
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        self.buffers: OrderedDict[str, np.ndarray] = OrderedDict()
        for block in self.blocks:
            for unit in block.units:
                self.params.update(unit.params())
                self.buffers.update(unit.buffers())
        self.params["fc.weight"] = self.fc_weight
        self.params["fc.bias"] = self.fc_bias

    # -- inference / training passes

    def forward(self, rep, mode: Mode = Mode.EVAL) -> np.ndarray:
        """Logits ``(N, classes)`` for a batch of channel representations ``(N, 186, H, W)``."""
        x = rep.maps[None] if isinstance(rep, ChannelRep) else np.asarray(rep)
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ConfigError(f"expected (N, {self.config.input_channels}, H, W) input, got {x.shape}")
        mode = Mode(mode)
        x = x.astype(self.dtype, copy=False)
        for block in self.blocks:
            x = block.forward(x, mode)
        self._feat_shape = x.shape
        self._pooled = global_avg_pool(x)
        return fully_connected(self._pooled, self.fc_weight, self.fc_bias)

    def backward(self, grad_logits: np.ndarray) -> OrderedDict:
        """Gradients of every trainable tensor, given d(loss)/d(logits) of the last forward call."""
        grads = {}
        gp, grads["fc.weight"], grads["fc.bias"] = fully_connected_grad(self._pooled, self.fc_weight, grad_logits)
        g = global_avg_pool_grad(self._feat_shape, gp)
        for block in reversed(self.blocks):
            g = block.backward(g, grads)
        return OrderedDict((name, grads[name]) for name in self.params)

    def preprocess(self, planes: ColorPlanes) -> ChannelRep:
        return channel_representation(planes, self.bank, self.config.residual_config, dtype=self.dtype)

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def state(self) -> OrderedDict:
        out = OrderedDict(self.params)
        out.update(self.buffers)
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, target in self.state().items():
            if name not in tensors:
                raise CheckpointError(f"checkpoint lacks tensor {name!r}")
            src = tensors[name]
            if src.shape != target.shape:
                raise ConfigMismatch(name, target.shape, src.shape)
            target[...] = src
        extra = set(tensors) - set(self.state())
        if extra:
            raise CheckpointError(f"checkpoint has unexpected tensors {sorted(extra)}")

    def copy(self) -> "Model":
        m = Model(self.config, self.seed, self.dtype, self.bank)
        m.load_state(self.state())
        return m


def build_model(cfg: UcnetConfig = DESK_CONFIG, seed: int = 0, dtype=np.float32) -> Model:
    return Model(cfg, seed, dtype)


def forward(m: Model, rep, mode: Mode = Mode.EVAL) -> np.ndarray:
    return m.forward(rep, mode)


def param_count(m: Model) -> int:
    return m.param_count()


def save_checkpoint(m: Model, path) -> None:
    cfg = m.config.to_dict()
    cfg["seed"] = str(m.seed)
    container.save(path, cfg, m.state())


def load_checkpoint(path, expected: UcnetConfig | None = None) -> Model:
    """Load a checkpoint; with ``expected`` set, any differing config field raises ConfigMismatch."""
    cfg_dict, tensors = container.load(path)
    if "stem_width" not in cfg_dict:
        raise CheckpointError("container does not hold a model checkpoint")
    cfg = UcnetConfig.from_dict(cfg_dict)
    if expected is not None:
        want = expected.to_dict()
        for key, value in want.items():
            if cfg_dict.get(key) != value:
                raise ConfigMismatch(key, value, cfg_dict.get(key))
    m = Model(cfg, int(cfg_dict.get("seed", 0)), np.float32)
    m.load_state(tensors)
    return m
