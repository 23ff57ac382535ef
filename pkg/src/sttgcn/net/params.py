"""Model configuration and the flat-enumerated parameter container."""
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import UsageError

KERNEL = 2  # dilated convolution taps
N_DILATED = 2  # dilated convolution layers
N_CONVS = 3  # graph convolutions stacked inside each module


@dataclass
class ModelConfig:
    n_nodes: int
    in_features: int = 1
    window: int = 12
    horizon: int = 12
    layers: int = 4
    filters: tuple = (64, 64, 64)
    dilation: int = 2
    dilated_channels: int = 64
    fc_hidden: int = 128
    huber_delta: float = 1.0
    learning_rate: float = 0.003
    batch_size: int = 32
    max_epochs: int = 5000
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        if len(self.filters) != N_CONVS:
            raise UsageError(f"need {N_CONVS} filter widths, got {self.filters}")
        if len(set(self.filters)) != 1:
            raise UsageError(f"max-pooling across convolutions needs equal widths, got {self.filters}")
        for name in ("n_nodes", "in_features", "window", "horizon", "layers",
                     "dilation", "dilated_channels", "fc_hidden", "batch_size"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if self.window - 2 * self.layers < 1:
            raise UsageError(
                f"window {self.window} too short for {self.layers} layers (each crops 2 steps)"
            )
        if self.dilated_steps < 1:
            raise UsageError(
                f"window {self.window} shorter than the dilated receptive field"
            )
        if not self.huber_delta > 0:
            raise UsageError("huber_delta must be positive")

    @property
    def embed_width(self):
        return self.filters[0]

    @property
    def width(self):
        return self.filters[-1]

    @property
    def stt_steps(self):
        return self.window - 2 * self.layers

    @property
    def dilated_steps(self):
        return self.window - N_DILATED * (KERNEL - 1) * self.dilation

    @property
    def out_steps(self):
        return min(self.stt_steps, self.dilated_steps)

    def to_dict(self):
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(cfg):
    """Ordered ``(name, shape)`` list; this order defines the flat vector."""
    c0 = cfg.embed_width
    shapes = [
        ("embed.temporal", (cfg.window, c0)),
        ("embed.spatial", (cfg.n_nodes, c0)),
        ("embed.proj.w", (cfg.in_features, c0)),
        ("embed.proj.b", (c0,)),
    ]
    c_in = c0
    for layer in range(cfg.layers):
        for j, c_out in enumerate(cfg.filters):
            p = f"stt{layer}.conv{j}"
            shapes += [
                (f"{p}.w1", (c_in, c_out)),
                (f"{p}.w2", (c_in, c_out)),
                (f"{p}.b1", (c_out,)),
                (f"{p}.b2", (c_out,)),
            ]
            c_in = c_out
    c_in = c0
    for q in range(N_DILATED):
        for path in ("value", "gate"):
            shapes += [
                (f"dil{q}.{path}.w", (KERNEL, c_in, cfg.dilated_channels)),
                (f"dil{q}.{path}.b", (cfg.dilated_channels,)),
            ]
        c_in = cfg.dilated_channels
    flat = cfg.out_steps * (cfg.width + cfg.dilated_channels)
    shapes += [
        ("out.fc1.w", (flat, cfg.fc_hidden)),
        ("out.fc1.b", (cfg.fc_hidden,)),
        ("out.fc2.w", (cfg.fc_hidden, cfg.horizon)),
        ("out.fc2.b", (cfg.horizon,)),
    ]
    return shapes


def param_count(cfg):
    """Closed-form parameter count, independent of :func:`param_shapes`."""
    c0, w, cd = cfg.embed_width, cfg.width, cfg.dilated_channels
    embed = cfg.window * c0 + cfg.n_nodes * c0 + cfg.in_features * c0 + c0
    widths_in = [c0] + [w] * (N_CONVS - 1)
    first_layer = sum(2 * (ci * co + co) for ci, co in zip(widths_in, cfg.filters))
    later_layer = N_CONVS * 2 * (w * w + w)
    stt = first_layer + (cfg.layers - 1) * later_layer
    dilated = 2 * (KERNEL * c0 * cd + cd) + 2 * (KERNEL * cd * cd + cd)
    flat = cfg.out_steps * (w + cd)
    out = flat * cfg.fc_hidden + cfg.fc_hidden + cfg.fc_hidden * cfg.horizon + cfg.horizon
    return embed + stt + dilated + out


@dataclass
class ModelParams:
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = value

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def total_count(self):
        return sum(a.size for a in self.arrays.values())

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    @classmethod
    def from_flat(cls, cfg, vector):
        vector = np.asarray(vector, dtype=np.float64).ravel()
        shapes = param_shapes(cfg)
        total = sum(int(np.prod(s)) for _, s in shapes)
        if vector.size != total:
            raise UsageError(f"parameter vector has {vector.size} entries, config needs {total}")
        arrays, pos = {}, 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            arrays[name] = vector[pos:pos + size].reshape(shape).copy()
            pos += size
        return cls(arrays)

    @classmethod
    def zeros(cls, cfg):
        return cls({name: np.zeros(shape) for name, shape in param_shapes(cfg)})


def _fans(shape):
    if len(shape) == 3:
        return shape[0] * shape[1], shape[0] * shape[2]
    return shape[0], shape[1]


def init_params(cfg, seed=None):
    """Glorot-uniform weights, zero biases and zero embeddings."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    arrays = {}
    for name, shape in param_shapes(cfg):
        if name.startswith("embed.") and not name.endswith(".w"):
            arrays[name] = np.zeros(shape)
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arrays)
