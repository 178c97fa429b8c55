"""Full network assembly: stem, staged graph blocks, downsampling, head.

The input log-mel map runs through a four-conv stem (strides 2,1,2,1),
then four stages.  Each stage flattens its feature map to a node matrix,
applies `depths[t]` graph-convolution blocks (k-NN local sets plus
clustered higher-order sets, then a ConvFFN), and hands off to a strided
downsample conv between stages.  Global average pooling and a two-layer
classifier produce raw logits.

Graph structure (neighbor indices, centroid vectors) is rebuilt from the
current features on every forward pass and treated as constant by the
backward pass; `capture`/`frozen` expose that structure so gradient
checks can hold it fixed while perturbing weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import tensor as T
from .clustering import fuzzy_cmeans, kmeans, nearest_centroids
from .errors import ConfigError, DimensionError, ParameterError
from .graph import KernelVariant, LhgConvParams, concat_width, lhg_conv
from .neighbors import knn

STEM_STRIDES = (2, 1, 2, 1)
NORM_MOMENTUM = 0.1


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults give the reference network."""

    channels: tuple = (80, 160, 320, 640)
    depths: tuple = (2, 2, 6, 2)
    k: int = 25
    K: int = 10
    P: int = 50
    m: float = 2.0
    v: int = 1
    ffn_expansion: int = 4
    num_classes: int = 527
    stem_channels: tuple | None = None
    in_frames: int = 1024
    in_mels: int = 128
    head_hidden: int = 1024
    variant: str = "local_higher"
    cluster_backend: str = "fcm"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.depths = tuple(int(d) for d in self.depths)
        if self.stem_channels is None:
            c0 = self.channels[0]
            self.stem_channels = (max(c0 // 2, 1), max(c0 // 2, 1), c0, c0)
        else:
            self.stem_channels = tuple(int(c) for c in self.stem_channels)

    def validate(self, strict: bool = False) -> "ModelConfig":
        """Check internal consistency; `strict` additionally requires the
        graph hyperparameters to fit every stage without clamping."""
        if len(self.channels) != 4 or len(self.depths) != 4:
            raise ConfigError("channels and depths must each have 4 entries")
        if len(self.stem_channels) != 4:
            raise ConfigError("stem_channels must have 4 entries")
        if self.stem_channels[-1] != self.channels[0]:
            raise ConfigError(
                f"stem must end at stage-1 width: {self.stem_channels[-1]} != {self.channels[0]}"
            )
        positives = {
            "k": self.k,
            "K": self.K,
            "P": self.P,
            "v": self.v,
            "ffn_expansion": self.ffn_expansion,
            "num_classes": self.num_classes,
            "in_frames": self.in_frames,
            "in_mels": self.in_mels,
            "head_hidden": self.head_hidden,
        }
        for name, value in positives.items():
            if int(value) < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if any(c < 1 for c in self.channels + self.depths + self.stem_channels):
            raise ConfigError("channel and depth entries must be >= 1")
        if self.K > self.P:
            raise ConfigError(f"K={self.K} must not exceed P={self.P}")
        if self.m <= 1:
            raise ConfigError(f"fuzziness m must be > 1, got {self.m}")
        try:
            KernelVariant.parse(self.variant)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        if self.cluster_backend not in ("fcm", "kmeans"):
            raise ConfigError(f"unknown cluster_backend {self.cluster_backend!r}")
        geometry = stage_geometry(self)
        if strict:
            min_nodes = min(h * w for h, w, _ in geometry)
            if self.k >= min_nodes:
                raise ConfigError(f"k={self.k} must be < smallest stage node count {min_nodes}")
            if self.P > min_nodes:
                raise ConfigError(f"P={self.P} exceeds smallest stage node count {min_nodes}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("channels", "depths", "stem_channels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**raw)


def tiny_config(num_classes: int = 8, **overrides) -> ModelConfig:
    """Small-input configuration used by gradient checks and smoke training."""
    base = dict(
        channels=(8, 16, 32, 64),
        depths=(1, 1, 1, 1),
        k=3,
        K=2,
        P=4,
        in_frames=64,
        in_mels=16,
        head_hidden=32,
        num_classes=num_classes,
    )
    base.update(overrides)
    return ModelConfig(**base)


def conv_out_extent(extent: int, kernel: int = 3, stride: int = 1, padding: int = 1) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise DimensionError(f"non-positive conv output extent from input {extent}")
    return out


def stage_geometry(config: ModelConfig) -> list[tuple[int, int, int]]:
    """(height, width, channels) at the input of each of the four stages."""
    h, w = config.in_frames, config.in_mels
    for stride in STEM_STRIDES:
        h = conv_out_extent(h, stride=stride)
        w = conv_out_extent(w, stride=stride)
    shapes = []
    for t, c in enumerate(config.channels):
        if t > 0:
            h = conv_out_extent(h, stride=2)
            w = conv_out_extent(w, stride=2)
        shapes.append((h, w, c))
    return shapes


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _add_conv(params, rng, name, kh, kw, cin, cout, dtype):
    scale = np.sqrt(2.0 / (kh * kw * cin))
    params.add(f"{name}.w", rng.normal(0.0, scale, (kh, kw, cin, cout)), dtype=dtype)
    params.add(f"{name}.b", np.zeros(cout), dtype=dtype)


def _add_depthwise(params, rng, name, c, dtype):
    scale = np.sqrt(2.0 / 9.0)
    params.add(f"{name}.w", rng.normal(0.0, scale, (3, 3, c)), dtype=dtype)
    params.add(f"{name}.b", np.zeros(c), dtype=dtype)


def _add_linear(params, rng, name, fan_in, fan_out, dtype):
    scale = np.sqrt(2.0 / fan_in)
    params.add(f"{name}.w", rng.normal(0.0, scale, (fan_in, fan_out)), dtype=dtype)
    params.add(f"{name}.b", np.zeros(fan_out), dtype=dtype)


def _add_norm(params, name, c, dtype):
    params.add(f"{name}.gamma", np.ones(c), dtype=dtype)
    params.add(f"{name}.beta", np.zeros(c), dtype=dtype)
    params.add(f"{name}.running_mean", np.zeros(c), requires_grad=False, dtype=dtype)
    params.add(f"{name}.running_var", np.ones(c), requires_grad=False, dtype=dtype)


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> T.ParamStore:
    """Build the named parameter store for `config`, deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = T.ParamStore()
    variant = KernelVariant.parse(config.variant)

    cin = 1
    for i, cout in enumerate(config.stem_channels):
        _add_conv(params, rng, f"stem.conv{i}", 3, 3, cin, cout, dtype)
        _add_norm(params, f"stem.norm{i}", cout, dtype)
        cin = cout

    for t, c in enumerate(config.channels):
        width = concat_width(variant, c)
        hidden = c * config.ffn_expansion
        for blk in range(config.depths[t]):
            base = f"stage{t}.block{blk}"
            _add_linear(params, rng, f"{base}.lhg.sigma", width, width, dtype)
            _add_linear(params, rng, f"{base}.lhg.proj", width, c, dtype)
            _add_norm(params, f"{base}.ffn.norm", c, dtype)
            _add_conv(params, rng, f"{base}.ffn.expand", 1, 1, c, hidden, dtype)
            _add_depthwise(params, rng, f"{base}.ffn.dw", hidden, dtype)
            _add_conv(params, rng, f"{base}.ffn.proj", 1, 1, hidden, c, dtype)
        if t < 3:
            _add_conv(params, rng, f"down{t}.conv", 3, 3, c, config.channels[t + 1], dtype)
            _add_norm(params, f"down{t}.norm", config.channels[t + 1], dtype)

    _add_linear(params, rng, "head.fc1", config.channels[-1], config.head_hidden, dtype)
    _add_linear(params, rng, "head.fc2", config.head_hidden, config.num_classes, dtype)
    return params


def param_count(config: ModelConfig, trainable_only: bool = True) -> int:
    return init_params(config, seed=0).num_parameters(trainable_only=trainable_only)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _norm(x, params, prefix, training, update_stats):
    gamma = params[f"{prefix}.gamma"]
    beta = params[f"{prefix}.beta"]
    rm = params[f"{prefix}.running_mean"]
    rv = params[f"{prefix}.running_var"]
    if training:
        out, mu, var = T.batch_norm_train(x, gamma, beta)
        if update_stats:
            rm.data[...] = (1.0 - NORM_MOMENTUM) * rm.data + NORM_MOMENTUM * mu
            rv.data[...] = (1.0 - NORM_MOMENTUM) * rv.data + NORM_MOMENTUM * var
        return out
    return T.batch_norm_eval(x, gamma, beta, rm.data, rv.data)


def stem(x, params, config, training=False, update_stats=False):
    """Four 3x3 convs with strides 2,1,2,1, each followed by norm and GELU."""
    for i, stride in enumerate(STEM_STRIDES):
        x = T.conv2d(x, params[f"stem.conv{i}.w"], params[f"stem.conv{i}.b"], stride=stride, padding=1)
        x = _norm(x, params, f"stem.norm{i}", training, update_stats)
        x = T.gelu(x)
    return x


def conv_ffn(x, params, prefix, training=False, update_stats=False):
    """Residual feed-forward: norm, 1x1 expand, 3x3 depthwise, GELU, 1x1 project."""
    h = _norm(x, params, f"{prefix}.norm", training, update_stats)
    h = T.conv2d(h, params[f"{prefix}.expand.w"], params[f"{prefix}.expand.b"])
    h = T.conv2d(h, params[f"{prefix}.dw.w"], params[f"{prefix}.dw.b"], padding=1, depthwise=True)
    h = T.gelu(h)
    h = T.conv2d(h, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])
    return T.add(x, h)


def downsample(x, params, index, training=False, update_stats=False):
    """3x3 stride-2 pad-1 conv plus norm, between consecutive stages."""
    x = T.conv2d(x, params[f"down{index}.conv.w"], params[f"down{index}.conv.b"], stride=2, padding=1)
    return _norm(x, params, f"down{index}.norm", training, update_stats)


def head(x, params):
    """Global average pool, hidden affine with GELU, affine to logits."""
    b, h, w, c = x.shape
    pooled = T.mean_along(T.reshape(x, (b, h * w, c)), axis=1)
    hidden = T.gelu(T.affine(pooled, params["head.fc1.w"], params["head.fc1.b"]))
    return T.affine(hidden, params["head.fc2.w"], params["head.fc2.b"])


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------


@dataclass
class GraphSelections:
    """Neighbor indices and centroid vectors captured per (stage, block).

    Holding these fixed while re-running `forward` removes the
    non-differentiable selection steps, which is what finite-difference
    gradient checks require.
    """

    entries: dict = field(default_factory=dict)

    def put(self, stage: int, block: int, indices, higher) -> None:
        self.entries[(stage, block)] = (indices, higher)

    def get(self, stage: int, block: int):
        try:
            return self.entries[(stage, block)]
        except KeyError:
            raise ParameterError(f"no frozen selection for stage {stage} block {block}") from None


def build_graphs(values: np.ndarray, config: ModelConfig, variant: KernelVariant):
    """Per-sample k-NN indices and top-K centroid vectors for one node batch.

    k, P, K are clamped to what the stage's node count admits (small
    late-stage maps would otherwise be infeasible).
    """
    b, n, c = values.shape
    need_local = variant is not KernelVariant.HIGHER_ONLY
    need_higher = variant is not KernelVariant.LOCAL_ONLY
    indices = higher = None
    if need_local:
        k_eff = min(config.k, n - 1)
        if k_eff < 1:
            raise DimensionError(f"stage with {n} node(s) cannot form a neighborhood")
        indices = np.empty((b, n, k_eff), dtype=np.int64)
    if need_higher:
        p_eff = min(config.P, n)
        top_eff = min(config.K, p_eff)
        higher = np.empty((b, n, top_eff, c), dtype=values.dtype)
    for i in range(b):
        if need_local:
            indices[i] = knn(values[i], k_eff).indices
        if need_higher:
            if config.cluster_backend == "kmeans":
                state = kmeans(values[i], p_eff, iterations=config.v)
                higher[i] = nearest_centroids(values[i], state.centroids, top_eff).vectors
            else:
                _, sel = fuzzy_cmeans(values[i], p_eff, top_eff, m=config.m, iterations=config.v)
                higher[i] = sel.vectors
    return indices, higher


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def forward(
    features,
    params: T.ParamStore,
    config: ModelConfig,
    training: bool = False,
    frozen: GraphSelections | None = None,
    capture: bool = False,
    update_stats: bool | None = None,
):
    """Run the network; returns logits (B, num_classes).

    `capture=True` additionally returns the GraphSelections built along
    the way; `frozen` reuses a previous capture instead of recomputing
    graph structure.  `update_stats` controls whether training-mode norms
    refresh their running statistics (defaults to `training`).
    """
    if update_stats is None:
        update_stats = training and frozen is None
    x = T.as_tensor(features)
    if x.ndim == 2:
        x = T.reshape(x, (1,) + x.shape + (1,))
    elif x.ndim == 3:
        x = T.reshape(x, x.shape + (1,))
    if x.ndim != 4 or x.shape[1:] != (config.in_frames, config.in_mels, 1):
        raise DimensionError(
            f"expected input (B, {config.in_frames}, {config.in_mels}), got {x.shape}"
        )
    variant = KernelVariant.parse(config.variant)
    selections = GraphSelections() if capture else None

    x = stem(x, params, config, training, update_stats)
    for t in range(4):
        b, h, w, c = x.shape
        n = h * w
        for blk in range(config.depths[t]):
            nodes = T.reshape(x, (b, n, c))
            if frozen is not None:
                indices, higher = frozen.get(t, blk)
            else:
                indices, higher = build_graphs(nodes.data, config, variant)
            if selections is not None:
                selections.put(t, blk, indices, higher)
            base = f"stage{t}.block{blk}"
            lhg_params = LhgConvParams(
                sigma_weight=params[f"{base}.lhg.sigma.w"],
                sigma_bias=params[f"{base}.lhg.sigma.b"],
                proj_weight=params[f"{base}.lhg.proj.w"],
                proj_bias=params[f"{base}.lhg.proj.b"],
            )
            nodes = lhg_conv(nodes, indices, higher, lhg_params, variant)
            x = T.reshape(nodes, (b, h, w, c))
            x = conv_ffn(x, params, f"{base}.ffn", training, update_stats)
        if t < 3:
            x = downsample(x, params, t, training, update_stats)

    logits = head(x, params)
    if capture:
        return logits, selections
    return logits
