"""Local/higher-order graph convolution over flattened node features.

Each node is updated from two relations at once: its k nearest neighbors
(the local set) and its strongest cluster centroids (the higher-order
set).  Both are aggregated by max-relative pooling, the elementwise max
of (member - node) differences, concatenated with the node itself, passed
through an affine+GELU map to triple width, projected back, and added
residually:

    widened_i = gelu(W_s . concat(x_i, maxrel(local), maxrel(higher)) + b_s)
    out_i     = x_i + W_p . widened_i + b_p

Ablation variants drop one relation, shrinking the concat width from 3C
to 2C.

Differentiation contract: neighbor indices and centroid vectors are
recomputed every forward pass and enter backward as constants.  Gradients
flow through the node in every concat slot (including the -x_i terms) and
through the gathered neighbor features, never into the clustering update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError


class KernelVariant(enum.Enum):
    """Which relations feed the concat: local k-NN, higher-order centroids, or both."""

    LOCAL_ONLY = "local_only"
    HIGHER_ONLY = "higher_only"
    LOCAL_HIGHER = "local_higher"

    @classmethod
    def parse(cls, value) -> "KernelVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            names = [v.value for v in cls]
            raise ParameterError(f"unknown kernel variant {value!r}; expected one of {names}")


def concat_width(variant, channels: int) -> int:
    """2C for single-relation variants, 3C for the combined kernel."""
    variant = KernelVariant.parse(variant)
    return (3 if variant is KernelVariant.LOCAL_HIGHER else 2) * channels


@dataclass
class LhgConvParams:
    """Weights of one graph-conv block; widths must match the active variant."""

    sigma_weight: T.Tensor  # (width, width)
    sigma_bias: T.Tensor  # (width,)
    proj_weight: T.Tensor  # (width, C)
    proj_bias: T.Tensor  # (C,)


def max_relative(center: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Elementwise max over (others[j] - center); single-node convenience form."""
    center = np.asarray(center)
    others = np.asarray(others)
    if others.ndim != 2 or others.shape[0] < 1:
        raise ParameterError(f"others must be a non-empty (J, C) set, got shape {others.shape}")
    if others.shape[1] != center.shape[-1]:
        raise DimensionError(f"feature widths differ: center {center.shape}, others {others.shape}")
    return (others - center).max(axis=0)


def _max_relative_nodes(x: T.Tensor, members: T.Tensor) -> T.Tensor:
    # x: (B, N, C); members: (B, N, J, C) -> (B, N, C), on the tape
    if members.shape[2] < 1:
        raise ParameterError("relation sets must hold at least one member per node")
    diffs = T.sub(members, T.reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2])))
    return T.max_along(diffs, axis=2)


def lhg_conv(
    nodes,
    neighbor_indices: np.ndarray | None,
    higher_vectors: np.ndarray | None,
    params: LhgConvParams,
    variant: KernelVariant = KernelVariant.LOCAL_HIGHER,
) -> T.Tensor:
    """One graph-convolution update over a node matrix.

    ``nodes`` is (N, C) or batched (B, N, C).  ``neighbor_indices``
    (B, N, k) selects local sets out of ``nodes`` itself (gradients reach
    the selected features); ``higher_vectors`` (B, N, K, C) are centroid
    constants.  Either may be omitted when the variant ignores it.
    """
    variant = KernelVariant.parse(variant)
    x = T.as_tensor(nodes)
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise DimensionError(f"nodes must be (N, C) or (B, N, C), got {x.shape}")
    b, n, c = x.shape

    parts = [x]
    if variant in (KernelVariant.LOCAL_ONLY, KernelVariant.LOCAL_HIGHER):
        if neighbor_indices is None:
            raise ParameterError(f"variant {variant.value} needs neighbor indices")
        idx = np.asarray(neighbor_indices)
        if idx.ndim == 2:
            idx = idx[None, :, :]
        local = T.gather_nodes(x, idx)
        parts.append(_max_relative_nodes(x, local))
    if variant in (KernelVariant.HIGHER_ONLY, KernelVariant.LOCAL_HIGHER):
        if higher_vectors is None:
            raise ParameterError(f"variant {variant.value} needs higher-order centroid vectors")
        vec = np.asarray(higher_vectors)
        if vec.ndim == 3:
            vec = vec[None, :, :, :]
        if vec.shape[-1] != c:
            raise DimensionError(f"centroid width {vec.shape[-1]} != node width {c}")
        higher = T.constant(vec, dtype=x.dtype)
        parts.append(_max_relative_nodes(x, higher))

    stacked = T.concat(parts, axis=-1)
    width = concat_width(variant, c)
    if params.sigma_weight.shape != (width, width):
        raise DimensionError(
            f"sigma weight must be ({width}, {width}) for variant {variant.value} "
            f"with C={c}, got {params.sigma_weight.shape}"
        )
    if params.proj_weight.shape != (width, c):
        raise DimensionError(
            f"projection weight must be ({width}, {c}), got {params.proj_weight.shape}"
        )
    widened = T.gelu(T.affine(stacked, params.sigma_weight, params.sigma_bias))
    out = T.add(x, T.affine(widened, params.proj_weight, params.proj_bias))
    if squeeze:
        out = T.reshape(out, (n, c))
    return out
