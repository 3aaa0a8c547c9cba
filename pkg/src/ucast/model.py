"""Hierarchical latent-query forecaster.

One sample is a channel-major window X (C x T).  The pipeline is:

  instance-normalize -> embed rows to width d -> L compression stages, each
  attending a learned bank of latent queries over the previous stage's rows
  (channel count shrinks by a factor r per stage) -> linear temporal
  alignment -> L expansion stages attending the compressed summary from the
  finer stage's rows, with skip connections -> project to the horizon ->
  undo the instance normalization.

Compression stages are layer-normalized; expansion stages are not.  The
covariance penalty -(1/C') log det((1/d) H H^T + eps I) on each compression
output pushes those rows toward full rank.

All shapes follow the row-vector convention: rows are channels (or latent
slots), columns are features, and weights multiply from the right.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import Node, Tape
from .errors import FormatError, NumericError, ParameterError, ShapeError
from .linalg import as_matrix, cholesky_logdet, load_matrix_csv, save_matrix_csv
from .rng import Stream

VARIANTS = ("full", "no_cov", "no_hierarchical", "frozen_query", "no_upsampling")

INSTANCE_NORM_GUARD = 1e-5
DEFAULT_EPS_COV = 1e-4
DEFAULT_ALPHA = 0.01
INIT_STD = 0.02


@dataclass(frozen=True)
class UCastConfig:
    channels: int
    lookback: int
    horizon: int
    d: int = 512
    layers: int = 2
    ratio: int = 16
    heads: int = 1
    alpha: float = DEFAULT_ALPHA
    eps_cov: float = DEFAULT_EPS_COV
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        for name in ("channels", "lookback", "horizon", "d", "layers", "ratio",
                     "heads"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d % self.heads != 0:
            raise ParameterError(
                f"d={self.d} must be divisible by heads={self.heads}")
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")
        if self.eps_cov <= 0:
            raise ParameterError(f"eps_cov must be > 0, got {self.eps_cov}")
        if self.variant not in VARIANTS:
            raise ParameterError(
                f"unknown variant '{self.variant}', expected one of {VARIANTS}")

    def to_dict(self) -> dict:
        return {
            "channels": self.channels, "lookback": self.lookback,
            "horizon": self.horizon, "d": self.d, "layers": self.layers,
            "ratio": self.ratio, "heads": self.heads, "alpha": self.alpha,
            "eps_cov": self.eps_cov, "variant": self.variant, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UCastConfig":
        return cls(**d)


def build_variant(config: UCastConfig, variant: str) -> UCastConfig:
    """Derive the effective config for an ablation variant.

    no_cov drops the covariance penalty; no_hierarchical collapses the ladder
    to a single stage; the remaining variants only change wiring or the
    trainable set, so they keep the architecture numbers.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant '{variant}'")
    cfg = replace(config, variant=variant)
    if variant == "no_cov":
        cfg = replace(cfg, alpha=0.0)
    if variant == "no_hierarchical":
        cfg = replace(cfg, layers=1)
    return cfg


def ladder_sizes(channels: int, ratio: int, layers: int) -> list[int]:
    """Stage widths C_l = max(1, floor(C / r^l)) for l = 1..layers."""
    if channels < 1 or ratio < 1 or layers < 1:
        raise ParameterError("channels, ratio, layers must all be >= 1")
    sizes = []
    clamped = False
    for level in range(1, layers + 1):
        raw = channels // ratio ** level
        clamped = clamped or raw < 1
        sizes.append(max(1, raw))
    if clamped:
        warnings.warn(
            f"ladder for C={channels}, r={ratio}, L={layers} clamps at one "
            "latent slot; deeper stages add no further compression",
            RuntimeWarning, stacklevel=2)
    return sizes


ModelParams = dict[str, np.ndarray]


def init_params(config: UCastConfig) -> ModelParams:
    """Seeded initialization: weights and queries N(0, 0.02^2), LN at identity."""
    stream = Stream(config.seed, (211,))
    d = config.d
    sizes = ladder_sizes(config.channels, config.ratio, config.layers)
    params: ModelParams = {"w_in": stream.normal_matrix(config.lookback, d, INIT_STD)}
    for level, width in enumerate(sizes, start=1):
        params[f"enc{level}.query"] = stream.normal_matrix(width, d, INIT_STD)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            params[f"enc{level}.{name}"] = stream.normal_matrix(d, d, INIT_STD)
        params[f"enc{level}.ln_gain"] = np.ones(d)
        params[f"enc{level}.ln_bias"] = np.zeros(d)
    params["f_pred"] = stream.normal_matrix(d, d, INIT_STD)
    if config.variant == "no_upsampling":
        params["restore"] = stream.normal_matrix(config.channels, sizes[-1], INIT_STD)
    else:
        for level in range(config.layers, 0, -1):
            for name in ("w_q", "w_k", "w_v", "w_o"):
                params[f"dec{level}.{name}"] = stream.normal_matrix(d, d, INIT_STD)
    params["w_out"] = stream.normal_matrix(d, config.horizon, INIT_STD)
    return params


def trainable_names(config: UCastConfig, params: ModelParams) -> list[str]:
    """Parameters the optimizer may update; frozen_query pins the query banks."""
    if config.variant == "frozen_query":
        return [k for k in params if not k.endswith(".query")]
    return list(params)


@dataclass
class InstanceStats:
    mean: np.ndarray          # per channel
    scale: np.ndarray         # std + guard, per channel


def instance_normalize(x: np.ndarray) -> tuple[np.ndarray, InstanceStats]:
    """Per-channel standardization over the lookback axis."""
    x = as_matrix(x, "window")
    mean = x.mean(axis=1)
    scale = x.std(axis=1) + INSTANCE_NORM_GUARD
    return (x - mean[:, None]) / scale[:, None], InstanceStats(mean=mean, scale=scale)


def instance_denormalize(y_norm: np.ndarray, stats: InstanceStats) -> np.ndarray:
    y_norm = as_matrix(y_norm, "normalized prediction")
    return y_norm * stats.scale[:, None] + stats.mean[:, None]


@dataclass
class ForwardTrace:
    config: UCastConfig
    stats: InstanceStats
    h_nodes: list[Node]          # H^0 .. H^L
    u_nodes: list[Node]          # U^L .. U^0
    attn_down: list[np.ndarray]  # per stage, head-averaged, C_l x C_{l-1}
    attn_up: list[np.ndarray]    # per stage, head-averaged, C_{l-1} x C_l
    y_norm: Node
    y: Node

    @property
    def prediction(self) -> np.ndarray:
        return self.y.value


def _attention(tape: Tape, query_rows: Node, key_rows: Node, value_rows: Node,
               w_q: Node, w_k: Node, w_v: Node, w_o: Node, heads: int
               ) -> tuple[Node, np.ndarray]:
    """Scaled dot-product attention over row sets; returns (output, map).

    The returned map is the head-averaged attention matrix as a plain array.
    """
    d = w_q.value.shape[0]
    d_head = d // heads
    q = tape.matmul(query_rows, w_q)
    k = tape.matmul(key_rows, w_k)
    v = tape.matmul(value_rows, w_v)
    head_outs = []
    attn_sum = None
    for h in range(heads):
        lo, hi = h * d_head, (h + 1) * d_head
        q_h = tape.slice_cols(q, lo, hi)
        k_h = tape.slice_cols(k, lo, hi)
        v_h = tape.slice_cols(v, lo, hi)
        scores = tape.scale(tape.matmul(q_h, tape.transpose(k_h)),
                            1.0 / np.sqrt(d_head))
        attn = tape.softmax_rows(scores)
        head_outs.append(tape.matmul(attn, v_h))
        attn_sum = attn.value if attn_sum is None else attn_sum + attn.value
    merged = head_outs[0] if heads == 1 else tape.concat_cols(head_outs)
    return tape.matmul(merged, w_o), attn_sum / heads


def forward(params: ModelParams, config: UCastConfig, x: np.ndarray,
            tape: Tape | None = None
            ) -> tuple[ForwardTrace, dict[str, Node], Tape]:
    """Full forward pass for one window.

    Returns the trace, the parameter leaf nodes (for gradient collection),
    and the tape the graph was recorded on.
    """
    tape = tape or Tape()
    nodes = {k: tape.leaf(v, requires_grad=True) for k, v in params.items()}
    return forward_from_nodes(nodes, config, x, tape), nodes, tape


def forward_from_nodes(nodes: dict[str, Node], config: UCastConfig,
                       x: np.ndarray, tape: Tape) -> ForwardTrace:
    """Graph construction against already-wrapped parameter leaves."""
    x = as_matrix(x, "window")
    if x.shape != (config.channels, config.lookback):
        raise ShapeError(
            f"window shape {x.shape} vs (C={config.channels}, T={config.lookback})")
    x_norm, stats = instance_normalize(x)

    h = tape.matmul(tape.constant(x_norm), nodes["w_in"])
    h_nodes = [h]
    attn_down = []
    for level in range(1, config.layers + 1):
        out, attn = _attention(
            tape, nodes[f"enc{level}.query"], h, h,
            nodes[f"enc{level}.w_q"], nodes[f"enc{level}.w_k"],
            nodes[f"enc{level}.w_v"], nodes[f"enc{level}.w_o"], config.heads)
        h = tape.layer_norm(out, nodes[f"enc{level}.ln_gain"],
                            nodes[f"enc{level}.ln_bias"])
        _check_finite(h, f"compression stage {level}")
        h_nodes.append(h)
        attn_down.append(attn)

    u = tape.matmul(h_nodes[-1], nodes["f_pred"])
    u_nodes = [u]
    attn_up = []
    if config.variant == "no_upsampling":
        u = tape.matmul(nodes["restore"], u)
        _check_finite(u, "channel restore")
        u_nodes.append(u)
    else:
        for level in range(config.layers, 0, -1):
            skip = h_nodes[level - 1]
            out, attn = _attention(
                tape, skip, u, u,
                nodes[f"dec{level}.w_q"], nodes[f"dec{level}.w_k"],
                nodes[f"dec{level}.w_v"], nodes[f"dec{level}.w_o"], config.heads)
            u = tape.add(out, skip)
            _check_finite(u, f"expansion stage {level}")
            u_nodes.append(u)
            attn_up.append(attn)

    y_norm = tape.matmul(tape.add(u, h_nodes[0]), nodes["w_out"])
    y = tape.row_affine_const(y_norm, stats.scale, stats.mean)
    _check_finite(y, "prediction")
    return ForwardTrace(config=config, stats=stats, h_nodes=h_nodes,
                        u_nodes=u_nodes, attn_down=attn_down, attn_up=attn_up,
                        y_norm=y_norm, y=y)


def loss_builder(config: UCastConfig, x: np.ndarray, target: np.ndarray):
    """BuildLoss closure over one (window, target) pair, for grad_check."""

    def build(tape: Tape, nodes: dict[str, Node]) -> Node:
        trace = forward_from_nodes(nodes, config, x, tape)
        return total_loss(tape, trace, target)

    return build


def _check_finite(node: Node, stage: str) -> None:
    if not np.all(np.isfinite(node.value)):
        raise NumericError(f"non-finite activations after {stage}")


def cov_loss(h: np.ndarray, eps: float = DEFAULT_EPS_COV) -> float:
    """-(1/C') log det((1/d) H H^T + eps I) for a plain array."""
    h = as_matrix(h, "cov_loss input")
    c_rows, d = h.shape
    sigma = (h @ h.T) / d
    return -cholesky_logdet(sigma + eps * np.eye(c_rows)) / c_rows


def total_loss(tape: Tape, trace: ForwardTrace, target: np.ndarray) -> Node:
    """Mean-squared error on the de-normalized scale plus the weighted mean
    covariance penalty over compression stages."""
    target = as_matrix(target, "target")
    if target.shape != trace.y.value.shape:
        raise ShapeError(
            f"target shape {target.shape} vs prediction {trace.y.value.shape}")
    err = tape.sub(trace.y, tape.constant(target))
    loss = tape.mean(tape.square(err))
    cfg = trace.config
    if cfg.alpha > 0:
        penalties = [tape.cov_penalty(h, cfg.eps_cov) for h in trace.h_nodes[1:]]
        total_pen = penalties[0]
        for p in penalties[1:]:
            total_pen = tape.add(total_pen, p)
        loss = tape.add(loss, tape.scale(total_pen, cfg.alpha / len(penalties)))
    return loss


class Forecaster:
    """Trainable-model adapter around a config and its parameter dict."""

    def __init__(self, config: UCastConfig, params: ModelParams | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    def trainable(self) -> list[str]:
        return trainable_names(self.config, self.params)

    def build_loss(self, tape: Tape, nodes: dict[str, Node],
                   x: np.ndarray, y: np.ndarray) -> Node:
        trace = forward_from_nodes(nodes, self.config, x, tape)
        return total_loss(tape, trace, y)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.trace(x).prediction

    def trace(self, x: np.ndarray) -> ForwardTrace:
        """Gradient-free forward pass (nothing is recorded on the tape)."""
        tape = Tape()
        nodes = {k: tape.constant(v) for k, v in self.params.items()}
        return forward_from_nodes(nodes, self.config, x, tape)


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_MANIFEST = "manifest.json"


def save_checkpoint(directory, params: ModelParams, config: UCastConfig) -> None:
    """One CSV matrix per parameter plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        shapes[name] = list(arr.shape)
        save_matrix_csv(directory / _param_filename(name),
                        arr.reshape(1, -1) if arr.ndim == 1 else arr)
    manifest = {"format": "ucast-checkpoint-v1", "config": config.to_dict(),
                "shapes": shapes}
    (directory / CHECKPOINT_MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> tuple[ModelParams, UCastConfig]:
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        config = UCastConfig.from_dict(manifest["config"])
        shapes = manifest["shapes"]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: malformed checkpoint manifest") from exc
    params: ModelParams = {}
    for name, shape in shapes.items():
        arr, _ = load_matrix_csv(directory / _param_filename(name))
        params[name] = arr.reshape(shape)
    return params, config


def _param_filename(name: str) -> str:
    return name.replace(".", "_") + ".csv"
