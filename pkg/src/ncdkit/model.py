"""Desk-scale network: per-modality MLP encoders, a fusion layer, projection
heads with unit-norm output, and the two linear heads for classification and
clustering.

Multi-modal inputs are encoded separately, concatenated, and fused by an
affine layer; single-modal models skip the audio encoder entirely and the
fusion is an identity. Checkpoints are a little-endian binary dump of every
named parameter, preceded by the run configuration as a JSON blob.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError, ParseError
from .numerics import Param, RngState, Tensor, affine_forward, as_tensor, concat, l2_normalize, softmax

CHECKPOINT_MAGIC = b"NCDK"
CHECKPOINT_VERSION = 1


def _he_affine(d_in: int, d_out: int, rng: RngState) -> tuple[Param, Param]:
    limit = np.sqrt(6.0 / d_in)
    w = (rng.uniform((d_in, d_out)) * 2.0 - 1.0) * limit
    # small constant bias keeps ReLU units alive for fully-dropped inputs
    return Param(w), Param(np.full(d_out, 0.01))


def _mlp_forward(layers, x: Tensor, relu_last: bool = False) -> Tensor:
    out = x
    for i, (w, b) in enumerate(layers):
        out = affine_forward(out, w, b)
        if relu_last or i < len(layers) - 1:
            out = out.relu()
    return out


@dataclass
class ForwardOutputs:
    """Activations one batch needs downstream.

    Fields not requested by the forward mode are None: projections exist
    only in mode 'both' (training); each head only when its mode is active.
    """

    z: Tensor                  # concatenated encoder features [B, d_v_feat(+d_a_feat)]
    z_bar: Tensor              # fused representation [B, fused]
    z_hat_v: Tensor | None     # unit-norm visual projection [B, p]
    z_hat_a: Tensor | None
    logits_l: Tensor | None    # labelled-head logits [B, Cl]
    probs_u: Tensor | None     # clustering-head distribution [B, Cu]


class ModelState:
    """Parameter stacks for the full network, keyed for checkpointing."""

    def __init__(self, multimodal, encoder_v, encoder_a, fusion, proj_v, proj_a,
                 head_u_hidden, head_l, head_u, dims):
        self.multimodal = multimodal
        self.encoder_v = encoder_v
        self.encoder_a = encoder_a
        self.fusion = fusion            # None means identity
        self.proj_v = proj_v
        self.proj_a = proj_a
        self.head_u_hidden = head_u_hidden  # optional extra layer before head_u
        self.head_l = head_l
        self.head_u = head_u
        self.dims = dims                # dict of the config dims, for validation

    def named_params(self) -> list[tuple[str, Param]]:
        named = []

        def add(prefix, layers):
            for i, (w, b) in enumerate(layers):
                named.append((f"{prefix}.{i}.w", w))
                named.append((f"{prefix}.{i}.b", b))

        add("encoder_v", self.encoder_v)
        if self.encoder_a is not None:
            add("encoder_a", self.encoder_a)
        if self.fusion is not None:
            add("fusion", [self.fusion])
        add("proj_v", self.proj_v)
        if self.proj_a is not None:
            add("proj_a", self.proj_a)
        add("head_l", [self.head_l])
        if self.head_u_hidden is not None:
            add("head_u_hidden", [self.head_u_hidden])
        add("head_u", [self.head_u])
        return named

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return sum(p.value.data.size for p in self.params())


def init_model(cfg, rng: RngState) -> ModelState:
    """Build a ModelState from a run config (duck-typed: reads dim fields).

    Weights use fan-in scaled uniform init, biases start at zero; the draw
    order is fixed so one seed always yields one parameter set.
    """
    dims = dict(d_v=cfg.d_v, d_a=cfg.d_a, feature=cfg.feature_dim, fused=cfg.fused_dim,
                proj_hidden=cfg.proj_hidden_dim, proj=cfg.proj_dim,
                classes_labelled=cfg.classes_labelled, classes_unlabelled=cfg.classes_unlabelled)
    positive = ["d_v", "feature", "fused", "proj_hidden", "proj", "classes_labelled"]
    if cfg.multimodal:
        positive.append("d_a")
    for key in positive:
        if dims[key] is None or dims[key] < 1:
            raise ConfigError(f"dimension {key} must be a positive integer, got {dims[key]}")
    if dims["classes_unlabelled"] < 2:
        raise ConfigError(f"need at least 2 unlabelled classes, got {dims['classes_unlabelled']}")
    if not cfg.multimodal and dims["fused"] != dims["feature"]:
        raise ConfigError("single-modal fusion is an identity: fused_dim must equal feature_dim")

    f = dims["feature"]

    def encoder(d_in):
        return [_he_affine(d_in, f, rng), _he_affine(f, f, rng), _he_affine(f, f, rng)]

    def projection():
        return [_he_affine(f, dims["proj_hidden"], rng),
                _he_affine(dims["proj_hidden"], dims["proj"], rng)]

    encoder_v = encoder(dims["d_v"])
    encoder_a = encoder(dims["d_a"]) if cfg.multimodal else None
    fusion = _he_affine(2 * f, dims["fused"], rng) if cfg.multimodal else None
    proj_v = projection()
    proj_a = projection() if cfg.multimodal else None
    head_l = _he_affine(dims["fused"], dims["classes_labelled"], rng)
    head_u_hidden = _he_affine(dims["fused"], dims["fused"], rng) if getattr(cfg, "head_u_hidden", False) else None
    head_u = _he_affine(dims["fused"], dims["classes_unlabelled"], rng)
    return ModelState(cfg.multimodal, encoder_v, encoder_a, fusion, proj_v, proj_a,
                      head_u_hidden, head_l, head_u, dims)


def forward(model: ModelState, x_v, x_a=None, mode: str = "both") -> ForwardOutputs:
    """Forward pass; every output is differentiable.

    mode 'both' produces everything (the training path, including the
    contrastive projections); 'labelled' and 'unlabelled' compute only the
    matching head on top of the shared representation.
    """
    if mode not in ("labelled", "unlabelled", "both"):
        raise ConfigError(f"unknown forward mode {mode!r}")
    x_v = as_tensor(x_v)
    if x_v.ndim != 2 or x_v.shape[1] != model.dims["d_v"]:
        raise DimensionError(
            f"visual input must be [B, {model.dims['d_v']}], got {x_v.shape}")
    if model.multimodal:
        if x_a is None:
            raise InputError("multi-modal model requires an audio input")
        x_a = as_tensor(x_a)
        if x_a.ndim != 2 or x_a.shape[1] != model.dims["d_a"]:
            raise DimensionError(
                f"audio input must be [B, {model.dims['d_a']}], got {x_a.shape}")

    want_proj = mode == "both"
    z_v = _mlp_forward(model.encoder_v, x_v)
    z_hat_a = None
    if model.multimodal:
        z_a = _mlp_forward(model.encoder_a, x_a)
        z = concat([z_v, z_a], axis=1)
        z_bar = affine_forward(z, *model.fusion)
        if want_proj:
            z_hat_a = l2_normalize(_mlp_forward(model.proj_a, z_a, relu_last=False))
    else:
        z = z_v
        z_bar = z
    z_hat_v = (l2_normalize(_mlp_forward(model.proj_v, z_v, relu_last=False))
               if want_proj else None)

    logits_l = None
    if mode in ("labelled", "both"):
        logits_l = affine_forward(z_bar, *model.head_l)
    probs_u = None
    if mode in ("unlabelled", "both"):
        h = z_bar
        if model.head_u_hidden is not None:
            h = affine_forward(h, *model.head_u_hidden).relu()
        probs_u = softmax(affine_forward(h, *model.head_u))
    return ForwardOutputs(z=z, z_bar=z_bar, z_hat_v=z_hat_v, z_hat_a=z_hat_a,
                          logits_l=logits_l, probs_u=probs_u)


def assign_cluster(probs_u) -> np.ndarray:
    """Argmax cluster id per row; ties break to the smallest index."""
    data = probs_u.data if isinstance(probs_u, Tensor) else np.asarray(probs_u)
    return np.argmax(data, axis=1)


# ---- checkpoint io ---------------------------------------------------------------
#
# layout (all little-endian):
#   magic "NCDK" | u32 version | u32 config length | config JSON bytes
#   | u32 param count | per param: u32 name length, name bytes,
#     u32 rank, u64 shape dims, raw float64 data


def save_checkpoint(model: ModelState, path, config_json: str = ""):
    named = model.named_params()
    cfg_bytes = config_json.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            name_bytes = name.encode("utf-8")
            arr = p.value.data
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    """Read a checkpoint into {name: array} plus the embedded config JSON."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n, what):
        nonlocal offset
        if offset + n > len(blob):
            raise ParseError(f"checkpoint truncated while reading {what}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise ParseError("bad checkpoint magic, not an NCDK file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    config_json = take(cfg_len, "config").decode("utf-8")
    (count,) = struct.unpack("<I", take(4, "param count"))
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = tuple(struct.unpack("<Q", take(8, "dim"))[0] for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n, f"data of {name}"), dtype="<f8")
        state[name] = data.reshape(shape).astype(np.float64)
    if offset != len(blob):
        raise ParseError("trailing bytes after checkpoint payload")
    return state, config_json


def restore(model: ModelState, state: dict[str, np.ndarray]):
    """Load a checkpoint state dict into a model, validating names and shapes."""
    named = dict(model.named_params())
    if set(named) != set(state):
        missing = sorted(set(named) - set(state))
        extra = sorted(set(state) - set(named))
        raise ParseError(f"checkpoint/model parameter mismatch: missing={missing} extra={extra}")
    for name, p in named.items():
        if state[name].shape != p.value.data.shape:
            raise DimensionError(
                f"checkpoint shape {state[name].shape} for {name} does not match model "
                f"{p.value.data.shape}")
        p.value.data = state[name].copy()
        p.value.grad = None
        p.momentum_slot = np.zeros_like(p.value.data)
