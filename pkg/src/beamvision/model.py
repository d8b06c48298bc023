"""Block-structured vision backbone with task-specific linear heads.

The backbone is a small pre-layernorm patch transformer; every parameter
belongs to exactly one named group (embed, block_i, norm, head_beam,
head_pos, head_blk) so stage logic can freeze and unfreeze at block
granularity. Heads read a pooled backbone feature (mean over patch tokens by
default, optionally a class token).
"""

from __future__ import annotations

import pickle
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .errors import CheckpointError, InvalidArgumentError

CKPT_FORMAT = "beamvision-ckpt-v1"

HEAD_GROUPS = ("head_beam", "head_pos", "head_blk")


@dataclass
class BackboneSpec:
    """Backbone architecture description.

    kind 'tiny_transformer' builds the reference backbone from scratch; kind
    'external_pretrained' resolves pretrained_ref as a checkpoint path and
    loads architecture and weights from it.
    """

    kind: str = "tiny_transformer"
    patch_size: int = 16
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    image_size: int = 224
    pool: str = "mean"
    pretrained_ref: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("tiny_transformer", "external_pretrained"):
            raise InvalidArgumentError(f"unknown backbone kind {self.kind!r}")
        if self.depth < 1:
            raise InvalidArgumentError("depth must be >= 1")
        if self.image_size % self.patch_size != 0:
            raise InvalidArgumentError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.pool not in ("mean", "cls"):
            raise InvalidArgumentError(f"pool must be 'mean' or 'cls', got {self.pool!r}")


@dataclass
class HeadSpec:
    """Enabled task heads: beam classification, 3-D position regression and
    optionally binary blockage detection."""

    beam_classes: int
    position_dims: int = 3
    blockage: bool = True

    def __post_init__(self) -> None:
        if self.beam_classes < 2:
            raise InvalidArgumentError("beam_classes must be >= 2")
        if self.position_dims != 3:
            raise InvalidArgumentError("position_dims must be 3")


@dataclass
class ModelOutputs:
    beam_logits: torch.Tensor
    position_pred: torch.Tensor
    blockage_logit: torch.Tensor | None = None


class TransformerBlock(nn.Module):
    """Pre-LN block: attention and MLP with residual connections."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.ln1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.ln2(x))


class BeamVisionModel(nn.Module):
    """Patch-transformer backbone plus one linear head per enabled task."""

    def __init__(self, backbone: BackboneSpec, heads: HeadSpec) -> None:
        super().__init__()
        self.backbone_spec = backbone
        self.head_spec = heads
        dim = backbone.embed_dim
        n_patches = (backbone.image_size // backbone.patch_size) ** 2

        self.patch_embed = nn.Conv2d(3, dim, backbone.patch_size, backbone.patch_size)
        n_tokens = n_patches + (1 if backbone.pool == "cls" else 0)
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, dim))
        if backbone.pool == "cls":
            self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, backbone.heads) for _ in range(backbone.depth)
        )
        self.norm = nn.LayerNorm(dim)
        self.head_beam = nn.Linear(dim, heads.beam_classes)
        self.head_pos = nn.Linear(dim, heads.position_dims)
        if heads.blockage:
            self.head_blk = nn.Linear(dim, 1)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def group_names(self) -> list[str]:
        names = ["embed"] + [f"block_{i}" for i in range(self.depth)] + ["norm", "head_beam", "head_pos"]
        if self.head_spec.blockage:
            names.append("head_blk")
        return names

    def group_of(self, param_name: str) -> str:
        if param_name.startswith(("patch_embed.", "pos_embed", "cls_token")):
            return "embed"
        if param_name.startswith("blocks."):
            return f"block_{param_name.split('.')[1]}"
        if param_name.startswith("norm."):
            return "norm"
        for head in HEAD_GROUPS:
            if param_name.startswith(head + "."):
                return head
        raise InvalidArgumentError(f"parameter {param_name!r} belongs to no group")

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups: dict[str, list[nn.Parameter]] = {name: [] for name in self.group_names()}
        for name, param in self.named_parameters():
            groups[self.group_of(name)].append(param)
        return groups

    def features(self, images: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(images).flatten(2).transpose(1, 2)  # (B, N, D)
        if self.backbone_spec.pool == "cls":
            cls = self.cls_token.expand(x.shape[0], -1, -1)
            x = torch.cat([cls, x], dim=1)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        if self.backbone_spec.pool == "cls":
            return x[:, 0]
        return x.mean(dim=1)

    def forward(self, images: torch.Tensor) -> ModelOutputs:
        feat = self.features(images)
        blk = self.head_blk(feat).squeeze(-1) if self.head_spec.blockage else None
        return ModelOutputs(
            beam_logits=self.head_beam(feat),
            position_pred=self.head_pos(feat),
            blockage_logit=blk,
        )


def _sincos_pos_embed(n_side: int, dim: int) -> torch.Tensor:
    """Deterministic 2-D sin-cos positional grid at O(1) magnitude.

    Unit-scale position signals are what lets the per-token MLP and attention
    bind content to location early in training; a small random init stalls
    the vision->position task for hundreds of steps.
    """
    quarter = (dim + 3) // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    coords = torch.arange(n_side, dtype=torch.float64)
    freq = coords[:, None] * omega[None, :]  # (n_side, quarter)
    rows = torch.cat([torch.sin(freq), torch.cos(freq)], dim=1)
    grid = torch.cat(
        [
            rows[:, None, :].expand(n_side, n_side, 2 * quarter),
            rows[None, :, :].expand(n_side, n_side, 2 * quarter),
        ],
        dim=2,
    )[:, :, :dim]
    return grid.reshape(1, n_side * n_side, dim).to(torch.float32)


def _seeded_init(model: BeamVisionModel, seed: int) -> None:
    """Deterministic parameter init from a private generator, independent of
    global RNG state. Weight matrices get N(0, 0.02), norms ones, biases
    zeros; positional embeddings start from the sin-cos grid."""
    gen = torch.Generator().manual_seed(seed)
    n_side = model.backbone_spec.image_size // model.backbone_spec.patch_size
    for name, param in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if name == "pos_embed":
                grid = _sincos_pos_embed(n_side, param.shape[-1])
                param.zero_()
                param[:, param.shape[1] - grid.shape[1] :, :] = grid  # cls slot stays zero
            elif name == "cls_token":
                param.normal_(0.0, 0.02, generator=gen)
            elif param.dim() >= 2:
                param.normal_(0.0, 0.02, generator=gen)
            elif name.endswith("weight"):  # LayerNorm scales
                param.fill_(1.0)
            else:
                param.zero_()


def build_model(backbone: BackboneSpec, heads: HeadSpec, seed: int = 0) -> BeamVisionModel:
    """Construct a model with seeded deterministic initialization.

    For kind 'external_pretrained', pretrained_ref must point at a checkpoint
    written by save_checkpoint; the stored architecture is used and the
    requested head shapes are validated against it.
    """
    if backbone.kind == "external_pretrained":
        if backbone.pretrained_ref is None:
            raise CheckpointError("external_pretrained backbone requires pretrained_ref")
        model, _ = load_checkpoint(backbone.pretrained_ref)
        if model.head_spec.beam_classes != heads.beam_classes or model.head_spec.blockage != heads.blockage:
            raise CheckpointError(
                f"checkpoint {backbone.pretrained_ref} head spec {model.head_spec} "
                f"does not match requested {heads}"
            )
        return model
    model = BeamVisionModel(backbone, heads)
    _seeded_init(model, seed)
    return model


def set_block_trainable(
    model: BeamVisionModel, group_selector: set[str], trainable: bool
) -> dict[str, bool]:
    """Set requires_grad for exactly the named groups; returns the full mask."""
    groups = model.parameter_groups()
    unknown = set(group_selector) - set(groups)
    if unknown:
        raise InvalidArgumentError(f"unknown parameter groups: {sorted(unknown)}")
    for name in group_selector:
        for param in groups[name]:
            param.requires_grad_(trainable)
    return trainable_mask(model)


def trainable_mask(model: BeamVisionModel) -> dict[str, bool]:
    return {
        name: all(p.requires_grad for p in params)
        for name, params in model.parameter_groups().items()
    }


def count_trainable_params(model: BeamVisionModel) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(model: BeamVisionModel, path: Path | str, metadata: dict | None = None) -> None:
    """Write parameters keyed by group name plus the specs, versioned."""
    groups: dict[str, dict[str, torch.Tensor]] = {}
    for name, param in model.named_parameters():
        groups.setdefault(model.group_of(name), {})[name] = param.detach().clone()
    payload = {
        "format": CKPT_FORMAT,
        "backbone": asdict(model.backbone_spec),
        "heads": asdict(model.head_spec),
        "groups": groups,
        "metadata": metadata or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: Path | str) -> tuple[BeamVisionModel, dict]:
    """Rebuild a model from a checkpoint; raises CheckpointError with the
    offending path on any failure."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("format") != CKPT_FORMAT:
            raise KeyError(f"unsupported checkpoint format {payload.get('format')!r}")
        backbone = BackboneSpec(**payload["backbone"])
        heads = HeadSpec(**payload["heads"])
        model = BeamVisionModel(backbone, heads)
        state = {}
        for group in payload["groups"].values():
            state.update(group)
        model.load_state_dict(state)
    except (
        OSError,
        EOFError,
        KeyError,
        RuntimeError,
        TypeError,
        ValueError,
        pickle.UnpicklingError,
        zipfile.BadZipFile,
    ) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    return model, payload.get("metadata", {})


def snapshot_parameters(model: BeamVisionModel) -> dict[str, torch.Tensor]:
    """Detached copies of all parameters, for bitwise change tracking."""
    return {name: p.detach().clone() for name, p in model.named_parameters()}
