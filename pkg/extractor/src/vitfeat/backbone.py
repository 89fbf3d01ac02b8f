"""ViT token backbones behind one small extraction interface.

Layer numbering is 1-based everywhere in this package: layer L means the
output of the L-th transformer block, so the valid range is 1..depth.
Most transformer APIs index blocks from 0; the shift happens here, in one
place, and the 1-based numbers are what get written into feature files.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

# Normalization used by the supported backbones (ImageNet statistics).
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class BackboneSpec:
    patch_size: int
    depth: int
    heads: int
    hidden_dim: int
    mlp_dim: int


# vit_test is a deliberately tiny configuration so the test suite can run
# a real transformer in milliseconds; it shares every code path with vit_b_16.
SPECS: dict[str, BackboneSpec] = {
    "vit_b_16": BackboneSpec(patch_size=16, depth=12, heads=12, hidden_dim=768, mlp_dim=3072),
    "vit_test": BackboneSpec(patch_size=16, depth=4, heads=2, hidden_dim=32, mlp_dim=64),
}

BACKBONE_NAMES = (*SPECS, "dinov3_vitb16")


class BackboneError(ValueError):
    """Raised for unloadable backbones or invalid extraction settings."""


class TokenBackbone:
    """A frozen ViT that maps image batches to per-layer token stacks."""

    def __init__(self, name: str, model: torch.nn.Module, blocks: Sequence[torch.nn.Module],
                 patch_size: int, hidden_dim: int, resolution: int, device: str) -> None:
        if resolution < patch_size or resolution % patch_size != 0:
            raise BackboneError(
                f"resolution {resolution} is not a positive multiple of patch size {patch_size}"
            )
        self.name = name
        self.model = model.to(device).eval()
        for parameter in self.model.parameters():
            parameter.requires_grad_(False)
        self._blocks = list(blocks)
        self.patch_size = patch_size
        self.hidden_dim = hidden_dim
        self.resolution = resolution
        self.device = device
        side = resolution // patch_size
        self.grid = (side, side)

    @property
    def depth(self) -> int:
        return len(self._blocks)

    def check_layers(self, layer_indices: Sequence[int]) -> None:
        if not layer_indices:
            raise BackboneError("need at least one layer index")
        if len(set(layer_indices)) != len(layer_indices):
            raise BackboneError(f"duplicate layer indices in {list(layer_indices)}")
        for index in layer_indices:
            if not 1 <= index <= self.depth:
                raise BackboneError(
                    f"layer index {index} outside 1..{self.depth} (indices are 1-based)"
                )

    def preprocess(self, image: Image.Image) -> torch.Tensor:
        """PIL image -> normalized (3, R, R) float32 tensor."""
        rgb = image.convert("RGB")
        if rgb.size != (self.resolution, self.resolution):
            rgb = rgb.resize((self.resolution, self.resolution), Image.BILINEAR)
        pixels = np.asarray(rgb, dtype=np.float32) / 255.0
        pixels = (pixels - CHANNEL_MEAN) / CHANNEL_STD
        return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))

    @torch.no_grad()
    def tokens(self, batch: torch.Tensor, layer_indices: Sequence[int]) -> list[torch.Tensor]:
        """Token stacks (B, 1 + n_patches, hidden_dim) for each requested layer.

        Token 0 is CLS; tokens 1.. are the patch grid in row-major order.
        Results follow the order of layer_indices.
        """
        self.check_layers(layer_indices)
        if batch.ndim != 4 or batch.shape[1:] != (3, self.resolution, self.resolution):
            raise BackboneError(
                f"batch must be (B, 3, {self.resolution}, {self.resolution}), "
                f"got {tuple(batch.shape)}"
            )
        captured: dict[int, torch.Tensor] = {}
        handles = []

        def keep(index: int):
            def hook(module, inputs, output):
                captured[index] = output.detach()
            return hook

        try:
            for index in sorted(set(layer_indices)):
                handles.append(self._blocks[index - 1].register_forward_hook(keep(index)))
            self.model(batch.to(self.device))
        finally:
            for handle in handles:
                handle.remove()
        expected = (batch.shape[0], 1 + self.grid[0] * self.grid[1], self.hidden_dim)
        stacks = []
        for index in layer_indices:
            stack = captured[index]
            if tuple(stack.shape) != expected:
                raise BackboneError(
                    f"layer {index} produced tokens {tuple(stack.shape)}, expected {expected}"
                )
            stacks.append(stack.to("cpu", torch.float32))
        return stacks


def _build_torchvision_vit(spec: BackboneSpec, resolution: int, seed: int,
                           pretrained: bool) -> torch.nn.Module:
    from torchvision.models.vision_transformer import VisionTransformer

    torch.manual_seed(seed)
    model = VisionTransformer(
        image_size=resolution,
        patch_size=spec.patch_size,
        num_layers=spec.depth,
        num_heads=spec.heads,
        hidden_dim=spec.hidden_dim,
        mlp_dim=spec.mlp_dim,
    )
    if pretrained:
        from torchvision.models.vision_transformer import (
            ViT_B_16_Weights,
            interpolate_embeddings,
        )

        try:
            weights = ViT_B_16_Weights.IMAGENET1K_V1
            state = weights.get_state_dict(progress=False)
        except Exception as exc:
            raise BackboneError(
                "could not fetch pretrained vit_b_16 weights (no network access or "
                "cache); rerun without --pretrained for seeded random weights"
            ) from exc
        if resolution != 224:
            state = interpolate_embeddings(resolution, spec.patch_size, state)
        model.load_state_dict(state)
    return model


class _HubTokenBackbone(TokenBackbone):
    """Adapter for hub models exposing get_intermediate_layers (DINO family)."""

    @torch.no_grad()
    def tokens(self, batch: torch.Tensor, layer_indices: Sequence[int]) -> list[torch.Tensor]:
        self.check_layers(layer_indices)
        outputs = self.model.get_intermediate_layers(
            batch.to(self.device),
            n=[index - 1 for index in layer_indices],
            reshape=False,
            return_class_token=True,
            norm=False,
        )
        stacks = []
        for patches, cls in outputs:
            stacks.append(torch.cat([cls[:, None, :], patches], dim=1).to("cpu", torch.float32))
        return stacks


def load_backbone(name: str, resolution: int, seed: int = 0, device: str = "cpu",
                  pretrained: bool = False) -> TokenBackbone:
    """Build a named backbone ready for token extraction at one resolution.

    vit_b_16 and vit_test are constructed locally; without pretrained=True
    their weights are seeded random, which keeps extraction deterministic
    and offline-friendly but carries no visual semantics. dinov3_vitb16 is
    fetched through torch.hub and needs network access.
    """
    if name in SPECS:
        spec = SPECS[name]
        if resolution < spec.patch_size or resolution % spec.patch_size != 0:
            raise BackboneError(
                f"resolution {resolution} is not a positive multiple of "
                f"patch size {spec.patch_size}"
            )
        model = _build_torchvision_vit(spec, resolution, seed, pretrained)
        return TokenBackbone(
            name, model, model.encoder.layers, spec.patch_size, spec.hidden_dim,
            resolution, device,
        )
    if name == "dinov3_vitb16":
        try:
            model = torch.hub.load("facebookresearch/dinov3", "dinov3_vitb16")
        except Exception as exc:
            raise BackboneError(
                "could not load dinov3_vitb16 via torch.hub (network access "
                "required); vit_b_16 and vit_test build locally"
            ) from exc
        blocks = getattr(model, "blocks", None)
        patch_size = 16
        hidden_dim = getattr(model, "embed_dim", 768)
        if blocks is None or not hasattr(model, "get_intermediate_layers"):
            raise BackboneError("hub model lacks the expected DINO-style interface")
        return _HubTokenBackbone(name, model, blocks, patch_size, hidden_dim,
                                 resolution, device)
    raise BackboneError(f"unknown backbone {name!r}; choose from {', '.join(BACKBONE_NAMES)}")
