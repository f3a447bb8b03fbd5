"""Patch-16 vision transformer with last-block attention capture.

The architecture and parameter names follow the common DeiT/ViT layout
(patch_embed.proj, cls_token, pos_embed, blocks.N.{norm1,attn,norm2,mlp},
norm), so self-supervised checkpoints published in that layout load directly.
Without a checkpoint the model is randomly initialized from a fixed seed,
which keeps the extraction pipeline fully deterministic end to end.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

PATCH_SIZE = 16

# DeiT-S sizing; override via ModelConfig for quick tests.
DEFAULT_EMBED_DIM = 384
DEFAULT_DEPTH = 12
DEFAULT_NUM_HEADS = 6


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, n, c = x.shape
        qkv = (self.qkv(x)
               .reshape(b, n, 3, self.num_heads, c // self.num_heads)
               .permute(2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out), attn


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        attn_out, attn = self.attn(self.norm1(x))
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return x, attn


class VisionTransformer(nn.Module):
    """ViT backbone that also returns the final block's softmax attention."""

    BASE_GRID = 14  # positional embedding is stored for 224/16 and interpolated

    def __init__(self, embed_dim: int = DEFAULT_EMBED_DIM,
                 depth: int = DEFAULT_DEPTH,
                 num_heads: int = DEFAULT_NUM_HEADS):
        super().__init__()
        self.embed_dim = embed_dim
        self.patch_embed = nn.Module()
        self.patch_embed.proj = nn.Conv2d(3, embed_dim, kernel_size=PATCH_SIZE,
                                          stride=PATCH_SIZE)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embed_dim))
        self.pos_embed = nn.Parameter(
            torch.zeros(1, 1 + self.BASE_GRID * self.BASE_GRID, embed_dim))
        self.blocks = nn.ModuleList(Block(embed_dim, num_heads) for _ in range(depth))
        self.norm = nn.LayerNorm(embed_dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    def _pos_embed_for(self, grid_h: int, grid_w: int) -> torch.Tensor:
        if grid_h == self.BASE_GRID and grid_w == self.BASE_GRID:
            return self.pos_embed
        cls_pos = self.pos_embed[:, :1]
        patch_pos = self.pos_embed[:, 1:].reshape(
            1, self.BASE_GRID, self.BASE_GRID, self.embed_dim).permute(0, 3, 1, 2)
        patch_pos = F.interpolate(patch_pos, size=(grid_h, grid_w),
                                  mode="bicubic", align_corners=False)
        patch_pos = patch_pos.permute(0, 2, 3, 1).reshape(
            1, grid_h * grid_w, self.embed_dim)
        return torch.cat([cls_pos, patch_pos], dim=1)

    def forward_with_attention(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (tokens after the final normalization layer, last-block
        attention (B, heads, N+1, N+1))."""
        b, _, h, w = x.shape
        if h % PATCH_SIZE or w % PATCH_SIZE:
            raise ValueError(f"input {h}x{w} not divisible by patch size {PATCH_SIZE}")
        grid_h, grid_w = h // PATCH_SIZE, w // PATCH_SIZE
        x = self.patch_embed.proj(x).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1) + self._pos_embed_for(grid_h, grid_w)
        attn = None
        for block in self.blocks:
            x, attn = block(x)
        return self.norm(x), attn


def build_model(embed_dim: int, depth: int, num_heads: int, seed: int,
                weights: str | None = None) -> VisionTransformer:
    """Seeded construction; optionally load a checkpoint in the common
    DeiT/self-supervised layout (nested state dicts and module/backbone
    prefixes are unwrapped, projection-head keys dropped)."""
    torch.manual_seed(seed)
    model = VisionTransformer(embed_dim=embed_dim, depth=depth, num_heads=num_heads)
    if weights is not None:
        state = torch.load(weights, map_location="cpu", weights_only=True)
        for key in ("teacher", "student", "state_dict", "model"):
            if isinstance(state, dict) and key in state and isinstance(state[key], dict):
                state = state[key]
                break
        cleaned = {}
        for name, tensor in state.items():
            for prefix in ("module.", "backbone."):
                if name.startswith(prefix):
                    name = name[len(prefix):]
            if name.startswith("head"):
                continue
            cleaned[name] = tensor
        missing, unexpected = model.load_state_dict(cleaned, strict=False)
        if missing:
            raise ValueError(f"checkpoint is missing {len(missing)} parameter(s), "
                             f"e.g. {missing[:3]}")
        if unexpected:
            raise ValueError(f"checkpoint has {len(unexpected)} unexpected "
                             f"parameter(s), e.g. {unexpected[:3]}")
    model.eval()
    return model
