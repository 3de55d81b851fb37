"""
Implémentations de référence en numpy, écrites boucle par boucle, indépendantes de torch.
"""
import math
from typing import Dict

import numpy as np

CUBIC_A = -0.75

_erf = np.vectorize(math.erf)


def cubic_weight(distance: float) -> float:
    x = abs(distance)
    if x <= 1.0:
        return ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    if x < 2.0:
        return ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    return 0.0


def bicubic_oracle(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Somme pondérée explicite sur le voisinage 4×4 de chaque pixel de sortie."""
    height, width, channels = src.shape
    src = src.astype(np.float64)
    out = np.zeros((out_h, out_w, channels))
    for i in range(out_h):
        y = (i + 0.5) * height / out_h - 0.5
        y0 = math.floor(y)
        for j in range(out_w):
            x = (j + 0.5) * width / out_w - 0.5
            x0 = math.floor(x)
            acc = np.zeros(channels)
            for m in range(-1, 3):
                wy = cubic_weight(y - (y0 + m))
                yy = min(max(y0 + m, 0), height - 1)
                for n in range(-1, 3):
                    wx = cubic_weight(x - (x0 + n))
                    xx = min(max(x0 + n, 0), width - 1)
                    acc += wy * wx * src[yy, xx]
            out[i, j] = acc
    return out


def layernorm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * weight + bias


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weight.T + bias


def attention_tokens(tokens: np.ndarray, params: Dict[str, np.ndarray], prefix: str, heads: int) -> np.ndarray:
    """Attention multi-têtes sur une liste de tokens (N, C), softmax ligne par ligne."""
    count, channels = tokens.shape
    head_dim = channels // heads
    qkv = linear(tokens, params[f"{prefix}.qkv.weight"], params[f"{prefix}.qkv.bias"])
    qkv = qkv.reshape(count, 3, heads, head_dim)
    out = np.zeros((count, heads, head_dim))
    for h in range(heads):
        q, k, v = qkv[:, 0, h], qkv[:, 1, h], qkv[:, 2, h]
        for i in range(count):
            logits = np.array([q[i] @ k[j] / math.sqrt(head_dim) for j in range(count)])
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            out[i, h] = sum(weights[j] * v[j] for j in range(count))
    return linear(out.reshape(count, channels), params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])


def attention_grid(x: np.ndarray, params, prefix: str, heads: int, window) -> np.ndarray:
    height, width, channels = x.shape
    if window is None:
        return attention_tokens(x.reshape(-1, channels), params, prefix, heads).reshape(height, width, channels)
    ph = math.ceil(height / window) * window
    pw = math.ceil(width / window) * window
    padded = np.zeros((ph, pw, channels))
    padded[:height, :width] = x
    out = np.zeros_like(padded)
    for r in range(0, ph, window):
        for c in range(0, pw, window):
            block = padded[r : r + window, c : c + window].reshape(-1, channels)
            out[r : r + window, c : c + window] = attention_tokens(block, params, prefix, heads).reshape(
                window, window, channels
            )
    return out[:height, :width]


def max_pool(x: np.ndarray) -> np.ndarray:
    height, width, channels = x.shape
    out = np.zeros((math.ceil(height / 2), math.ceil(width / 2), channels))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = x[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].reshape(-1, channels).max(axis=0)
    return out


def classify_oracle(spec, params: Dict[str, np.ndarray], image: np.ndarray) -> np.ndarray:
    """Passage avant de classification d'une image (patch 1), poids lus dans le state_dict."""
    grid = spec.input_grid
    x = linear(image.astype(np.float64), params["patch_embed.proj.weight"], params["patch_embed.proj.bias"])
    if spec.embed_mode == "naive":
        pos = params["pos_embed.grid"]
    else:
        window = params["pos_embed.window_part"]
        w = window.shape[0]
        reps = math.ceil(grid / w)
        pos = np.tile(window, (reps, reps, 1))[:grid, :grid] + bicubic_oracle(
            params["pos_embed.global_part"], grid, grid
        )
    x = x + pos

    index = 0
    configs = spec.layer_configs()
    for stage, depth in enumerate(spec.stage_depths):
        if stage > 0:
            x = max_pool(x)
            x = linear(x, params[f"stage_proj.{stage - 1}.weight"], params[f"stage_proj.{stage - 1}.bias"])
        for _ in range(depth):
            p = f"blocks.{index}"
            cfg = configs[index]
            y = layernorm(x, params[f"{p}.norm1.weight"], params[f"{p}.norm1.bias"])
            x = x + attention_grid(y, params, f"{p}.attn", cfg.heads, cfg.window_size)
            y = layernorm(x, params[f"{p}.norm2.weight"], params[f"{p}.norm2.bias"])
            hidden = gelu(linear(y, params[f"{p}.mlp.0.weight"], params[f"{p}.mlp.0.bias"]))
            x = x + linear(hidden, params[f"{p}.mlp.2.weight"], params[f"{p}.mlp.2.bias"])
            index += 1
    x = layernorm(x, params["norm.weight"], params["norm.bias"])
    pooled = x.reshape(-1, x.shape[-1]).mean(axis=0)
    return linear(pooled, params["head.weight"], params["head.bias"])
