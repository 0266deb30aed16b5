"""Network building blocks over the autodiff core.

The two ops that carry the cross-face machinery live here: group
normalization with an optional synchronized mode that pools statistics over
the face axis, and attention that is inflated across faces by flattening the
``(t, h, w)`` token grid of all six faces into one sequence.

Masks are additive score offsets.  Dropped keys use a large negative sentinel
(``NEG_MASK``) rather than true ``-inf`` so tensors stay finite; after the
softmax max-shift the sentinel underflows and masked weights are exactly zero.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, group_norm_core, linear, matmul, softmax

__all__ = [
    "NEG_MASK",
    "group_norm",
    "attention",
    "inflated_self_attention",
    "cross_attention",
    "condition_attention_mask",
    "block_diagonal_face_mask",
    "combine_masks",
    "validate_attention_mask",
    "faces_to_tokens",
    "tokens_to_faces",
]

NEG_MASK = -1.0e9


def group_norm(x: Tensor, groups: int, eps: float = 1e-5, synchronized: bool = True,
               scale: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Group normalization of a face batch ``(b, t, c, h, w)``.

    Unsynchronized mode normalizes each face on its own (statistics over the
    channels of a group and the spatial extent, per ``(b, t)``); synchronized
    mode pools the statistics over the face axis as well, per ``b``, so all
    faces of one panorama share the same normalization.
    """
    if x.ndim != 5:
        raise ConfigError(f"group_norm expects (b, t, c, h, w), got {x.shape}")
    c = x.shape[2]
    if c % groups != 0:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    axes = (1, 3, 4, 5) if synchronized else (3, 4, 5)
    return group_norm_core(x, groups, axes, eps, scale, bias)


def faces_to_tokens(x: Tensor) -> Tensor:
    """``(b, t, c, h, w)`` -> ``(b, t*h*w, c)`` token sequence (face-major order)."""
    b, t, c, h, w = x.shape
    return x.transpose((0, 1, 3, 4, 2)).reshape(b, t * h * w, c)


def tokens_to_faces(tok: Tensor, t: int, h: int, w: int) -> Tensor:
    b, n, c = tok.shape
    if n != t * h * w:
        raise ConfigError(f"token count {n} != t*h*w = {t * h * w}")
    return tok.reshape(b, t, h, w, c).transpose((0, 1, 4, 2, 3))


def validate_attention_mask(mask: np.ndarray, s_q: int, s_k: int) -> np.ndarray:
    """Check an additive mask: values in {0, NEG_MASK}, no fully-masked query row."""
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0.0) | (mask == NEG_MASK)):
        raise ConfigError("attention mask entries must be 0 or NEG_MASK")
    if mask.ndim == 1:
        if mask.shape[0] != s_k:
            raise ConfigError(f"mask length {mask.shape[0]} != key count {s_k}")
        if not np.any(mask == 0.0):
            raise ConfigError("attention mask leaves no unmasked key")
        return mask
    if mask.shape[-1] != s_k or mask.shape[-2] not in (1, s_q):
        raise ConfigError(f"mask shape {mask.shape} incompatible with ({s_q}, {s_k})")
    if not np.all(np.any(mask == 0.0, axis=-1)):
        raise ConfigError("attention mask leaves a query row fully masked")
    return mask


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, s, c = x.shape
    return x.reshape(b, s, heads, c // heads).transpose((0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, hds, s, dh = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(b, s, hds * dh)


def attention(q_in: Tensor, kv_in: Tensor, weights: dict, heads: int,
              mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``q_in``: (b, s_q, c) queries source, ``kv_in``: (b, s_k, d) key/value
    source.  ``weights`` holds wq/wk/wv/wo (+ optional bq/bk/bv/bo).  ``mask``
    is an additive score offset broadcast over heads: shape (s_k,), (s_q, s_k)
    or (b, s_q, s_k).
    """
    c = weights["wq"].shape[1]
    if c % heads != 0:
        raise ConfigError(f"model dim {c} not divisible by heads {heads}")
    q = linear(q_in, weights["wq"], weights.get("bq"))
    k = linear(kv_in, weights["wk"], weights.get("bk"))
    v = linear(kv_in, weights["wv"], weights.get("bv"))
    # scale queries instead of scores: same math, touches the small array
    q = q * (1.0 / np.sqrt(c // heads))
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scores = matmul(qh, kh.transpose((0, 1, 3, 2)))
    if mask is not None:
        mask = validate_attention_mask(mask, q_in.shape[1], kv_in.shape[1])
        if mask.ndim == 1:
            madd = mask[None, None, None, :]
        elif mask.ndim == 2:
            madd = mask[None, None, :, :]
        else:
            madd = mask[:, None, :, :]
        scores = scores + Tensor(madd.astype(scores.dtype))
    probs = softmax(scores, axis=-1)
    ctx = matmul(probs, vh)
    return linear(_merge_heads(ctx), weights["wo"], weights.get("bo"))


def inflated_self_attention(x: Tensor, weights: dict, heads: int,
                            mask: np.ndarray | None = None) -> Tensor:
    """Self-attention over the concatenated token grids of all faces.

    The six ``(h, w)`` grids become one sequence of ``t*h*w`` tokens per batch
    row, so every face attends to every other.  A block-diagonal face mask
    reduces this to six independent per-face attentions.
    """
    b, t, c, h, w = x.shape
    tok = faces_to_tokens(x)
    out = attention(tok, tok, weights, heads, mask)
    return tokens_to_faces(out, t, h, w)


def cross_attention(x_tokens: Tensor, text_tokens: Tensor, weights: dict, heads: int,
                    mask: np.ndarray | None = None) -> Tensor:
    """Queries from image tokens, keys/values from text tokens.

    Text token sets of all faces are expected pre-flattened to ``(b, s_kv, d)``
    so a face may attend to every face's prompt; duplicating one shared prompt
    six times yields exactly the single-prompt result (softmax over repeated
    keys renormalizes).
    """
    if x_tokens.ndim != 3 or text_tokens.ndim != 3:
        raise ConfigError("cross_attention expects (b, s, c) tokens")
    if text_tokens.shape[-1] != weights["wk"].shape[0]:
        raise ConfigError(
            f"text dim {text_tokens.shape[-1]} != wk input dim {weights['wk'].shape[0]}"
        )
    return attention(x_tokens, text_tokens, weights, heads, mask)


def condition_attention_mask(seq_len: int, cond_token_indices, drop_image: bool) -> np.ndarray:
    """Additive key mask that hides conditioning-face tokens when dropped.

    With ``drop_image`` the listed key positions get ``NEG_MASK`` and their
    post-softmax weights are exactly zero; otherwise the mask is a no-op.
    """
    mask = np.zeros(seq_len, dtype=np.float64)
    idx = np.asarray(list(cond_token_indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= seq_len):
        raise ConfigError("conditioning token index out of range")
    if drop_image:
        mask[idx] = NEG_MASK
        if not np.any(mask == 0.0):
            raise ConfigError("attention mask leaves no unmasked key")
    return mask


def block_diagonal_face_mask(t: int, tokens_per_face: int) -> np.ndarray:
    """Additive mask restricting attention to within-face blocks."""
    n = t * tokens_per_face
    mask = np.full((n, n), NEG_MASK, dtype=np.float64)
    for f in range(t):
        lo = f * tokens_per_face
        mask[lo : lo + tokens_per_face, lo : lo + tokens_per_face] = 0.0
    return mask


def combine_masks(*masks: np.ndarray | None) -> np.ndarray | None:
    """Merge additive masks: a key is dropped if any contributing mask drops it."""
    live = [m for m in masks if m is not None]
    if not live:
        return None
    out = np.zeros(np.broadcast_shapes(*(m.shape for m in live)), dtype=np.float64)
    for m in live:
        out = np.minimum(out, np.broadcast_to(m, out.shape))
    return out
