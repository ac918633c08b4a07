"""
Loop-based reference computations the vectorized modules are checked against.

Everything here works on plain float64 arrays, one query at a time.
"""

import math

import numpy as np
from scipy.special import erf


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def layer_norm(x, scale, shift, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * scale + shift


def attend_one(q, keys, values):
    """One query over its keys: softmax(q.k / sqrt(d_h)) v."""
    logits = np.array([q @ k for k in keys]) / math.sqrt(q.shape[0])
    weights = softmax(logits)
    return sum(w * v for w, v in zip(weights, values)), weights


def mha(w, heads, target, sources):
    """
    Multi-head attention of a single target row over a list of source rows.

    Args:
        w (dict): 'w_q', 'w_k', 'w_v', 'w_o' arrays.
    """
    sources = np.asarray(sources, dtype=np.float64)
    d = w["w_q"].shape[0]
    d_h = d // heads
    q = target @ w["w_q"]
    k = sources @ w["w_k"]
    v = sources @ w["w_v"]
    parts = []
    for h in range(heads):
        cols = slice(h * d_h, (h + 1) * d_h)
        out, _ = attend_one(q[cols], k[:, cols], v[:, cols])
        parts.append(out)
    return np.concatenate(parts) @ w["w_o"]


def sca(hand, objects, mask, hand_w, object_w, heads):
    """Per-frame cross-attention; returns T x (N+1) x d, hand row first."""
    T, N, d = objects.shape
    out = np.zeros((T, N + 1, d))
    for t in range(T):
        valid = [n for n in range(N) if mask[t, n]]
        if valid:
            out[t, 0] = mha(hand_w, heads, hand[t], [objects[t, n] for n in valid])
        else:
            out[t, 0] = hand[t]
        for n in valid:
            sources = [hand[t]] + [objects[t, m] for m in valid if m != n]
            out[t, n + 1] = mha(object_w, heads, objects[t, n], sources)
    return out


def sot(hand, objects, mask, tracks, hand_w, object_w, heads):
    """Self-attention along the hand and along every object track."""
    T, N, d = objects.shape
    out = np.zeros((T, N + 1, d))
    for t in range(T):
        out[t, 0] = mha(hand_w, heads, hand[t], list(hand))
        for n in range(N):
            if not mask[t, n]:
                continue
            same = [
                objects[u, m]
                for u in range(T)
                for m in range(N)
                if mask[u, m] and tracks[u, m] == tracks[t, n]
            ]
            out[t, n + 1] = mha(object_w, heads, objects[t, n], same)
    return out


def trajectory_attend(queries, frames, context, w, heads, causal=False):
    """
    Two-stage trajectory attention, one query and one head at a time.

    Args:
        queries: M x d.
        frames: home frame of every query.
        context: T x S x d.
        w (dict): 'w_q', 'w_k', 'w_v', 't_q', 't_k', 't_v', 'w_o'.
    """
    M, d = queries.shape
    T = context.shape[0]
    d_h = d // heads
    out = np.zeros((M, d))
    for m in range(M):
        q = queries[m] @ w["w_q"]
        trajectory = np.zeros((T, d))
        for t in range(T):
            k = context[t] @ w["w_k"]
            v = context[t] @ w["w_v"]
            for h in range(heads):
                cols = slice(h * d_h, (h + 1) * d_h)
                trajectory[t, cols], _ = attend_one(q[cols], k[:, cols], v[:, cols])
        refs = [t for t in range(T) if not causal or t >= frames[m]]
        q2 = trajectory[frames[m]] @ w["t_q"]
        k2 = trajectory @ w["t_k"]
        v2 = trajectory @ w["t_v"]
        pooled = np.zeros(d)
        for h in range(heads):
            cols = slice(h * d_h, (h + 1) * d_h)
            pooled[cols], _ = attend_one(q2[cols], k2[refs][:, cols], v2[refs][:, cols])
        out[m] = pooled @ w["w_o"]
    return out


def icv(interactions, grid, block, attn, heads):
    """
    Pre-norm self-attention over [interaction tokens; video tokens], returning
    the video rows only.

    Args:
        interactions: M x d valid interaction tokens.
        grid: T x S x d video tokens.
        block (dict): norm1/norm2 scale and shift, mlp w1/b1/w2/b2.
        attn (dict): attention projections.
    """
    T, S, d = grid.shape
    video = grid.reshape(T * S, d)
    sequence = np.concatenate([interactions, video], axis=0)
    normed = layer_norm(sequence, block["norm1.scale"], block["norm1.shift"])
    M = interactions.shape[0]
    out = np.zeros_like(video)
    for i in range(T * S):
        hidden = video[i] + mha(attn, heads, normed[M + i], list(normed))
        mlp_in = layer_norm(hidden, block["norm2.scale"], block["norm2.shift"])
        mlp = gelu(mlp_in @ block["mlp.w1"] + block["mlp.b1"]) @ block["mlp.w2"] + block["mlp.b2"]
        out[i] = hidden + mlp
    return out.reshape(T, S, d)


def backbone_block(tokens, cls, block, attn, heads):
    """
    Pre-norm trajectory-attention block over [cls; grid].

    Grid rows use trajectory attention over the normed grid; the cls row
    attends over every row with the stage-one projections. Returns the
    T x S x d grid and the cls row.
    """
    T, S, d = tokens.shape
    video = tokens.reshape(T * S, d)
    sequence = np.concatenate([cls[None, :], video], axis=0)
    normed = layer_norm(sequence, block["norm1.scale"], block["norm1.shift"])
    frames = [i // S for i in range(T * S)]
    attended = trajectory_attend(normed[1:], frames, normed[1:].reshape(T, S, d), attn, heads)
    cls_attended = mha(attn, heads, normed[0], list(normed))
    hidden = sequence + np.concatenate([cls_attended[None, :], attended], axis=0)
    out = np.zeros_like(hidden)
    for i in range(hidden.shape[0]):
        mlp_in = layer_norm(hidden[i], block["norm2.scale"], block["norm2.shift"])
        mlp = gelu(mlp_in @ block["mlp.w1"] + block["mlp.b1"]) @ block["mlp.w2"] + block["mlp.b2"]
        out[i] = hidden[i] + mlp
    return out[1:].reshape(T, S, d), out[0]
