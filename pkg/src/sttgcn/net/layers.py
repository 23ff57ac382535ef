"""Forward and reverse-mode passes for the STTGCN building blocks.

Every ``*_fwd`` function returns ``(output, cache)`` and has a matching
``*_bwd(d_output, cache)`` that returns ``(d_input, grads)``. Inputs may carry
any number of leading batch axes.
"""
import numpy as np

from ..errors import UsageError
from .params import KERNEL, N_CONVS, N_DILATED


def sigmoid(x):
    out = np.negative(x)
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    return np.reciprocal(out, out=out)


def _sum_lead(g, keep):
    """Sum ``g`` over all leading axes so that ``keep`` trailing axes remain."""
    return g.reshape((-1,) + g.shape[g.ndim - keep:]).sum(axis=0)


def _matmul_grad(x, g):
    """Gradient of ``x @ w`` w.r.t. ``w`` summed over leading axes."""
    return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])


# -- input block -------------------------------------------------------------


def position_embed_fwd(x, p):
    """``x @ W + b`` plus a per-step and a per-node learned embedding.

    ``x`` has shape ``(..., T, N, C)``; output ``(..., T, N, C0)``.
    """
    temporal, spatial = p["embed.temporal"], p["embed.spatial"]
    if x.shape[-3:-1] != (temporal.shape[0], spatial.shape[0]):
        raise UsageError(
            f"input steps/nodes {x.shape[-3:-1]} do not match embeddings "
            f"({temporal.shape[0]}, {spatial.shape[0]})"
        )
    if x.shape[-1] != p["embed.proj.w"].shape[0]:
        raise UsageError(f"input has {x.shape[-1]} features, projection expects {p['embed.proj.w'].shape[0]}")
    out = x @ p["embed.proj.w"] + p["embed.proj.b"] + temporal[:, None, :] + spatial[None, :, :]
    return out, x


def position_embed_bwd(g, x):
    grads = {
        "embed.proj.w": _matmul_grad(x, g),
        "embed.proj.b": _sum_lead(g, 1),
        "embed.temporal": _sum_lead(g, 3).sum(axis=1),
        "embed.spatial": _sum_lead(g, 3).sum(axis=0),
    }
    return None, grads


def position_embed(x, p):
    return position_embed_fwd(x, p)[0]


# -- graph convolution -------------------------------------------------------
#
# Graph-convolution tensors are node-major, ``(3N, ..., C)``: the adjacency
# product and the feature product then each collapse into one 2-D GEMM. For a
# single sample this is just the ``3N x C`` matrix.


def _rows_times(adj, h):
    return (adj @ h.reshape(h.shape[0], -1)).reshape(h.shape)


def _feat_times(h, w):
    return (h.reshape(-1, h.shape[-1]) @ w).reshape(h.shape[:-1] + (w.shape[1],))


def glu_graph_conv_fwd(h, adj, w1, w2, b1, b2):
    """``(A h W1 + b1) * sigmoid(A h W2 + b2)`` for node-major ``h`` ``(3N, ..., C)``."""
    if adj.shape != (h.shape[0], h.shape[0]):
        raise UsageError(f"adjacency {adj.shape} does not match {h.shape[0]} rows")
    if w1.shape[0] != h.shape[-1] or w1.shape != w2.shape:
        raise UsageError(f"weights {w1.shape}/{w2.shape} do not fit {h.shape[-1]} input features")
    c = w1.shape[1]
    z = _rows_times(adj, h)
    both = _feat_times(z, np.concatenate([w1, w2], axis=1))
    lin = both[..., :c]
    lin += b1
    gate = both[..., c:]
    gate += b2
    gate = sigmoid(gate)
    return lin * gate, (adj, z, lin, gate, w1, w2)


def glu_graph_conv_bwd(g, cache):
    adj, z, lin, gate, w1, w2 = cache
    d_lin = g * gate
    d_pre = d_lin * lin
    d_pre *= 1.0 - gate
    d_both = np.concatenate([d_lin, d_pre], axis=-1)
    dw = _matmul_grad(z, d_both)
    db = _sum_lead(d_both, 1)
    c = w1.shape[1]
    grads = (dw[:, :c], dw[:, c:], db[:c], db[c:])
    d_z = _feat_times(d_both, np.concatenate([w1, w2], axis=1).T)
    return _rows_times(adj.T, d_z), grads


def glu_graph_conv(h, adj, w1, w2, b1, b2):
    return glu_graph_conv_fwd(h, adj, w1, w2, b1, b2)[0]


def _conv_params(p, prefix, j):
    c = f"{prefix}.conv{j}"
    return p[f"{c}.w1"], p[f"{c}.w2"], p[f"{c}.b1"], p[f"{c}.b2"]


def stsgcm_fwd(x3, adj, p, prefix):
    """Three stacked GLU convolutions, elementwise max, middle-step crop.

    ``x3`` is node-major ``(3N, ..., C)``; output ``(N, ..., C')``. Ties in
    the max go to the earliest convolution.
    """
    n3 = x3.shape[0]
    if n3 % 3:
        raise UsageError(f"stacked input needs 3N rows, got {n3}")
    n = n3 // 3
    h, caches, outs = x3, [], []
    for j in range(N_CONVS):
        h, c = glu_graph_conv_fwd(h, adj, *_conv_params(p, prefix, j))
        caches.append(c)
        outs.append(h[n:2 * n])
    stacked = np.stack(outs)
    winner = np.argmax(stacked, axis=0)
    return np.max(stacked, axis=0), (caches, winner, n)


def stsgcm_bwd(g, cache, prefix):
    caches, winner, n = cache
    grads = {}
    d_h = None
    for j in reversed(range(N_CONVS)):
        if d_h is None:
            d_h = np.zeros(caches[j][2].shape)
        d_h[n:2 * n] += np.where(winner == j, g, 0.0)
        d_h, (dw1, dw2, db1, db2) = glu_graph_conv_bwd(d_h, caches[j])
        c = f"{prefix}.conv{j}"
        grads.update({f"{c}.w1": dw1, f"{c}.w2": dw2, f"{c}.b1": db1, f"{c}.b2": db2})
    return d_h, grads


def stsgcm_forward(x3, adj, p, prefix="stt0"):
    return stsgcm_fwd(x3, adj, p, prefix)[0]


def stack_triples(x):
    """``(..., T, N, C)`` -> node-major ``(3N, ..., T-2, C)``.

    Row ``(t - 1) N + i`` holds node ``i`` at step ``t`` of each triple.
    """
    steps = x.shape[-3]
    nodes_first = np.moveaxis(x, -2, 0)  # (N, ..., T, C)
    return np.concatenate(
        [nodes_first[..., s:steps - 2 + s, :] for s in range(3)], axis=0
    )


def unstack_triples(d, n):
    """Adjoint of :func:`stack_triples`."""
    p = d.shape[-2]
    out = np.zeros((n,) + d.shape[1:-2] + (p + 2, d.shape[-1]))
    for s in range(3):
        out[..., s:p + s, :] += d[s * n:(s + 1) * n]
    return np.moveaxis(out, 0, -2)


def sttgcl_fwd(x, adj, p, prefix):
    """One module per sliding triple of steps, shared weights.

    ``(..., T, N, C)`` -> ``(..., T - 2, N, C')``.
    """
    if x.shape[-3] < 3:
        raise UsageError(f"need at least 3 time steps, got {x.shape[-3]}")
    y, cache = stsgcm_fwd(stack_triples(x), adj, p, prefix)
    return np.moveaxis(y, 0, -2), (cache, x.shape[-2])


def sttgcl_bwd(g, cache, prefix):
    inner, n = cache
    d3, grads = stsgcm_bwd(np.moveaxis(g, -2, 0), inner, prefix)
    return unstack_triples(d3, n), grads


def sttgcl_forward(x, adj, p, prefix="stt0"):
    return sttgcl_fwd(x, adj, p, prefix)[0]


# -- dilated branch ----------------------------------------------------------


def _taps(x, dilation, out_steps):
    return [x[..., k * dilation:k * dilation + out_steps, :, :] for k in range(KERNEL)]


def dilated_layer_fwd(x, p, prefix, dilation):
    """Valid dilated convolution along time with GLU gating, shared over nodes."""
    out_steps = x.shape[-3] - (KERNEL - 1) * dilation
    if out_steps < 1:
        raise UsageError(f"{x.shape[-3]} steps shorter than receptive field of dilation {dilation}")
    taps = _taps(x, dilation, out_steps)
    wv, wg = p[f"{prefix}.value.w"], p[f"{prefix}.gate.w"]
    value = sum(t @ wv[k] for k, t in enumerate(taps)) + p[f"{prefix}.value.b"]
    gate = sigmoid(sum(t @ wg[k] for k, t in enumerate(taps)) + p[f"{prefix}.gate.b"])
    return value * gate, (taps, value, gate, wv, wg, x.shape, dilation)


def dilated_layer_bwd(g, cache, prefix):
    taps, value, gate, wv, wg, in_shape, dilation = cache
    d_value = g * gate
    d_pre = g * value * gate * (1.0 - gate)
    grads = {
        f"{prefix}.value.w": np.stack([_matmul_grad(t, d_value) for t in taps]),
        f"{prefix}.value.b": _sum_lead(d_value, 1),
        f"{prefix}.gate.w": np.stack([_matmul_grad(t, d_pre) for t in taps]),
        f"{prefix}.gate.b": _sum_lead(d_pre, 1),
    }
    d_x = np.zeros(in_shape)
    steps = value.shape[-3]
    for k in range(KERNEL):
        d_x[..., k * dilation:k * dilation + steps, :, :] += d_value @ wv[k].T + d_pre @ wg[k].T
    return d_x, grads


def dilated_conv_fwd(x, p, dilation):
    caches = []
    for q in range(N_DILATED):
        x, c = dilated_layer_fwd(x, p, f"dil{q}", dilation)
        caches.append(c)
    return x, caches


def dilated_conv_bwd(g, caches):
    grads = {}
    for q in reversed(range(N_DILATED)):
        g, gq = dilated_layer_bwd(g, caches[q], f"dil{q}")
        grads.update(gq)
    return g, grads


def dilated_conv_forward(x, p, dilation=2):
    return dilated_conv_fwd(x, p, dilation)[0]


# -- output block ------------------------------------------------------------


def output_block_fwd(stt_out, dil_out, p):
    """Crop both branches to their common latest steps, concat, two FC layers.

    ``stt_out`` ``(..., Ts, N, C')`` and ``dil_out`` ``(..., Td, N, Cd)`` give
    predictions ``(..., N, horizon)``.
    """
    steps = min(stt_out.shape[-3], dil_out.shape[-3])
    if stt_out.shape[-2] != dil_out.shape[-2]:
        raise UsageError("branches disagree on node count")
    feats = np.concatenate([stt_out[..., -steps:, :, :], dil_out[..., -steps:, :, :]], axis=-1)
    per_node = np.swapaxes(feats, -3, -2)  # (..., N, steps, F)
    flat = per_node.reshape(per_node.shape[:-2] + (-1,))
    if flat.shape[-1] != p["out.fc1.w"].shape[0]:
        raise UsageError(f"{flat.shape[-1]} flattened features, FC expects {p['out.fc1.w'].shape[0]}")
    hidden = flat @ p["out.fc1.w"] + p["out.fc1.b"]
    act = np.maximum(hidden, 0.0)
    out = act @ p["out.fc2.w"] + p["out.fc2.b"]
    cache = (flat, hidden, act, per_node.shape, steps, stt_out.shape, dil_out.shape, p)
    return out, cache


def output_block_bwd(g, cache):
    flat, hidden, act, node_shape, steps, s_shape, d_shape, p = cache
    grads = {
        "out.fc2.w": _matmul_grad(act, g),
        "out.fc2.b": _sum_lead(g, 1),
    }
    d_hidden = (g @ p["out.fc2.w"].T) * (hidden > 0)
    grads["out.fc1.w"] = _matmul_grad(flat, d_hidden)
    grads["out.fc1.b"] = _sum_lead(d_hidden, 1)
    d_feats = np.swapaxes((d_hidden @ p["out.fc1.w"].T).reshape(node_shape), -3, -2)
    cs = s_shape[-1]
    d_stt = np.zeros(s_shape)
    d_dil = np.zeros(d_shape)
    d_stt[..., -steps:, :, :] = d_feats[..., :cs]
    d_dil[..., -steps:, :, :] = d_feats[..., cs:]
    return (d_stt, d_dil), grads


def output_block(stt_out, dil_out, p):
    return output_block_fwd(stt_out, dil_out, p)[0]


# -- loss --------------------------------------------------------------------


def huber_loss(y, pred, delta=1.0):
    y, pred = np.asarray(y, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    if y.shape != pred.shape:
        raise UsageError(f"shape mismatch {y.shape} vs {pred.shape}")
    if not delta > 0:
        raise UsageError("delta must be positive")
    r = np.abs(pred - y)
    return float(np.mean(np.where(r <= delta, 0.5 * r**2, delta * r - 0.5 * delta**2)))


def huber_grad(y, pred, delta=1.0):
    """d(mean Huber)/d(pred); ``|r| == delta`` uses the squared branch."""
    r = np.asarray(pred, dtype=np.float64) - y
    return np.where(np.abs(r) <= delta, r, delta * np.sign(r)) / r.size
