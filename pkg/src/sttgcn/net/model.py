"""Full STTGCN forward pass and its reverse-mode gradient."""
from dataclasses import dataclass

import numpy as np

from ..errors import UsageError
from . import layers


@dataclass
class ForwardTrace:
    embed: object
    stt: list
    dilated: list
    output: object
    std: np.ndarray
    n_layers: int


def _stats_arrays(stats, n):
    if stats is None:
        return np.zeros(n), np.ones(n)
    return np.asarray(stats.mean, dtype=np.float64), np.asarray(stats.std, dtype=np.float64)


def forward(x, adj, params, cfg, stats=None):
    """Predict ``(..., N, horizon)`` raw-scale values from normalised ``x`` ``(..., T, N, C)``.

    ``stats`` (with per-node ``mean``/``std``) maps the network output back to
    the raw scale; ``None`` leaves it normalised.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3:] != (cfg.window, cfg.n_nodes, cfg.in_features):
        raise UsageError(
            f"batch shape {x.shape} does not end in "
            f"({cfg.window}, {cfg.n_nodes}, {cfg.in_features})"
        )
    adj = np.asarray(adj, dtype=np.float64)
    if adj.shape != (3 * cfg.n_nodes, 3 * cfg.n_nodes):
        raise UsageError(f"fusion graph {adj.shape} does not fit {cfg.n_nodes} nodes")
    h0, embed_cache = layers.position_embed_fwd(x, params)
    h, stt_caches = h0, []
    for layer in range(cfg.layers):
        h, c = layers.sttgcl_fwd(h, adj, params, f"stt{layer}")
        stt_caches.append(c)
    d_out, dil_caches = layers.dilated_conv_fwd(h0, params, cfg.dilation)
    out, out_cache = layers.output_block_fwd(h, d_out, params)
    mean, std = _stats_arrays(stats, cfg.n_nodes)
    pred = out * std[:, None] + mean[:, None]
    trace = ForwardTrace(embed_cache, stt_caches, dil_caches, out_cache, std, cfg.layers)
    return pred, trace


def backward(trace, grad_pred):
    """Gradients of a scalar loss for every parameter, given ``dL/dpred``."""
    if trace is None:
        raise UsageError("backward needs the trace returned by forward")
    g = np.asarray(grad_pred, dtype=np.float64) * trace.std[:, None]
    (d_stt, d_dil), grads = layers.output_block_bwd(g, trace.output)
    d_h0, g_dil = layers.dilated_conv_bwd(d_dil, trace.dilated)
    grads.update(g_dil)
    d_h = d_stt
    for layer in reversed(range(trace.n_layers)):
        d_h, g_layer = layers.sttgcl_bwd(d_h, trace.stt[layer], f"stt{layer}")
        grads.update(g_layer)
    _, g_embed = layers.position_embed_bwd(d_h + d_h0, trace.embed)
    grads.update(g_embed)
    return grads


def loss_and_grads(x, y, adj, params, cfg, stats=None):
    """Mean Huber loss of ``forward`` against ``y`` ``(..., N, horizon)`` and its gradients."""
    pred, trace = forward(x, adj, params, cfg, stats)
    loss = layers.huber_loss(y, pred, cfg.huber_delta)
    grads = backward(trace, layers.huber_grad(y, pred, cfg.huber_delta))
    return loss, grads, pred


def predict(x, adj, params, cfg, stats=None, batch_size=256):
    outs = [
        forward(x[i:i + batch_size], adj, params, cfg, stats)[0]
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(outs) if outs else np.zeros((0, cfg.n_nodes, cfg.horizon))
