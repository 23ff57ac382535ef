"""Central finite-difference checks for the hand-written backward pass."""
import numpy as np

from .layers import huber_loss
from .model import forward


def kink_margin(x, y, adj, params, cfg, stats=None, tiny=1e-6):
    """Smallest distance of any nonsmooth quantity from its kink.

    Covers ReLU pre-activations in the output block, Huber residuals around
    ``|r| = delta`` and, for every max-pool, the gap between the two largest
    convolution outputs relative to the larger magnitude. Max-pool entries
    whose top two values are both below ``tiny`` are skipped: they come from
    saturated gates and carry negligible gradient whichever branch wins.
    Finite differences are only meaningful when the margin is well above the
    perturbation size.
    """
    pred, trace = forward(x, adj, params, cfg, stats)
    hidden = trace.output[1]
    margins = [np.abs(hidden).min(), np.abs(np.abs(pred - y) - cfg.huber_delta).min()]
    for caches, _, n in (c for c, _ in trace.stt):
        outs = np.stack([(lin * gate)[n:2 * n] for _, _, lin, gate, _, _ in caches])
        top = np.sort(outs, axis=0)
        scale = np.maximum(np.abs(top[-1]), np.abs(top[-2]))
        live = scale >= tiny
        if live.any():
            margins.append(((top[-1] - top[-2])[live] / scale[live]).min())
    return float(min(margins))


def branch_pattern(x, y, adj, params, cfg, stats=None):
    """Loss plus a fingerprint of every nonsmooth branch taken.

    The fingerprint covers max-pool winners, ReLU masks and Huber branches;
    two points with equal fingerprints lie on the same smooth piece.
    """
    pred, trace = forward(x, adj, params, cfg, stats)
    loss = huber_loss(y, pred, cfg.huber_delta)
    parts = [trace.output[1] > 0, np.abs(pred - y) <= cfg.huber_delta]
    parts += [winner for (_, winner, _), _ in trace.stt]
    return loss, b"".join(np.ascontiguousarray(a).tobytes() for a in parts)


def finite_difference(x, y, adj, params, cfg, stats=None, eps=1e-5, names=None):
    """Central-difference gradient for every entry of the selected parameter groups.

    Returns ``(grads, crossings)`` where ``crossings`` counts perturbations
    that switched a nonsmooth branch; those differences are not gradients.
    """
    grads = {}
    _, base = branch_pattern(x, y, adj, params, cfg, stats)
    crossings = 0
    for name in names or list(params):
        a = params[name]
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + eps
            up, pat_up = branch_pattern(x, y, adj, params, cfg, stats)
            a[idx] = orig - eps
            down, pat_down = branch_pattern(x, y, adj, params, cfg, stats)
            a[idx] = orig
            g[idx] = (up - down) / (2 * eps)
            crossings += (pat_up != base) + (pat_down != base)
        grads[name] = g
    return grads, int(crossings)


def relative_errors(analytic, numeric, floor=1e-12):
    """Per-group ``||a - n|| / max(||a||, ||n||)``; groups below ``floor`` in both count as 0."""
    out = {}
    for name, n in numeric.items():
        a = analytic[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        out[name] = 0.0 if scale < floor else float(np.linalg.norm(a - n) / scale)
    return out
