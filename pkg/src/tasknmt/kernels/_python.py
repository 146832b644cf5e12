"""Pure-numpy implementations of the hot numeric kernels.

Every function here has a signature-identical twin in the compiled
``_speedups`` extension.  Matrix products are not in this set on purpose:
both lanes delegate those to BLAS through numpy, where a hand-rolled loop
cannot compete.  The kernels below are the fusable elementwise / reduction
loops where numpy pays for temporaries and repeated passes.

All floating inputs are C-contiguous float32 or float64 arrays; outputs
match the input dtype.
"""

import numpy as np


def sigmoid(x):
    # exp may overflow to inf for very negative inputs; 1/(1+inf) == 0 is
    # exactly the limit we want, so silence the warning rather than branch.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid_grad(y, g):
    return g * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, g):
    return g * (1.0 - y * y)


def gru_blend(z, h, cand):
    """(1 - z) * h + z * cand, the GRU state interpolation."""
    return (1.0 - z) * h + z * cand


def gru_blend_grad(z, h, cand, g):
    dz = g * (cand - h)
    dh = g * (1.0 - z)
    dcand = g * z
    return dz, dh, dcand


def gru_gates_fwd(az, ar, h):
    """Fused update/reset gates: z, r, and the reset-scaled state r*h."""
    with np.errstate(over="ignore"):
        z = 1.0 / (1.0 + np.exp(-az))
        r = 1.0 / (1.0 + np.exp(-ar))
    return z, r, r * h


def gru_out_fwd(ac, z, h):
    """Fused candidate tanh and state interpolation."""
    c = np.tanh(ac)
    return c, (1.0 - z) * h + z * c


def gru_out_bwd(g, z, c, h):
    """Backward of gru_out_fwd: gradients wrt z, the candidate
    pre-activation, and the direct h path."""
    dz = g * (c - h)
    dac = g * z * (1.0 - c * c)
    dh = g * (1.0 - z)
    return dz, dac, dh


def gru_gates_bwd(drh, dz, z, r, h):
    """Backward of gru_gates_fwd: pre-activation gate gradients plus the
    reset-path h contribution."""
    dr = drh * h
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    return daz, dar, drh * r


def softmax_columns(x):
    """Softmax along axis 0 of a 2-D array (one distribution per column)."""
    shifted = x - x.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    e /= e.sum(axis=0, keepdims=True)
    return e


def softmax_columns_grad(y, g):
    dot = (y * g).sum(axis=0, keepdims=True)
    return y * (g - dot)


def softmax_xent_columns(logits, targets, mask):
    """Fused softmax + negative log-likelihood over columns.

    logits: (V, B), targets: int64 (B,), mask: (B,) in logits.dtype.
    Returns (loss_sum, probs) where loss_sum is a 0-d array of the masked
    NLL sum and probs is the (V, B) softmax, cached for the backward pass.
    """
    m = logits.max(axis=0, keepdims=True)
    shifted = logits - m
    e = np.exp(shifted)
    denom = e.sum(axis=0, keepdims=True)
    probs = e / denom
    cols = np.arange(logits.shape[1])
    log_p = shifted[targets, cols] - np.log(denom[0])
    loss = -(mask * log_p).sum(dtype=logits.dtype)
    return np.asarray(loss, dtype=logits.dtype), probs


def softmax_xent_columns_grad(probs, targets, mask, gscale):
    scale = mask * gscale
    d = probs * scale[None, :]
    cols = np.arange(probs.shape[1])
    d[targets, cols] -= scale
    return d


def attention_energy(base, proj, v):
    """Additive-attention energies for a whole source sequence at once.

    base: (d, B) query-side activation shared over positions,
    proj: (l, d, B) per-position encoder-side projections,
    v: (d,) scoring vector.
    Returns (energies (l, B), tanh_cache (l, d, B)).
    """
    t = np.tanh(proj + base[None, :, :])
    e = np.einsum("d,ldb->lb", v, t)
    return np.ascontiguousarray(e), t


def attention_energy_grad(tcache, v, g):
    dt = (1.0 - tcache * tcache) * (v[None, :, None] * g[:, None, :])
    dbase = dt.sum(axis=0)
    dv = np.einsum("ldb,lb->d", tcache, g)
    return dbase, dt, dv


def context_combine(alpha, states):
    """Attention-weighted sum of encoder states.

    alpha: (l, B), states: (l, H, B) -> (H, B).
    """
    return np.einsum("lb,lhb->hb", alpha, states)


def context_combine_grad(alpha, states, g):
    dalpha = np.einsum("hb,lhb->lb", g, states)
    dstates = alpha[:, None, :] * g[None, :, :]
    return np.ascontiguousarray(dalpha), dstates


def embedding_scatter_add(table_grad, ids, g):
    """Accumulate column gradients g (d, B) into rows ids of table_grad."""
    np.add.at(table_grad, ids, g.T)


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
