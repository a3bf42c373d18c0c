"""Pure-NumPy GRU sequence recurrence kernels.

Fallback backend for the compiled kernels in ``_recurrence_cy``; both expose
the same two functions. Only the time recurrence lives here: input
projections, weight-gradient accumulation, and input gradients are plain
matrix products that the caller batches over the whole sequence.

Gate math per step, with ``p = x_proj[t]`` holding the three input
projections stacked as ``[z | r | c]``:

    z_t  = sigmoid(p_z + U_z h_{t-1})
    r_t  = sigmoid(p_r + U_r h_{t-1})
    hc_t = tanh(p_c + U_h (r_t * h_{t-1}))
    h_t  = z_t * h_{t-1} + (1 - z_t) * hc_t

The update gate multiplies the previous state, so ``z -> 1`` retains memory.
"""

import numpy as np
from scipy.special import expit


def gru_forward_seq(x_proj, u_cat, h0):
    """Run the recurrence over a sequence.

    x_proj : (T, 3H) input projections plus biases, gate order [z | r | c]
    u_cat  : (3H, H) recurrent weights stacked in the same gate order
    h0     : (H,) initial hidden state

    Returns ``(h_seq, z_seq, r_seq, hc_seq)`` where ``h_seq`` has ``T+1``
    rows with ``h_seq[0] = h0``.
    """
    T, H3 = x_proj.shape
    H = H3 // 3
    u_zr = u_cat[: 2 * H]
    u_c = u_cat[2 * H:]

    h_seq = np.empty((T + 1, H))
    z_seq = np.empty((T, H))
    r_seq = np.empty((T, H))
    hc_seq = np.empty((T, H))
    h_seq[0] = h0

    h = h_seq[0]
    for t in range(T):
        uv = u_zr @ h
        z = expit(x_proj[t, :H] + uv[:H])
        r = expit(x_proj[t, H:2 * H] + uv[H:])
        hc = np.tanh(x_proj[t, 2 * H:] + u_c @ (r * h))
        h = z * h + (1.0 - z) * hc
        z_seq[t] = z
        r_seq[t] = r
        hc_seq[t] = hc
        h_seq[t + 1] = h
    return h_seq, z_seq, r_seq, hc_seq


def gru_backward_seq(u_cat, h_seq, z_seq, r_seq, hc_seq, dh_out):
    """Backpropagate through the recurrence.

    dh_out : (T, H) loss gradient arriving at each h_t from outside the
             recurrence (output head and/or the layer above).

    Returns ``(d_gates, dh0)``: pre-activation gate gradients (T, 3H) in
    the order [z | r | c], and the gradient at h0. The caller turns
    ``d_gates`` into weight/bias/input gradients with batched products.
    """
    T, H = dh_out.shape
    u_zr = u_cat[: 2 * H]
    u_c = u_cat[2 * H:]

    d_gates = np.empty((T, 3 * H))
    dh = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dh = dh + dh_out[t]
        h_prev = h_seq[t]
        z = z_seq[t]
        r = r_seq[t]
        hc = hc_seq[t]

        d_ac = dh * (1.0 - z) * (1.0 - hc * hc)
        d_az = dh * (h_prev - hc) * z * (1.0 - z)
        d_rh = u_c.T @ d_ac
        d_ar = d_rh * h_prev * r * (1.0 - r)

        d_gates[t, :H] = d_az
        d_gates[t, H:2 * H] = d_ar
        d_gates[t, 2 * H:] = d_ac

        dh = dh * z + u_zr.T @ d_gates[t, :2 * H] + d_rh * r
    return d_gates, dh
