"""Two-layer GRU stack with a linear head, trained by backpropagation
through time.

Gate equations per cell (sigma is the logistic function):

    z_t = sigma(W_z x_t + U_z h_prev + b_z)
    r_t = sigma(W_r x_t + U_r h_prev + b_r)
    h'_t = tanh(W_h x_t + U_h (r_t * h_prev) + b_h)
    h_t = z_t * h_prev + (1 - z_t) * h'_t

The update gate multiplies the previous state, so z_t -> 1 retains memory.
Biases are an addition; setting them to zero recovers the bias-free
equations exactly. The head reads every step: y_t = head_W h_t + head_b.

The time loop runs in a swappable kernel (see ``backend``); everything
batched over T stays here as plain matrix products.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit

from . import backend


@dataclass
class GruCellParams:
    """Weights of one GRU cell. W_* act on the input, U_* on the state."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        h, d = self.W_z.shape
        for name in ("W_r", "W_h"):
            if getattr(self, name).shape != (h, d):
                raise ValueError("%s shape %s, expected %s"
                                 % (name, getattr(self, name).shape, (h, d)))
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (h, h):
                raise ValueError("%s shape %s, expected %s"
                                 % (name, getattr(self, name).shape, (h, h)))
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (h,):
                raise ValueError("%s shape %s, expected %s"
                                 % (name, getattr(self, name).shape, (h,)))

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    def w_cat(self):
        """Input weights stacked [z | r | c], shape (3H, D)."""
        return np.vstack([self.W_z, self.W_r, self.W_h])

    def u_cat(self):
        """Recurrent weights stacked [z | r | c], shape (3H, H)."""
        return np.vstack([self.U_z, self.U_r, self.U_h])

    def b_cat(self):
        return np.concatenate([self.b_z, self.b_r, self.b_h])


@dataclass
class GruNetwork:
    """Stacked GRU cells plus a per-step linear readout."""

    layers: List[GruCellParams]
    head_W: np.ndarray
    head_b: np.ndarray
    dropout_p: float = 0.0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one GRU layer")
        h = self.layers[0].hidden_size
        for i, layer in enumerate(self.layers[1:], start=1):
            if layer.input_size != h or layer.hidden_size != h:
                raise ValueError(
                    "layer %d sizes (%d -> %d) do not chain from hidden size %d"
                    % (i, layer.input_size, layer.hidden_size, h))
        if self.head_W.shape[1] != h:
            raise ValueError("head_W shape %s incompatible with hidden size %d"
                             % (self.head_W.shape, h))
        if self.head_b.shape != (self.head_W.shape[0],):
            raise ValueError("head_b shape %s, expected (%d,)"
                             % (self.head_b.shape, self.head_W.shape[0]))
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1), got %r" % self.dropout_p)

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.head_W.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass
class NetworkGrads:
    """Gradients shaped exactly like a GruNetwork's parameters."""

    layers: List[GruCellParams]
    head_W: np.ndarray
    head_b: np.ndarray


@dataclass
class _LayerCache:
    x_in: np.ndarray
    w_cat: np.ndarray
    u_cat: np.ndarray
    h_seq: np.ndarray
    z_seq: np.ndarray
    r_seq: np.ndarray
    hc_seq: np.ndarray
    drop_mask: Optional[np.ndarray]


@dataclass
class ForwardCache:
    layer_caches: List[_LayerCache] = field(default_factory=list)
    head_input: Optional[np.ndarray] = None


def iter_params(net):
    """Yield (name, array) pairs in a fixed canonical order.

    Works on GruNetwork and NetworkGrads alike; the order defines the
    optimizer-state and checkpoint layout.
    """
    for i, layer in enumerate(net.layers):
        prefix = "layer%d." % i
        for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h",
                     "b_z", "b_r", "b_h"):
            yield prefix + name, getattr(layer, name)
    yield "head.W", net.head_W
    yield "head.b", net.head_b


def zero_grads(net: GruNetwork) -> NetworkGrads:
    layers = []
    for layer in net.layers:
        layers.append(GruCellParams(
            *[np.zeros_like(getattr(layer, nm))
              for nm in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h",
                         "b_z", "b_r", "b_h")]))
    return NetworkGrads(layers, np.zeros_like(net.head_W),
                        np.zeros_like(net.head_b))


def init_network(seed: int, input_size: int = 4, hidden_size: int = 64,
                 output_size: int = 7, n_layers: int = 2,
                 dropout_p: float = 0.2) -> GruNetwork:
    """Seed-reproducible uniform init in +-1/sqrt(fan_in); biases zero."""
    if min(input_size, hidden_size, output_size, n_layers) < 1:
        raise ValueError("all sizes must be positive")
    rng = np.random.default_rng(seed)

    def mat(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    layers = []
    for i in range(n_layers):
        d = input_size if i == 0 else hidden_size
        layers.append(GruCellParams(
            W_z=mat(hidden_size, d), W_r=mat(hidden_size, d),
            W_h=mat(hidden_size, d),
            U_z=mat(hidden_size, hidden_size), U_r=mat(hidden_size, hidden_size),
            U_h=mat(hidden_size, hidden_size),
            b_z=np.zeros(hidden_size), b_r=np.zeros(hidden_size),
            b_h=np.zeros(hidden_size)))
    return GruNetwork(layers=layers, head_W=mat(output_size, hidden_size),
                      head_b=np.zeros(output_size), dropout_p=dropout_p)


def gru_cell_forward(p: GruCellParams, x_t, h_prev):
    """One recurrence step. Returns (h_t, cache) with the gate activations."""
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if x_t.shape != (p.input_size,):
        raise ValueError("x_t shape %s, expected (%d,)" % (x_t.shape, p.input_size))
    if h_prev.shape != (p.hidden_size,):
        raise ValueError("h_prev shape %s, expected (%d,)"
                         % (h_prev.shape, p.hidden_size))
    z = expit(p.W_z @ x_t + p.U_z @ h_prev + p.b_z)
    r = expit(p.W_r @ x_t + p.U_r @ h_prev + p.b_r)
    hc = np.tanh(p.W_h @ x_t + p.U_h @ (r * h_prev) + p.b_h)
    h_t = z * h_prev + (1.0 - z) * hc
    cache = {"z": z, "r": r, "hc": hc, "x_t": x_t, "h_prev": h_prev}
    return h_t, cache


def network_forward(net: GruNetwork, seq, mode: str = "eval",
                    dropout_seed: Optional[int] = None):
    """Run one sequence through the stack. Returns (outputs [T x n_out], cache).

    mode "train" applies inverted dropout to the first layer's output
    sequence; the mask is reproducible from dropout_seed. mode "eval" is
    deterministic and applies no dropout.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval', got %r" % mode)
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[0] < 1 or seq.shape[1] != net.input_size:
        raise ValueError("seq shape %s, expected (T >= 1, %d)"
                         % (seq.shape, net.input_size))
    use_dropout = mode == "train" and net.dropout_p > 0.0 and net.n_layers > 1
    if use_dropout:
        if dropout_seed is None:
            raise ValueError("train mode with dropout needs dropout_seed")
        drop_rng = np.random.default_rng(dropout_seed)

    t_len = seq.shape[0]
    h = net.hidden_size
    cache = ForwardCache()
    x_in = seq
    for li, layer in enumerate(net.layers):
        w_cat = layer.w_cat()
        u_cat = layer.u_cat()
        x_proj = x_in @ w_cat.T + layer.b_cat()
        h_seq, z_seq, r_seq, hc_seq = backend.kernels.gru_forward_seq(
            np.ascontiguousarray(x_proj), u_cat, np.zeros(h))
        out = h_seq[1:]
        mask = None
        if use_dropout and li < net.n_layers - 1:
            keep = 1.0 - net.dropout_p
            mask = (drop_rng.random((t_len, h)) < keep) / keep
            out = out * mask
        cache.layer_caches.append(_LayerCache(
            x_in=x_in, w_cat=w_cat, u_cat=u_cat, h_seq=h_seq,
            z_seq=z_seq, r_seq=r_seq, hc_seq=hc_seq, drop_mask=mask))
        x_in = out
    cache.head_input = x_in
    outputs = x_in @ net.head_W.T + net.head_b
    return outputs, cache


def network_backward(net: GruNetwork, cache: ForwardCache,
                     d_outputs) -> NetworkGrads:
    """Exact BPTT gradients for the loss whose per-step output gradients
    are d_outputs [T x n_out]. The cache must come from a matching
    network_forward call on this network.
    """
    d_outputs = np.asarray(d_outputs, dtype=float)
    if cache.head_input is None or len(cache.layer_caches) != net.n_layers:
        raise ValueError("cache does not match this network (layer count)")
    t_len = cache.head_input.shape[0]
    if d_outputs.shape != (t_len, net.output_size):
        raise ValueError("d_outputs shape %s, expected (%d, %d)"
                         % (d_outputs.shape, t_len, net.output_size))
    for li, lc in enumerate(cache.layer_caches):
        if lc.u_cat.shape != (3 * net.hidden_size, net.hidden_size):
            raise ValueError("cache layer %d does not match network sizes" % li)

    h = net.hidden_size
    g_head_w = d_outputs.T @ cache.head_input
    g_head_b = d_outputs.sum(axis=0)
    d_out = d_outputs @ net.head_W

    grad_layers: List[GruCellParams] = [None] * net.n_layers  # type: ignore
    for li in range(net.n_layers - 1, -1, -1):
        lc = cache.layer_caches[li]
        if lc.drop_mask is not None:
            d_out = d_out * lc.drop_mask
        d_gates, _ = backend.kernels.gru_backward_seq(
            lc.u_cat, lc.h_seq, lc.z_seq, lc.r_seq, lc.hc_seq,
            np.ascontiguousarray(d_out))
        h_prev_seq = lc.h_seq[:-1]
        g_w = d_gates.T @ lc.x_in
        g_b = d_gates.sum(axis=0)
        g_u_zr = d_gates[:, :2 * h].T @ h_prev_seq
        g_u_h = d_gates[:, 2 * h:].T @ (lc.r_seq * h_prev_seq)
        grad_layers[li] = GruCellParams(
            W_z=g_w[:h], W_r=g_w[h:2 * h], W_h=g_w[2 * h:],
            U_z=g_u_zr[:h], U_r=g_u_zr[h:], U_h=g_u_h,
            b_z=g_b[:h], b_r=g_b[h:2 * h], b_h=g_b[2 * h:])
        if li > 0:
            d_out = d_gates @ lc.w_cat
    return NetworkGrads(grad_layers, g_head_w, g_head_b)
