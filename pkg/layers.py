"""Blocks of the hybrid classifier and their hand-chained backward passes.

Each ``*_forward`` returns its value together with a ``backward`` closure built
from the primitives in ``autodiff_core``; ``backward(grad_out)`` returns the
gradient for the block input and a dict of parameter gradients keyed by the
parameter's stable name (``conv.filters``, ``lstm.W_i``, ...).
"""
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

import autodiff_core as ad
from config import (CONV_FILTERS, DEFAULT_VARIANT, DROPOUT_RATE, EMBED_DIM, KERNEL_SIZE, KEY_DIM, LSTM_UNITS,
                    MAX_LEN, NUM_HEADS, POOL_SIZE, VARIANTS)
from errors import ConfigurationError, DegenerateInputError, ShapeError
from vocab_embed import EmbeddingTable, EncodedSequence, embed

logger = logging.getLogger("layers")

NUM_CLASSES = 2
GATES = ("i", "f", "o", "c")

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    variant: str = DEFAULT_VARIANT
    max_len: int = MAX_LEN
    embed_dim: int = EMBED_DIM
    conv_filters: int = CONV_FILTERS
    kernel_size: int = KERNEL_SIZE
    pool_size: int = POOL_SIZE
    num_heads: int = NUM_HEADS
    key_dim: int = KEY_DIM
    lstm_units: int = LSTM_UNITS
    dropout: float = DROPOUT_RATE
    conv_bias_inside_relu: bool = False
    forget_bias_one: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant '{self.variant}', expected one of {', '.join(VARIANTS)}")
        for name in ("max_len", "embed_dim", "conv_filters", "kernel_size", "pool_size", "num_heads",
                     "key_dim", "lstm_units"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.uses_conv and self.max_len < self.kernel_size:
            raise ConfigurationError(f"max_len {self.max_len} is shorter than kernel_size {self.kernel_size}")
        if self.variant in ("cnn_lstm", "cnn_lstm_attn") and self.conv_length < self.pool_size:
            raise ConfigurationError("sequence too short for one pooling window")

    @property
    def uses_conv(self) -> bool:
        return self.variant != "lstm"

    @property
    def conv_length(self) -> int:
        return self.max_len - self.kernel_size + 1

    @property
    def pooled_length(self) -> int:
        return self.conv_length // self.pool_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class ConvParams:
    filters: np.ndarray  # F x k x d_in
    bias: np.ndarray  # F

    @classmethod
    def from_store(cls, params: Params):
        return cls(params["conv.filters"], params["conv.bias"])


@dataclass
class LstmParams:
    W: Dict[str, np.ndarray]  # gate -> d_in x h
    U: Dict[str, np.ndarray]  # gate -> h x h
    b: Dict[str, np.ndarray]  # gate -> h

    @classmethod
    def from_store(cls, params: Params):
        return cls(
            W={g: params[f"lstm.W_{g}"] for g in GATES},
            U={g: params[f"lstm.U_{g}"] for g in GATES},
            b={g: params[f"lstm.b_{g}"] for g in GATES},
        )

    @property
    def units(self) -> int:
        return self.U["i"].shape[0]


@dataclass
class AttnParams:
    u: np.ndarray  # h

    @classmethod
    def from_store(cls, params: Params):
        return cls(params["attn.u"])


@dataclass
class MhaParams:
    W_q: List[np.ndarray]  # per head: d_model x key_dim
    W_k: List[np.ndarray]
    W_v: List[np.ndarray]
    W_out: np.ndarray  # (heads * key_dim) x d_model

    @classmethod
    def from_store(cls, params: Params, num_heads: int):
        return cls(
            W_q=[params[f"mha.W_q.{j}"] for j in range(num_heads)],
            W_k=[params[f"mha.W_k.{j}"] for j in range(num_heads)],
            W_v=[params[f"mha.W_v.{j}"] for j in range(num_heads)],
            W_out=params["mha.W_out"],
        )


@dataclass
class DenseParams:
    W_c: np.ndarray  # d_in x 2
    b_c: np.ndarray  # 2

    @classmethod
    def from_store(cls, params: Params):
        return cls(params["dense.W_c"], params["dense.b_c"])


def conv1d_forward(X, params: ConvParams, bias_inside_relu: bool = False):
    """Valid 1-D convolution: c_i = relu(<f, X[i:i+k]>) + b.

    With ``bias_inside_relu`` the conventional relu(<f, X[i:i+k]> + b) is used.
    """
    X = ad.as_tensor(X, "conv1d")
    F, k, d_in = params.filters.shape
    if X.ndim != 2 or X.shape[1] != d_in or X.shape[0] < k or params.bias.shape != (F,):
        raise ShapeError("conv1d", X.shape, params.filters.shape, params.bias.shape)

    win, b_win = ad.windows(X, k)
    flat, b_flat = ad.reshape(params.filters, (F, k * d_in))
    flat_t, b_t = ad.transpose(flat)
    z, b_mm = ad.matmul(win, flat_t)
    if bias_inside_relu:
        pre, b_add = ad.add(z, params.bias)
        out, b_relu = ad.relu(pre)
    else:
        act, b_relu = ad.relu(z)
        out, b_add = ad.add(act, params.bias)

    def backward(g):
        if bias_inside_relu:
            (d_pre,) = b_relu(g)
            d_z, d_bias = b_add(d_pre)
        else:
            d_act, d_bias = b_add(g)
            (d_z,) = b_relu(d_act)
        d_win, d_flat_t = b_mm(d_z)
        (d_flat,) = b_t(d_flat_t)
        (d_filters,) = b_flat(d_flat)
        (dX,) = b_win(d_win)
        return dX, {"conv.filters": d_filters, "conv.bias": d_bias}

    return out, backward


def maxpool(C, pool: int = POOL_SIZE, mode: str = "windowed"):
    """Windowed: non-overlapping windows of ``pool`` rows, remainder dropped,
    floor(L / pool) x F. Global: column maxima, 1 x F."""
    C = ad.as_tensor(C, "maxpool")
    if C.ndim != 2 or C.shape[0] == 0:
        raise ShapeError("maxpool", C.shape)
    L, F = C.shape

    if mode == "global":
        values, _, b_max = ad.max_over_axis(C, axis=0)
        out, b_r = ad.reshape(values, (1, F))

        def backward(g):
            (d_values,) = b_r(g)
            return b_max(d_values)[0], {}

        return out, backward

    if mode != "windowed":
        raise ConfigurationError(f"unknown pooling mode '{mode}'")
    if pool < 1 or L < pool:
        raise ShapeError("maxpool", C.shape, (pool,))
    n = L // pool
    kept, b_slice = ad.slice_rows(C, 0, n * pool)
    blocks, b_blocks = ad.reshape(kept, (n, pool, F))
    out, _, b_max = ad.max_over_axis(blocks, axis=1)

    def backward(g):
        (d_blocks,) = b_max(g)
        (d_kept,) = b_blocks(d_blocks)
        return b_slice(d_kept)[0], {}

    return out, backward


def mha_forward(X, params: MhaParams):
    """Multi-head scaled dot-product self-attention, no masking, no positional
    encoding, no residual. Returns (output, per-head attention maps, backward)."""
    X = ad.as_tensor(X, "mha")
    heads = len(params.W_q)
    d_model = params.W_out.shape[1]
    key_dim = params.W_q[0].shape[1]
    if X.ndim != 2 or X.shape[1] != d_model or params.W_out.shape[0] != heads * key_dim:
        raise ShapeError("mha", X.shape, params.W_q[0].shape, params.W_out.shape)
    inv_sqrt = 1.0 / math.sqrt(key_dim)

    outputs, maps, steps = [], [], []
    for j in range(heads):
        Q, b_q = ad.matmul(X, params.W_q[j])
        K, b_k = ad.matmul(X, params.W_k[j])
        V, b_v = ad.matmul(X, params.W_v[j])
        K_t, b_kt = ad.transpose(K)
        S, b_s = ad.matmul(Q, K_t)
        S_scaled, b_scale = ad.scale(S, inv_sqrt)
        A, b_soft = ad.softmax(S_scaled)
        O, b_o = ad.matmul(A, V)
        outputs.append(O)
        maps.append(A)
        steps.append((b_q, b_k, b_v, b_kt, b_s, b_scale, b_soft, b_o))
    joined, b_cat = ad.concat(outputs, axis=1)
    out, b_out = ad.matmul(joined, params.W_out)

    def backward(g):
        d_joined, d_W_out = b_out(g)
        d_heads = b_cat(d_joined)
        dX = np.zeros_like(X)
        grads = {"mha.W_out": d_W_out}
        for j, (b_q, b_k, b_v, b_kt, b_s, b_scale, b_soft, b_o) in enumerate(steps):
            d_A, d_V = b_o(d_heads[j])
            (d_S_scaled,) = b_soft(d_A)
            (d_S,) = b_scale(d_S_scaled)
            d_Q, d_K_t = b_s(d_S)
            (d_K,) = b_kt(d_K_t)
            dX_q, grads[f"mha.W_q.{j}"] = b_q(d_Q)
            dX_k, grads[f"mha.W_k.{j}"] = b_k(d_K)
            dX_v, grads[f"mha.W_v.{j}"] = b_v(d_V)
            dX += dX_q
            dX += dX_k
            dX += dX_v
        return dX, grads

    return out, maps, backward


def lstm_forward(X, params: LstmParams, h0=None, c0=None):
    """Unrolled LSTM returning every hidden state (L x h).

    i, f, o = sigmoid(x W + h U + b); c~ = tanh(x W_c + h U_c + b_c);
    c_t = f * c_{t-1} + i * c~;  h_t = o * tanh(c_t).
    """
    X = ad.as_tensor(X, "lstm")
    h = params.units
    if X.ndim != 2 or any(params.W[g].shape != (X.shape[1], h) for g in GATES) \
            or any(params.U[g].shape != (h, h) or params.b[g].shape != (h,) for g in GATES):
        raise ShapeError("lstm", X.shape, params.W["i"].shape, params.U["i"].shape)
    h_prev = np.zeros((1, h)) if h0 is None else ad.as_tensor(h0).reshape(1, h)
    c_prev = np.zeros((1, h)) if c0 is None else ad.as_tensor(c0).reshape(1, h)

    steps, hidden = [], []
    for t in range(X.shape[0]):
        x_t = X[t:t + 1]
        gate_values, gate_steps = {}, {}
        for g in GATES:
            zx, b_zx = ad.matmul(x_t, params.W[g])
            zh, b_zh = ad.matmul(h_prev, params.U[g])
            s, b_s = ad.add(zx, zh)
            z, b_z = ad.add(s, params.b[g])
            a, b_a = (ad.tanh if g == "c" else ad.sigmoid)(z)
            gate_values[g] = a
            gate_steps[g] = (b_zx, b_zh, b_s, b_z, b_a)
        fc, b_fc = ad.multiply(gate_values["f"], c_prev)
        ic, b_ic = ad.multiply(gate_values["i"], gate_values["c"])
        c_t, b_c = ad.add(fc, ic)
        tc, b_tc = ad.tanh(c_t)
        h_t, b_h = ad.multiply(gate_values["o"], tc)
        steps.append((gate_steps, b_fc, b_ic, b_c, b_tc, b_h))
        hidden.append(h_t)
        h_prev, c_prev = h_t, c_t

    H, b_stack = ad.concat(hidden, axis=0)

    def backward(g):
        d_hidden = b_stack(g)
        dX = np.zeros_like(X)
        grads = {}
        for gate in GATES:
            grads[f"lstm.W_{gate}"] = np.zeros_like(params.W[gate])
            grads[f"lstm.U_{gate}"] = np.zeros_like(params.U[gate])
            grads[f"lstm.b_{gate}"] = np.zeros_like(params.b[gate])
        dh_next = np.zeros((1, h))
        dc_next = np.zeros((1, h))
        for t in range(len(steps) - 1, -1, -1):
            gate_steps, b_fc, b_ic, b_c, b_tc, b_h = steps[t]
            dh = d_hidden[t] + dh_next
            d_o, d_tc = b_h(dh)
            (dc_tanh,) = b_tc(d_tc)
            dc = dc_next + dc_tanh
            d_fc, d_ic = b_c(dc)
            d_f, dc_next = b_fc(d_fc)
            d_i, d_ct = b_ic(d_ic)
            d_gate = {"i": d_i, "f": d_f, "o": d_o, "c": d_ct}
            dh_next = np.zeros((1, h))
            for gate in GATES:
                b_zx, b_zh, b_s, b_z, b_a = gate_steps[gate]
                (d_z,) = b_a(d_gate[gate])
                d_s, d_b = b_z(d_z)
                d_zx, d_zh = b_s(d_s)
                dx, dW = b_zx(d_zx)
                dh_g, dU = b_zh(d_zh)
                dX[t] += dx[0]
                dh_next += dh_g
                grads[f"lstm.W_{gate}"] += dW
                grads[f"lstm.U_{gate}"] += dU
                grads[f"lstm.b_{gate}"] += d_b
        return dX, grads

    return H, backward


def soft_attention(H, params: AttnParams, true_length: int):
    """alpha_t = softmax_t(h_t . u) over the first ``true_length`` rows, zero beyond;
    c = sum_t alpha_t h_t. Returns (c, alpha, backward)."""
    H = ad.as_tensor(H, "soft_attention")
    if H.ndim != 2 or params.u.shape != (H.shape[1],):
        raise ShapeError("soft_attention", H.shape, params.u.shape)
    L, h = H.shape
    if true_length < 1:
        raise DegenerateInputError("soft attention needs at least one live position")
    if true_length > L:
        raise ShapeError("soft_attention", H.shape, (true_length,))

    live, b_live = ad.slice_rows(H, 0, true_length)
    u_col, b_u = ad.reshape(params.u, (h, 1))
    scores, b_scores = ad.matmul(live, u_col)
    flat, b_flat = ad.reshape(scores, (true_length,))
    weights, b_soft = ad.softmax(flat)
    row, b_row = ad.reshape(weights, (1, true_length))
    context, b_ctx = ad.matmul(row, live)
    c, b_c = ad.reshape(context, (h,))

    alpha = np.zeros(L)
    alpha[:true_length] = weights

    def backward(g):
        (d_context,) = b_c(g)
        d_row, d_live_ctx = b_ctx(d_context)
        (d_weights,) = b_row(d_row)
        (d_flat,) = b_soft(d_weights)
        (d_scores,) = b_flat(d_flat)
        d_live_scores, d_u_col = b_scores(d_scores)
        (d_u,) = b_u(d_u_col)
        (dH,) = b_live(d_live_ctx + d_live_scores)
        return dH, {"attn.u": d_u}

    return c, alpha, backward


def dropout(X, rate: float = DROPOUT_RATE, training: bool = False, rng: Optional[np.random.Generator] = None):
    """Inverted dropout; the exact identity outside training."""
    if not 0 <= rate < 1:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training:
        return X, lambda g: (g, {})
    if rng is None:
        raise ConfigurationError("training-mode dropout needs a seeded generator")
    X = ad.as_tensor(X, "dropout")
    mask = (rng.random(X.shape) >= rate) / (1.0 - rate)
    out, b_mul = ad.multiply(X, mask)

    def backward(g):
        return b_mul(g)[0], {}

    return out, backward


def dense_softmax(x, params: DenseParams):
    """Class probabilities softmax(x W_c + b_c) for a d_in vector x."""
    x = ad.as_tensor(x, "dense_softmax")
    if x.ndim != 1 or params.W_c.shape != (x.shape[0], NUM_CLASSES) or params.b_c.shape != (NUM_CLASSES,):
        raise ShapeError("dense_softmax", x.shape, params.W_c.shape, params.b_c.shape)
    row, b_row = ad.reshape(x, (1, x.shape[0]))
    z, b_mm = ad.matmul(row, params.W_c)
    logits, b_add = ad.add(z, params.b_c)
    flat, b_flat = ad.reshape(logits, (NUM_CLASSES,))
    probs, b_soft = ad.softmax(flat)

    def backward(g):
        (d_flat,) = b_soft(g)
        (d_logits,) = b_flat(d_flat)
        d_z, d_b = b_add(d_logits)
        d_row, d_W = b_mm(d_z)
        (dx,) = b_row(d_row)
        return dx, {"dense.W_c": d_W, "dense.b_c": d_b}

    return probs, backward


def param_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Every trainable tensor of ``config.variant`` by stable name, in init order."""
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    F, k, d, h = config.conv_filters, config.kernel_size, config.embed_dim, config.lstm_units
    if config.uses_conv:
        shapes["conv.filters"] = (F, k, d)
        shapes["conv.bias"] = (F,)
    if config.variant == "cnn_lstm_attn":
        for j in range(config.num_heads):
            shapes[f"mha.W_q.{j}"] = (F, config.key_dim)
            shapes[f"mha.W_k.{j}"] = (F, config.key_dim)
            shapes[f"mha.W_v.{j}"] = (F, config.key_dim)
        shapes["mha.W_out"] = (config.num_heads * config.key_dim, F)
    if config.variant != "cnn":
        d_in = d if config.variant == "lstm" else F
        for g in GATES:
            shapes[f"lstm.W_{g}"] = (d_in, h)
            shapes[f"lstm.U_{g}"] = (h, h)
            shapes[f"lstm.b_{g}"] = (h,)
    if config.variant == "cnn_lstm_attn":
        shapes["attn.u"] = (h,)
    shapes["dense.W_c"] = (F if config.variant == "cnn" else h, NUM_CLASSES)
    shapes["dense.b_c"] = (NUM_CLASSES,)
    return shapes


def _glorot_limit(name: str, shape: Tuple[int, ...]) -> float:
    if name == "conv.filters":
        F, k, d = shape
        fan_in, fan_out = k * d, k * F
    elif len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Uniform Glorot for matrices and the attention vector; zero biases except
    the LSTM forget bias, which starts at 1 when ``forget_bias_one`` is set."""
    params: Params = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name in ("conv.bias", "dense.b_c") or name.startswith("lstm.b_"):
            value = np.zeros(shape)
            if name == "lstm.b_f" and config.forget_bias_one:
                value += 1.0
        else:
            limit = _glorot_limit(name, shape)
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = value
    return params


def check_params(params: Params, config: ModelConfig):
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigurationError(
            f"parameters do not match variant '{config.variant}' (missing: {missing}, unexpected: {extra})"
        )
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ConfigurationError(f"{name} has shape {tuple(params[name].shape)}, expected {shape}")


def effective_length(true_length: int, config: ModelConfig) -> int:
    """Pooled positions derived from real tokens: ceil((n - k + 1) / pool), clamped to [1, pooled length]."""
    live = math.ceil((true_length - config.kernel_size + 1) / config.pool_size)
    return int(min(max(live, 1), config.pooled_length))


@dataclass
class HybridOutput:
    probs: np.ndarray
    alpha: Optional[np.ndarray]
    shapes: List[Tuple[int, ...]]
    backward: object = field(repr=False)


def hybrid_forward(seq: EncodedSequence, table: EmbeddingTable, params: Params, config: ModelConfig,
                   training: bool = False, rng: Optional[np.random.Generator] = None) -> HybridOutput:
    """Run one document through ``config.variant``.

    ``output.backward(d_probs)`` returns gradients for every trainable tensor;
    the embedding table receives none.
    """
    check_params(params, config)
    if len(seq.ids) != config.max_len or table.d != config.embed_dim:
        raise ConfigurationError(
            f"input {len(seq.ids)}x{table.d} does not match model {config.max_len}x{config.embed_dim}"
        )
    variant = config.variant
    X = embed(seq, table)
    shapes = [X.shape]
    chain = []
    alpha = None

    if variant == "lstm":
        H, b = lstm_forward(X, LstmParams.from_store(params))
        chain.append(b)
        shapes.append(H.shape)
        last = max(1, seq.true_length)
        feature, b_last = _last_state(H, last)
        chain.append(b_last)
    else:
        C, b = conv1d_forward(X, ConvParams.from_store(params), config.conv_bias_inside_relu)
        chain.append(b)
        shapes.append(C.shape)
        if variant == "cnn":
            pooled, b = maxpool(C, mode="global")
            chain.append(b)
            shapes.append(pooled.shape)
            feature, b_flat = ad.reshape(pooled, (config.conv_filters,))
            chain.append(lambda g, b_flat=b_flat: (b_flat(g)[0], {}))
        else:
            P, b = maxpool(C, config.pool_size, mode="windowed")
            chain.append(b)
            shapes.append(P.shape)
            if variant == "cnn_lstm_attn":
                P, _, b = mha_forward(P, MhaParams.from_store(params, config.num_heads))
                chain.append(b)
                shapes.append(P.shape)
            H, b = lstm_forward(P, LstmParams.from_store(params))
            chain.append(b)
            shapes.append(H.shape)
            live = effective_length(seq.true_length, config)
            if variant == "cnn_lstm_attn":
                feature, alpha, b = soft_attention(H, AttnParams.from_store(params), live)
            else:
                feature, b = _last_state(H, live)
            chain.append(b)

    shapes.append(feature.shape)
    dropped, b = dropout(feature, config.dropout, training, rng)
    chain.append(b)
    probs, b = dense_softmax(dropped, DenseParams.from_store(params))
    chain.append(b)
    shapes.append(probs.shape)

    def backward(d_probs):
        grads: Params = {}
        g = d_probs
        for step in reversed(chain):
            g, step_grads = step(g)
            for name, value in step_grads.items():
                grads[name] = grads[name] + value if name in grads else value
        return grads

    return HybridOutput(probs=probs, alpha=alpha, shapes=shapes, backward=backward)


def _last_state(H, position: int):
    """Hidden state at 1-based ``position`` as a vector."""
    row, b_row = ad.slice_rows(H, position - 1, position)
    vec, b_vec = ad.reshape(row, (H.shape[1],))

    def backward(g):
        return b_row(b_vec(g)[0])[0], {}

    return vec, backward


def token_attention(seq: EncodedSequence, alpha: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Spread pooled-position weights back over token positions.

    Pooled position j sees tokens [j*pool, j*pool + pool + k - 1); its weight is
    shared equally among the real (non-PAD) tokens in that span.
    """
    weights = np.zeros(len(seq.ids))
    span = config.pool_size + config.kernel_size - 1
    for j, a in enumerate(alpha):
        start = j * config.pool_size
        stop = min(seq.true_length, start + span)
        if a == 0 or stop <= start:
            continue
        weights[start:stop] += a / (stop - start)
    return weights
