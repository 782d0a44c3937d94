"""Phone-level LSTM language model with optional meaning/class conditioning.

Pure numpy, float64 throughout. Words are scored phone by phone: the input
at step t is the embedding of the previous phone (the end marker doubles as
the start-of-word input), the output is a softmax over the inventory, and
the end marker is predicted as the final token. Conditioning enters as the
initial recurrent state of the first layer.

Everything here is deterministic given the parameter values; all sampling
(init, dropout) flows through generators passed in by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import (
    DimensionMismatchError,
    OddHiddenSplitError,
    UnknownClassError,
    UnknownPhoneError,
)
from ..lexicon import PhoneInventory, Sign

LN2 = float(np.log(2.0))

CONDITION_MODES = ("nothing", "meaning", "class", "meaning_and_class")


@dataclass(frozen=True)
class LMConfig:
    """Architecture and conditioning choices for one language model."""

    layers: int = 1
    hidden_size: int = 32
    phone_embed_size: int = 16
    dropout: float = 0.0
    pca_d: int = 8
    condition_on: str = "nothing"
    # Which recurrent states receive the conditioning vector, and whether
    # only the first layer or every layer is initialized with it.
    condition_state: str = "both"
    condition_layers: str = "first"

    def __post_init__(self):
        if self.layers < 1 or self.hidden_size < 1 or self.phone_embed_size < 1:
            raise ValueError("layer and size fields must be >= 1")
        if self.pca_d < 1:
            raise ValueError("pca_d must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.condition_on not in CONDITION_MODES:
            raise ValueError(f"condition_on must be one of {CONDITION_MODES}")
        if self.condition_state not in ("both", "hidden", "cell"):
            raise ValueError("condition_state must be both, hidden, or cell")
        if self.condition_layers not in ("first", "all"):
            raise ValueError("condition_layers must be first or all")

    @property
    def uses_meaning(self) -> bool:
        return self.condition_on in ("meaning", "meaning_and_class")

    @property
    def uses_class(self) -> bool:
        return self.condition_on in ("class", "meaning_and_class")

    def half_size(self) -> int:
        if self.hidden_size % 2 != 0:
            raise OddHiddenSplitError(
                f"hidden_size {self.hidden_size} cannot split into halves")
        return self.hidden_size // 2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "layers", "hidden_size", "phone_embed_size", "dropout", "pca_d",
            "condition_on", "condition_state", "condition_layers")}

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        return cls(**d)


@dataclass(eq=False)
class LMParameters:
    """All trainable tensors. Gate order in the fused arrays is i, f, g, o."""

    embed: np.ndarray
    wx: list[np.ndarray]
    wh: list[np.ndarray]
    b: list[np.ndarray]
    w_out: np.ndarray
    b_out: np.ndarray
    w_v: np.ndarray | None = None
    b_v: np.ndarray | None = None
    class_embed: np.ndarray | None = None
    classes: tuple[str, ...] | None = None

    def named_arrays(self):
        yield "embed", self.embed
        for l, (wx, wh, b) in enumerate(zip(self.wx, self.wh, self.b)):
            yield f"wx{l}", wx
            yield f"wh{l}", wh
            yield f"b{l}", b
        yield "w_out", self.w_out
        yield "b_out", self.b_out
        if self.w_v is not None:
            yield "w_v", self.w_v
            yield "b_v", self.b_v
        if self.class_embed is not None:
            yield "class_embed", self.class_embed

    def copy(self) -> "LMParameters":
        return LMParameters(
            embed=self.embed.copy(),
            wx=[w.copy() for w in self.wx],
            wh=[w.copy() for w in self.wh],
            b=[w.copy() for w in self.b],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
            w_v=None if self.w_v is None else self.w_v.copy(),
            b_v=None if self.b_v is None else self.b_v.copy(),
            class_embed=(None if self.class_embed is None
                         else self.class_embed.copy()),
            classes=self.classes,
        )

    def class_index(self, label: str) -> int:
        if self.classes is None:
            raise UnknownClassError("model has no class table")
        try:
            return self.classes.index(label)
        except ValueError:
            raise UnknownClassError(f"unknown class label {label!r}") from None


def init_params(cfg: LMConfig, n_phones: int,
                classes: tuple[str, ...] | None = None,
                rng: np.random.Generator | None = None) -> LMParameters:
    """Initialize parameters uniform in +-1/sqrt(fan-in), forget bias +1."""
    if rng is None:
        rng = np.random.default_rng(0)
    h, e = cfg.hidden_size, cfg.phone_embed_size

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    wx, wh, b = [], [], []
    for l in range(cfg.layers):
        in_dim = e if l == 0 else h
        wx.append(uniform((4 * h, in_dim), in_dim))
        wh.append(uniform((4 * h, h), h))
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0
        b.append(bias)

    w_v = b_v = class_embed = None
    if cfg.uses_meaning:
        out = cfg.half_size() if cfg.uses_class else h
        w_v = uniform((out, cfg.pca_d), cfg.pca_d)
        b_v = np.zeros(out)
    if cfg.uses_class:
        if classes is None or not classes:
            raise UnknownClassError("class conditioning needs class labels")
        out = cfg.half_size() if cfg.uses_meaning else h
        class_embed = uniform((len(classes), out), out)

    return LMParameters(
        embed=uniform((n_phones, e), e),
        wx=wx, wh=wh, b=b,
        w_out=uniform((n_phones, h), h),
        b_out=np.zeros(n_phones),
        w_v=w_v, b_v=b_v, class_embed=class_embed,
        classes=tuple(classes) if classes is not None else None,
    )


def _h0_batch(cfg: LMConfig, params: LMParameters,
              v: np.ndarray | None, cidx: np.ndarray | None,
              batch: int) -> np.ndarray:
    """Initial-state vectors (batch, hidden) from conditioning inputs."""
    h = cfg.hidden_size
    if cfg.condition_on == "nothing":
        if v is not None or cidx is not None:
            raise DimensionMismatchError("unconditional model got inputs")
        return np.zeros((batch, h))
    if cfg.uses_meaning:
        if v is None:
            raise DimensionMismatchError("meaning conditioning needs vectors")
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (batch, cfg.pca_d):
            raise DimensionMismatchError(
                f"meaning batch shape {v.shape} != ({batch}, {cfg.pca_d})")
    elif v is not None:
        raise DimensionMismatchError("model does not condition on meaning")
    if cfg.uses_class:
        if cidx is None:
            raise UnknownClassError("class conditioning needs class indices")
        cidx = np.asarray(cidx, dtype=np.int64)
        if np.any(cidx < 0) or np.any(cidx >= params.class_embed.shape[0]):
            raise UnknownClassError("class index out of range")
    elif cidx is not None:
        raise UnknownClassError("model does not condition on class")

    if cfg.condition_on == "meaning":
        return v @ params.w_v.T + params.b_v
    if cfg.condition_on == "class":
        return params.class_embed[cidx]
    cfg.half_size()
    return np.concatenate([params.class_embed[cidx],
                           v @ params.w_v.T + params.b_v], axis=1)


def condition_init(cfg: LMConfig, params: LMParameters,
                   v: np.ndarray | None = None,
                   c: str | None = None) -> np.ndarray:
    """Initial hidden state for one word given its conditioning inputs."""
    cidx = None
    if c is not None:
        cidx = np.array([params.class_index(c)])
    elif cfg.uses_class:
        raise UnknownClassError("class conditioning needs a label")
    vv = None
    if v is not None:
        vv = np.asarray(v, dtype=np.float64)[None, :]
    return _h0_batch(cfg, params, vv, cidx, 1)[0]


def _h0_backward(cfg: LMConfig, params: LMParameters, grads: dict,
                 dh0: np.ndarray, v: np.ndarray | None,
                 cidx: np.ndarray | None):
    if cfg.condition_on == "nothing":
        return
    if cfg.condition_on == "meaning":
        grads["w_v"] += dh0.T @ v
        grads["b_v"] += dh0.sum(axis=0)
        return
    if cfg.condition_on == "class":
        np.add.at(grads["class_embed"], cidx, dh0)
        return
    half = cfg.half_size()
    np.add.at(grads["class_embed"], cidx, dh0[:, :half])
    grads["w_v"] += dh0[:, half:].T @ v
    grads["b_v"] += dh0[:, half:].sum(axis=0)


def _dropout_mask(rng, shape, p):
    return (rng.random(shape) >= p) / (1.0 - p)


def forward(params: LMParameters, cfg: LMConfig, inputs: np.ndarray,
            v: np.ndarray | None = None, cidx: np.ndarray | None = None,
            drop_rng: np.random.Generator | None = None):
    """Run the network over a padded batch of input token indices.

    inputs is (batch, T) int64. Returns (logits (batch, T, phones), cache).
    Dropout is active only when drop_rng is given (training mode); it is
    applied to the embedded inputs and to each non-top layer's output,
    never to the initial state.
    """
    bsz, t_len = inputs.shape
    h = cfg.hidden_size
    p_drop = cfg.dropout if drop_rng is not None else 0.0

    if v is not None:
        v = np.asarray(v, dtype=np.float64)
    if cidx is not None:
        cidx = np.asarray(cidx, dtype=np.int64)
    h0 = _h0_batch(cfg, params, v, cidx, bsz)
    conditioned = ([0] if cfg.condition_layers == "first"
                   else list(range(cfg.layers)))
    init_h = np.zeros((cfg.layers, bsz, h))
    init_c = np.zeros((cfg.layers, bsz, h))
    for l in conditioned:
        if cfg.condition_state in ("both", "hidden"):
            init_h[l] = h0
        if cfg.condition_state in ("both", "cell"):
            init_c[l] = h0

    x = params.embed[inputs]
    embed_drop = None
    if p_drop > 0:
        embed_drop = _dropout_mask(drop_rng, x.shape, p_drop)
        x = x * embed_drop
    cache = {"inputs": inputs, "v": v, "cidx": cidx, "layers": [],
             "init_h": init_h, "init_c": init_c, "conditioned": conditioned,
             "embed_drop": embed_drop}

    for l in range(cfg.layers):
        wx, wh, b = params.wx[l], params.wh[l], params.b[l]
        i_g = np.empty((bsz, t_len, h))
        f_g = np.empty((bsz, t_len, h))
        g_g = np.empty((bsz, t_len, h))
        o_g = np.empty((bsz, t_len, h))
        cs = np.empty((bsz, t_len, h))
        tcs = np.empty((bsz, t_len, h))
        hs = np.empty((bsz, t_len, h))
        h_t = init_h[l]
        c_t = init_c[l]
        for t in range(t_len):
            a = x[:, t] @ wx.T + h_t @ wh.T + b
            i_t = expit(a[:, :h])
            f_t = expit(a[:, h:2 * h])
            g_t = np.tanh(a[:, 2 * h:3 * h])
            o_t = expit(a[:, 3 * h:])
            c_t = f_t * c_t + i_t * g_t
            tc_t = np.tanh(c_t)
            h_t = o_t * tc_t
            i_g[:, t], f_g[:, t], g_g[:, t], o_g[:, t] = i_t, f_t, g_t, o_t
            cs[:, t], tcs[:, t], hs[:, t] = c_t, tc_t, h_t
        layer_cache = {"x": x, "i": i_g, "f": f_g, "g": g_g, "o": o_g,
                       "c": cs, "tc": tcs, "h": hs, "drop": None}
        out = hs
        if p_drop > 0 and l < cfg.layers - 1:
            m = _dropout_mask(drop_rng, out.shape, p_drop)
            layer_cache["drop"] = m
            out = out * m
        cache["layers"].append(layer_cache)
        x = out

    logits = x @ params.w_out.T + params.b_out
    cache["top"] = x
    return logits, cache


def log_softmax2(logits: np.ndarray) -> np.ndarray:
    """Row-wise log base-2 softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return (z - lse) / LN2


def loss_and_grads(params: LMParameters, cfg: LMConfig, inputs: np.ndarray,
                   targets: np.ndarray, mask: np.ndarray,
                   v: np.ndarray | None = None,
                   cidx: np.ndarray | None = None,
                   drop_rng: np.random.Generator | None = None):
    """Total code length in bits of targets, plus gradients of it.

    Returns (total_bits, total_tokens, grads) where grads maps parameter
    names (as in named_arrays) to arrays of matching shape.
    """
    logits, cache = forward(params, cfg, inputs, v=v, cidx=cidx,
                            drop_rng=drop_rng)
    logp2 = log_softmax2(logits)
    bsz, t_len, n_out = logits.shape
    rows = np.arange(bsz)[:, None], np.arange(t_len)[None, :], targets
    total_bits = float(-(logp2[rows] * mask).sum())
    total_tokens = float(mask.sum())

    dlogits = np.exp(logp2 * LN2)
    dlogits[rows] -= 1.0
    dlogits *= mask[:, :, None] / LN2

    grads = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    top = cache["top"]
    grads["w_out"] += np.einsum("btv,bth->vh", dlogits, top)
    grads["b_out"] += dlogits.sum(axis=(0, 1))
    dx = dlogits @ params.w_out

    h = cfg.hidden_size
    dh0_cond = np.zeros((bsz, h))
    for l in range(cfg.layers - 1, -1, -1):
        lc = cache["layers"][l]
        if lc["drop"] is not None:
            dx = dx * lc["drop"]
        wx, wh = params.wx[l], params.wh[l]
        d_in = np.zeros_like(lc["x"])
        dh_rec = np.zeros((bsz, h))
        dc_rec = np.zeros((bsz, h))
        for t in range(t_len - 1, -1, -1):
            i_t, f_t = lc["i"][:, t], lc["f"][:, t]
            g_t, o_t = lc["g"][:, t], lc["o"][:, t]
            tc_t = lc["tc"][:, t]
            c_prev = lc["c"][:, t - 1] if t > 0 else cache["init_c"][l]
            h_prev = lc["h"][:, t - 1] if t > 0 else cache["init_h"][l]

            dh = dx[:, t] + dh_rec
            do = dh * tc_t
            dc = dc_rec + dh * o_t * (1.0 - tc_t ** 2)
            di = dc * g_t
            dg = dc * i_t
            df = dc * c_prev
            dc_rec = dc * f_t
            da = np.concatenate([di * i_t * (1 - i_t),
                                 df * f_t * (1 - f_t),
                                 dg * (1 - g_t ** 2),
                                 do * o_t * (1 - o_t)], axis=1)
            grads[f"wx{l}"] += da.T @ lc["x"][:, t]
            grads[f"wh{l}"] += da.T @ h_prev
            grads[f"b{l}"] += da.sum(axis=0)
            d_in[:, t] = da @ wx
            dh_rec = da @ wh
        if l in cache["conditioned"]:
            if cfg.condition_state in ("both", "hidden"):
                dh0_cond += dh_rec
            if cfg.condition_state in ("both", "cell"):
                dh0_cond += dc_rec
        dx = d_in

    if cache["embed_drop"] is not None:
        dx = dx * cache["embed_drop"]
    np.add.at(grads["embed"], cache["inputs"], dx)

    _h0_backward(cfg, params, grads, dh0_cond, cache["v"], cache["cidx"])
    return total_bits, total_tokens, grads


@dataclass(frozen=True)
class PerWordLoss:
    """Code length of one sign under a model: total bits over phones + EOS."""

    key: tuple
    total_bits: float
    token_count: int
    position_bits: np.ndarray

    def __post_init__(self):
        if abs(self.total_bits - float(self.position_bits.sum())) > 1e-9:
            raise ValueError("total_bits does not match position bits")
        if self.token_count != self.position_bits.shape[0]:
            raise ValueError("token_count does not match position bits")


def micro_bits_per_phone(losses) -> float:
    """Micro-averaged bits per token: sum of bits over sum of token counts."""
    total = sum(pl.total_bits for pl in losses)
    tokens = sum(pl.token_count for pl in losses)
    return total / tokens


def encode_signs(signs, inventory: PhoneInventory) -> list[np.ndarray]:
    encoded = []
    for s in signs:
        try:
            encoded.append(inventory.encode(s.form))
        except KeyError as exc:
            raise UnknownPhoneError(
                f"sign {s.lemma!r} has phone outside inventory: {exc}"
            ) from exc
    return encoded


def pack_batch(encoded: list[np.ndarray], eos: int):
    """Pad encoded forms into (inputs, targets, mask) batch arrays.

    Inputs are EOS + phones (the end marker doubles as start-of-word);
    targets are phones + EOS; padding positions carry zero mask.
    """
    bsz = len(encoded)
    t_len = max(len(e) for e in encoded) + 1
    inputs = np.full((bsz, t_len), eos, dtype=np.int64)
    targets = np.full((bsz, t_len), eos, dtype=np.int64)
    mask = np.zeros((bsz, t_len))
    for j, e in enumerate(encoded):
        n = len(e)
        inputs[j, 1:n + 1] = e
        targets[j, :n] = e
        mask[j, :n + 1] = 1.0
    return inputs, targets, mask


def evaluate(params: LMParameters, cfg: LMConfig, signs,
             inventory: PhoneInventory, v: np.ndarray | None = None,
             batch_size: int = 256) -> list[PerWordLoss]:
    """Per-word code lengths in evaluation mode (no dropout).

    v is an (n, pca_d) array aligned with signs when the model conditions
    on meaning; class indices are looked up from each sign's POS label.
    """
    signs = list(signs)
    if cfg.uses_meaning:
        if v is None or len(v) != len(signs):
            raise DimensionMismatchError("need one meaning vector per sign")
        v = np.asarray(v, dtype=np.float64)
    elif v is not None:
        raise DimensionMismatchError("model does not condition on meaning")
    cidx_all = None
    if cfg.uses_class:
        cidx_all = np.array([params.class_index(s.pos) for s in signs],
                            dtype=np.int64)

    encoded = encode_signs(signs, inventory)
    out: list[PerWordLoss] = []
    for lo in range(0, len(signs), batch_size):
        hi = min(lo + batch_size, len(signs))
        chunk = encoded[lo:hi]
        inputs, targets, mask = pack_batch(chunk, inventory.eos_index)
        logits, _ = forward(params, cfg, inputs,
                            v=None if v is None else v[lo:hi],
                            cidx=None if cidx_all is None else cidx_all[lo:hi])
        logp2 = log_softmax2(logits)
        bsz, t_len = targets.shape
        picked = logp2[np.arange(bsz)[:, None], np.arange(t_len)[None, :],
                       targets]
        for j in range(bsz):
            n = len(chunk[j]) + 1
            bits = -picked[j, :n]
            out.append(PerWordLoss(key=signs[lo + j].key,
                                   total_bits=float(bits.sum()),
                                   token_count=n,
                                   position_bits=bits))
    return out


def log_prob(params: LMParameters, cfg: LMConfig, sign: Sign,
             inventory: PhoneInventory, v: np.ndarray | None = None,
             c: str | None = None) -> np.ndarray:
    """Per-position log2-probabilities of one sign's form plus EOS."""
    vv = None
    if v is not None:
        vv = np.asarray(v, dtype=np.float64)[None, :]
    cidx = None
    if c is not None:
        cidx = np.array([params.class_index(c)], dtype=np.int64)
    elif cfg.uses_class:
        cidx = np.array([params.class_index(sign.pos)], dtype=np.int64)
    encoded = encode_signs([sign], inventory)
    inputs, targets, _ = pack_batch(encoded, inventory.eos_index)
    logits, _ = forward(params, cfg, inputs, v=vv, cidx=cidx)
    logp2 = log_softmax2(logits)
    return logp2[0, np.arange(targets.shape[1]), targets[0]]
