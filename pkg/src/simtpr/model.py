"""The network stack: encoder, projector, transition variants, heads.

All components are free functions over a `ModelBundle`, a flat named
parameter dictionary plus batch-norm running statistics. Three transition
variants are available: a causal transformer (default), a bidirectional
transformer over partially masked inputs, and a 2-layer GRU.

The demonstration pipeline interleaves state and action tokens into one
trajectory sequence; latent predictions are read off the action-token
positions and action logits off the state-token positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ndgrad import Tensor, ops, tensor

BN_MOMENTUM = 0.9
BN_EPS = 1e-5

TRANSITION_KINDS = ("causal", "non-causal", "gru")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 64
    obs_channels: int = 1
    obs_height: int = 16
    obs_width: int = 16
    encoder_channels: tuple = (16, 32, 32)
    encoder_kernel: int = 3
    encoder_stride: int = 2
    proj_hidden: int = 0      # 0 -> latent_dim
    pred_hidden: int = 0      # 0 -> latent_dim
    action_hidden: int = 0    # 0 -> latent_dim
    n_heads: int = 2
    n_layers: int = 2
    mlp_hidden: int = 0       # 0 -> 4 * latent_dim
    n_actions: int = 5
    max_t: int = 10
    transition: str = "causal"
    mask_ratio: float = 0.5
    bn_proj: bool = False
    bn_pred: bool = True
    bn_encoder: bool = False
    precision: str = "f32"

    def __post_init__(self):
        if self.transition not in TRANSITION_KINDS:
            raise ValueError(f"unknown transition kind {self.transition!r}")
        if self.latent_dim % self.n_heads != 0:
            raise ValueError("latent_dim must be divisible by n_heads")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def proj_hidden_dim(self) -> int:
        return self.proj_hidden or self.latent_dim

    @property
    def pred_hidden_dim(self) -> int:
        return self.pred_hidden or self.latent_dim

    @property
    def action_hidden_dim(self) -> int:
        return self.action_hidden or self.latent_dim

    @property
    def mlp_hidden_dim(self) -> int:
        return self.mlp_hidden or 4 * self.latent_dim

    @property
    def feature_dim(self) -> int:
        """Flattened encoder output width, a pure function of the config."""
        h, w = self.obs_height, self.obs_width
        k, s = self.encoder_kernel, self.encoder_stride
        pad = k // 2
        for _ in self.encoder_channels:
            h = (h + 2 * pad - k) // s + 1
            w = (w + 2 * pad - k) // s + 1
        return self.encoder_channels[-1] * h * w


@dataclass
class ModelBundle:
    config: ModelConfig
    params: dict = field(default_factory=dict)
    bn_state: dict = field(default_factory=dict)

    def param_items(self):
        return sorted(self.params.items())

    def astype(self, precision: str) -> "ModelBundle":
        cfg = replace(self.config, precision=precision)
        params = {k: tensor(v.data.astype(cfg.dtype), requires_grad=True)
                  for k, v in self.params.items()}
        bn = {k: {"mean": v["mean"].astype(cfg.dtype), "var": v["var"].astype(cfg.dtype)}
              for k, v in self.bn_state.items()}
        return ModelBundle(cfg, params, bn)


@dataclass
class StateForward:
    z1: Tensor
    z2: Tensor
    q1: Tensor
    q2: Tensor
    mask1: np.ndarray | None = None
    mask2: np.ndarray | None = None


@dataclass
class DemoForward:
    z1: Tensor
    z2: Tensor
    q1: Tensor
    q2: Tensor
    logits1: Tensor
    logits2: Tensor


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _uniform_fan_in(rng, fan_in: int, shape, dtype) -> np.ndarray:
    # fan-in-scaled uniform, the torch default for linear/conv layers
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_bundle(config: ModelConfig, rng: np.random.Generator) -> ModelBundle:
    """Create all parameters in a fixed order from the init stream.

    Linear/conv weights: uniform with fan-in scaling; biases zero;
    embedding-style tables: Normal(0, 0.02); norms: gamma 1, beta 0.
    """
    dt = config.dtype
    p: dict[str, Tensor] = {}
    bn_state: dict[str, dict] = {}

    def param(name, arr):
        p[name] = tensor(arr, requires_grad=True)

    def linear(prefix, n_in, n_out):
        param(f"{prefix}.w", _uniform_fan_in(rng, n_in, (n_in, n_out), dt))
        param(f"{prefix}.b", np.zeros(n_out, dtype=dt))

    def norm_affine(prefix, width):
        param(f"{prefix}.gamma", np.ones(width, dtype=dt))
        param(f"{prefix}.beta", np.zeros(width, dtype=dt))

    def table(name, shape):
        param(name, (rng.standard_normal(shape) * 0.02).astype(dt))

    # encoder: conv -> ReLU per block, optional per-channel BN in between
    k = config.encoder_kernel
    c_in = config.obs_channels
    for i, c_out in enumerate(config.encoder_channels):
        param(f"enc.conv{i}.w",
              _uniform_fan_in(rng, c_in * k * k, (c_out, c_in, k, k), dt))
        param(f"enc.conv{i}.b", np.zeros(c_out, dtype=dt))
        if config.bn_encoder:
            norm_affine(f"enc.bn{i}", c_out)
            bn_state[f"enc.bn{i}"] = _fresh_bn(c_out, dt)
        c_in = c_out

    # projector
    f = config.feature_dim
    ph = config.proj_hidden_dim
    linear("proj.l1", f, ph)
    if config.bn_proj:
        norm_affine("proj.bn", ph)
        bn_state["proj.bn"] = _fresh_bn(ph, dt)
    linear("proj.l2", ph, config.latent_dim)

    # transition
    d = config.latent_dim
    if config.transition in ("causal", "non-causal"):
        table("trans.pos", (2 * config.max_t, d))
        if config.transition == "non-causal":
            table("trans.mask_token", (d,))
        for l in range(config.n_layers):
            norm_affine(f"trans.l{l}.ln1", d)
            for nm in ("wq", "wk", "wv", "wo"):
                param(f"trans.l{l}.attn.{nm}", _uniform_fan_in(rng, d, (d, d), dt))
            for nm in ("bq", "bk", "bv", "bo"):
                param(f"trans.l{l}.attn.{nm}", np.zeros(d, dtype=dt))
            norm_affine(f"trans.l{l}.ln2", d)
            linear(f"trans.l{l}.mlp.l1", d, config.mlp_hidden_dim)
            linear(f"trans.l{l}.mlp.l2", config.mlp_hidden_dim, d)
    else:  # gru
        for l in range(config.n_layers):
            param(f"gru.l{l}.wx", _uniform_fan_in(rng, d, (d, 3 * d), dt))
            param(f"gru.l{l}.wh", _uniform_fan_in(rng, d, (d, 3 * d), dt))
            param(f"gru.l{l}.bx", np.zeros(3 * d, dtype=dt))
            param(f"gru.l{l}.bh", np.zeros(3 * d, dtype=dt))

    # predictor
    qh = config.pred_hidden_dim
    linear("pred.l1", d, qh)
    if config.bn_pred:
        norm_affine("pred.bn", qh)
        bn_state["pred.bn"] = _fresh_bn(qh, dt)
    linear("pred.l2", qh, d)

    # action embedding and head (demonstration pipeline)
    table("act_embed.table", (config.n_actions, d))
    ah = config.action_hidden_dim
    linear("act_head.l1", d, ah)
    linear("act_head.l2", ah, config.n_actions)

    return ModelBundle(config, p, bn_state)


def _fresh_bn(width: int, dtype) -> dict:
    return {"mean": np.zeros(width, dtype=dtype), "var": np.ones(width, dtype=dtype)}


def parameter_count(bundle: ModelBundle) -> dict[str, int]:
    """Total parameter sizes grouped by component prefix."""
    counts: dict[str, int] = {}
    for name, t in bundle.params.items():
        prefix = name.split(".")[0]
        counts[prefix] = counts.get(prefix, 0) + t.size
    return counts


# ---------------------------------------------------------------------------
# shared building blocks
# ---------------------------------------------------------------------------

def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, w), b)


def _affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return ops.add(ops.mul(x, gamma), beta)


def _batch_norm_layer(bundle: ModelBundle, key: str, x: Tensor, mode: str) -> Tensor:
    """BN over axis 0 of [M, F]; training mode updates the running stats."""
    state = bundle.bn_state[key]
    if mode == "train":
        out = ops.batch_norm(x, eps=BN_EPS)
        mu, var = ops.batch_stats(x.data)
        state["mean"] = BN_MOMENTUM * state["mean"] + (1.0 - BN_MOMENTUM) * mu
        state["var"] = BN_MOMENTUM * state["var"] + (1.0 - BN_MOMENTUM) * var
    else:
        out = ops.batch_norm(x, running=(state["mean"], state["var"]), eps=BN_EPS)
    g = bundle.params[f"{key}.gamma"]
    b = bundle.params[f"{key}.beta"]
    return _affine(out, g, b)


def _batch_norm_conv(bundle: ModelBundle, key: str, x: Tensor, mode: str) -> Tensor:
    """Per-channel BN for conv maps [M, C, H, W], via the column primitive."""
    m, c, h, w = x.shape
    cols = ops.reshape(ops.transpose(x, (0, 2, 3, 1)), (m * h * w, c))
    out = _batch_norm_layer(bundle, key, cols, mode)
    return ops.transpose(ops.reshape(out, (m, h, w, c)), (0, 3, 1, 2))


def _mlp_head(bundle: ModelBundle, prefix: str, bn_key: str | None, x2d: Tensor,
              mode: str) -> Tensor:
    """One-hidden-layer MLP with ReLU; optional BN after the first layer."""
    h = _linear(x2d, bundle.params[f"{prefix}.l1.w"], bundle.params[f"{prefix}.l1.b"])
    if bn_key is not None:
        h = _batch_norm_layer(bundle, bn_key, h, mode)
    h = ops.relu(h)
    return _linear(h, bundle.params[f"{prefix}.l2.w"], bundle.params[f"{prefix}.l2.b"])


# ---------------------------------------------------------------------------
# components
# ---------------------------------------------------------------------------

def encode(bundle: ModelBundle, x: "Tensor | np.ndarray", mode: str = "train") -> Tensor:
    """Convolutional encoder applied per frame: [N,T,C,H,W] -> [N,T,F]."""
    cfg = bundle.config
    if not isinstance(x, Tensor):
        x = tensor(np.asarray(x, dtype=cfg.dtype))
    n, t = x.shape[0], x.shape[1]
    h = ops.reshape(x, (n * t,) + tuple(x.shape[2:]))
    pad = cfg.encoder_kernel // 2
    for i, c_out in enumerate(cfg.encoder_channels):
        w = bundle.params[f"enc.conv{i}.w"]
        b = bundle.params[f"enc.conv{i}.b"]
        h = ops.conv2d(h, w, stride=cfg.encoder_stride, pad=pad)
        h = ops.add(h, ops.reshape(b, (c_out, 1, 1)))
        if cfg.bn_encoder:
            h = _batch_norm_conv(bundle, f"enc.bn{i}", h, mode)
        h = ops.relu(h)
    h = ops.reshape(h, (n * t, cfg.feature_dim))
    return ops.reshape(h, (n, t, cfg.feature_dim))


def project(bundle: ModelBundle, features: Tensor, mode: str = "train") -> Tensor:
    """Map encoder features to the latent space: [N,T,F] -> [N,T,d]."""
    cfg = bundle.config
    n, t, f = features.shape
    if f != cfg.feature_dim:
        raise ValueError(f"feature width {f} does not match config {cfg.feature_dim}")
    flat = ops.reshape(features, (n * t, f))
    bn_key = "proj.bn" if cfg.bn_proj else None
    out = _mlp_head(bundle, "proj", bn_key, flat, mode)
    return ops.reshape(out, (n, t, cfg.latent_dim))


def predict(bundle: ModelBundle, context: Tensor, mode: str = "train") -> Tensor:
    """Latent predictor MLP over [N,T,d] (BN between layers by default)."""
    cfg = bundle.config
    n, t, d = context.shape
    flat = ops.reshape(context, (n * t, d))
    bn_key = "pred.bn" if cfg.bn_pred else None
    out = _mlp_head(bundle, "pred", bn_key, flat, mode)
    return ops.reshape(out, (n, t, d))


def _attention_block(bundle: ModelBundle, layer: int, x: Tensor,
                     mask: np.ndarray | None) -> Tensor:
    cfg = bundle.config
    n, s, d = x.shape
    nh = cfg.n_heads
    hd = d // nh
    pfx = f"trans.l{layer}"
    pr = bundle.params

    h = ops.layer_norm(x)
    h = _affine(h, pr[f"{pfx}.ln1.gamma"], pr[f"{pfx}.ln1.beta"])

    def split_heads(v):
        v = ops.reshape(v, (n, s, nh, hd))
        return ops.transpose(v, (0, 2, 1, 3))

    q = split_heads(_linear(h, pr[f"{pfx}.attn.wq"], pr[f"{pfx}.attn.bq"]))
    k = split_heads(_linear(h, pr[f"{pfx}.attn.wk"], pr[f"{pfx}.attn.bk"]))
    v = split_heads(_linear(h, pr[f"{pfx}.attn.wv"], pr[f"{pfx}.attn.bv"]))

    scores = ops.smul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    attn = ops.softmax(scores, mask=mask)
    ctx = ops.matmul(attn, v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (n, s, d))
    x = ops.add(x, _linear(ctx, pr[f"{pfx}.attn.wo"], pr[f"{pfx}.attn.bo"]))

    h = ops.layer_norm(x)
    h = _affine(h, pr[f"{pfx}.ln2.gamma"], pr[f"{pfx}.ln2.beta"])
    h = ops.gelu(_linear(h, pr[f"{pfx}.mlp.l1.w"], pr[f"{pfx}.mlp.l1.b"]))
    h = _linear(h, pr[f"{pfx}.mlp.l2.w"], pr[f"{pfx}.mlp.l2.b"])
    return ops.add(x, h)


def _add_positions(bundle: ModelBundle, x: Tensor) -> Tensor:
    s = x.shape[1]
    pos = bundle.params["trans.pos"]
    if s > pos.shape[0]:
        raise ValueError(f"sequence length {s} exceeds positional table {pos.shape[0]}")
    return ops.add(x, ops.slice_(pos, (slice(0, s),)))


def transition_causal(bundle: ModelBundle, z: Tensor) -> Tensor:
    """Decoder-style blocks: position t attends to positions <= t."""
    cfg = bundle.config
    x = _add_positions(bundle, z)
    mask = ops.causal_mask(z.shape[1], dtype=cfg.dtype)
    for l in range(cfg.n_layers):
        x = _attention_block(bundle, l, x, mask)
    return x


def transition_noncausal(bundle: ModelBundle, z: Tensor, mask_ratio: float,
                         rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """Bidirectional blocks over inputs with a masked token subset.

    Per sequence, ceil(mask_ratio * T) positions are replaced by a learned
    mask token before the positional embedding. Returns (context, mask)
    with mask a boolean [N, T] marking the replaced positions.
    """
    cfg = bundle.config
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must be in (0, 1)")
    n, t, d = z.shape
    m = int(np.ceil(mask_ratio * t))
    masked = np.zeros((n, t), dtype=bool)
    for i in range(n):
        masked[i, rng.permutation(t)[:m]] = True

    keep = tensor((~masked)[:, :, None].astype(cfg.dtype))
    fill = tensor(masked[:, :, None].astype(cfg.dtype))
    token = ops.reshape(bundle.params["trans.mask_token"], (1, 1, d))
    x = ops.add(ops.mul(z, keep), ops.mul(token, fill))

    x = _add_positions(bundle, x)
    for l in range(cfg.n_layers):
        x = _attention_block(bundle, l, x, None)
    return x, masked


def transition_gru(bundle: ModelBundle, z: Tensor) -> Tensor:
    """2-layer GRU over time, zero initial hidden state."""
    cfg = bundle.config
    n, t, d = z.shape
    pr = bundle.params
    layer_in = z
    for l in range(cfg.n_layers):
        wx, wh = pr[f"gru.l{l}.wx"], pr[f"gru.l{l}.wh"]
        bx, bh = pr[f"gru.l{l}.bx"], pr[f"gru.l{l}.bh"]
        h = tensor(np.zeros((n, d), dtype=cfg.dtype))
        steps = []
        for step in range(t):
            x_t = ops.reshape(ops.slice_(layer_in, (slice(None), step)), (n, d))
            gx = _linear(x_t, wx, bx)
            gh = _linear(h, wh, bh)
            r = ops.sigmoid(ops.add(ops.slice_(gx, (slice(None), slice(0, d))),
                                    ops.slice_(gh, (slice(None), slice(0, d)))))
            u = ops.sigmoid(ops.add(ops.slice_(gx, (slice(None), slice(d, 2 * d))),
                                    ops.slice_(gh, (slice(None), slice(d, 2 * d)))))
            cand = ops.tanh(ops.add(
                ops.slice_(gx, (slice(None), slice(2 * d, 3 * d))),
                ops.mul(r, ops.slice_(gh, (slice(None), slice(2 * d, 3 * d))))))
            # h' = (1 - u) * cand + u * h, written as cand + u * (h - cand)
            h = ops.add(cand, ops.mul(u, ops.sub(h, cand)))
            steps.append(ops.reshape(h, (n, 1, d)))
        layer_in = ops.concat(steps, axis=1)
    return layer_in


def embed_actions(bundle: ModelBundle, actions: np.ndarray) -> Tensor:
    return ops.embedding_lookup(bundle.params["act_embed.table"], actions)


def action_head(bundle: ModelBundle, context: Tensor) -> Tensor:
    """Action logits from state-token contexts: [N,T,d] -> [N,T,n_a]."""
    cfg = bundle.config
    n, t, d = context.shape
    flat = ops.reshape(context, (n * t, d))
    out = _mlp_head(bundle, "act_head", None, flat, mode="eval")
    return ops.reshape(out, (n, t, cfg.n_actions))


def interleave_trajectory(z: Tensor, y: Tensor) -> Tensor:
    """[z_1, y_1, ..., z_T, y_T]: two [N,T,d] inputs -> [N,2T,d]."""
    if z.shape != y.shape:
        raise ValueError(f"interleave shapes differ: {z.shape} vs {y.shape}")
    n, t, d = z.shape
    stacked = ops.concat([ops.reshape(z, (n, t, 1, d)),
                          ops.reshape(y, (n, t, 1, d))], axis=2)
    return ops.reshape(stacked, (n, 2 * t, d))


def deinterleave(tau: Tensor) -> tuple[Tensor, Tensor]:
    """Inverse of `interleave_trajectory`."""
    n, s, d = tau.shape
    t = s // 2
    both = ops.reshape(tau, (n, t, 2, d))
    z = ops.reshape(ops.slice_(both, (slice(None), slice(None), 0)), (n, t, d))
    y = ops.reshape(ops.slice_(both, (slice(None), slice(None), 1)), (n, t, d))
    return z, y


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def run_transition(bundle: ModelBundle, z: Tensor, mode: str = "train",
                   rng: np.random.Generator | None = None,
                   mask_ratio: float | None = None):
    """Dispatch on the configured transition kind.

    Returns (context, mask) where mask is None for causal variants.
    """
    kind = bundle.config.transition
    if kind == "causal":
        return transition_causal(bundle, z), None
    if kind == "gru":
        return transition_gru(bundle, z), None
    if rng is None:
        raise ValueError("non-causal transition needs an rng for masking")
    ratio = bundle.config.mask_ratio if mask_ratio is None else mask_ratio
    return transition_noncausal(bundle, z, ratio, rng)


def forward_state(bundle: ModelBundle, view1, view2, mode: str = "train",
                  rng: np.random.Generator | None = None) -> StateForward:
    """The state pipeline: z = g(f(x)), q = p(h(z)), all row-normalized."""
    z1 = project(bundle, encode(bundle, view1, mode), mode)
    z2 = project(bundle, encode(bundle, view2, mode), mode)
    c1, m1 = run_transition(bundle, z1, mode, rng)
    c2, m2 = run_transition(bundle, z2, mode, rng)
    q1 = predict(bundle, c1, mode)
    q2 = predict(bundle, c2, mode)
    return StateForward(
        z1=ops.l2_normalize(z1), z2=ops.l2_normalize(z2),
        q1=ops.l2_normalize(q1), q2=ops.l2_normalize(q2),
        mask1=m1, mask2=m2)


def forward_demo(bundle: ModelBundle, view1, view2, actions: np.ndarray,
                 mode: str = "train") -> DemoForward:
    """The demonstration pipeline over interleaved state/action tokens.

    Latent predictions are read from action-token positions (even, 1-based)
    and action logits from state-token positions (odd, 1-based).
    """
    if bundle.config.transition != "causal":
        raise ValueError("the demonstration pipeline requires the causal transition")
    actions = np.asarray(actions)
    if actions.size and (actions.min() < 0 or actions.max() >= bundle.config.n_actions):
        raise ValueError("action index out of range")

    z1 = project(bundle, encode(bundle, view1, mode), mode)
    z2 = project(bundle, encode(bundle, view2, mode), mode)
    y = embed_actions(bundle, actions)
    c1 = transition_causal(bundle, interleave_trajectory(z1, y))
    c2 = transition_causal(bundle, interleave_trajectory(z2, y))

    action_positions = (slice(None), slice(1, None, 2))  # 0-based odd
    state_positions = (slice(None), slice(0, None, 2))   # 0-based even
    q1 = predict(bundle, ops.slice_(c1, action_positions), mode)
    q2 = predict(bundle, ops.slice_(c2, action_positions), mode)
    l1 = action_head(bundle, ops.slice_(c1, state_positions))
    l2 = action_head(bundle, ops.slice_(c2, state_positions))
    return DemoForward(
        z1=ops.l2_normalize(z1), z2=ops.l2_normalize(z2),
        q1=ops.l2_normalize(q1), q2=ops.l2_normalize(q2),
        logits1=l1, logits2=l2)
