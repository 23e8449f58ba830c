"""Optimization loop: AdamW with decoupled decay, clipping, checkpoints.

Deterministic by construction: a master seed fans out into named
sub-streams (data, the two augmentation views, init, masking) so that
toggling one feature never perturbs another stream, and checkpoints carry
the stream states so a resumed run continues the exact sequence.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .augment import make_views
from .config import ConfigError, ExperimentConfig, resolve
from .losses import total_loss
from .model import ModelBundle, ModelConfig, forward_demo, forward_state, init_bundle
from .ndgrad import Tensor, backward, tensor
from .synthdata import Dataset, sample_batch

STREAM_IDS = {"data": 0, "aug1": 1, "aug2": 2, "init": 3, "mask": 4, "diag": 5, "probe": 6}

METRICS_COLUMNS = [
    "epoch", "step", "loss_total", "loss_sim", "loss_decorr", "loss_decorr_on",
    "loss_decorr_off", "loss_contrastive", "loss_action", "loss_recon",
    "feat_rank", "cos_k1", "cos_k3", "cos_k5", "wall_secs",
]

CKPT_MAGIC = b"STPRCKPT1\n"


class NumericError(RuntimeError):
    """Non-finite loss or gradient; carries the failing step."""

    def __init__(self, message: str, step: int | None = None, parameter: str | None = None):
        self.step = step
        self.parameter = parameter
        super().__init__(message)


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint."""


def make_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_IDS[name],)))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.5e-5
    weight_decay: float = 1e-6


@dataclass
class OptimizerState:
    hyper: AdamHyper
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState) -> None:
    """Decoupled-weight-decay Adam update, in place, over the given grads.

    Parameters without a gradient this step are left untouched (no decay).
    """
    hp = state.hyper
    t = state.step_count + 1
    bc1 = 1.0 - hp.beta1 ** t
    bc2 = 1.0 - hp.beta2 ** t
    for name in sorted(grads):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", parameter=name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - hp.beta1) * (g - m)
        v += (1.0 - hp.beta2) * (g * g - v)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (hp.lr * (m_hat / (np.sqrt(v_hat) + hp.eps)
                            + hp.weight_decay * p.data)).astype(p.dtype)
    state.step_count = t


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    epoch: int
    step: int
    loss_total: float | None = None
    loss_sim: float | None = None
    loss_decorr: float | None = None
    loss_decorr_on: float | None = None
    loss_decorr_off: float | None = None
    loss_contrastive: float | None = None
    loss_action: float | None = None
    loss_recon: float | None = None
    feat_rank: int | None = None
    cos_k1: float | None = None
    cos_k3: float | None = None
    cos_k5: float | None = None
    wall_secs: float | None = None

    def to_row(self) -> str:
        cells = []
        for col in METRICS_COLUMNS:
            val = getattr(self, col)
            if val is None:
                cells.append("")
            elif isinstance(val, int):
                cells.append(str(val))
            else:
                cells.append(repr(float(val)))
        return ",".join(cells)


def write_metrics_csv(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for rec in records:
            fh.write(rec.to_row() + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    bundle: ModelBundle
    opt: OptimizerState
    rngs: dict
    step: int


def _dtype_tag(dtype) -> str:
    return "f64" if np.dtype(dtype) == np.float64 else "f32"


def _np_dtype(tag: str):
    return np.dtype("<f8") if tag == "f64" else np.dtype("<f4")


def save_checkpoint(state: TrainState, config: ExperimentConfig, path: str) -> None:
    """Single file: JSON header + raw little-endian tensors + trailing CRC32."""
    entries = []
    payloads = []

    def put(name, arr):
        arr = np.ascontiguousarray(arr)
        tag = _dtype_tag(arr.dtype)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        payloads.append(arr.astype(_np_dtype(tag)).tobytes())

    for name, t in state.bundle.param_items():
        put(f"param.{name}", t.data)
    for name in sorted(state.opt.m):
        put(f"opt.m.{name}", state.opt.m[name])
        put(f"opt.v.{name}", state.opt.v[name])
    for key in sorted(state.bundle.bn_state):
        put(f"bn.{key}.mean", state.bundle.bn_state[key]["mean"])
        put(f"bn.{key}.var", state.bundle.bn_state[key]["var"])

    header = {
        "config": config.flat,
        "step": state.step,
        "opt_step": state.opt.step_count,
        "model": {"obs_channels": state.bundle.config.obs_channels,
                  "obs_height": state.bundle.config.obs_height,
                  "obs_width": state.bundle.config.obs_width,
                  "n_actions": state.bundle.config.n_actions},
        "rng_states": {name: rng.bit_generator.state for name, rng in state.rngs.items()},
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    body = bytearray()
    body += CKPT_MAGIC
    body += len(header_bytes).to_bytes(8, "little")
    body += header_bytes
    for payload in payloads:
        body += payload
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(bytes(body))
        fh.write(crc.to_bytes(4, "little"))


def load_checkpoint(path: str) -> tuple[TrainState, ExperimentConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CKPT_MAGIC) + 12 or not raw.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file")
    body, crc_bytes = raw[:-4], raw[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != int.from_bytes(crc_bytes, "little"):
        raise CheckpointError("CRC mismatch: checkpoint corrupted")

    off = len(CKPT_MAGIC)
    header_len = int.from_bytes(body[off:off + 8], "little")
    off += 8
    header = json.loads(body[off:off + header_len].decode())
    off += header_len

    config = resolve(header["config"])
    model_cfg = config.model_config(**header["model"])

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        dt = _np_dtype(entry["dtype"])
        nbytes = count * dt.itemsize
        arr = np.frombuffer(body, dtype=dt, count=count, offset=off).reshape(shape)
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("=")).copy()
        off += nbytes
    if off != len(body):
        raise CheckpointError("checkpoint payload size mismatch")

    params = {}
    bn_state: dict[str, dict] = {}
    opt = OptimizerState(hyper=_hyper_from_config(config))
    for name, arr in tensors.items():
        if name.startswith("param."):
            params[name[len("param."):]] = tensor(arr, requires_grad=True)
        elif name.startswith("opt.m."):
            opt.m[name[len("opt.m."):]] = arr
        elif name.startswith("opt.v."):
            opt.v[name[len("opt.v."):]] = arr
        elif name.startswith("bn."):
            key, kind = name[len("bn."):].rsplit(".", 1)
            bn_state.setdefault(key, {})[kind] = arr

    bundle = ModelBundle(model_cfg, params, bn_state)
    expected = init_bundle(model_cfg, np.random.default_rng(0))
    if sorted(expected.params) != sorted(params):
        raise CheckpointError("checkpoint parameters do not match its config")

    opt.step_count = header["opt_step"]
    rngs = {}
    for name, rng_state in header["rng_states"].items():
        gen = np.random.default_rng(0)
        gen.bit_generator.state = rng_state
        rngs[name] = gen
    return TrainState(bundle, opt, rngs, header["step"]), config


def _hyper_from_config(config: ExperimentConfig) -> AdamHyper:
    return AdamHyper(
        lr=float(config["opt.lr"]), beta1=float(config["opt.beta1"]),
        beta2=float(config["opt.beta2"]), eps=float(config["opt.eps"]),
        weight_decay=float(config["opt.weight_decay"]))


# ---------------------------------------------------------------------------
# the pretraining loop
# ---------------------------------------------------------------------------

def _fresh_state(config: ExperimentConfig, dataset: Dataset) -> TrainState:
    head = dataset.header
    model_cfg = config.model_config(head.channels, head.height, head.width,
                                    head.n_actions)
    bundle = init_bundle(model_cfg, make_stream(config["seed"], "init"))
    opt = OptimizerState(hyper=_hyper_from_config(config))
    rngs = {name: make_stream(config["seed"], name)
            for name in ("data", "aug1", "aug2", "mask")}
    return TrainState(bundle, opt, rngs, step=0)


def _diag_probe(config: ExperimentConfig, dataset: Dataset):
    """Fixed held-out probe indices, re-derivable from the seed alone."""
    rng = make_stream(config["seed"], "diag")
    n = min(int(config["rank_samples"]), dataset.total_states)
    rank_traj = rng.integers(0, dataset.num_trajectories, size=n)
    rank_time = rng.integers(0, dataset.trajectory_length, size=n)
    k_max = min(5, dataset.trajectory_length - 1)
    n_pairs = min(int(config["cosine_pairs"]), dataset.total_states)
    pair_traj = rng.integers(0, dataset.num_trajectories, size=n_pairs)
    pair_time = rng.integers(0, dataset.trajectory_length - k_max, size=n_pairs)
    return rank_traj, rank_time, pair_traj, pair_time, k_max


def _diagnose(bundle, dataset, probe, eps: float):
    rank_traj, rank_time, pair_traj, pair_time, k_max = probe
    z = diagnostics.projections_at(bundle, dataset, rank_traj, rank_time)
    rank = diagnostics.feature_rank(z, eps).feature_rank
    base = diagnostics.projections_at(bundle, dataset, pair_traj, pair_time,
                                       normalize=True)
    cos = {}
    for k in (1, 3, 5):
        if k > k_max:
            cos[k] = None
            continue
        ahead = diagnostics.projections_at(bundle, dataset, pair_traj,
                                            pair_time + k, normalize=True)
        cos[k] = float(np.mean(np.sum(base * ahead, axis=1)))
    return rank, cos


def pretrain(config: ExperimentConfig, dataset: Dataset, *,
             resume: TrainState | None = None,
             record_hook=None) -> tuple[TrainState, list[MetricsRecord]]:
    """Run the training loop; returns the final state and metrics records.

    With `resume`, continues from a loaded TrainState (no fresh initial
    record) and reproduces the uninterrupted run exactly.
    """
    if config["mode"] == "demo" and dataset.actions is None:
        raise ConfigError("demo mode requires a dataset with actions")
    state = resume if resume is not None else _fresh_state(config, dataset)
    settings = config.loss_settings()
    probe = _diag_probe(config, dataset)
    deterministic = bool(config["deterministic"])
    eps = float(config["rank_eps"])
    n_seq, t_seq = int(config["n_seq"]), int(config["t_seq"])
    steps = int(config["steps"])
    log_every = max(1, int(config["log_every"]))
    pad, scale = int(config["shift_pad"]), float(config["jitter_scale"])
    t_start = time.monotonic()

    records: list[MetricsRecord] = []

    def emit(record):
        records.append(record)
        if record_hook is not None:
            record_hook(record)

    def diag_record(step, breakdown=None):
        rank, cos = _diagnose(state.bundle, dataset, probe, eps)
        rec = MetricsRecord(
            epoch=(step * n_seq * t_seq) // dataset.total_states, step=step,
            feat_rank=rank, cos_k1=cos[1], cos_k3=cos[3], cos_k5=cos[5],
            wall_secs=None if deterministic else time.monotonic() - t_start)
        if breakdown is not None:
            rec.loss_total = breakdown.total.item()
            rec.loss_sim = breakdown.sim
            rec.loss_decorr = breakdown.decorr
            rec.loss_decorr_on = breakdown.decorr_on
            rec.loss_decorr_off = breakdown.decorr_off
            rec.loss_contrastive = breakdown.contrastive
            rec.loss_action = breakdown.action
            rec.loss_recon = breakdown.recon
        return rec

    if state.step == 0:
        emit(diag_record(0))

    for step in range(state.step + 1, steps + 1):
        batch = sample_batch(dataset, n_seq, t_seq, state.rngs["data"],
                             dtype=state.bundle.config.dtype)
        views = make_views(batch.observations, state.rngs["aug1"], state.rngs["aug2"],
                           pad=pad, scale=scale)
        try:
            if config["mode"] == "demo":
                fwd = forward_demo(state.bundle, views.view1, views.view2,
                                   batch.actions, mode="train")
                breakdown = total_loss(settings, fwd, batch.actions)
            else:
                fwd = forward_state(state.bundle, views.view1, views.view2,
                                    mode="train", rng=state.rngs["mask"])
                breakdown = total_loss(settings, fwd)
            loss_value = breakdown.total.item()
            if not np.isfinite(loss_value):
                raise NumericError(f"non-finite loss at step {step}", step=step)
            backward(breakdown.total)
            grads = {}
            for name, p in state.bundle.param_items():
                if p.grad is not None:
                    grads[name] = p.grad
            clip_global_norm(grads, float(config["opt.max_grad_norm"]))
            adamw_step(state.bundle.params, grads, state.opt)
        except NumericError as err:
            err.step = step
            raise
        finally:
            for _, p in state.bundle.param_items():
                p.grad = None
        state.step = step

        if step % log_every == 0 or step == steps:
            emit(diag_record(step, breakdown))

    return state, records


def run_pretraining(config: ExperimentConfig, dataset: Dataset, out_dir) -> dict:
    """Pretrain and persist metrics.csv, final.ckpt, and the resolved config."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state, records = pretrain(config, dataset)
    metrics_path = out / "metrics.csv"
    write_metrics_csv(records, str(metrics_path))
    ckpt_path = out / "final.ckpt"
    save_checkpoint(state, config, str(ckpt_path))
    config_path = out / "config.json"
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(config.canonical_json() + "\n")
    return {
        "run_dir": str(out),
        "metrics": str(metrics_path),
        "checkpoint": str(ckpt_path),
        "config": str(config_path),
        "final_step": state.step,
    }
