"""Linear evaluation on frozen encoders: action and reward probes.

Features are the encoder outputs (pre-projector, evaluation mode). The
action probe is a linear softmax classifier trained with a focal loss to
counter class imbalance; the reward probe is plain logistic regression on
the binary reward-occurred label. Probe training touches only the probe
weights; the encoder is read-only throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .ndgrad import backward, no_grad, ops, tensor

FOCAL_GAMMA = 2.0
PROBE_LR = 0.2
PROBE_EPOCHS = 50
PROBE_BATCH = 256
PROBE_WEIGHT_DECAY = 1e-6
PROBE_LR_STEP = 10
PROBE_LR_GAMMA = 0.1

_ENCODE_CHUNK = 256


@dataclass
class ProbeResult:
    task: str
    f1: float
    per_class_f1: list = field(default_factory=list)
    confusion: np.ndarray | None = None
    train_size: int = 0
    eval_size: int = 0

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "f1": float(self.f1),
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "confusion": self.confusion.tolist() if self.confusion is not None else None,
            "train_size": int(self.train_size),
            "eval_size": int(self.eval_size),
        }


@dataclass(frozen=True)
class ProbeTaskConfig:
    task: str                      # "action" or "reward"
    n_classes: int
    lr: float = PROBE_LR
    epochs: int = PROBE_EPOCHS
    batch_size: int = PROBE_BATCH
    weight_decay: float = PROBE_WEIGHT_DECAY
    focal_gamma: float = FOCAL_GAMMA
    lr_step: int = PROBE_LR_STEP
    lr_gamma: float = PROBE_LR_GAMMA
    seed: int = 0


def feature_standardizer(features: np.ndarray,
                         floor: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (mean, floored std) from the training split.

    Probe hyperparameters assume unit-scale inputs; standardizing makes
    the probe insensitive to the encoder's raw output scale.
    """
    mu = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), floor)
    return mu, std


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def split_trajectories(num_trajectories: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 4:1 split: every fifth trajectory goes to eval."""
    idx = np.arange(num_trajectories)
    eval_mask = idx % 5 == 4
    return idx[~eval_mask], idx[eval_mask]


def extract_features(bundle, dataset, split: str = "train"):
    """Per-state encoder features plus action and reward labels.

    Returns (features [M, F], actions [M], rewards [M]) for the requested
    trajectory split.
    """
    train_traj, eval_traj = split_trajectories(dataset.num_trajectories)
    trajs = train_traj if split == "train" else eval_traj
    length = dataset.trajectory_length
    traj_idx = np.repeat(trajs, length)
    time_idx = np.tile(np.arange(length), len(trajs))

    dtype = bundle.config.dtype
    feats = np.empty((len(traj_idx), bundle.config.feature_dim), dtype=dtype)
    with no_grad():
        for lo in range(0, len(traj_idx), _ENCODE_CHUNK):
            hi = min(lo + _ENCODE_CHUNK, len(traj_idx))
            frames = dataset.frames_float(traj_idx[lo:hi], time_idx[lo:hi], dtype=dtype)
            out = model_mod.encode(bundle, frames[:, None], mode="eval")
            feats[lo:hi] = out.data[:, 0, :]
    actions = dataset.actions[traj_idx, time_idx].astype(np.int64)
    rewards = dataset.rewards[traj_idx, time_idx].astype(np.int64)
    return feats, actions, rewards


# ---------------------------------------------------------------------------
# probe training
# ---------------------------------------------------------------------------

def fit_linear_probe(features: np.ndarray, labels: np.ndarray,
                     task_config: ProbeTaskConfig) -> tuple[np.ndarray, np.ndarray]:
    """Train a single linear layer by mini-batch SGD; returns (W, b).

    Action task: softmax focal loss (gamma 2). Reward task: binary
    logistic loss on one logit. The learning rate decays stepwise.
    """
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("probe training needs at least 2 classes present")
    m, f = features.shape
    binary = task_config.task == "reward"
    k = 1 if binary else task_config.n_classes

    rng = np.random.default_rng(task_config.seed)
    w = tensor(np.zeros((f, k), dtype=np.float64), requires_grad=True)
    b = tensor(np.zeros(k, dtype=np.float64), requires_grad=True)
    feats64 = features.astype(np.float64)

    for epoch in range(task_config.epochs):
        lr = task_config.lr * task_config.lr_gamma ** (epoch // task_config.lr_step)
        order = rng.permutation(m)
        for lo in range(0, m, task_config.batch_size):
            idx = order[lo:lo + task_config.batch_size]
            xb = tensor(feats64[idx])
            yb = labels[idx]
            logits = ops.add(ops.matmul(xb, w), b)
            if binary:
                loss = _logistic_loss(logits, yb)
            else:
                loss = _focal_loss(logits, yb, task_config.focal_gamma,
                                   task_config.n_classes)
            backward(loss)
            for p in (w, b):
                p.data -= lr * (p.grad + task_config.weight_decay * p.data)
                p.grad = None
    return w.data.copy(), b.data.copy()


def _logistic_loss(logits, labels):
    y = tensor(np.asarray(labels, dtype=np.float64).reshape(-1, 1))
    p = ops.sigmoid(logits)
    eps = 1e-12
    pos = ops.mul(y, ops.log(ops.clip_min(p, eps)))
    one = tensor(np.ones_like(y.data))
    neg = ops.mul(ops.sub(one, y),
                  ops.log(ops.clip_min(ops.sub(one, p), eps)))
    return ops.smul(ops.sum(ops.add(pos, neg)), -1.0 / y.shape[0])


def _focal_loss(logits, labels, gamma: float, n_classes: int):
    m = logits.shape[0]
    onehot = np.zeros((m, n_classes), dtype=np.float64)
    onehot[np.arange(m), labels] = 1.0
    probs = ops.softmax(logits)
    picked = ops.sum(ops.mul(probs, tensor(onehot)), axis=-1)
    picked = ops.clip_min(picked, 1e-12)
    one = tensor(np.ones(m, dtype=np.float64))
    focus = ops.power(ops.sub(one, picked), gamma) if gamma != 0.0 else one
    per_sample = ops.mul(focus, ops.log(picked))
    return ops.smul(ops.sum(per_sample), -1.0 / m)


def predict_labels(features: np.ndarray, w: np.ndarray, b: np.ndarray,
                   task: str) -> np.ndarray:
    logits = features.astype(np.float64) @ w + b
    if task == "reward":
        return (logits[:, 0] > 0).astype(np.int64)
    return np.argmax(logits, axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# F1 reporting
# ---------------------------------------------------------------------------

def f1_report(predictions: np.ndarray, labels: np.ndarray, task: str,
              n_classes: int | None = None,
              train_size: int = 0, eval_size: int = 0) -> ProbeResult:
    """Binary task: F1 of the positive class. Action task: macro F1.

    Macro averages over classes present in the eval labels; a present
    class that is never correctly predicted contributes 0.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels must align")
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    if n_classes is None:
        n_classes = int(max(predictions.max(), labels.max())) + 1

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, predictions):
        confusion[t, p] += 1

    def class_f1(c: int) -> float:
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        if 2 * tp + fp + fn == 0:
            return 0.0
        return 2.0 * tp / (2 * tp + fp + fn)

    if task == "reward":
        f1 = class_f1(1)
        per_class = [class_f1(0), class_f1(1)]
    else:
        present = sorted(set(labels.tolist()))
        per_class = [class_f1(c) for c in present]
        f1 = float(np.mean(per_class))
    return ProbeResult(task=task, f1=float(f1), per_class_f1=per_class,
                       confusion=confusion, train_size=train_size,
                       eval_size=eval_size)


def run_probes(bundle, dataset, seed: int = 0) -> dict[str, ProbeResult]:
    """Train and evaluate both probes on the frozen encoder.

    Features are standardized with train-split statistics before either
    probe sees them.
    """
    feats_tr, act_tr, rew_tr = extract_features(bundle, dataset, "train")
    feats_ev, act_ev, rew_ev = extract_features(bundle, dataset, "eval")
    mu, std = feature_standardizer(feats_tr)
    feats_tr = (feats_tr - mu) / std
    feats_ev = (feats_ev - mu) / std
    n_a = bundle.config.n_actions
    results = {}

    cfg_a = ProbeTaskConfig(task="action", n_classes=n_a, seed=seed)
    w, b = fit_linear_probe(feats_tr, act_tr, cfg_a)
    pred = predict_labels(feats_ev, w, b, "action")
    results["action"] = f1_report(pred, act_ev, "action", n_classes=n_a,
                                  train_size=len(act_tr), eval_size=len(act_ev))

    cfg_r = ProbeTaskConfig(task="reward", n_classes=2, seed=seed)
    w, b = fit_linear_probe(feats_tr, rew_tr, cfg_r)
    pred = predict_labels(feats_ev, w, b, "reward")
    results["reward"] = f1_report(pred, rew_ev, "reward", n_classes=2,
                                  train_size=len(rew_tr), eval_size=len(rew_ev))
    return results
