"""Synthetic trajectory datasets from a moving-dot gridworld.

A single bright dot moves on an H x W grid under five actions (up, down,
left, right, no-op). Walls reflect. A fixed goal cell at (H-2, W-2),
drawn at half intensity, emits reward 1 when the dot enters it; on the
following step the dot respawns at a random non-goal cell. The behavior
policy is epsilon-greedy toward the goal (row distance first), so
trajectories are temporally correlated but not optimal.

Datasets are persisted in a little-endian binary format: a fixed header
followed by uint8 observations (pixel * 255), uint8 actions, and uint8
rewards. Generation is deterministic: trajectory ``i`` uses an rng seeded
with ``seed XOR i``, so output bytes depend only on (seed, config).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

N_ACTIONS = 5
GOAL_INTENSITY = 128  # uint8; dot is 255
EPSILON = 0.3

MAGIC = b"STPR1"
_HEADER_FMT = "<5sIIIIIIQ16s"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class DatasetFormatError(ValueError):
    """Malformed dataset file (magic, truncation, or header mismatch)."""


@dataclass(frozen=True)
class EnvConfig:
    height: int = 16
    width: int = 16
    channels: int = 1
    epsilon: float = EPSILON

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValueError("grid size must be at least 4")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    @property
    def goal(self) -> tuple[int, int]:
        return self.height - 2, self.width - 2


@dataclass(frozen=True)
class DatasetHeader:
    num_trajectories: int
    trajectory_length: int
    channels: int
    height: int
    width: int
    n_actions: int
    seed: int
    env_kind: str = "moving-dot"

    def payload_bytes(self) -> int:
        n, t = self.num_trajectories, self.trajectory_length
        return n * t * (self.channels * self.height * self.width + 2)

    def pack(self) -> bytes:
        return struct.pack(
            _HEADER_FMT, MAGIC, self.num_trajectories, self.trajectory_length,
            self.channels, self.height, self.width, self.n_actions, self.seed,
            self.env_kind.encode("ascii")[:16].ljust(16, b"\0"))

    @classmethod
    def unpack(cls, raw: bytes) -> "DatasetHeader":
        magic, n, t, c, h, w, n_a, seed, kind = struct.unpack(_HEADER_FMT, raw)
        if magic != MAGIC:
            raise DatasetFormatError(f"bad magic: {magic!r}")
        return cls(n, t, c, h, w, n_a, seed, kind.rstrip(b"\0").decode("ascii"))


class Dataset:
    """Loaded dataset: uint8 storage, float views materialized on demand.

    observations_u8: [N, T, C, H, W] uint8; actions/rewards: [N, T] uint8.
    """

    def __init__(self, header: DatasetHeader, observations_u8: np.ndarray,
                 actions: np.ndarray, rewards: np.ndarray):
        self.header = header
        self.observations_u8 = observations_u8
        self.actions = actions
        self.rewards = rewards

    @property
    def num_trajectories(self) -> int:
        return self.header.num_trajectories

    @property
    def trajectory_length(self) -> int:
        return self.header.trajectory_length

    @property
    def total_states(self) -> int:
        return self.num_trajectories * self.trajectory_length

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        h = self.header
        return h.channels, h.height, h.width

    def frames_float(self, traj_idx: np.ndarray, time_idx: np.ndarray,
                     dtype=np.float32) -> np.ndarray:
        """Gather frames at (trajectory, time) index pairs, scaled to [0, 1]."""
        return self.observations_u8[traj_idx, time_idx].astype(dtype) / dtype(255.0)


@dataclass
class TrajectoryBatch:
    """N windows of T consecutive states with aligned actions and rewards."""

    observations: np.ndarray  # [N, T, C, H, W] float in [0, 1]
    actions: np.ndarray       # [N, T] int
    rewards: np.ndarray       # [N, T] {0, 1}

    def __post_init__(self):
        n, t = self.actions.shape
        if self.observations.shape[:2] != (n, t) or self.rewards.shape != (n, t):
            raise ValueError("misaligned batch fields")


# ---------------------------------------------------------------------------
# environment dynamics
# ---------------------------------------------------------------------------

class GridWorld:
    """Explicit-state stepper for the moving-dot environment."""

    def __init__(self, config: EnvConfig):
        self.config = config

    def spawn(self, rng: np.random.Generator) -> tuple[int, int]:
        h, w = self.config.height, self.config.width
        goal = self.config.goal
        while True:
            r = int(rng.integers(0, h))
            c = int(rng.integers(0, w))
            if (r, c) != goal:
                return r, c

    def greedy_action(self, pos: tuple[int, int]) -> int:
        r, c = pos
        gr, gc = self.config.goal
        if r > gr:
            return 0
        if r < gr:
            return 1
        if c > gc:
            return 2
        if c < gc:
            return 3
        return 4

    def policy_action(self, rng: np.random.Generator, pos: tuple[int, int]) -> int:
        if rng.uniform() < self.config.epsilon:
            return int(rng.integers(0, N_ACTIONS))
        return self.greedy_action(pos)

    def move(self, pos: tuple[int, int], action: int) -> tuple[int, int]:
        r, c = pos
        if action == 0:
            r -= 1
        elif action == 1:
            r += 1
        elif action == 2:
            c -= 1
        elif action == 3:
            c += 1
        h, w = self.config.height, self.config.width
        if r < 0:
            r = -r
        elif r >= h:
            r = 2 * (h - 1) - r
        if c < 0:
            c = -c
        elif c >= w:
            c = 2 * (w - 1) - c
        return r, c

    def render_u8(self, pos: tuple[int, int]) -> np.ndarray:
        cfg = self.config
        frame = np.zeros((cfg.channels, cfg.height, cfg.width), dtype=np.uint8)
        gr, gc = cfg.goal
        frame[:, gr, gc] = GOAL_INTENSITY
        frame[:, pos[0], pos[1]] = 255
        return frame

    def rollout(self, rng: np.random.Generator, length: int):
        """One trajectory: (observations_u8 [T,C,H,W], actions [T], rewards [T]).

        rewards[t] = 1 iff the dot entered the goal on the transition into
        state t; from the goal the next transition is a respawn.
        """
        cfg = self.config
        obs = np.empty((length, cfg.channels, cfg.height, cfg.width), dtype=np.uint8)
        actions = np.empty(length, dtype=np.uint8)
        rewards = np.zeros(length, dtype=np.uint8)
        pos = self.spawn(rng)
        for t in range(length):
            obs[t] = self.render_u8(pos)
            a = self.policy_action(rng, pos)
            actions[t] = a
            if t == length - 1:
                break
            if pos == cfg.goal:
                pos = self.spawn(rng)
            else:
                pos = self.move(pos, a)
                if pos == cfg.goal:
                    rewards[t + 1] = 1
        return obs, actions, rewards


# ---------------------------------------------------------------------------
# generate / save / load / sample
# ---------------------------------------------------------------------------

def generate_dataset(env_config: EnvConfig, seed: int, num_trajectories: int,
                     trajectory_length: int, path: str) -> DatasetHeader:
    """Simulate and persist a dataset; identical inputs give identical bytes."""
    if trajectory_length < 2:
        raise ValueError("trajectory_length must be >= 2")
    if num_trajectories < 1:
        raise ValueError("num_trajectories must be >= 1")
    env = GridWorld(env_config)
    header = DatasetHeader(
        num_trajectories=num_trajectories, trajectory_length=trajectory_length,
        channels=env_config.channels, height=env_config.height,
        width=env_config.width, n_actions=N_ACTIONS, seed=seed)

    n, t = num_trajectories, trajectory_length
    obs = np.empty((n, t, env_config.channels, env_config.height, env_config.width),
                   dtype=np.uint8)
    actions = np.empty((n, t), dtype=np.uint8)
    rewards = np.empty((n, t), dtype=np.uint8)
    for i in range(n):
        rng = np.random.default_rng(seed ^ i)
        obs[i], actions[i], rewards[i] = env.rollout(rng, t)

    with open(path, "wb") as fh:
        fh.write(header.pack())
        fh.write(obs.tobytes())
        fh.write(actions.tobytes())
        fh.write(rewards.tobytes())
    return header


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_SIZE:
        raise DatasetFormatError(
            f"truncated header: {len(raw)} bytes < {_HEADER_SIZE}")
    header = DatasetHeader.unpack(raw[:_HEADER_SIZE])
    expected = header.payload_bytes()
    actual = len(raw) - _HEADER_SIZE
    if actual < expected:
        raise DatasetFormatError(
            f"truncated payload: expected {expected} bytes, got {actual}")
    if actual > expected:
        raise DatasetFormatError(
            f"header/payload mismatch: expected {expected} bytes, got {actual}")

    n, t = header.num_trajectories, header.trajectory_length
    frame = header.channels * header.height * header.width
    off = _HEADER_SIZE
    obs = np.frombuffer(raw, dtype=np.uint8, count=n * t * frame, offset=off)
    obs = obs.reshape(n, t, header.channels, header.height, header.width).copy()
    off += n * t * frame
    actions = np.frombuffer(raw, dtype=np.uint8, count=n * t, offset=off).reshape(n, t).copy()
    off += n * t
    rewards = np.frombuffer(raw, dtype=np.uint8, count=n * t, offset=off).reshape(n, t).copy()
    if rewards.max(initial=0) > 1:
        raise DatasetFormatError("rewards outside {0, 1}")
    return Dataset(header, obs, actions, rewards)


def dataset_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sample_batch(dataset: Dataset, n: int, t: int, rng: np.random.Generator,
                 dtype=np.float32) -> TrajectoryBatch:
    """N windows: uniform trajectory, then uniform start offset in [0, L-T]."""
    length = dataset.trajectory_length
    if t > length:
        raise ValueError(f"window length {t} exceeds trajectory length {length}")
    if n < 1:
        raise ValueError("need at least one window")
    traj = rng.integers(0, dataset.num_trajectories, size=n)
    start = rng.integers(0, length - t + 1, size=n)
    time_idx = start[:, None] + np.arange(t)[None, :]
    traj_idx = np.repeat(traj[:, None], t, axis=1)
    obs = dataset.frames_float(traj_idx, time_idx, dtype=dtype)
    actions = dataset.actions[traj_idx, time_idx].astype(np.int64)
    rewards = dataset.rewards[traj_idx, time_idx].astype(np.int64)
    return TrajectoryBatch(obs, actions, rewards)


def sample_indices(dataset: Dataset, n: int, t: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """The (trajectory, start) stream that `sample_batch` would consume."""
    length = dataset.trajectory_length
    traj = rng.integers(0, dataset.num_trajectories, size=n)
    start = rng.integers(0, length - t + 1, size=n)
    return traj, start
