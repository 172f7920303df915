"""Bounded FIFO replay storage plus a fixed-width binary record format.

The on-disk layout is a little-endian stream: a fixed header carrying magic,
version, state/action dims, the record count and the producing config hash,
followed by count records of float64 [state, action, signal, next_state,
done]. The same format serializes replay buffers and offline datasets.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

STREAM_MAGIC = b"SMRS"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ64s")


def sample_indices(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """k distinct uniform indices out of n.

    Vectorized rejection for the common k << n case; falls back to a
    partial permutation when the buffer is barely larger than the batch.
    """
    if k > n:
        raise ValueError(f"cannot draw {k} distinct indices from {n}")
    if 4 * k >= n:
        return rng.permutation(n)[:k]
    idx = rng.integers(0, n, size=k)
    for _ in range(64):
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        dup_sorted = np.empty(k, dtype=bool)
        dup_sorted[0] = False
        np.equal(sorted_idx[1:], sorted_idx[:-1], out=dup_sorted[1:])
        if not dup_sorted.any():
            return idx
        dup = np.zeros(k, dtype=bool)
        dup[order] = dup_sorted
        idx[dup] = rng.integers(0, n, size=int(dup.sum()))
    raise RuntimeError("rejection sampling failed to produce distinct indices")


def write_record_stream(path, states, actions, signals, next_states, dones, config_hash=""):
    states = np.ascontiguousarray(states, dtype="<f8")
    actions = np.ascontiguousarray(actions, dtype="<f8")
    signals = np.ascontiguousarray(signals, dtype="<f8").reshape(-1)
    next_states = np.ascontiguousarray(next_states, dtype="<f8")
    dones = np.ascontiguousarray(dones, dtype="<f8").reshape(-1)
    count = states.shape[0]
    state_dim = states.shape[1] if count else 0
    action_dim = actions.shape[1] if count else 0
    header = _HEADER.pack(
        STREAM_MAGIC,
        STREAM_VERSION,
        state_dim,
        action_dim,
        count,
        config_hash.encode("ascii")[:64].ljust(64, b"\0"),
    )
    block = np.concatenate(
        [states, actions, signals[:, None], next_states, dones[:, None]], axis=1
    ) if count else np.zeros((0, 0))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def read_record_stream(path):
    """Returns (states, actions, signals, next_states, dones, config_hash)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read record stream {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, state_dim, action_dim, count, hash_bytes = _HEADER.unpack_from(raw)
    if magic != STREAM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != STREAM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    width = 2 * state_dim + action_dim + 2
    expected = _HEADER.size + 8 * width * count
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if count:
        block = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(count, width)
    else:
        block = np.zeros((0, width))
    states = block[:, :state_dim].copy()
    actions = block[:, state_dim : state_dim + action_dim].copy()
    signals = block[:, state_dim + action_dim].copy()
    next_states = block[:, state_dim + action_dim + 1 : 2 * state_dim + action_dim + 1].copy()
    dones = block[:, -1].copy()
    config_hash = hash_bytes.rstrip(b"\0").decode("ascii", errors="replace")
    return states, actions, signals, next_states, dones, config_hash


class ReplayBuffer:
    """Ring buffer of transitions with uniform without-replacement batches.

    `signal` is the per-transition scalar: task buffers store rewards, safety
    buffers store binary costs. `extra_next` optionally carries a second view
    of the next state (the task-policy observation used to sample the
    bootstrap action for the safety critic).
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, extra_dim: int = 0,
                 dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.extra_dim = extra_dim
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.signals = np.zeros(capacity, dtype=dtype)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.dones = np.zeros(capacity, dtype=dtype)
        self.extra_next = np.zeros((capacity, extra_dim), dtype=dtype) if extra_dim else None
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, action, signal, next_state, done, extra_next=None) -> None:
        i = self._head
        self.states[i] = state
        self.actions[i] = action
        self.signals[i] = signal
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        if self.extra_next is not None:
            self.extra_next[i] = extra_next
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, states, actions, signals, next_states, dones) -> None:
        for s, a, c, s2, d in zip(states, actions, signals, next_states, dones):
            self.push(s, a, c, s2, d)

    def sample(self, rng: np.random.Generator, batch: int) -> dict:
        if batch > self._size:
            raise ValueError(f"batch {batch} exceeds buffer size {self._size}")
        idx = sample_indices(rng, self._size, batch)
        out = {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "signals": self.signals[idx],
            "next_states": self.next_states[idx],
            "dones": self.dones[idx],
        }
        if self.extra_next is not None:
            out["extra_next"] = self.extra_next[idx]
        return out

    def save(self, path, config_hash="") -> None:
        n = self._size
        order = (np.arange(n) + (self._head - n)) % self.capacity
        write_record_stream(
            path,
            self.states[order],
            self.actions[order],
            self.signals[order],
            self.next_states[order],
            self.dones[order],
            config_hash=config_hash,
        )

    @classmethod
    def load(cls, path, capacity: int | None = None) -> "ReplayBuffer":
        states, actions, signals, next_states, dones, _ = read_record_stream(path)
        n = states.shape[0]
        cap = capacity or max(n, 1)
        buf = cls(cap, states.shape[1] if n else 0, actions.shape[1] if n else 0)
        buf.extend(states, actions, signals, next_states, dones)
        return buf
