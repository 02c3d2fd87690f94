"""Parameter storage, Adam, the warmup/decay schedule and the checkpoint format.

Checkpoint byte layout (all integers little-endian)::

    magic      4 bytes   b"MXCK"
    version    uint32    currently 1
    step       uint64    Adam step count
    n_entries  uint32
    entries, each:
        name_len  uint16, then name_len bytes of UTF-8 name
        ndim      uint8, then ndim x uint64 dimension sizes
        values    prod(shape) x float64, row-major

Entry names are ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .tensor import DTYPE, Tensor

BETAS = (0.9, 0.98)
ADAM_EPS = 1e-8
CHECKPOINT_MAGIC = b"MXCK"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named parameters plus the Adam state shared by one optimizer instance."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def subset(self, names) -> dict[str, Tensor]:
        return {n: self._params[n] for n in names}

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(self.snapshot())
        out.m = {n: a.copy() for n, a in self.m.items()}
        out.v = {n: a.copy() for n, a in self.v.items()}
        out.step = self.step
        return out


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], lr: float, names=None) -> ParamStore:
    """One bias-corrected Adam update in place; returns ``params``.

    ``names`` restricts the update to a subset (frozen parameters keep both
    their values and their moments).  Iteration follows the store's own
    insertion order, so the order of keys in ``grads`` never matters.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    names = params.names() if names is None else [n for n in params.names() if n in set(names)]
    missing = [n for n in names if n not in grads]
    if missing:
        raise KeyError(f"missing gradient for {missing[0]!r}")
    b1, b2 = BETAS
    params.step += 1
    t = params.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in names:
        g = np.asarray(grads[name], dtype=DTYPE)
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        m = params.m[name] = b1 * params.m[name] + (1.0 - b1) * g
        v = params.v[name] = b2 * params.v[name] + (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params


@dataclass(frozen=True)
class LrSchedule:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.warmup_steps < 1 or self.total_steps <= self.warmup_steps:
            raise ValueError("need 1 <= warmup_steps < total_steps")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear ramp 0 -> peak over the warmup, then linear decay back to 0."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step <= schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    remaining = schedule.total_steps - step
    return schedule.peak_lr * remaining / (schedule.total_steps - schedule.warmup_steps)


# ---------------------------------------------------------------------------
# checkpoints


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, params: ParamStore) -> None:
    entries = []
    for name in params.names():
        entries.append(_pack_entry(f"param/{name}", params[name].data))
        entries.append(_pack_entry(f"adam_m/{name}", params.m[name]))
        entries.append(_pack_entry(f"adam_v/{name}", params.v[name]))
    header = CHECKPOINT_MAGIC + struct.pack("<IQI", CHECKPOINT_VERSION, params.step, len(entries))
    Path(path).write_bytes(header + b"".join(entries))


def load_checkpoint(path) -> ParamStore:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, step, n = struct.unpack_from("<IQI", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 4 + struct.calcsize("<IQI")
    raw: dict[str, np.ndarray] = {}
    try:
        for _ in range(n):
            (name_len,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise ValueError(f"{path}: truncated checkpoint")
            raw[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(DTYPE)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    store = ParamStore()
    for key, arr in raw.items():
        kind, name = key.split("/", 1)
        if kind == "param":
            store.add(name, arr)
    for name in store.names():
        store.m[name] = raw[f"adam_m/{name}"]
        store.v[name] = raw[f"adam_v/{name}"]
    store.step = step
    return store
