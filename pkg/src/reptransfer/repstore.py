"""Keyed representation storage with monitoring, freeze, snapshots, rollback.

User/item vectors overwrite on write; cross vectors are blended through
:mod:`reptransfer.aggregate`. Writes feed a per-kind ring buffer of recent
vectors; comparing summary statistics of consecutive windows drives a
per-kind freeze that rejects further writes (reads stay available) until a
rollback restores the latest healthy snapshot.

The store is single-writer / multi-reader: one logical writer applies puts
in arrival order, which also serializes updates per key.
"""

from __future__ import annotations

import struct
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .aggregate import AggState, BetaFn, update_cr
from .errors import IntegrityError

Array = np.ndarray

KIND_UR = "UR"
KIND_IR = "IR"
KIND_CR_USER = "CR_user"
KIND_CR_ITEM = "CR_item"
KINDS = (KIND_UR, KIND_IR, KIND_CR_USER, KIND_CR_ITEM)
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}

MAGIC = b"RST1"


@dataclass(frozen=True)
class ReprKey:
    kind: str
    entity_id: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown representation kind {self.kind!r}")


@dataclass(frozen=True)
class MonitorStats:
    """Population summary over every component of a batch of vectors."""

    mean: float
    variance: float
    l1_norm: float
    min: float
    max: float

    METRICS = ("mean", "variance", "l1_norm", "min", "max")


@dataclass
class StoreStatus:
    mode: str = "live"  # "live" | "frozen"
    frozen_reason: tuple[str, float] | None = None  # (metric, observed rate)


@dataclass
class Snapshot:
    """Immutable full copy of the store contents at creation time."""

    id: int
    created_at: float
    contents: dict[ReprKey, AggState]
    baselines: dict[str, MonitorStats] = field(default_factory=dict)


def monitor_stats(kind: str, sample: list[Array]) -> MonitorStats:
    """Stats over all scalar components; l1_norm is the mean per-vector L1."""
    if not sample:
        raise ValueError(f"empty monitoring batch for kind {kind!r}")
    flat = np.concatenate([np.asarray(v, dtype=np.float64).ravel() for v in sample])
    if not np.all(np.isfinite(flat)):
        raise ValueError(f"non-finite values in monitoring batch for kind {kind!r}")
    l1 = float(np.mean([np.abs(np.asarray(v)).sum() for v in sample]))
    return MonitorStats(
        mean=float(flat.mean()),
        variance=float(flat.var()),
        l1_norm=l1,
        min=float(flat.min()),
        max=float(flat.max()),
    )


def check_and_freeze(prev: MonitorStats, curr: MonitorStats,
                     threshold: float, eps: float = 1e-9) -> StoreStatus:
    """Freeze when any metric's relative change |curr-prev|/(|prev|+eps) exceeds threshold."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    worst: tuple[str, float] | None = None
    for metric in MonitorStats.METRICS:
        p = getattr(prev, metric)
        c = getattr(curr, metric)
        rate = abs(c - p) / (abs(p) + eps)
        if rate > threshold and (worst is None or rate > worst[1]):
            worst = (metric, rate)
    if worst is None:
        return StoreStatus(mode="live")
    return StoreStatus(mode="frozen", frozen_reason=worst)


class ReprStore:
    """In-memory representation store with the fault-tolerance machinery."""

    def __init__(self, beta_fn: BetaFn, freeze_threshold: float = 0.5,
                 monitor_capacity: int = 256):
        self.beta_fn = beta_fn
        self.freeze_threshold = freeze_threshold
        self._data: dict[ReprKey, AggState] = {}
        self.status: dict[str, StoreStatus] = {k: StoreStatus() for k in KINDS}
        self._window: dict[str, deque] = {k: deque(maxlen=monitor_capacity) for k in KINDS}
        self._baseline: dict[str, MonitorStats] = {}
        self._snapshots: dict[int, Snapshot] = {}
        self._next_snapshot_id = 1
        self.nonfinite_rejections = 0

    # -- reads / writes -------------------------------------------------

    def __len__(self) -> int:
        return len(self._data)

    def put_repr(self, key: ReprKey, value: Array, now: float) -> bool:
        """Write one vector; returns False without mutating when kind is frozen.

        UR/IR overwrite; CR kinds blend through the decay aggregator.
        """
        value = np.asarray(value, dtype=np.float64).ravel()
        if not np.all(np.isfinite(value)):
            self.nonfinite_rejections += 1
            raise ValueError(f"non-finite representation for {key}")
        if self.status[key.kind].mode == "frozen":
            return False
        if key.kind in (KIND_CR_USER, KIND_CR_ITEM):
            state = update_cr(self._data.get(key), value, now, self.beta_fn)
        else:
            state = AggState(value=value.copy(), last_update=float(now))
        self._data[key] = state
        self._window[key.kind].append(state.value)
        return True

    def get_repr(self, key: ReprKey) -> Array | None:
        state = self._data.get(key)
        if state is None:
            return None
        return state.value.copy()

    def last_update(self, key: ReprKey) -> float | None:
        state = self._data.get(key)
        return None if state is None else state.last_update

    # -- monitoring -----------------------------------------------------

    def window_stats(self, kind: str) -> MonitorStats | None:
        buf = self._window[kind]
        if not buf:
            return None
        return monitor_stats(kind, list(buf))

    def run_monitor_checks(self) -> list[tuple[str, StoreStatus]]:
        """Compare each kind's window against its baseline; freeze on anomaly.

        Healthy windows become the new baseline. Windows are cleared either
        way so each check covers writes since the previous boundary. Returns
        the kinds that froze at this boundary.
        """
        frozen: list[tuple[str, StoreStatus]] = []
        for kind in KINDS:
            curr = self.window_stats(kind)
            if curr is None:
                continue
            prev = self._baseline.get(kind)
            self._window[kind].clear()
            if prev is None:
                self._baseline[kind] = curr
                continue
            status = check_and_freeze(prev, curr, self.freeze_threshold)
            if status.mode == "frozen":
                self.status[kind] = status
                frozen.append((kind, status))
            else:
                self._baseline[kind] = curr
        return frozen

    def frozen_kinds(self) -> list[str]:
        return [k for k in KINDS if self.status[k].mode == "frozen"]

    # -- snapshots / rollback --------------------------------------------

    def snapshot(self, created_at: float = 0.0) -> int:
        """Deep-copy the contents; only allowed while fully live."""
        if self.frozen_kinds():
            raise RuntimeError("cannot snapshot a frozen store")
        contents = {
            key: AggState(value=state.value.copy(), last_update=state.last_update)
            for key, state in self._data.items()
        }
        snap = Snapshot(
            id=self._next_snapshot_id,
            created_at=float(created_at),
            contents=contents,
            baselines=dict(self._baseline),
        )
        self._snapshots[snap.id] = snap
        self._next_snapshot_id += 1
        return snap.id

    def get_snapshot(self, snapshot_id: int) -> Snapshot:
        try:
            return self._snapshots[snapshot_id]
        except KeyError:
            raise KeyError(f"unknown snapshot id {snapshot_id}") from None

    def latest_snapshot_id(self) -> int | None:
        if not self._snapshots:
            return None
        return max(self._snapshots)

    def rollback(self, snapshot_id: int) -> None:
        """Restore contents bitwise from a snapshot and return to live mode."""
        snap = self.get_snapshot(snapshot_id)
        self._data = {
            key: AggState(value=state.value.copy(), last_update=state.last_update)
            for key, state in snap.contents.items()
        }
        self.status = {k: StoreStatus() for k in KINDS}
        for buf in self._window.values():
            buf.clear()
        self._baseline = dict(snap.baselines)

    # -- serialization ----------------------------------------------------

    def serialize_contents(self) -> bytes:
        return serialize_repr_map(self._data)

    def export_jsonl(self, fp) -> None:
        """Line-delimited JSON inspection dump (key, dim, head, stats)."""
        import json

        for key in sorted(self._data, key=lambda k: (_KIND_CODE[k.kind], k.entity_id)):
            state = self._data[key]
            v = state.value
            row = {
                "kind": key.kind,
                "entity_id": key.entity_id,
                "dim": int(v.size),
                "head": [float(x) for x in v[:4]],
                "mean": float(v.mean()),
                "l1": float(np.abs(v).sum()),
                "min": float(v.min()),
                "max": float(v.max()),
                "last_update": state.last_update,
            }
            fp.write(json.dumps(row, sort_keys=True))
            fp.write("\n")


def serialize_repr_map(data: dict[ReprKey, AggState]) -> bytes:
    """Canonical byte encoding of a key->state map (sorted, little-endian)."""
    out = bytearray()
    for key in sorted(data, key=lambda k: (_KIND_CODE[k.kind], k.entity_id)):
        state = data[key]
        vec = np.ascontiguousarray(state.value, dtype="<f8")
        out += struct.pack("<BQI", _KIND_CODE[key.kind], key.entity_id, vec.size)
        out += vec.tobytes()
        out += struct.pack("<d", state.last_update)
    return bytes(out)


def write_snapshot_file(snapshot: Snapshot, path: str) -> None:
    body = MAGIC + struct.pack("<QQ", snapshot.id, len(snapshot.contents))
    body += serialize_repr_map(snapshot.contents)
    try:
        with open(path, "wb") as fp:
            fp.write(body)
            fp.write(struct.pack("<I", zlib.crc32(body)))
    except OSError as exc:
        raise IntegrityError(f"failed to persist snapshot: {exc}") from exc


def read_snapshot_file(path: str) -> Snapshot:
    with open(path, "rb") as fp:
        blob = fp.read()
    if len(blob) < len(MAGIC) + 20 or blob[:4] != MAGIC:
        raise IntegrityError("not a snapshot file (bad magic)")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise IntegrityError("snapshot checksum mismatch")
    snap_id, count = struct.unpack_from("<QQ", body, 4)
    offset = 20
    contents: dict[ReprKey, AggState] = {}
    code_to_kind = {v: k for k, v in _KIND_CODE.items()}
    for _ in range(count):
        code, entity_id, dim = struct.unpack_from("<BQI", body, offset)
        offset += 13
        vec = np.frombuffer(body, dtype="<f8", count=dim, offset=offset).copy()
        offset += 8 * dim
        (last_update,) = struct.unpack_from("<d", body, offset)
        offset += 8
        contents[ReprKey(code_to_kind[code], entity_id)] = AggState(vec, last_update)
    if offset != len(body):
        raise IntegrityError("snapshot has trailing garbage")
    return Snapshot(id=snap_id, created_at=0.0, contents=contents)
