"""Hydraulic state snapshots and the binary restart format.

Restart files are flat binary: an 8-byte magic, one version byte, then
little-endian uint32 counts and float64 payloads.  Serialisation is
bit-exact: a state written and read back compares equal to the last bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FLOODDA\x00"
VERSION = 1


@dataclass
class HydroState:
    """Channel depths plus floodplain subdomain stages at one instant."""

    time: float
    depth: np.ndarray
    subdomain_stage: np.ndarray

    def __post_init__(self) -> None:
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.subdomain_stage = np.asarray(self.subdomain_stage, dtype=np.float64)

    def copy(self, time: float | None = None) -> "HydroState":
        return HydroState(
            time=self.time if time is None else float(time),
            depth=self.depth.copy(),
            subdomain_stage=self.subdomain_stage.copy(),
        )

    def validate(self) -> None:
        if not np.isfinite(self.time):
            raise ValueError("state time is not finite")
        bad = np.flatnonzero(~np.isfinite(self.depth))
        if bad.size:
            raise ValueError(f"non-finite depth at cell {int(bad[0])}")
        if np.any(self.depth < 0):
            cell = int(np.flatnonzero(self.depth < 0)[0])
            raise ValueError(f"negative depth at cell {cell}")
        if not np.all(np.isfinite(self.subdomain_stage)):
            raise ValueError("non-finite subdomain stage")

    def equal_bits(self, other: "HydroState") -> bool:
        """True when the two states are bit-identical."""
        return (
            struct.pack("<d", self.time) == struct.pack("<d", other.time)
            and self.depth.shape == other.depth.shape
            and self.subdomain_stage.shape == other.subdomain_stage.shape
            and self.depth.tobytes() == other.depth.tobytes()
            and self.subdomain_stage.tobytes() == other.subdomain_stage.tobytes()
        )


def _pack_state(state: HydroState) -> bytes:
    head = struct.pack(
        "<dII",
        state.time,
        state.depth.size,
        state.subdomain_stage.size,
    )
    return (
        head
        + np.ascontiguousarray(state.depth, dtype="<f8").tobytes()
        + np.ascontiguousarray(state.subdomain_stage, dtype="<f8").tobytes()
    )


def save_states(path_or_file, states) -> None:
    """Write one or more states to a restart file."""
    states = list(states)
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "wb") if own else path_or_file
    try:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(states)))
        for state in states:
            f.write(_pack_state(state))
    finally:
        if own:
            f.close()


def load_states(path_or_file) -> list[HydroState]:
    """Read all states from a restart file."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "rb") if own else path_or_file
    try:
        data = f.read()
    finally:
        if own:
            f.close()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not a restart file (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<B", data, pos)
    pos += 1
    if version != VERSION:
        raise ValueError(f"unsupported restart version {version}")
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    states = []
    for _ in range(count):
        time, n_cells, n_sub = struct.unpack_from("<dII", data, pos)
        pos += 16
        depth = np.frombuffer(data, dtype="<f8", count=n_cells, offset=pos).copy()
        pos += 8 * n_cells
        stage = np.frombuffer(data, dtype="<f8", count=n_sub, offset=pos).copy()
        pos += 8 * n_sub
        states.append(HydroState(time=time, depth=depth, subdomain_stage=stage))
    return states


def save_state(path_or_file, state: HydroState) -> None:
    save_states(path_or_file, [state])


def load_state(path_or_file) -> HydroState:
    states = load_states(path_or_file)
    if len(states) != 1:
        raise ValueError(f"expected a single state, file holds {len(states)}")
    return states[0]
