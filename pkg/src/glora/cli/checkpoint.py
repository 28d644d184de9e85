"""Binary run checkpoints.

Layout (all integers little-endian)::

    b"GLRA" | u32 version | sections... | "CRC " section

Each section is a 4-byte ASCII tag, a u64 payload length and the payload.
Matrices inside payloads are ``u64 rows, u64 cols`` followed by the row-major
float64 entries. The trailing ``CRC `` section holds the CRC-32 of every byte
before it. Loading checks all of this, plus shapes and orthonormality of the
stored bases, before handing back any state.
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from glora.cli.config import ExperimentConfig, dumps_config, loads_config
from glora.errors import CorruptCheckpoint, GloraError, VersionMismatch
from glora.fedsim.experiment import RunState, rule_for
from glora.readout import ClientProfile

MAGIC = b"GLRA"
VERSION = 1
ORTHO_TOL = 1e-8
_SECTION_ORDER = ("CONF", "ROND", "RNGS", "LAYR", "PROF", "ROWS")


@dataclass
class Checkpoint:
    config: ExperimentConfig
    next_round: int
    seed: int
    layer_matrices: list[list[np.ndarray] | None]
    profiles: list[dict[int, ClientProfile]]
    rows: list[str]

    @classmethod
    def from_state(cls, state: RunState, rows: list[str]) -> "Checkpoint":
        rule = rule_for(state.config)
        mats = [None if s is None else [np.array(m) for m in rule.state_matrices(s)] for s in state.layer_states]
        return cls(state.config, state.next_round, state.config.seed, mats, state.profiles, list(rows))

    def to_state(self) -> RunState:
        rule = rule_for(self.config)
        states = [None if m is None else rule.state_from_matrices(m, self.next_round - 1) for m in self.layer_matrices]
        profiles = [
            {cid: ClientProfile(p.client_id, p.rank, p.sample_count, p.history) for cid, p in layer.items()}
            for layer in self.profiles
        ]
        return RunState(self.config, self.next_round, states, profiles)


# encoding

def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def _u64(x: int) -> bytes:
    return struct.pack("<Q", x)


def _matrix(m: np.ndarray) -> bytes:
    m = np.ascontiguousarray(m, dtype="<f8")
    return _u64(m.shape[0]) + _u64(m.shape[1]) + m.tobytes(order="C")


def _section(tag: str, payload: bytes) -> bytes:
    return tag.encode("ascii") + _u64(len(payload)) + payload


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, _u32(VERSION)]
    parts.append(_section("CONF", dumps_config(ckpt.config).encode("utf-8")))
    parts.append(_section("ROND", _u64(ckpt.next_round)))
    parts.append(_section("RNGS", _u64(ckpt.seed)))
    layr = [_u32(len(ckpt.layer_matrices))]
    for mats in ckpt.layer_matrices:
        if mats is None:
            layr.append(_u32(0))
            continue
        layr.append(_u32(len(mats)))
        layr.extend(_matrix(m) for m in mats)
    parts.append(_section("LAYR", b"".join(layr)))
    prof = [_u32(len(ckpt.profiles))]
    for layer in ckpt.profiles:
        prof.append(_u32(len(layer)))
        for cid in sorted(layer):
            p = layer[cid]
            prof.append(_u64(int(p.client_id)) + _u64(p.rank) + _u64(p.sample_count))
            if p.history is None:
                prof.append(b"\x00")
            else:
                prof.append(b"\x01" + _matrix(p.history))
    parts.append(_section("PROF", b"".join(prof)))
    parts.append(_section("ROWS", "".join(r + "\n" for r in ckpt.rows).encode("utf-8")))
    body = b"".join(parts)
    return body + _section("CRC ", _u32(zlib.crc32(body)))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically: a crash mid-write never leaves a half-written file at ``path``."""
    path = Path(path)
    data = encode_checkpoint(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# decoding

class _Reader:
    def __init__(self, data: bytes, what: str):
        self.buf = io.BytesIO(data)
        self.size = len(data)
        self.what = what

    def take(self, n: int) -> bytes:
        chunk = self.buf.read(n)
        if len(chunk) != n:
            raise CorruptCheckpoint(f"{self.what}: truncated (wanted {n} bytes, got {len(chunk)})")
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def matrix(self) -> np.ndarray:
        rows, cols = self.u64(), self.u64()
        if rows == 0 or cols == 0:
            raise CorruptCheckpoint(f"{self.what}: empty matrix {rows}x{cols}")
        remaining = self.size - self.buf.tell()
        if rows * cols * 8 > remaining:
            raise CorruptCheckpoint(f"{self.what}: matrix {rows}x{cols} overruns section")
        m = np.frombuffer(self.take(rows * cols * 8), dtype="<f8").reshape(rows, cols).astype(np.float64)
        if not np.isfinite(m).all():
            raise CorruptCheckpoint(f"{self.what}: non-finite matrix entries")
        return m

    def done(self) -> None:
        if self.buf.tell() != self.size:
            raise CorruptCheckpoint(f"{self.what}: {self.size - self.buf.tell()} trailing bytes")


def _split_sections(data: bytes) -> dict[str, bytes]:
    top = _Reader(data, "checkpoint")
    if top.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic; not a glora checkpoint")
    version = top.u32()
    if version != VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, this build reads {VERSION}")
    sections: dict[str, bytes] = {}
    while True:
        start = top.buf.tell()
        if start == top.size:
            raise CorruptCheckpoint("missing CRC section")
        tag = top.take(4).decode("ascii", errors="replace")
        length = top.u64()
        if length > top.size - top.buf.tell():
            raise CorruptCheckpoint(f"section {tag!r} overruns file")
        payload = top.take(length)
        if tag == "CRC ":
            if length != 4 or struct.unpack("<I", payload)[0] != zlib.crc32(data[:start]):
                raise CorruptCheckpoint("CRC mismatch")
            top.done()
            break
        if tag in sections:
            raise CorruptCheckpoint(f"duplicate section {tag!r}")
        sections[tag] = payload
    if tuple(sections) != _SECTION_ORDER:
        raise CorruptCheckpoint(f"unexpected sections {list(sections)}")
    return sections


def _check_orthonormal(u: np.ndarray, what: str) -> None:
    gram = u.T @ u
    if np.abs(gram - np.eye(u.shape[1])).max() > ORTHO_TOL:
        raise CorruptCheckpoint(f"{what}: basis is not orthonormal")


def _check_layer(cfg: ExperimentConfig, mats: list[np.ndarray], layer: int) -> None:
    what = f"layer {layer}"
    shapes = [m.shape for m in mats]
    if cfg.rule == "glora":
        ok = len(mats) == 2 and shapes[0][0] == cfg.d_out and shapes[1] == (shapes[0][1], cfg.d_in)
        if ok:
            _check_orthonormal(mats[0], what)
    elif cfg.rule in ("fedit", "hetlora"):
        ok = len(mats) == 2 and shapes[0][0] == cfg.d_out and shapes[1] == (shapes[0][1], cfg.d_in)
    else:
        ok = shapes == [(cfg.d_out, cfg.d_in)]
    if not ok:
        raise CorruptCheckpoint(f"{what}: state shapes {shapes} do not fit rule {cfg.rule!r}")


def decode_checkpoint(data: bytes) -> Checkpoint:
    sec = _split_sections(data)
    try:
        cfg = loads_config(sec["CONF"].decode("utf-8"))
    except (UnicodeDecodeError, GloraError) as exc:
        raise CorruptCheckpoint(f"embedded config is invalid: {exc}") from None

    rd = _Reader(sec["ROND"], "ROND")
    next_round = rd.u64()
    rd.done()
    if next_round > cfg.rounds:
        raise CorruptCheckpoint(f"round {next_round} beyond configured {cfg.rounds}")
    rd = _Reader(sec["RNGS"], "RNGS")
    seed = rd.u64()
    rd.done()
    if seed != cfg.seed:
        raise CorruptCheckpoint("generator state does not match the embedded config")

    rd = _Reader(sec["LAYR"], "LAYR")
    n_layers = rd.u32()
    if n_layers != cfg.layers:
        raise CorruptCheckpoint(f"{n_layers} layer states for {cfg.layers} layers")
    layers: list[list[np.ndarray] | None] = []
    for layer in range(n_layers):
        count = rd.u32()
        if count == 0:
            layers.append(None)
            continue
        mats = [rd.matrix() for _ in range(count)]
        _check_layer(cfg, mats, layer)
        layers.append(mats)
    rd.done()
    if (next_round == 0) != all(m is None for m in layers) or (next_round > 0 and None in layers):
        raise CorruptCheckpoint("layer states inconsistent with round counter")

    rd = _Reader(sec["PROF"], "PROF")
    if rd.u32() != cfg.layers:
        raise CorruptCheckpoint("profile layer count mismatch")
    profiles: list[dict[int, ClientProfile]] = []
    for layer in range(cfg.layers):
        n = rd.u32()
        if n != cfg.n_clients:
            raise CorruptCheckpoint(f"layer {layer}: {n} profiles for {cfg.n_clients} clients")
        table: dict[int, ClientProfile] = {}
        for _ in range(n):
            cid, rank, count = rd.u64(), rd.u64(), rd.u64()
            if cid >= cfg.n_clients or cid in table or rank < 1 or count < 1:
                raise CorruptCheckpoint(f"layer {layer}: bad profile entry for client {cid}")
            flag = rd.u8()
            if flag not in (0, 1):
                raise CorruptCheckpoint(f"layer {layer}: bad history flag {flag}")
            history = rd.matrix() if flag else None
            if history is not None:
                if history.shape[0] != cfg.d_out or history.shape[1] > rank:
                    raise CorruptCheckpoint(f"client {cid}: history shape {history.shape}")
                _check_orthonormal(history, f"client {cid} history")
            table[cid] = ClientProfile(cid, rank, count, history)
        profiles.append(table)
    rd.done()

    try:
        text = sec["ROWS"].decode("utf-8")
    except UnicodeDecodeError:
        raise CorruptCheckpoint("ROWS section is not UTF-8") from None
    rows = text.split("\n")
    if rows[-1] != "":
        raise CorruptCheckpoint("ROWS section is not newline-terminated")
    rows = rows[:-1]
    if len(rows) != next_round:
        raise CorruptCheckpoint(f"{len(rows)} stored rows for round counter {next_round}")
    return Checkpoint(cfg, next_round, seed, layers, profiles, rows)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint: {exc}") from None
    return decode_checkpoint(data)
