"""LLEN checkpoint files.

Layout, all little-endian::

    b"LLEN"  u32 version(=1)  u32 count  record*count
    u32 epoch  u32 count  record*count          # optimizer state

    record := u16 name_len  utf8 name  u8 ndim  u32 dim*ndim  f32 data*prod(dims)

Reading parses and validates the whole file before anything is returned, so
a bad file never half-updates a model.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from lowlight.networks import Discriminator, Generator
from lowlight.optim import AdamState

MAGIC = b"LLEN"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


def _encode_records(records: Mapping[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(records))]
    for name, arr in records.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def encode_checkpoint(params: Mapping[str, np.ndarray], epoch: int, opt: Mapping[str, np.ndarray]) -> bytes:
    return b"".join(
        [MAGIC, struct.pack("<I", VERSION), _encode_records(params), struct.pack("<I", epoch), _encode_records(opt)]
    )


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointCorruptError(f"{self.source}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def records(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = self.unpack("<H")
            try:
                name = self.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointCorruptError(f"{self.source}: record name is not UTF-8") from exc
            (ndim,) = self.unpack("<B")
            dims = self.unpack(f"<{ndim}I")
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
            if name in out:
                raise CheckpointCorruptError(f"{self.source}: duplicate record {name!r}")
            out[name] = data
        return out


def decode_checkpoint(buf: bytes, source: str = "<bytes>"):
    """Returns ``(params, epoch, optimizer_records)``."""
    reader = _Reader(buf, source)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointFormatError(f"{source}: not an LLEN checkpoint (magic {buf[:4]!r})")
    reader.pos = 4
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{source}: unsupported checkpoint version {version}, expected {VERSION}")
    params = reader.records()
    (epoch,) = reader.unpack("<I")
    opt = reader.records()
    if reader.pos != len(buf):
        raise CheckpointCorruptError(f"{source}: {len(buf) - reader.pos} trailing bytes")
    return params, epoch, opt


def write_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], epoch: int, opt: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(params, epoch, opt))


def read_checkpoint(path: str | Path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror or exc})") from exc
    return decode_checkpoint(buf, str(path))


# ---------------------------------------------------------------------------
# model <-> records


def _optimizer_records(tag: str, names: list[str], state: AdamState) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, m in zip(names, state.m):
        out[f"opt.{tag}.m.{name}"] = m
    for name, v in zip(names, state.v):
        out[f"opt.{tag}.v.{name}"] = v
    out[f"opt.{tag}.t"] = np.array([state.t], dtype=np.float32)
    return out


def _state_from_records(tag: str, names: list[str], shapes: list[tuple], opt: Mapping[str, np.ndarray], source: str) -> AdamState:
    m, v = [], []
    for name, shape in zip(names, shapes):
        for kind, dest in (("m", m), ("v", v)):
            key = f"opt.{tag}.{kind}.{name}"
            if key not in opt:
                raise CheckpointCorruptError(f"{source}: missing optimizer record {key!r}")
            if opt[key].shape != shape:
                raise CheckpointCorruptError(f"{source}: {key} has shape {opt[key].shape}, expected {shape}")
            dest.append(opt[key].copy())
    t_key = f"opt.{tag}.t"
    if t_key not in opt or opt[t_key].size != 1:
        raise CheckpointCorruptError(f"{source}: missing optimizer record {t_key!r}")
    return AdamState(m=m, v=v, t=int(opt[t_key].reshape(-1)[0]))


def _split_params(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}


def checkpoint_save(
    path: str | Path,
    gen: Generator,
    disc: Discriminator,
    opt_states: Mapping[str, AdamState],
    epoch: int,
) -> None:
    """``opt_states`` maps ``"gen"``/``"disc"`` to the Adam state of each network."""
    params: dict[str, np.ndarray] = {}
    params.update({f"gen.{k}": v for k, v in gen.state_dict().items()})
    params.update({f"disc.{k}": v for k, v in disc.state_dict().items()})
    opt: dict[str, np.ndarray] = {}
    for tag, net in (("gen", gen), ("disc", disc)):
        if tag in opt_states:
            opt.update(_optimizer_records(tag, [n for n, _ in net.named_parameters()], opt_states[tag]))
    write_checkpoint(path, params, epoch, opt)


def _check_state(net, state: Mapping[str, np.ndarray], source: str) -> None:
    own = dict(net.named_parameters())
    missing = sorted(set(own) - set(state))
    unexpected = sorted(set(state) - set(own))
    if missing or unexpected:
        raise CheckpointCorruptError(f"{source}: parameter mismatch, missing={missing[:3]} unexpected={unexpected[:3]}")
    for name, p in own.items():
        if state[name].shape != p.shape:
            raise CheckpointCorruptError(f"{source}: {name} has shape {state[name].shape}, expected {p.shape}")


def restore_checkpoint(path: str | Path, gen: Generator, disc: Discriminator) -> tuple[dict[str, AdamState], int]:
    """Load a checkpoint into existing networks; nothing is modified unless the whole file is valid."""
    params, epoch, opt = read_checkpoint(path)
    source = str(path)
    gen_state = _split_params(params, "gen.")
    disc_state = _split_params(params, "disc.")
    _check_state(gen, gen_state, source)
    _check_state(disc, disc_state, source)
    states: dict[str, AdamState] = {}
    for tag, net in (("gen", gen), ("disc", disc)):
        if any(k.startswith(f"opt.{tag}.") for k in opt):
            names = [n for n, _ in net.named_parameters()]
            shapes = [p.shape for _, p in net.named_parameters()]
            states[tag] = _state_from_records(tag, names, shapes, opt, source)
    gen.load_state_dict(gen_state)
    disc.load_state_dict(disc_state)
    return states, epoch


def checkpoint_load(path: str | Path, a_max: float = 10.0):
    """Returns ``(gen, disc, opt_states, epoch)`` built fresh from the file."""
    gen = Generator(np.random.default_rng(0), a_max=a_max)
    disc = Discriminator(np.random.default_rng(0))
    states, epoch = restore_checkpoint(path, gen, disc)
    return gen, disc, states, epoch


def load_generator(path: str | Path, a_max: float = 10.0) -> Generator:
    """Generator-only load, for inference."""
    params, _, _ = read_checkpoint(path)
    gen = Generator(np.random.default_rng(0), a_max=a_max)
    state = _split_params(params, "gen.")
    _check_state(gen, state, str(path))
    gen.load_state_dict(state)
    return gen
