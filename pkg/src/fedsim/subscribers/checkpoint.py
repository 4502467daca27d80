"""Binary checkpoints of a run's :class:`~fedsim.core.FLContext`.

Layout (all integers little-endian)::

    4   magic  b"MFCK"
    2   u16    format version (1)
    4   u32    header length H
    H   bytes  UTF-8 JSON header: config_digest, round, shape, rng_state,
               selector_state, history (sorted keys, compact separators)
    8   u64    number of parameter values N
    8N  f64    global parameters, little-endian IEEE-754
    4   u32    CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..core import FLContext, RoundRecord
from ..errors import DigestMismatchError, FormatError
from ..events import RoundFinished, Subscriber
from ..model import ParamVector

logger = logging.getLogger(__name__)

MAGIC = b"MFCK"
VERSION = 1


def encode_checkpoint(ctx: FLContext) -> bytes:
    header = {
        "config_digest": ctx.config_digest,
        "round": ctx.round,
        "shape": [list(s) for s in ctx.global_params.shape],
        "rng_state": ctx.rng_state,
        "selector_state": ctx.selector_state,
        "history": [r.to_dict() for r in ctx.history],
    }
    raw_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    values = ctx.global_params.values
    body = b"".join([
        MAGIC,
        struct.pack("<HI", VERSION, len(raw_header)),
        raw_header,
        struct.pack("<Q", values.size),
        values.astype("<f8").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> FLContext:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch (file corrupt or truncated)")
    version, hlen = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 10
    try:
        header = json.loads(body[offset:offset + hlen].decode("utf-8"))
        offset += hlen
        (n,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        if len(body) - offset != 8 * n:
            raise FormatError(f"expected {n} parameter values, found {(len(body) - offset) / 8}")
        values = np.frombuffer(body, dtype="<f8", count=n, offset=offset).astype(np.float64)
        params = ParamVector(values, [tuple(s) for s in header["shape"]])
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = header["rng_state"]
        history = [RoundRecord.from_dict(r) for r in header["history"]]
        ctx = FLContext(int(header["round"]), params, history, rng,
                        header["config_digest"], header["selector_state"])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, struct.error) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    if ctx.round != len(ctx.history):
        raise FormatError("checkpoint round does not match its history length")
    return ctx


def save_checkpoint(ctx: FLContext, path) -> None:
    """Atomically write ``ctx`` to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ctx))
    os.replace(tmp, path)


def load_checkpoint(path, expected_digest: str = None) -> FLContext:
    """Read a checkpoint; refuse it if it was made under a different config digest."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    ctx = decode_checkpoint(blob)
    if expected_digest is not None and ctx.config_digest != expected_digest:
        raise DigestMismatchError(
            f"checkpoint digest {ctx.config_digest[:12]} does not match config digest {expected_digest[:12]}"
        )
    return ctx


class CheckpointSubscriber(Subscriber):
    """Saves the run state every ``every`` finished rounds."""

    def __init__(self, path, every: int = 1):
        if every < 1:
            raise ValueError("checkpoint interval must be >= 1")
        self.path = Path(path)
        self.every = every
        self.saved_rounds = []

    def on_event(self, event, ctx):
        if isinstance(event, RoundFinished) and event.round % self.every == 0:
            save_checkpoint(ctx.snapshot(), self.path)
            self.saved_rounds.append(event.round)
            logger.debug("checkpoint written at round %d to %s", event.round, self.path)
