"""Little-endian binary frames for protocol messages.

Every frame is ``u16 length`` (bytes that follow) then ``u32 sender``,
``u8 kind`` and a kind-specific payload.  Frames never exceed
:data:`MAX_FRAME` bytes.

========================  ==================================================
kind                      payload
========================  ==================================================
1 Heartbeat               u8 state, u8 has_tag, i16 x, i16 y, u16 ts, u16 epoch
2 ElectionId              u8 scope, u8 leader, u16 epoch, u32 candidate,
                          i32 watermark, u8 k, k x u32 known ids (k <= 8)
3 GeneChunk               u32 leader, u16 epoch, u8 index, u8 count, u8 k,
                          k x (i8 x, i8 y, u8 flag<<3 | nn)  (k <= 32)
4 NewShapeNotice          u32 leader, u16 epoch, i16 leader x, i16 leader y,
                          u8 chunk count, u16 total ones, 4 x i16 bounds,
                          i16 origin x, i16 origin y, u8 k, k x u32 co-seeds
========================  ==================================================

A ts of 0 and ``has_tag = 0`` encode absent values.
"""

from __future__ import annotations

import struct

from .protocol import (
    Election,
    GeneChunk,
    Heartbeat,
    Kind,
    Message,
    NewShapeNotice,
    Scope,
    State,
)

MAX_FRAME = 120

_STATES = list(State)
_HEAD = struct.Struct("<HIB")
_HB = struct.Struct("<BBhhHH")
_EL = struct.Struct("<BBHIiB")
_CH = struct.Struct("<IHBBB")
_ENTRY = struct.Struct("<bbB")
_NOTICE = struct.Struct("<IHhhBHhhhhhhB")


class WireError(ValueError):
    pass


def encode(msg: Message) -> bytes:
    p = msg.payload
    kind = Kind(msg.kind)
    if kind == Kind.HEARTBEAT:
        x, y = p.tag if p.tag is not None else (0, 0)
        body = _HB.pack(_STATES.index(p.state), p.tag is not None, x, y, p.ts or 0, p.epoch)
    elif kind == Kind.ELECTION_ID:
        if len(p.known) > 8:
            raise WireError("at most 8 known ids per frame")
        body = _EL.pack(p.scope, p.leader, p.epoch, p.candidate, p.watermark, len(p.known))
        body += struct.pack(f"<{len(p.known)}I", *p.known)
    elif kind == Kind.GENE_CHUNK:
        if len(p.entries) > 32:
            raise WireError("at most 32 entries per chunk")
        body = _CH.pack(p.leader_id, p.epoch, p.index, p.count, len(p.entries))
        body += b"".join(_ENTRY.pack(x, y, (flag << 3) | nn) for x, y, flag, nn in p.entries)
    else:
        body = _NOTICE.pack(
            p.leader_id, p.epoch, *p.leader_tag, p.chunk_count, p.total_ones,
            *p.bounds, *p.origin, len(p.co_seeds),
        )
        body += struct.pack(f"<{len(p.co_seeds)}I", *p.co_seeds)
    frame = _HEAD.pack(_HEAD.size - 2 + len(body), msg.sender_id, kind) + body
    if len(frame) > MAX_FRAME:
        raise WireError(f"frame of {len(frame)} bytes exceeds {MAX_FRAME}")
    return frame


def decode(frame: bytes) -> Message:
    try:
        length, sender, kind = _HEAD.unpack_from(frame)
        if length + 2 != len(frame):
            raise WireError("length prefix does not match frame size")
        kind = Kind(kind)
        off = _HEAD.size
        if kind == Kind.HEARTBEAT:
            st, has_tag, x, y, ts, epoch = _HB.unpack_from(frame, off)
            payload = Heartbeat(_STATES[st], (x, y) if has_tag else None, ts or None, epoch)
        elif kind == Kind.ELECTION_ID:
            scope, leader, epoch, cand, wm, k = _EL.unpack_from(frame, off)
            known = struct.unpack_from(f"<{k}I", frame, off + _EL.size)
            payload = Election(Scope(scope), epoch, cand, wm, tuple(known), bool(leader))
        elif kind == Kind.GENE_CHUNK:
            leader, epoch, index, count, k = _CH.unpack_from(frame, off)
            off += _CH.size
            entries = []
            for i in range(k):
                x, y, fn = _ENTRY.unpack_from(frame, off + i * _ENTRY.size)
                entries.append((x, y, fn >> 3, fn & 7))
            payload = GeneChunk(leader, epoch, index, count, tuple(entries))
        else:
            vals = _NOTICE.unpack_from(frame, off)
            k = vals[-1]
            seeds = struct.unpack_from(f"<{k}I", frame, off + _NOTICE.size)
            payload = NewShapeNotice(
                vals[0], vals[1], (vals[2], vals[3]), vals[4], vals[5],
                tuple(vals[6:10]), (vals[10], vals[11]), tuple(seeds),
            )
    except (struct.error, IndexError, ValueError) as exc:
        raise WireError(f"malformed frame: {exc}") from None
    return Message(sender, kind, payload)
