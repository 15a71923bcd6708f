"""Binary wire format for federation messages.

Frame layout (little-endian)::

    kind[1B] | round[4B] | client_id[2B] | payload_len[4B] | payload

Payloads:

* ``PROMPT_UPLOAD``: concatenated prompts, each ``kind[1B] | class[2B] | domain[2B]``
  followed by ``feature_dim`` descriptor bytes for instance-level prompts.
* ``GLOBAL_MODEL_DOWN`` / ``LOCAL_MODEL_UP``: ``count[4B] | count x float32``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import MalformedMessage
from ..oracle import Prompt, PromptKind

HEADER = struct.Struct("<BIHI")
PROMPT_HEAD = struct.Struct("<BHH")
COUNT = struct.Struct("<I")
HEADER_SIZE = HEADER.size  # 11
SERVER_ID = 0xFFFF


class MessageKind(enum.IntEnum):
    PROMPT_UPLOAD = 1
    GLOBAL_MODEL_DOWN = 2
    LOCAL_MODEL_UP = 3

    @property
    def carries_model(self) -> bool:
        return self is not MessageKind.PROMPT_UPLOAD


Payload = Union[tuple[Prompt, ...], np.ndarray]


@dataclass(frozen=True, eq=False)
class Message:
    kind: MessageKind
    round: int
    client_id: int
    payload: Payload

    def __post_init__(self):
        kind = MessageKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind.carries_model:
            values = np.ascontiguousarray(self.payload, dtype=np.float32).reshape(-1)
            object.__setattr__(self, "payload", values)
        else:
            object.__setattr__(self, "payload", tuple(self.payload))

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        if (self.kind, self.round, self.client_id) != (other.kind, other.round, other.client_id):
            return False
        if self.kind.carries_model:
            # compare bit patterns so NaN payloads still round-trip as equal
            return self.payload.tobytes() == other.payload.tobytes()
        return self.payload == other.payload


def prompt_size(prompt: Prompt) -> int:
    extra = len(prompt.descriptor) if prompt.kind == PromptKind.INSTANCE_LEVEL else 0
    return PROMPT_HEAD.size + extra


def model_payload_size(num_params: int) -> int:
    return COUNT.size + 4 * num_params


def frame_size(payload_len: int) -> int:
    return HEADER_SIZE + payload_len


def _encode_payload(message: Message) -> bytes:
    if message.kind.carries_model:
        values = message.payload
        return COUNT.pack(values.size) + values.astype("<f4").tobytes()
    parts = []
    for p in message.payload:
        parts.append(PROMPT_HEAD.pack(int(p.kind), p.class_id, p.domain_id))
        if p.kind == PromptKind.INSTANCE_LEVEL:
            parts.append(bytes(p.descriptor))
    return b"".join(parts)


def encode_message(message: Message) -> bytes:
    try:
        payload = _encode_payload(message)
        header = HEADER.pack(int(message.kind), message.round, message.client_id, len(payload))
    except struct.error as exc:
        raise MalformedMessage(f"field out of range: {exc}") from exc
    return header + payload


def _decode_prompts(body: bytes, feature_dim: int | None) -> tuple[Prompt, ...]:
    prompts = []
    pos = 0
    while pos < len(body):
        if pos + PROMPT_HEAD.size > len(body):
            raise MalformedMessage("truncated prompt header")
        tag, class_id, domain_id = PROMPT_HEAD.unpack_from(body, pos)
        pos += PROMPT_HEAD.size
        try:
            kind = PromptKind(tag)
        except ValueError:
            raise MalformedMessage(f"unknown prompt kind tag {tag}") from None
        descriptor = None
        if kind == PromptKind.INSTANCE_LEVEL:
            if not feature_dim:
                raise MalformedMessage("instance-level prompts need feature_dim to decode")
            if pos + feature_dim > len(body):
                raise MalformedMessage("truncated prompt descriptor")
            descriptor = bytes(body[pos : pos + feature_dim])
            pos += feature_dim
        prompts.append(Prompt(kind, class_id, domain_id, descriptor))
    return tuple(prompts)


def decode_message(frame: bytes, feature_dim: int | None = None) -> Message:
    """Inverse of :func:`encode_message`.

    ``feature_dim`` is session context needed only to split instance-level
    descriptors, which are not length-prefixed on the wire.
    """
    frame = bytes(frame)
    if len(frame) < HEADER_SIZE:
        raise MalformedMessage(f"frame of {len(frame)} bytes is shorter than the header")
    tag, rnd, client_id, length = HEADER.unpack_from(frame, 0)
    if len(frame) != HEADER_SIZE + length:
        raise MalformedMessage(f"frame is {len(frame)} bytes, header announces {HEADER_SIZE + length}")
    try:
        kind = MessageKind(tag)
    except ValueError:
        raise MalformedMessage(f"unknown message kind tag {tag}") from None
    body = frame[HEADER_SIZE:]
    if kind.carries_model:
        if length < COUNT.size:
            raise MalformedMessage("model payload missing its parameter count")
        (count,) = COUNT.unpack_from(body, 0)
        if length != model_payload_size(count):
            raise MalformedMessage(f"model payload of {length} bytes cannot hold {count} params")
        payload = np.frombuffer(body, dtype="<f4", offset=COUNT.size).astype(np.float32)
    else:
        payload = _decode_prompts(body, feature_dim)
    return Message(kind, rnd, client_id, payload)
