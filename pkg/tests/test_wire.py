import numpy as np
import pytest

from fedgen.errors import MalformedMessage
from fedgen.federation import Channel, Message, MessageKind, decode_message, encode_message
from fedgen.federation.wire import HEADER_SIZE, SERVER_ID, model_payload_size
from fedgen.oracle import Prompt, PromptKind


def _class_prompts(n):
    return tuple(Prompt(PromptKind.CLASS_LEVEL, c, 0) for c in range(n))


def test_ten_class_prompts_frame_is_61_bytes():
    frame = encode_message(Message(MessageKind.PROMPT_UPLOAD, 1, 3, _class_prompts(10)))
    assert len(frame) == 61
    assert len(frame) - HEADER_SIZE == 50


def test_650_param_model_frame_is_2615_bytes():
    values = np.arange(650, dtype=np.float32)
    frame = encode_message(Message(MessageKind.GLOBAL_MODEL_DOWN, 7, 2, values))
    assert len(frame) == 2615
    assert model_payload_size(650) == 2604


def test_header_layout_is_little_endian():
    frame = encode_message(Message(MessageKind.LOCAL_MODEL_UP, 0x01020304, 0x0506, np.zeros(1, np.float32)))
    assert frame[:11] == bytes([3, 4, 3, 2, 1, 6, 5, 8, 0, 0, 0])
    assert frame[11:15] == bytes([1, 0, 0, 0])


def test_instance_prompt_size():
    p = Prompt(PromptKind.INSTANCE_LEVEL, 4, 1, bytes(range(16)))
    frame = encode_message(Message(MessageKind.PROMPT_UPLOAD, 1, 0, (p,)))
    assert len(frame) == HEADER_SIZE + 5 + 16
    assert decode_message(frame, feature_dim=16).payload == (p,)


def _random_message(g, dim):
    kind = MessageKind(int(g.integers(1, 4)))
    rnd, client = int(g.integers(0, 2**32)), int(g.integers(0, 2**16))
    if kind.carries_model:
        payload = g.standard_normal(int(g.integers(0, 300))).astype(np.float32)
    else:
        payload = []
        for _ in range(int(g.integers(0, 20))):
            c, d = int(g.integers(0, 2**16)), int(g.integers(0, 2**16))
            if g.random() < 0.5:
                payload.append(Prompt(PromptKind.CLASS_LEVEL, c, d))
            else:
                payload.append(Prompt(PromptKind.INSTANCE_LEVEL, c, d, g.integers(0, 256, dim, dtype=np.uint8).tobytes()))
    return Message(kind, rnd, client, payload)


def test_round_trip_fuzz():
    g = np.random.default_rng(99)
    dim = 24
    for _ in range(1000):
        m = _random_message(g, dim)
        frame = encode_message(m)
        assert decode_message(frame, dim) == m
        payload_len = len(frame) - HEADER_SIZE
        assert int.from_bytes(frame[7:11], "little") == payload_len


def test_server_marker_round_trips():
    m = Message(MessageKind.GLOBAL_MODEL_DOWN, 1, SERVER_ID, np.ones(3, np.float32))
    assert decode_message(encode_message(m)).client_id == SERVER_ID


@pytest.mark.parametrize(
    "mutate",
    [
        lambda f: f[:5],  # short header
        lambda f: f[:-1],  # truncated payload
        lambda f: f + b"\x00",  # overlong
        lambda f: bytes([9]) + f[1:],  # unknown kind
    ],
)
def test_malformed_frames(mutate):
    frame = encode_message(Message(MessageKind.LOCAL_MODEL_UP, 1, 0, np.ones(4, np.float32)))
    with pytest.raises(MalformedMessage):
        decode_message(mutate(frame))


def test_inconsistent_param_count():
    frame = bytearray(encode_message(Message(MessageKind.LOCAL_MODEL_UP, 1, 0, np.ones(4, np.float32))))
    frame[11] = 5
    with pytest.raises(MalformedMessage):
        decode_message(bytes(frame))


def test_bad_prompt_tag_and_missing_dim():
    frame = bytearray(encode_message(Message(MessageKind.PROMPT_UPLOAD, 1, 0, _class_prompts(2))))
    frame[11] = 7
    with pytest.raises(MalformedMessage):
        decode_message(bytes(frame))
    p = Prompt(PromptKind.INSTANCE_LEVEL, 0, 0, b"\x01\x02")
    with pytest.raises(MalformedMessage):
        decode_message(encode_message(Message(MessageKind.PROMPT_UPLOAD, 1, 0, (p,))))


def test_out_of_range_field():
    with pytest.raises(MalformedMessage):
        encode_message(Message(MessageKind.PROMPT_UPLOAD, -1, 0, ()))


def test_channel_records_frame_lengths():
    ch = Channel(keep_frames=True)
    out = ch.send(Message(MessageKind.PROMPT_UPLOAD, 1, 2, _class_prompts(3)), "up", 2)
    assert out.payload == _class_prompts(3)
    assert ch.ledger.entries[0].bytes == len(ch.frames[0]) == 26
    with pytest.raises(ValueError):
        ch.ledger.record(1, "sideways", 0, 1)
