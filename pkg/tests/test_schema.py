from __future__ import annotations

import json
import random
import struct
from pathlib import Path

import pytest

from robomesh import standard
from robomesh.schema import (
    ArrayType,
    DecodeError,
    EncodeError,
    Field,
    MessageSchema,
    SchemaError,
    canonical_text,
    decode,
    encode,
    fingerprint,
)

from oracles import encode_message, fnv1a_64
from genutil import rand_message, rand_schema, values_equal

# frozen from the independent FNV-1a oracle over the canonical text
POSE_FINGERPRINT = 0x93B26A045C2D81D1


def test_pose_canonical_text():
    assert canonical_text(standard.pose_2d_t) == "pose_2d_t|x:f64|y:f64|theta:f64"


def test_pose_fingerprint_matches_independent_fnv():
    assert fingerprint(standard.pose_2d_t) == POSE_FINGERPRINT
    assert fnv1a_64(b"pose_2d_t|x:f64|y:f64|theta:f64") == POSE_FINGERPRINT


def test_identical_schemas_equal_fingerprints():
    a = MessageSchema("m", (Field("a", "i32"), Field("b", "f64")))
    b = MessageSchema("m", (Field("a", "i32"), Field("b", "f64")))
    assert fingerprint(a) == fingerprint(b)


def test_reordered_fields_change_fingerprint():
    a = MessageSchema("m", (Field("a", "i32"), Field("b", "f64")))
    b = MessageSchema("m", (Field("b", "f64"), Field("a", "i32")))
    assert fingerprint(a) != fingerprint(b)


def test_fingerprint_sensitivity_over_corpus():
    rng = random.Random(7)
    for _ in range(60):
        schema = rand_schema(rng)
        base = fingerprint(schema)
        for i, f in enumerate(schema.fields):
            renamed = list(schema.fields)
            renamed[i] = Field(f.name + "x", f.type)
            assert fingerprint(MessageSchema(schema.name, tuple(renamed))) != base
            if isinstance(f.type, str) and f.type != "string":
                retyped = list(schema.fields)
                retyped[i] = Field(f.name, "string")
                assert fingerprint(MessageSchema(schema.name, tuple(retyped))) != base


def test_invalid_schemas_rejected():
    with pytest.raises(SchemaError):
        MessageSchema("bad/name", (Field("a", "i32"),))
    with pytest.raises(SchemaError):
        MessageSchema("m", (Field("a", "i32"), Field("a", "i64")))
    with pytest.raises(SchemaError):
        MessageSchema("m", (Field("1bad", "i32"),))
    with pytest.raises(SchemaError):
        MessageSchema("m", (Field("a", "u32"),))
    inner = MessageSchema("inner", (Field("x", "i8"),))
    mid = MessageSchema("mid", (Field("i", inner),))
    outer = MessageSchema("outer", (Field("m", mid),))  # two levels: allowed
    with pytest.raises(SchemaError):
        MessageSchema("toodeep", (Field("o", outer),))


def test_pose_zero_encodes_to_24_zero_bytes():
    raw = encode(standard.pose_2d_t, {"x": 0.0, "y": 0.0, "theta": 0.0})
    assert raw == b"\x00" * 24


def test_twist_encoding_matches_ieee754_oracle():
    value = {"v": 1.0, "w": -0.5}
    raw = encode(standard.twist_2d_t, value)
    assert raw == encode_message(standard.twist_2d_t, value)
    # frozen byte dump from the independent IEEE-754 packer
    assert raw.hex() == "3ff0000000000000" + "bfe0000000000000"


def test_roundtrip_random_values():
    rng = random.Random(11)
    for _ in range(300):
        schema = rand_schema(rng)
        value = rand_message(schema, rng)
        raw = encode(schema, value)
        assert raw == encode_message(schema, value)
        back = decode(schema, raw)
        assert values_equal(back, value)


def test_roundtrip_preserves_f64_nan_payload():
    weird_nan = struct.unpack(">d", bytes.fromhex("7ff8dead0000beef"))[0]
    schema = MessageSchema("n", (Field("x", "f64"),))
    raw = encode(schema, {"x": weird_nan})
    assert raw.hex() == "7ff8dead0000beef"
    back = decode(schema, raw)
    assert struct.pack(">d", back["x"]).hex() == "7ff8dead0000beef"


def test_encode_is_pure():
    rng = random.Random(3)
    schema = rand_schema(rng)
    value = rand_message(schema, rng)
    assert encode(schema, value) == encode(schema, value)


def test_encode_rejects_mismatched_values():
    with pytest.raises(EncodeError):
        encode(standard.pose_2d_t, {"x": 0.0, "y": 0.0})
    with pytest.raises(EncodeError):
        encode(standard.pose_2d_t, {"x": 0.0, "y": 0.0, "theta": 0.0, "zz": 1})
    with pytest.raises(EncodeError):
        encode(standard.pose_2d_t, {"x": "nope", "y": 0.0, "theta": 0.0})
    fixed = MessageSchema("m", (Field("a", ArrayType("i8", 3)),))
    with pytest.raises(EncodeError):
        encode(fixed, {"a": [1, 2]})
    with pytest.raises(EncodeError):
        encode(MessageSchema("m", (Field("a", "i8"),)), {"a": 200})


def test_decode_empty_buffer_names_first_field():
    with pytest.raises(DecodeError, match="x: truncated"):
        decode(standard.pose_2d_t, b"")


def test_decode_rejects_trailing_bytes():
    raw = encode(standard.twist_2d_t, {"v": 0.0, "w": 0.0})
    with pytest.raises(DecodeError, match="trailing"):
        decode(standard.twist_2d_t, raw + b"\x00")


def test_decode_rejects_negative_array_count():
    schema = MessageSchema("m", (Field("a", ArrayType("i8")),))
    raw = (-1).to_bytes(4, "big", signed=True)
    with pytest.raises(DecodeError, match="negative array count"):
        decode(schema, raw)


def test_decode_rejects_huge_count_before_allocating():
    schema = MessageSchema("m", (Field("a", ArrayType("i64")),))
    raw = (0x7FFFFFFF).to_bytes(4, "big")
    with pytest.raises(DecodeError, match="exceeds remaining"):
        decode(schema, raw)


def test_decode_invalid_utf8():
    schema = MessageSchema("m", (Field("s", "string"),))
    raw = (2).to_bytes(4, "big") + b"\xff\xfe"
    with pytest.raises(DecodeError, match="invalid UTF-8"):
        decode(schema, raw)


def test_decoder_total_on_random_buffers():
    rng = random.Random(23)
    schemas = [rand_schema(rng) for _ in range(20)] + [
        standard.laser_scan_t,
        standard.occupancy_grid_t,
        standard.transform_t,
    ]
    for _ in range(3000):
        schema = rng.choice(schemas)
        raw = rng.randbytes(rng.randint(0, 64))
        try:
            decode(schema, raw)
        except DecodeError:
            pass


def test_golden_standard_schemas():
    fixture = json.loads(
        (Path(__file__).parent / "fixtures" / "golden_schemas.json").read_text()
    )
    seen = set()
    for entry in fixture:
        schema = standard.lookup(entry["schema"])
        seen.add(entry["schema"])
        assert canonical_text(schema) == entry["canonical"]
        assert fingerprint(schema) == int(entry["fingerprint"], 16)
        value = entry["value"]
        raw = encode(schema, value)
        assert raw.hex() == entry["hex"]
        assert raw == encode_message(schema, value)
        assert values_equal(decode(schema, raw), value)
    assert seen == set(standard.STANDARD_SCHEMAS)


def test_standard_validation_helpers():
    standard.validate("laser_scan_t", {"angles": [0.0], "ranges": [1.0]})
    with pytest.raises(ValueError):
        standard.validate("laser_scan_t", {"angles": [0.0, 0.1], "ranges": [1.0]})
    with pytest.raises(ValueError):
        standard.validate(
            "transform_t", {"qx": 0.0, "qy": 0.0, "qz": 0.0, "qw": 1.1}
        )
    with pytest.raises(ValueError):
        standard.validate(
            "occupancy_grid_t", {"cells": [0.5, 1.2], "width": 2, "height": 1}
        )
