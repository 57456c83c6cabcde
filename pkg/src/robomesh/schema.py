"""Message schemas, the binary wire encoding and 64-bit schema fingerprints.

A schema is a named, ordered list of typed fields.  Field types:

    bool, i8, i16, i32, i64, f32, f64, string,
    fixed-array<T,n>, var-array<T>, or another schema (one level deep).

Canonical text (the fingerprint input) is the schema name followed by each
``field:type`` joined with ``|``, nested schemas expanded inline in braces,
no whitespace::

    pose_2d_t|x:f64|y:f64|theta:f64
    header_t|stamp:{time_t|sec:i64|nsec:i32}|frame:string

The fingerprint is 64-bit FNV-1a over the UTF-8 canonical text.

Wire encoding is big-endian with no padding or alignment:

    bool          1 byte, 0 or 1
    i8/i16/i32/i64  two's complement
    f32/f64       IEEE-754
    string        i32 byte length + UTF-8 bytes, no terminator
    fixed-array   elements in order
    var-array     i32 count + elements
    nested schema fields in declaration order

The decoder is total: any byte string yields a value or a DecodeError naming
the failing field; array counts are validated against the remaining buffer
before any allocation.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field as dc_field
from typing import Any, Iterator, Mapping, Sequence, Union

PRIMITIVES = ("bool", "i8", "i16", "i32", "i64", "f32", "f64", "string")

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_INT_RANGES = {
    "i8": (-(1 << 7), (1 << 7) - 1),
    "i16": (-(1 << 15), (1 << 15) - 1),
    "i32": (-(1 << 31), (1 << 31) - 1),
    "i64": (-(1 << 63), (1 << 63) - 1),
}
_INT_SIZES = {"i8": 1, "i16": 2, "i32": 4, "i64": 8}
_I32_MAX = (1 << 31) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class SchemaError(ValueError):
    """Invalid schema definition (bad identifier, duplicate field, deep nesting)."""


class EncodeError(ValueError):
    """Value does not conform to its schema."""


class DecodeError(ValueError):
    """Byte string does not decode under the schema; names the failing field."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


@dataclass(frozen=True)
class ArrayType:
    """fixed-array<T,n> when length is set, var-array<T> otherwise."""

    element: Union[str, "MessageSchema"]
    length: int | None = None


FieldType = Union[str, ArrayType, "MessageSchema"]


@dataclass(frozen=True)
class Field:
    name: str
    type: FieldType
    # metadata only (CSV interpolation wraps angles on the shortest arc);
    # never part of the canonical text or fingerprint
    angle: bool = False


@dataclass(frozen=True)
class MessageSchema:
    name: str
    fields: tuple[Field, ...]

    def __post_init__(self):
        validate_schema(self)

    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)


def _validate_type(t: FieldType, where: str, depth: int) -> None:
    if isinstance(t, str):
        if t not in PRIMITIVES:
            raise SchemaError(f"{where}: unknown type {t!r}")
        return
    if isinstance(t, ArrayType):
        if t.length is not None and t.length < 0:
            raise SchemaError(f"{where}: negative fixed-array length")
        if isinstance(t.element, ArrayType):
            raise SchemaError(f"{where}: arrays of arrays are not supported")
        _validate_type(t.element, where, depth)
        return
    if isinstance(t, MessageSchema):
        # header_t inside laser_scan_t already carries time_t, so two levels
        # are required by the standard set; anything deeper is rejected
        if depth >= 2:
            raise SchemaError(f"{where}: schemas may nest at most two levels deep")
        return
    raise SchemaError(f"{where}: bad field type {t!r}")


def validate_schema(schema: MessageSchema, _depth: int = 0) -> None:
    if not schema.name or "/" in schema.name or not _IDENT_RE.match(schema.name):
        raise SchemaError(f"bad schema name {schema.name!r}")
    seen = set()
    for f in schema.fields:
        if not _IDENT_RE.match(f.name):
            raise SchemaError(f"{schema.name}.{f.name}: bad field identifier")
        if f.name in seen:
            raise SchemaError(f"{schema.name}.{f.name}: duplicate field name")
        seen.add(f.name)
        _validate_type(f.type, f"{schema.name}.{f.name}", _depth)
        nested = f.type.element if isinstance(f.type, ArrayType) else f.type
        if isinstance(nested, MessageSchema):
            validate_schema(nested, _depth + 1)


def _type_text(t: FieldType) -> str:
    if isinstance(t, str):
        return t
    if isinstance(t, ArrayType):
        inner = _type_text(t.element)
        if t.length is None:
            return f"var-array<{inner}>"
        return f"fixed-array<{inner},{t.length}>"
    return "{" + canonical_text(t) + "}"


def canonical_text(schema: MessageSchema) -> str:
    parts = [schema.name]
    parts.extend(f"{f.name}:{_type_text(f.type)}" for f in schema.fields)
    return "|".join(parts)


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def fingerprint(schema: MessageSchema) -> int:
    """Deterministic u64 FNV-1a hash of the canonical schema text."""
    return fnv1a_64(canonical_text(schema).encode("utf-8"))


# ---------------------------------------------------------------------------
# encoding


def _encode_value(t: FieldType, v: Any, path: str, out: bytearray) -> None:
    if isinstance(t, str):
        if t == "bool":
            if isinstance(v, bool) or v in (0, 1):
                out.append(1 if v else 0)
                return
            raise EncodeError(f"{path}: expected bool, got {v!r}")
        if t in _INT_RANGES:
            try:
                iv = int(v)
            except (TypeError, ValueError):
                raise EncodeError(f"{path}: expected {t}, got {type(v).__name__}") from None
            if isinstance(v, float) and v != iv:
                raise EncodeError(f"{path}: non-integral value {v!r} for {t}")
            lo, hi = _INT_RANGES[t]
            if not lo <= iv <= hi:
                raise EncodeError(f"{path}: {iv} out of range for {t}")
            out += iv.to_bytes(_INT_SIZES[t], "big", signed=True)
            return
        if t == "f64":
            try:
                out += struct.pack(">d", v)
            except (TypeError, struct.error):
                raise EncodeError(f"{path}: expected f64, got {v!r}") from None
            return
        if t == "f32":
            try:
                out += struct.pack(">f", v)
            except (TypeError, OverflowError, struct.error):
                raise EncodeError(f"{path}: expected f32, got {v!r}") from None
            return
        if t == "string":
            if not isinstance(v, str):
                raise EncodeError(f"{path}: expected string, got {type(v).__name__}")
            raw = v.encode("utf-8")
            if len(raw) > _I32_MAX:
                raise EncodeError(f"{path}: string exceeds i32 length")
            out += len(raw).to_bytes(4, "big")
            out += raw
            return
        raise AssertionError(t)

    if isinstance(t, ArrayType):
        if isinstance(v, (str, bytes)) or not isinstance(v, Sequence):
            try:
                v = list(v)  # accept numpy arrays and other iterables
            except TypeError:
                raise EncodeError(f"{path}: expected array, got {type(v).__name__}") from None
        n = len(v)
        if t.length is not None:
            if n != t.length:
                raise EncodeError(f"{path}: fixed-array needs {t.length} elements, got {n}")
        else:
            if n > _I32_MAX:
                raise EncodeError(f"{path}: array length exceeds i32")
            out += n.to_bytes(4, "big")
        if t.element == "i8" and n:  # bulk path for byte blobs
            try:
                out += struct.pack(f">{n}b", *v)
                return
            except (struct.error, TypeError):
                pass  # fall through for precise per-element errors
        if t.element in ("f64", "f32") and n:
            try:
                out += struct.pack(f">{n}{'d' if t.element == 'f64' else 'f'}", *v)
                return
            except (struct.error, OverflowError, TypeError):
                pass
        for i, item in enumerate(v):
            _encode_value(t.element, item, f"{path}[{i}]", out)
        return

    # nested schema
    if not isinstance(v, Mapping):
        raise EncodeError(f"{path}: expected mapping for {t.name}, got {type(v).__name__}")
    _encode_fields(t, v, path, out)


def _encode_fields(schema: MessageSchema, value: Mapping, prefix: str, out: bytearray) -> None:
    extra = set(value.keys()) - set(schema.field_names())
    if extra:
        raise EncodeError(f"{prefix or schema.name}: unknown fields {sorted(extra)}")
    for f in schema.fields:
        path = f"{prefix}.{f.name}" if prefix else f.name
        if f.name not in value:
            raise EncodeError(f"{path}: missing field")
        _encode_value(f.type, value[f.name], path, out)


def encode(schema: MessageSchema, value: Mapping) -> bytes:
    """Encode a schema-conforming mapping to wire bytes."""
    out = bytearray()
    _encode_fields(schema, value, "", out)
    return bytes(out)


# ---------------------------------------------------------------------------
# decoding


def _min_size(t: FieldType) -> int:
    if isinstance(t, str):
        if t == "bool" or t == "i8":
            return 1
        if t == "string":
            return 4
        if t in _INT_SIZES:
            return _INT_SIZES[t]
        return 4 if t == "f32" else 8
    if isinstance(t, ArrayType):
        if t.length is None:
            return 4
        return t.length * _min_size(t.element)
    return sum(_min_size(f.type) for f in t.fields)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, path: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(path, "truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _decode_value(t: FieldType, r: _Reader, path: str) -> Any:
    if isinstance(t, str):
        if t == "bool":
            b = r.take(1, path)[0]
            if b > 1:
                raise DecodeError(path, f"bad bool byte {b}")
            return bool(b)
        if t in _INT_SIZES:
            return int.from_bytes(r.take(_INT_SIZES[t], path), "big", signed=True)
        if t == "f64":
            return struct.unpack(">d", r.take(8, path))[0]
        if t == "f32":
            return struct.unpack(">f", r.take(4, path))[0]
        if t == "string":
            n = int.from_bytes(r.take(4, path), "big", signed=True)
            if n < 0:
                raise DecodeError(path, f"negative string length {n}")
            if n > r.remaining():
                raise DecodeError(path, "truncated")
            raw = r.take(n, path)
            try:
                return raw.decode("utf-8")
            except UnicodeDecodeError:
                raise DecodeError(path, "invalid UTF-8") from None
        raise AssertionError(t)

    if isinstance(t, ArrayType):
        if t.length is not None:
            n = t.length
        else:
            n = int.from_bytes(r.take(4, path), "big", signed=True)
            if n < 0:
                raise DecodeError(path, f"negative array count {n}")
        # reject impossible counts before allocating anything
        if n * _min_size(t.element) > r.remaining():
            raise DecodeError(path, f"array count {n} exceeds remaining {r.remaining()} bytes")
        if t.element in ("i8", "f32", "f64") and n:  # bulk path
            fmt = {"i8": "b", "f32": "f", "f64": "d"}[t.element]
            raw = r.take(n * _min_size(t.element), path)
            return list(struct.unpack(f">{n}{fmt}", raw))
        return [_decode_value(t.element, r, f"{path}[{i}]") for i in range(n)]

    return {f.name: _decode_value(f.type, r, f"{path}.{f.name}") for f in t.fields}


def decode(schema: MessageSchema, data: bytes) -> dict:
    """Decode wire bytes; total on arbitrary input, rejects trailing bytes."""
    r = _Reader(data)
    value = {}
    for f in schema.fields:
        value[f.name] = _decode_value(f.type, r, f.name)
    if r.remaining():
        raise DecodeError("<end>", f"{r.remaining()} trailing bytes")
    return value


# ---------------------------------------------------------------------------
# field-path helpers shared by the CSV exporter and tap tool


def iter_leaf_paths(schema: MessageSchema) -> Iterator[tuple[str, FieldType, bool]]:
    """Yield (dotted path, leaf type, is_angle) for every non-nested leaf.

    Array fields are yielded whole (one path per array, not per element).
    """
    for f in schema.fields:
        if isinstance(f.type, MessageSchema):
            for path, leaf, angle in iter_leaf_paths(f.type):
                yield f"{f.name}.{path}", leaf, angle
        else:
            yield f.name, f.type, f.angle


def get_path(value: Mapping, path: str) -> Any:
    cur: Any = value
    for part in path.split("."):
        cur = cur[part]
    return cur
