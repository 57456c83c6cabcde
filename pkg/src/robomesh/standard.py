"""Standard message schemas shared by every node in the stack."""

from __future__ import annotations

import math
from typing import Mapping

from .schema import ArrayType, Field, MessageSchema

time_t = MessageSchema("time_t", (Field("sec", "i64"), Field("nsec", "i32")))

header_t = MessageSchema("header_t", (Field("stamp", time_t), Field("frame", "string")))

pose_2d_t = MessageSchema(
    "pose_2d_t",
    (Field("x", "f64"), Field("y", "f64"), Field("theta", "f64", angle=True)),
)

twist_2d_t = MessageSchema("twist_2d_t", (Field("v", "f64"), Field("w", "f64")))

wheel_cmd_t = MessageSchema("wheel_cmd_t", (Field("left", "f64"), Field("right", "f64")))

joint_state_t = MessageSchema(
    "joint_state_t",
    (
        Field("names", ArrayType("string")),
        Field("positions", ArrayType("f64")),
        Field("velocities", ArrayType("f64")),
        Field("efforts", ArrayType("f64")),
    ),
)

laser_scan_t = MessageSchema(
    "laser_scan_t",
    (
        Field("header", header_t),
        Field("angles", ArrayType("f64")),
        Field("ranges", ArrayType("f64")),
        Field("range_max", "f64"),
    ),
)

occupancy_grid_t = MessageSchema(
    "occupancy_grid_t",
    (
        Field("header", header_t),
        Field("origin", pose_2d_t),
        Field("resolution", "f64"),
        Field("width", "i32"),
        Field("height", "i32"),
        Field("cells", ArrayType("f32")),
    ),
)

image_t = MessageSchema(
    "image_t",
    (
        Field("header", header_t),
        Field("width", "i32"),
        Field("height", "i32"),
        Field("encoding", "string"),
        Field("data", ArrayType("i8")),
    ),
)

transform_t = MessageSchema(
    "transform_t",
    (
        Field("header", header_t),
        Field("child", "string"),
        Field("x", "f64"),
        Field("y", "f64"),
        Field("z", "f64"),
        Field("qx", "f64"),
        Field("qy", "f64"),
        Field("qz", "f64"),
        Field("qw", "f64"),
    ),
)

# plumbing schemas: episode boundaries, reset / goal services, planned paths
episode_marker_t = MessageSchema(
    "episode_marker_t", (Field("episode", "i64"), Field("stamp_us", "i64"))
)

reset_request_t = MessageSchema(
    "reset_request_t", (Field("has_pose", "bool"), Field("pose", pose_2d_t))
)

reset_reply_t = MessageSchema(
    "reset_reply_t",
    (Field("ok", "bool"), Field("episode", "i64"), Field("message", "string")),
)

set_goal_reply_t = MessageSchema(
    "set_goal_reply_t",
    (Field("ok", "bool"), Field("waypoints", "i32"), Field("message", "string")),
)

path_2d_t = MessageSchema(
    "path_2d_t",
    (Field("header", header_t), Field("xs", ArrayType("f64")), Field("ys", ArrayType("f64"))),
)

STANDARD_SCHEMAS: dict[str, MessageSchema] = {
    s.name: s
    for s in (
        time_t,
        header_t,
        pose_2d_t,
        twist_2d_t,
        wheel_cmd_t,
        joint_state_t,
        laser_scan_t,
        occupancy_grid_t,
        image_t,
        transform_t,
        episode_marker_t,
        reset_request_t,
        reset_reply_t,
        set_goal_reply_t,
        path_2d_t,
    )
}


def lookup(name: str) -> MessageSchema:
    try:
        return STANDARD_SCHEMAS[name]
    except KeyError:
        raise KeyError(f"unknown schema {name!r}") from None


def make_header(stamp_us: int, frame: str = "") -> dict:
    return {"stamp": {"sec": stamp_us // 1_000_000, "nsec": (stamp_us % 1_000_000) * 1000}, "frame": frame}


def header_stamp_us(header: Mapping) -> int:
    return header["stamp"]["sec"] * 1_000_000 + header["stamp"]["nsec"] // 1000


def validate(name: str, value: Mapping) -> None:
    """Check the semantic invariants of a standard-schema value.

    Producers call this before publishing; the codec itself only enforces
    structural conformance.
    """
    if name == "laser_scan_t":
        if len(value["angles"]) != len(value["ranges"]):
            raise ValueError("laser_scan_t: angles and ranges must be the same length")
    elif name == "occupancy_grid_t":
        if any(c < 0.0 or c > 1.0 for c in value["cells"]):
            raise ValueError("occupancy_grid_t: cells must lie in [0, 1]")
        if len(value["cells"]) != value["width"] * value["height"]:
            raise ValueError("occupancy_grid_t: cells length != width*height")
    elif name == "transform_t":
        n = math.sqrt(
            value["qx"] ** 2 + value["qy"] ** 2 + value["qz"] ** 2 + value["qw"] ** 2
        )
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"transform_t: quaternion norm {n} not unit within 1e-6")
    elif name == "joint_state_t":
        n = len(value["names"])
        for key in ("positions", "velocities", "efforts"):
            if value[key] and len(value[key]) != n:
                raise ValueError(f"joint_state_t: {key} length != names length")
