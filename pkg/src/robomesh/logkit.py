"""Bit-exact channel logging, timed replay and CSV export.

Log file layout (big-endian):

    header  magic "ARKLOG01" | version u32 (=1)
    record  event_index u64 | recv_time_us u64 | channel_len u32 | channel
            | fingerprint u64 | payload_len u32 | payload

event_index is strictly increasing from 0; recv_time_us is nondecreasing
(clamped on write).  A truncated final record (crashed recorder) is silently
tolerated by the reader.

CSV export resamples the log onto a uniform time grid.  ``latest`` takes the
last message at or before each tick (zero-order hold, empty until the first
message); ``interp`` linearly interpolates numeric fields between bracketing
messages, walks angle-marked fields along the shortest arc, and holds
non-numeric fields.  Columns are flattened field paths prefixed with the
channel name; array fields become indexed columns sized from the channel's
first message (a length change mid-log is an error).
"""

from __future__ import annotations

import csv
import io
import math
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import schema as sc
from . import standard
from .transport import Envelope, match_filter

MAGIC = b"ARKLOG01"
VERSION = 1
_HEADER = struct.Struct(">8sI")
_REC_FIXED1 = struct.Struct(">QQI")  # event_index, recv_time_us, channel_len
_REC_FIXED2 = struct.Struct(">QI")  # fingerprint, payload_len

FLUSH_INTERVAL = 0.1


@dataclass
class LogRecord:
    event_index: int
    recv_time_us: int
    channel: str
    fingerprint: int
    payload: bytes


class LogWriter:
    def __init__(self, path):
        self._fh = open(path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, VERSION))
        self._index = 0
        self._last_time_us = 0
        self._last_flush = time.monotonic()

    def append(self, channel: str, fingerprint: int, payload: bytes, recv_time_us: int) -> int:
        recv_time_us = max(recv_time_us, self._last_time_us)
        self._last_time_us = recv_time_us
        raw_channel = channel.encode("utf-8")
        self._fh.write(_REC_FIXED1.pack(self._index, recv_time_us, len(raw_channel)))
        self._fh.write(raw_channel)
        self._fh.write(_REC_FIXED2.pack(fingerprint, len(payload)))
        self._fh.write(payload)
        self._index += 1
        now = time.monotonic()
        if now - self._last_flush >= FLUSH_INTERVAL:
            self.flush()
        return self._index - 1

    def flush(self) -> None:
        self._fh.flush()
        self._last_flush = time.monotonic()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    @property
    def count(self) -> int:
        return self._index


def read_log(path) -> list[LogRecord]:
    """Read every complete record; a truncated tail is ignored."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: not a robomesh log (too short)")
    magic, version = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported log version {version}")
    records = []
    pos = _HEADER.size
    n = len(data)
    while pos < n:
        if pos + _REC_FIXED1.size > n:
            break
        index, recv_us, channel_len = _REC_FIXED1.unpack_from(data, pos)
        pos2 = pos + _REC_FIXED1.size
        if pos2 + channel_len + _REC_FIXED2.size > n:
            break
        channel = data[pos2 : pos2 + channel_len].decode("utf-8", errors="replace")
        pos2 += channel_len
        fingerprint, payload_len = _REC_FIXED2.unpack_from(data, pos2)
        pos2 += _REC_FIXED2.size
        if pos2 + payload_len > n:
            break
        records.append(LogRecord(index, recv_us, channel, fingerprint, data[pos2 : pos2 + payload_len]))
        pos = pos2 + payload_len
    return records


class Recorder:
    """Subscribes raw envelopes matching the filters and appends them to a log.

    Runs on its own drain thread; stop() flushes and closes the file.
    """

    def __init__(self, node, channel_filters, output_path, queue_capacity: int = 8192):
        self.node = node
        self.filters = list(channel_filters)
        self.writer = LogWriter(output_path)
        self.error: Exception | None = None
        self._subs = [node.create_raw_subscriber(f, queue_capacity) for f in self.filters]
        self._seen: set[tuple] = set()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="rm-recorder")
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            self._pump(block=True)
        self._pump(block=False)  # final drain
        self.writer.close()

    def _pump(self, block: bool) -> None:
        batch: list[Envelope] = []
        for sub in self._subs:
            batch.extend(sub.drain())
        if not batch and block:
            env = self._subs[0].recv(timeout=FLUSH_INTERVAL)
            if env is not None:
                batch.append(env)
            for sub in self._subs[1:]:
                batch.extend(sub.drain())
        if not batch:
            self.writer.flush()
            return
        batch.sort(key=lambda e: e.recv_time_us)
        for env in batch:
            # overlapping filters may deliver one envelope twice
            key = (env.channel, env.sequence, env.send_time_us)
            if len(self._subs) > 1:
                if key in self._seen:
                    continue
                self._seen.add(key)
                if len(self._seen) > 65536:
                    self._seen.clear()
            try:
                self.writer.append(env.channel, env.fingerprint, env.payload, env.recv_time_us)
            except OSError as e:  # disk full: stop, keep prior records valid
                self.error = e
                self._stop.set()
                return

    @property
    def count(self) -> int:
        return self.writer.count

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5.0)


def replay(log_path, publish_raw, speed: float = 1.0, channel_remap: dict | None = None,
           sleep=time.sleep) -> int:
    """Republish each record, spacing by recorded inter-arrival times / speed.

    ``publish_raw(channel, fingerprint, payload)`` is normally
    NodeHandle.publish_raw.  Returns the number of records replayed.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    records = read_log(log_path)  # raises before any publication
    remap = channel_remap or {}
    if not records:
        return 0
    t0_us = records[0].recv_time_us
    start = time.monotonic()
    for rec in records:
        target = start + (rec.recv_time_us - t0_us) / 1e6 / speed
        delay = target - time.monotonic()
        if delay > 0:
            sleep(delay)
        publish_raw(remap.get(rec.channel, rec.channel), rec.fingerprint, rec.payload)
    return len(records)


# ---------------------------------------------------------------------------
# CSV export


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


_NUMERIC = ("i8", "i16", "i32", "i64", "f32", "f64")


@dataclass
class Column:
    channel: str
    path: str  # leaf path within the message
    index: int | None  # element index for array leaves
    numeric: bool
    angle: bool

    @property
    def header(self) -> str:
        if self.index is None:
            return f"{self.channel}.{self.path}"
        return f"{self.channel}.{self.path}[{self.index}]"

    def extract(self, value):
        leaf = sc.get_path(value, self.path)
        return leaf[self.index] if self.index is not None else leaf


@dataclass
class ExportReport:
    rows: int = 0
    columns: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _channel_columns(channel: str, schema: sc.MessageSchema, first_value) -> list[Column]:
    cols = []
    for path, leaf, angle in sc.iter_leaf_paths(schema):
        if isinstance(leaf, sc.ArrayType):
            numeric = leaf.element in _NUMERIC
            n = leaf.length if leaf.length is not None else len(sc.get_path(first_value, path))
            cols.extend(Column(channel, path, i, numeric, angle) for i in range(n))
        else:
            cols.append(Column(channel, path, None, leaf in _NUMERIC, angle))
    return cols


def _check_lengths(channel, schema, values) -> None:
    var_paths = [
        (path, leaf) for path, leaf, _ in sc.iter_leaf_paths(schema)
        if isinstance(leaf, sc.ArrayType) and leaf.length is None
    ]
    if not var_paths:
        return
    first = values[0]
    for v in values[1:]:
        for path, _ in var_paths:
            if len(sc.get_path(v, path)) != len(sc.get_path(first, path)):
                raise ValueError(
                    f"{channel}.{path}: array length changed mid-log; cannot form columns"
                )


def _cell(value, numeric: bool):
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    if numeric and isinstance(value, float):
        return repr(value)
    return value


def export_csv(
    log_path,
    space: dict[str, str],
    rate_hz: float,
    mode: str,
    output_path,
    allow_missing: set | None = None,
    schemas: dict[str, sc.MessageSchema] | None = None,
    plot_dir=None,
) -> ExportReport:
    """Resample the log over ``space`` (channel -> schema name) at rate_hz.

    Writes RFC-4180 CSV with '.' decimal separator; first two columns are
    t_us (microseconds since log start) and epoch_us (absolute).
    """
    if mode not in ("latest", "interp"):
        raise ValueError(f"mode must be latest or interp, got {mode!r}")
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    allow_missing = allow_missing or set()
    lookup = schemas or standard.STANDARD_SCHEMAS
    report = ExportReport()

    records = read_log(log_path)
    if not records:
        raise ValueError(f"{log_path}: empty log")

    series: dict[str, list[tuple[int, dict]]] = {ch: [] for ch in space}
    resolved = {}
    for ch, schema_name in space.items():
        try:
            resolved[ch] = lookup[schema_name]
        except KeyError:
            raise KeyError(f"{ch}: unknown schema {schema_name!r}") from None
    for rec in records:
        schema = resolved.get(rec.channel)
        if schema is None:
            continue
        if rec.fingerprint != sc.fingerprint(schema):
            raise ValueError(
                f"{rec.channel}: log fingerprint {rec.fingerprint:016x} does not match "
                f"schema {schema.name}"
            )
        series[rec.channel].append((rec.recv_time_us, sc.decode(schema, rec.payload)))

    missing = [ch for ch, msgs in series.items() if not msgs and ch not in allow_missing]
    if missing:
        raise ValueError(f"channels absent from log: {sorted(missing)}")

    modes: dict[str, str] = {}
    columns: list[Column] = []
    for ch in space:
        msgs = series[ch]
        ch_mode = mode
        if mode == "interp" and len(msgs) < 2:
            ch_mode = "latest"
            report.warnings.append(f"{ch}: fewer than 2 messages; interp fell back to latest")
        modes[ch] = ch_mode
        if msgs:
            _check_lengths(ch, resolved[ch], [m[1] for m in msgs])
            columns.extend(_channel_columns(ch, resolved[ch], msgs[0][1]))
        else:
            # allowed-missing channel with a fixed-size schema still gets columns
            fixed = all(
                not (isinstance(leaf, sc.ArrayType) and leaf.length is None)
                for _, leaf, _ in sc.iter_leaf_paths(resolved[ch])
            )
            if fixed:
                columns.extend(_channel_columns(ch, resolved[ch], None))

    t0 = records[0].recv_time_us
    t_end = records[-1].recv_time_us
    ticks = []
    k = 0
    while True:
        t_k = t0 + int(round(k * 1e6 / rate_hz))
        if t_k > t_end:
            break
        ticks.append(t_k)
        k += 1

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_us", "epoch_us"] + [c.header for c in columns])
    for t_k in ticks:
        row = [t_k - t0, t_k]
        for col in columns:
            row.append(_cell(sample_at(series[col.channel], t_k, col, modes[col.channel]), col.numeric))
        writer.writerow(row)

    Path(output_path).write_text(buf.getvalue(), encoding="utf-8")
    report.rows = len(ticks)
    report.columns = [c.header for c in columns]
    if plot_dir is not None:
        _render_plots(plot_dir, ticks, t0, columns, series, modes)
    return report


def sample_at(msgs, t_k: int, col: Column, mode: str):
    """Value of one column at tick t_k; None when no message has arrived yet."""
    if not msgs:
        return None
    lo, hi = 0, len(msgs)
    while lo < hi:  # rightmost message with time <= t_k
        mid = (lo + hi) // 2
        if msgs[mid][0] <= t_k:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return None
    t_a, v_a = msgs[lo - 1]
    a = col.extract(v_a)
    if mode == "latest" or not col.numeric or isinstance(a, bool):
        return a
    if lo >= len(msgs):
        return a  # nothing after t_k: hold
    t_b, v_b = msgs[lo]
    b = col.extract(v_b)
    u = (t_k - t_a) / (t_b - t_a)
    if col.angle:
        return wrap_angle(a + u * wrap_angle(b - a))
    return a + u * (b - a)


def _render_plots(plot_dir, ticks, t0, columns, series, modes) -> None:
    """One PNG per numeric scalar column, next to the CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(plot_dir)
    out.mkdir(parents=True, exist_ok=True)
    ts = [(t - t0) / 1e6 for t in ticks]
    for col in columns:
        if not col.numeric or col.index is not None:
            continue
        ys = [sample_at(series[col.channel], t, col, modes[col.channel]) for t in ticks]
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(ts, [float(y) if y is not None else float("nan") for y in ys], lw=1)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(col.header)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        safe = col.header.replace("/", "_").replace(".", "_")
        fig.savefig(out / f"{safe}.png", dpi=100)
        plt.close(fig)
