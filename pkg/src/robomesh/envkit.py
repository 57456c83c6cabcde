"""Gym-style environment layer over live channels.

Observation and action spaces are dictionaries from channel name to schema
name. reset() is an acknowledged service call followed by a wait for fresh
data on every observation channel; step() publishes the action atomically
(validation first), paces to the configured rate, and returns the most
recent message per observation channel.

The sim flag changes nothing downstream: both bindings of a component must
expose identical channel names and schemas, so the code path (recorded in
``Environment.trace``) and the (channel, fingerprint) sets are invariant
under the switch; only which process serves the channels differs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import schema as sc
from . import standard
from .registry import RegistryError

RESET_WAIT_S = 5.0


class EnvError(RuntimeError):
    pass


@dataclass
class EnvConfig:
    sim: bool
    step_rate_hz: float
    horizon: int
    observation_space: dict[str, str]  # channel -> schema name
    action_space: dict[str, str]
    reset_service: str  # "node/service"
    name: str = "env"

    @classmethod
    def from_yaml(cls, path) -> "EnvConfig":
        raw = yaml.safe_load(Path(path).read_text())
        return cls(
            sim=bool(raw.get("sim", True)),
            step_rate_hz=float(raw["step_rate_hz"]),
            horizon=int(raw["horizon"]),
            observation_space=dict(raw["observation_space"]),
            action_space=dict(raw["action_space"]),
            reset_service=str(raw["reset_service"]),
            name=str(raw.get("name", "env")),
        )


@dataclass
class Observation:
    entries: dict[str, tuple[object, int]] = field(default_factory=dict)
    missing: set[str] = field(default_factory=set)

    def __getitem__(self, channel: str):
        return self.entries[channel]

    def value(self, channel: str):
        return self.entries[channel][0]

    def recv_time_us(self, channel: str) -> int:
        return self.entries[channel][1]

    def __contains__(self, channel: str) -> bool:
        return channel in self.entries


@dataclass
class StepResult:
    observation: Observation
    reward: float
    terminated: bool
    truncated: bool
    info: dict


class Environment:
    """Owned by one policy loop; subscribers are fed by the node's endpoint."""

    def __init__(self, node, config: EnvConfig, reward_hook=None, termination_hook=None,
                 schemas: dict[str, sc.MessageSchema] | None = None):
        if config.horizon <= 0:
            raise EnvError("horizon must be positive")
        if config.step_rate_hz <= 0:
            raise EnvError("step_rate_hz must be positive")
        self.node = node
        self.config = config
        self.reward_hook = reward_hook or (lambda obs, action: 0.0)
        self.termination_hook = termination_hook or (lambda obs: False)
        self.trace: list[str] = []  # code-path instrumentation
        lookup = schemas or standard.STANDARD_SCHEMAS

        self._mark("make_env")
        self._subs = {}
        for channel, schema_name in config.observation_space.items():
            try:
                schema = lookup[schema_name]
            except KeyError:
                raise EnvError(f"observation {channel}: unknown schema {schema_name!r}") from None
            self._subs[channel] = node.create_subscriber(channel, schema)
        self._pubs = {}
        prefix = node.name + "/"
        for channel, schema_name in config.action_space.items():
            try:
                schema = lookup[schema_name]
            except KeyError:
                raise EnvError(f"action {channel}: unknown schema {schema_name!r}") from None
            if not channel.startswith(prefix):
                raise EnvError(
                    f"action channel {channel!r} must be prefixed {prefix!r} (channel-name law)"
                )
            self._pubs[channel] = node.create_publisher(channel[len(prefix):], schema)
        try:
            node._registry.lookup_service(config.reset_service)
        except (KeyError, RegistryError) as e:
            raise EnvError(f"reset service {config.reset_service!r} unavailable: {e}") from None
        node.declare_service_types(
            config.reset_service, standard.reset_request_t, standard.reset_reply_t
        )
        self.episode_id: int | None = None
        self._steps = 0
        self._next_tick: float | None = None
        self._mark("make_env:done")

    def _mark(self, tag: str) -> None:
        self.trace.append(tag)

    def channel_fingerprints(self) -> set[tuple[str, int]]:
        """(channel, fingerprint) pairs this environment touches."""
        pairs = {(s.channel, s.fingerprint) for s in self._subs.values()}
        pairs |= {(p.channel, p.fingerprint) for p in self._pubs.values()}
        return pairs

    # -- gym surface --

    def reset(self, timeout: float = RESET_WAIT_S):
        self._mark("reset")
        reset_start_us = time.time_ns() // 1000
        reply = self.node.call_service(
            self.config.reset_service,
            {"has_pose": False, "pose": {"x": 0.0, "y": 0.0, "theta": 0.0}},
            timeout=max(timeout, 1.0),
        )
        if not reply.get("ok", False):
            raise EnvError(f"reset rejected: {reply.get('message', '')}")
        self.episode_id = reply["episode"]
        deadline = time.monotonic() + timeout
        waiting = set(self._subs)
        while waiting and time.monotonic() < deadline:
            for channel in sorted(waiting):
                latest = self._subs[channel].latest()
                if latest is not None and latest[1] >= reset_start_us:
                    waiting.discard(channel)
            if waiting:
                time.sleep(0.01)
        if waiting:
            raise EnvError(f"reset: no post-reset data on {sorted(waiting)}")
        self._steps = 0
        self._next_tick = None
        marker = sc.encode(
            standard.episode_marker_t,
            {"episode": self.episode_id, "stamp_us": reset_start_us},
        )
        self.node.publish_raw(
            f"__episode/{self.config.name}",
            sc.fingerprint(standard.episode_marker_t),
            marker,
        )
        self._mark("reset:done")
        return self._observe(), {"episode_id": self.episode_id}

    def _observe(self) -> Observation:
        obs = Observation()
        for channel, sub in self._subs.items():
            latest = sub.latest()
            if latest is None:
                obs.missing.add(channel)
            else:
                obs.entries[channel] = latest
        return obs

    def step(self, action: dict) -> StepResult:
        self._mark("step")
        expected = set(self._pubs)
        got = set(action)
        if got != expected:
            raise EnvError(
                f"action channels {sorted(got)} != action space {sorted(expected)}"
            )
        # validate every value before publishing anything (action atomicity)
        encoded = {}
        for channel, value in action.items():
            pub = self._pubs[channel]
            try:
                encoded[channel] = sc.encode(pub.schema, value)
            except sc.EncodeError as e:
                raise EnvError(f"action {channel}: {e}") from None
        self._mark("step:publish")
        for channel, payload in encoded.items():
            pub = self._pubs[channel]
            self.node.publish_raw(pub.channel, pub.fingerprint, payload)

        period = 1.0 / self.config.step_rate_hz
        now = time.monotonic()
        if self._next_tick is None:
            self._next_tick = now + period
        else:
            if self._next_tick > now:
                time.sleep(self._next_tick - now)
            self._next_tick = max(self._next_tick + period, time.monotonic())

        obs = self._observe()
        self._steps += 1
        terminated = bool(self.termination_hook(obs))
        truncated = (not terminated) and self._steps >= self.config.horizon
        reward = float(self.reward_hook(obs, action))
        self._mark("step:done")
        return StepResult(obs, reward, terminated, truncated, {"step": self._steps})


def make_env(node, config: EnvConfig, **kwargs) -> Environment:
    return Environment(node, config, **kwargs)


# ---------------------------------------------------------------------------
# driver contract


@dataclass
class DriverBinding:
    channel: str
    schema_name: str


@dataclass
class DriverConfig:
    """Per-component channel bindings for both sides of the sim-real switch.

    sim and real bindings must expose identical channel names and schemas;
    resolve() enforces that before returning the selected side.
    """

    component: str
    sim_sensors: dict[str, DriverBinding] = field(default_factory=dict)
    sim_commands: dict[str, DriverBinding] = field(default_factory=dict)
    real_sensors: dict[str, DriverBinding] = field(default_factory=dict)
    real_commands: dict[str, DriverBinding] = field(default_factory=dict)

    def resolve(self, sim: bool) -> tuple[dict, dict]:
        for a, b, what in (
            (self.sim_sensors, self.real_sensors, "sensor"),
            (self.sim_commands, self.real_commands, "command"),
        ):
            av = {(k, v.channel, v.schema_name) for k, v in a.items()}
            bv = {(k, v.channel, v.schema_name) for k, v in b.items()}
            if av != bv:
                raise EnvError(
                    f"driver {self.component}: sim and real {what} bindings differ: "
                    f"{sorted(av ^ bv)}"
                )
        return (self.sim_sensors, self.sim_commands) if sim else (
            self.real_sensors, self.real_commands
        )


class ChannelDriver:
    """get_data / send_command adapter over bound channels.

    Bind-time schema checks compare against live publishers in the registry;
    a fingerprint conflict fails the bind naming both values.
    """

    def __init__(self, node, config: DriverConfig, sim: bool,
                 schemas: dict[str, sc.MessageSchema] | None = None):
        lookup = schemas or standard.STANDARD_SCHEMAS
        sensors, commands = config.resolve(sim)
        self.node = node
        self.component = config.component
        self._sensor_subs = {}
        self._cmd = {}

        live = {}
        try:
            snap = node._registry.snapshot()
            for rec in snap.get("nodes", []):
                for channel, fp in rec.get("publishers", []):
                    live[channel] = fp
        except RegistryError:
            pass
        for logical, binding in sensors.items():
            schema = lookup[binding.schema_name]
            want = sc.fingerprint(schema)
            have = live.get(binding.channel)
            if have is not None and have != want:
                raise EnvError(
                    f"driver {config.component}/{logical}: schema mismatch on "
                    f"{binding.channel}: bound {want:016x}, live {have:016x}"
                )
            self._sensor_subs[binding.channel] = node.create_subscriber(binding.channel, schema)
        for logical, binding in commands.items():
            schema = lookup[binding.schema_name]
            self._cmd[logical] = (binding.channel, schema, sc.fingerprint(schema))
            self._cmd[binding.channel] = self._cmd[logical]

    def get_data(self):
        """Yield (channel, value) for every newly arrived sensor message."""
        for channel, sub in self._sensor_subs.items():
            for value, _ in sub.take_new():
                yield channel, value

    def latest(self, channel: str):
        return self._sensor_subs[channel].latest()

    def send_command(self, channel_or_logical: str, value) -> None:
        try:
            channel, schema, fp = self._cmd[channel_or_logical]
        except KeyError:
            raise EnvError(
                f"driver {self.component}: no command binding {channel_or_logical!r}"
            ) from None
        self.node.publish_raw(channel, fp, sc.encode(schema, value))
