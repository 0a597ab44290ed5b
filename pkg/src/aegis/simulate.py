"""Multi-user smart home activity simulator with threat injection.

Benign traces are built from per-user activity scripts. A movement step
emits the sensor/device cascade of a room transition in snapshot batches
(events sharing a timestamp): motion and light response in the origin room,
the connecting door opening, activation of the destination room while the
origin motion settles, and finally the door closing with the origin light
switched off. Five threat scenarios are injected into otherwise benign
traces with per-event ground-truth labels.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .apps import (
    AppContextDatabase,
    AppSource,
    Provenance,
    binding_app_source,
    extract_app,
    merge_contexts,
)
from .core import (
    ACTIVE,
    INACTIVE,
    AegisError,
    ContextArray,
    DeviceEvent,
    EntityDescriptor,
    EntityKind,
    EventSource,
    HomeDescriptor,
    Layout,
    PolicyKind,
    PolicyRule,
    ValueDomain,
    in_time_window,
)
from .engine import stream_to_contexts_with_spans

DAY_MS = 86_400_000
HOUR_MS = 3_600_000
MINUTE_MS = 60_000


class SimulationError(AegisError):
    pass


class InjectionError(AegisError):
    pass


# ---------------------------------------------------------------------------
# Home rosters


def _sensor(id: str, subkind: str, room: str, deadband: Optional[float] = None):
    domain = ValueDomain.NUMERIC if deadband is not None else ValueDomain.LOGICAL
    return EntityDescriptor(id, EntityKind.SENSOR, subkind, domain, room, deadband)


def _device(id: str, subkind: str, room: str, deadband: Optional[float] = None):
    domain = ValueDomain.NUMERIC if deadband is not None else ValueDomain.LOGICAL
    return EntityDescriptor(id, EntityKind.DEVICE, subkind, domain, room, deadband)


def _controller(id: str):
    return EntityDescriptor(
        id, EntityKind.CONTROLLER, "smartphone", ValueDomain.LOGICAL, "mobile"
    )


def build_home(layout: Layout, users: int = 1) -> HomeDescriptor:
    """Device roster per layout; sensors first, then devices, then one
    smartphone controller per authorized user."""
    if users < 1:
        raise SimulationError("users must be >= 1")
    sensors = [
        _sensor("BM1", "motion", "bedroom"),
        _sensor("BD1", "contact", "bedroom|hallway"),
        _sensor("HM2", "motion", "hallway"),
        _sensor("SS1", "smoke", "hallway"),
    ]
    devices = [
        _device("BL1", "smart-light", "bedroom"),
        _device("HL2", "smart-light", "hallway"),
        _device("LK1", "smart-lock", "entry"),
        _device("FA1", "fire-alarm", "hallway"),
    ]
    if layout in (Layout.DOUBLE_BEDROOM, Layout.DUPLEX):
        sensors += [
            _sensor("B2M3", "motion", "bedroom2"),
            _sensor("B2D3", "contact", "bedroom2|hallway"),
            _sensor("LM4", "motion", "living"),
        ]
        devices += [
            _device("B2L3", "smart-light", "bedroom2"),
            _device("LL4", "smart-light", "living"),
            _device("CAM1", "camera", "living"),
        ]
    if layout is Layout.DUPLEX:
        sensors += [
            _sensor("UM5", "motion", "upstairs"),
            _sensor("UD5", "contact", "upstairs|hallway"),
            _sensor("TM1", "temperature", "living", deadband=0.5),
            _sensor("BLi1", "light-level", "bedroom", deadband=10.0),
        ]
        devices += [
            _device("UL5", "smart-light", "upstairs"),
            _device("TH1", "thermostat", "living", deadband=0.5),
        ]
    controllers = [_controller(f"PH{k}") for k in range(1, users + 1)]
    entities = tuple(sensors + devices + controllers)
    policies = _default_policies(entities)
    return HomeDescriptor(layout, entities, authorized_users=users, policies=policies)


def fig_walkthrough_home() -> HomeDescriptor:
    """Minimal bedroom/hallway home used by the movement walkthrough."""
    entities = (
        _sensor("BM1", "motion", "bedroom"),
        _sensor("BLi1", "light-level", "bedroom", deadband=10.0),
        _sensor("BD1", "contact", "bedroom|hallway"),
        _sensor("HM2", "motion", "hallway"),
        _sensor("HLi2", "light-level", "hallway", deadband=10.0),
        _device("BL1", "smart-light", "bedroom"),
        _device("HL2", "smart-light", "hallway"),
    )
    return HomeDescriptor(Layout.SINGLE_BEDROOM, entities, 1, _default_policies(entities))


def _default_policies(entities: Sequence[EntityDescriptor]) -> tuple[PolicyRule, ...]:
    by_room_motion = {}
    by_room_light = {}
    smoke = alarm = None
    for e in entities:
        if e.subkind == "motion":
            by_room_motion[e.room] = e.id
        elif e.subkind == "smart-light":
            by_room_light[e.room] = e.id
        elif e.subkind == "smoke":
            smoke = e.id
        elif e.subkind == "fire-alarm":
            alarm = e.id
    policies = [
        PolicyRule(PolicyKind.SENSOR_BINDING, light, triggers=(by_room_motion[room],))
        for room, light in by_room_light.items()
        if room in by_room_motion
    ]
    if smoke and alarm:
        policies.append(PolicyRule(PolicyKind.SENSOR_BINDING, alarm, triggers=(smoke,)))
    return tuple(policies)


@dataclass(frozen=True)
class HomePlan:
    """Navigation metadata derived from a home's roster."""

    rooms: tuple[str, ...]
    hub: str
    motion: dict[str, str]
    light: dict[str, str]
    light_sensor: dict[str, str]
    doors: dict[frozenset, str]
    controllers: tuple[str, ...]
    lock: Optional[str]
    smoke: Optional[str]
    alarm: Optional[str]
    camera: Optional[str]
    thermostat: Optional[str]
    temperature: Optional[str]


def home_plan(home: HomeDescriptor) -> HomePlan:
    motion, light, light_sensor, doors = {}, {}, {}, {}
    controllers = []
    lock = smoke = alarm = camera = thermostat = temperature = None
    rooms = []
    for e in home.entities:
        if e.kind is EntityKind.CONTROLLER:
            controllers.append(e.id)
            continue
        if "|" in e.room:
            a, b = e.room.split("|", 1)
            doors[frozenset((a, b))] = e.id
            continue
        if e.room not in rooms:
            rooms.append(e.room)
        if e.subkind == "motion":
            motion[e.room] = e.id
        elif e.subkind == "smart-light":
            light[e.room] = e.id
        elif e.subkind == "light-level":
            light_sensor[e.room] = e.id
        elif e.subkind == "smart-lock":
            lock = e.id
        elif e.subkind == "smoke":
            smoke = e.id
        elif e.subkind == "fire-alarm":
            alarm = e.id
        elif e.subkind == "camera":
            camera = e.id
        elif e.subkind == "thermostat":
            thermostat = e.id
        elif e.subkind == "temperature":
            temperature = e.id
    hub = "hallway" if "hallway" in rooms else rooms[0]
    return HomePlan(
        rooms=tuple(rooms),
        hub=hub,
        motion=motion,
        light=light,
        light_sensor=light_sensor,
        doors=doors,
        controllers=tuple(controllers),
        lock=lock,
        smoke=smoke,
        alarm=alarm,
        camera=camera,
        thermostat=thermostat,
        temperature=temperature,
    )


# ---------------------------------------------------------------------------
# Activity scripts


@dataclass(frozen=True)
class Step:
    action: str  # move | leave | return | settle | thermostat
    target: str = ""
    dwell_mean_s: float = 30.0
    at_minute: Optional[int] = None  # wall-clock anchor within the day

    def __post_init__(self):
        if self.dwell_mean_s <= 0:
            raise SimulationError("dwell mean must be positive")


@dataclass(frozen=True)
class ActivityScript:
    name: str
    user_id: str
    steps: tuple[Step, ...]
    days: tuple[str, ...] = ("weekday", "weekend")
    start_minute: int = 7 * 60


@dataclass
class LabeledTrace:
    """Event log plus per-event ground truth (threat id or None)."""

    events: list[DeviceEvent] = field(default_factory=list)
    labels: list[Optional[str]] = field(default_factory=list)
    users: list[Optional[str]] = field(default_factory=list)
    injected_ranges: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def is_benign(self) -> bool:
        return all(l is None for l in self.labels)

    def slice_ts(self, start_ts: int, end_ts: Optional[int] = None) -> "LabeledTrace":
        idx = [
            i
            for i, e in enumerate(self.events)
            if e.timestamp >= start_ts and (end_ts is None or e.timestamp < end_ts)
        ]
        return LabeledTrace(
            [self.events[i] for i in idx],
            [self.labels[i] for i in idx],
            [self.users[i] for i in idx],
            [r for r in self.injected_ranges if r[0] >= start_ts],
        )


class _World:
    """Shared device state; emits events only on real state changes."""

    def __init__(self, home: HomeDescriptor, plan: HomePlan):
        self.home = home
        self.plan = plan
        self.on: dict[str, bool] = {}
        self.level: dict[str, float] = {}
        for e in home.entities:
            if e.value_domain is ValueDomain.NUMERIC:
                self.level[e.id] = {
                    "light-level": 300.0,
                    "thermostat": 70.0,
                    "temperature": 21.0,
                }.get(e.subkind, 0.0)
            else:
                self.on[e.id] = False
        self.trace = LabeledTrace()

    def emit(
        self,
        ts: int,
        entity_id: str,
        reading,
        source: EventSource = EventSource.SIMULATED,
        user: Optional[str] = None,
    ) -> None:
        self.trace.events.append(DeviceEvent(ts, entity_id, reading, source))
        self.trace.labels.append(None)
        self.trace.users.append(user)

    def set_logical(self, ts, entity_id, active: bool, user=None, source=EventSource.SIMULATED):
        if self.on.get(entity_id) == active:
            return
        self.on[entity_id] = active
        self.emit(ts, entity_id, ACTIVE if active else INACTIVE, source, user)

    def sensor_change(self, ts, entity_id, user=None):
        """Emit a reading that trips the change deadband (condition -> 1)."""
        ent = self.home.entity(entity_id)
        new = self.level[entity_id] + 2 * (ent.deadband + 1.0)
        if self.level[entity_id] > 300.0:  # bounce between two levels
            new = self.level[entity_id] - 2 * (ent.deadband + 1.0)
        self.level[entity_id] = new
        self.emit(ts, entity_id, new, EventSource.SIMULATED, user)

    def sensor_steady(self, ts, entity_id, user=None):
        """Emit a repeat of the last reading (condition -> 0)."""
        self.emit(ts, entity_id, self.level[entity_id], EventSource.SIMULATED, user)

    def command(self, ts, controller_id, user=None):
        self.emit(ts, controller_id, ACTIVE, EventSource.CONTROLLER_COMMAND, user)


def _binding_allows(home: HomeDescriptor, light_id: str, ts: int) -> bool:
    window = home.time_window_for(light_id)
    return window is None or in_time_window(window, ts)


class _Simulator:
    def __init__(self, home: HomeDescriptor, rng: random.Random, noise_rate: float):
        self.home = home
        self.plan = home_plan(home)
        self.world = _World(home, self.plan)
        self.rng = rng
        self.noise_rate = noise_rate
        self.room_of: dict[str, str] = {}
        self.deferred: list[tuple[int, str]] = []  # (ts, light id) to switch off

    def calibrate(self, t: int) -> None:
        """Startup readings so numeric sensors have a change baseline."""
        for e in self.home.entities:
            if e.value_domain is ValueDomain.NUMERIC:
                self.world.sensor_steady(t, e.id)
                t += 200

    def dwell(self, mean_s: float) -> int:
        # log-normal dwell with the requested mean, sigma fixed for shape
        sigma = 0.5
        mu = math.log(mean_s) - sigma * sigma / 2
        return max(1000, int(self.rng.lognormvariate(mu, sigma) * 1000))

    def gap(self) -> int:
        return self.rng.randint(1500, 4000)

    def flush_deferred(self, now: int, user: Optional[str]) -> None:
        due = [d for d in self.deferred if d[0] <= now]
        self.deferred = [d for d in self.deferred if d[0] > now]
        for ts, light in sorted(due):
            self.world.set_logical(ts, light, False, user)
            room = next(r for r, l in self.plan.light.items() if l == light)
            sensor = self.plan.light_sensor.get(room)
            if sensor:
                self.world.sensor_steady(ts, sensor, user)

    def cancel_deferred(self, light: Optional[str]) -> None:
        # re-entering a room makes a pending forgotten-light switch-off moot
        if light:
            self.deferred = [d for d in self.deferred if d[1] != light]

    def hop(self, user: str, a: str, b: str, t: int) -> int:
        """One room transition cascade; returns the timestamp after it."""
        plan, world = self.plan, self.world
        door = plan.doors.get(frozenset((a, b)))
        forget = (
            self.rng.random() < self.noise_rate
            and a == "bedroom"
            and a in plan.light
        )
        # approach: motion, light level change, light response
        world.set_logical(t, plan.motion[a], True, user)
        if a in plan.light_sensor and a in plan.light and not world.on[plan.light[a]]:
            world.sensor_change(t, plan.light_sensor[a], user)
        if a in plan.light and _binding_allows(self.home, plan.light[a], t):
            world.set_logical(t, plan.light[a], True, user)
        t += self.gap()
        # the connecting door opens
        if door:
            world.set_logical(t, door, True, user)
            t += self.gap()
        # enter the destination; origin motion settles
        world.set_logical(t, plan.motion[a], False, user)
        world.set_logical(t, plan.motion[b], True, user)
        self.cancel_deferred(plan.light.get(b))
        if b in plan.light_sensor and b in plan.light and not world.on[plan.light[b]]:
            world.sensor_change(t, plan.light_sensor[b], user)
        if b in plan.light and _binding_allows(self.home, plan.light[b], t):
            world.set_logical(t, plan.light[b], True, user)
        t += self.gap()
        # door closes; origin light off unless forgotten
        if door:
            world.set_logical(t, door, False, user)
        if a in plan.light:
            if forget:
                self.deferred.append((t + self.rng.randint(60, 240) * 1000, plan.light[a]))
            else:
                world.set_logical(t, plan.light[a], False, user)
                if a in plan.light_sensor:
                    world.sensor_steady(t, plan.light_sensor[a], user)
        self.room_of[user] = b
        return t + self.gap()

    def move(self, user: str, to_room: str, t: int) -> int:
        if to_room not in self.plan.rooms:
            raise SimulationError(f"script references missing room {to_room!r}")
        current = self.room_of.get(user, "bedroom")
        if current == "away":
            raise SimulationError(f"user {user!r} must return before moving")
        if current == to_room:
            return t
        path = [current]
        if to_room != self.plan.hub and current != self.plan.hub:
            path.append(self.plan.hub)
        path.append(to_room)
        for a, b in zip(path, path[1:]):
            self.flush_deferred(t, user)
            t = self.hop(user, a, b, t)
        return t

    def settle(self, user: str, t: int) -> int:
        room = self.room_of.get(user, "bedroom")
        plan, world = self.plan, self.world
        world.set_logical(t, plan.motion[room], False, user)
        if room in plan.light:
            world.set_logical(t, plan.light[room], False, user)
            if room in plan.light_sensor:
                world.sensor_steady(t, plan.light_sensor[room], user)
        return t + self.gap()

    def leave(self, user: str, controller: str, t: int) -> int:
        plan, world = self.plan, self.world
        t = self.move(user, plan.hub, t)
        t = self.settle(user, t)
        if plan.lock:
            world.command(t, controller, user)
            world.set_logical(t, plan.lock, True, user)  # unlock to exit
            t += self.gap()
            world.set_logical(t, plan.lock, False, user)
        world.set_logical(t, controller, False, user)  # away
        self.room_of[user] = "away"
        return t + self.gap()

    def come_back(self, user: str, controller: str, t: int) -> int:
        plan, world = self.plan, self.world
        world.set_logical(t, controller, True, user)  # home
        t += self.gap()
        if plan.lock:
            world.command(t, controller, user)
            world.set_logical(t, plan.lock, True, user)
            t += self.gap()
            world.set_logical(t, plan.lock, False, user)
        self.room_of[user] = plan.hub
        world.set_logical(t, plan.motion[plan.hub], True, user)
        if plan.hub in plan.light and _binding_allows(self.home, plan.light[plan.hub], t):
            world.set_logical(t, plan.light[plan.hub], True, user)
        return t + self.gap()

    def thermostat_set(self, user: str, controller: str, t: int, setpoint: float) -> int:
        plan, world = self.plan, self.world
        if plan.thermostat is None:
            return t
        world.command(t, controller, user)
        world.level[plan.thermostat] = setpoint
        world.emit(t, plan.thermostat, setpoint, EventSource.SIMULATED, user)
        if plan.temperature:
            tmp = world.level[plan.temperature] + (1.0 if setpoint > 70 else -1.0)
            world.level[plan.temperature] = tmp
            world.emit(t, plan.temperature, tmp, EventSource.SIMULATED, user)
        # settle readings clear the change conditions
        t2 = t + 90_000
        world.emit(t2, plan.thermostat, world.level[plan.thermostat], EventSource.SIMULATED, user)
        if plan.temperature:
            world.emit(t2, plan.temperature, world.level[plan.temperature], EventSource.SIMULATED, user)
        return t2 + self.gap()


def simulate_benign(
    home: HomeDescriptor,
    scripts: Sequence[ActivityScript],
    days: int,
    seed: int,
    noise_rate: float = 0.02,
) -> LabeledTrace:
    """Deterministic benign trace over the given days; one event cascade per
    movement step, multi-user scripts interleaved by timestamp."""
    if days < 1:
        raise SimulationError("days must be >= 1")
    if not scripts:
        raise SimulationError("at least one activity script is required")
    rng = random.Random(seed)
    sim = _Simulator(home, rng, noise_rate)
    plan = sim.plan
    sim.calibrate(1_000)
    controller_of: dict[str, Optional[str]] = {}
    for i, user in enumerate(dict.fromkeys(s.user_id for s in scripts)):
        controller_of[user] = plan.controllers[i] if i < len(plan.controllers) else None
        sim.room_of[user] = "bedroom"
        if controller_of[user]:
            sim.world.set_logical(10_000 + 1000 * i, controller_of[user], True, user)

    for day in range(days):
        kind = "weekday" if day % 7 < 5 else "weekend"
        day_start = day * DAY_MS
        for script in scripts:
            if kind not in script.days and f"day{day}" not in script.days:
                continue
            user = script.user_id
            controller = controller_of[user]
            t = day_start + script.start_minute * MINUTE_MS + rng.randint(0, 300) * 1000
            for step in script.steps:
                t += sim.dwell(step.dwell_mean_s)
                if step.at_minute is not None:
                    t = max(t, day_start + step.at_minute * MINUTE_MS + rng.randint(0, 300) * 1000)
                sim.flush_deferred(t, user)
                if step.action == "move":
                    t = sim.move(user, step.target, t)
                elif step.action == "settle":
                    t = sim.settle(user, t)
                elif step.action == "leave":
                    if controller is None:
                        raise SimulationError(f"user {user!r} has no controller to leave with")
                    t = sim.leave(user, controller, t)
                elif step.action == "return":
                    if controller is None:
                        raise SimulationError(f"user {user!r} has no controller to return with")
                    t = sim.come_back(user, controller, t)
                elif step.action == "thermostat":
                    if controller is None:
                        raise SimulationError(f"user {user!r} has no controller for commands")
                    t = sim.thermostat_set(user, controller, t, float(step.target))
                elif step.action in ("light_on", "light_off"):
                    light = sim.plan.light.get(step.target)
                    if light is None:
                        raise SimulationError(f"no light in room {step.target!r}")
                    sim.world.set_logical(t, light, step.action == "light_on", user)
                    t += sim.gap()
                else:
                    raise SimulationError(f"unknown step action {step.action!r}")
    sim.flush_deferred(days * DAY_MS, None)
    trace = sim.world.trace
    order = sorted(range(len(trace.events)), key=lambda i: (trace.events[i].timestamp, i))
    return LabeledTrace(
        [trace.events[i] for i in order],
        [trace.labels[i] for i in order],
        [trace.users[i] for i in order],
    )


def daily_scripts(
    home: HomeDescriptor, users: int, circuit_moves: int = 72
) -> list[ActivityScript]:
    """Default weekday/weekend routines for each authorized user."""
    plan = home_plan(home)
    rooms = [r for r in plan.rooms if r not in ("entry",)]
    out = []
    for k in range(1, users + 1):
        user = f"u{k}"
        offset = (k - 1) * 22
        loop = _room_loop(rooms, plan.hub, circuit_moves, phase=k)
        morning = [Step("move", r, 20) for r in loop[: max(4, circuit_moves // 4)]]
        evening = [Step("move", r, 25) for r in loop]
        thermostat = [Step("thermostat", "72.0", 30)] if plan.thermostat else []
        thermostat_night = [Step("thermostat", "70.0", 30)] if plan.thermostat else []
        weekday = ActivityScript(
            name=f"{user}-weekday",
            user_id=user,
            steps=tuple(
                [Step("move", plan.hub, 40)]
                + morning
                + thermostat
                + [Step("leave", "", 30, at_minute=8 * 60 + 30 + offset)]
                + [Step("return", "", 30, at_minute=17 * 60 + 30 + offset)]
                + evening
                + thermostat_night
                + [Step("move", "bedroom", 40, at_minute=22 * 60 + offset)]
                + [Step("settle", "", 30)]
            ),
            days=("weekday",),
            start_minute=7 * 60 + offset,
        )
        weekend = ActivityScript(
            name=f"{user}-weekend",
            user_id=user,
            steps=tuple(
                [Step("move", plan.hub, 40)]
                + [Step("move", r, 35) for r in loop]
                + [Step("leave", "", 30, at_minute=14 * 60 + offset)]
                + [Step("return", "", 30, at_minute=15 * 60 + offset)]
                + [Step("move", r, 35) for r in loop[: circuit_moves // 2]]
                + [Step("move", "bedroom", 40, at_minute=22 * 60 + offset)]
                + [Step("settle", "", 30)]
            ),
            days=("weekend",),
            start_minute=9 * 60 + offset,
        )
        out.append(weekday)
        out.append(weekend)
    return out


def _room_loop(rooms: Sequence[str], hub: str, moves: int, phase: int) -> list[str]:
    stops = [r for r in rooms if r != hub]
    if not stops:
        return [hub] * moves
    loop = []
    i = phase
    while len(loop) < moves:
        loop.append(stops[i % len(stops)])
        loop.append(hub)
        i += 1
    return loop[:moves]


def fig_walkthrough_script() -> ActivityScript:
    return ActivityScript(
        name="bedroom-to-hallway",
        user_id="u1",
        steps=(Step("move", "hallway", 10),),
        days=("weekday", "weekend"),
        start_minute=8 * 60,
    )


def walkthrough_events(seed: int = 1) -> tuple[HomeDescriptor, LabeledTrace]:
    """The scripted bedroom-to-hallway walk on the walkthrough home."""
    home = fig_walkthrough_home()
    trace = simulate_benign(home, [fig_walkthrough_script()], 1, seed, noise_rate=0.0)
    return home, trace


# ---------------------------------------------------------------------------
# Threat injection


class ThreatId(str, Enum):
    T1 = "T1"  # impersonation: lock opened with no approach context
    T2 = "T2"  # false data injection: forged smoke + fire alarm
    T3 = "T3"  # side channel: light flicker while nobody is around
    T4 = "T4"  # denial of service: suppressed device responses
    T5 = "T5"  # pattern-triggered app: morse light + stealth camera


@dataclass(frozen=True)
class ThreatScript:
    threat_id: ThreatId
    count: int = 4
    params: dict = field(default_factory=dict)


def _idle_windows(
    trace: LabeledTrace,
    plan: HomePlan,
    min_len_ms: int,
    assume_idle_from: Optional[int] = None,
) -> list[tuple[int, int]]:
    """Periods where every controller is away and no motion is reported.

    `assume_idle_from` marks a timestamp known to be idle (e.g. a split
    boundary placed in an away period), opening a window even though the
    departure events lie before the trace.
    """
    if not trace.events:
        return []
    idle_known = assume_idle_from is not None
    away = {c: idle_known for c in plan.controllers}
    windows = []
    start = assume_idle_from if idle_known else None
    for e in trace.events:
        if e.entity_id in away and e.source is not EventSource.CONTROLLER_COMMAND:
            away[e.entity_id] = e.reading == INACTIVE
            if all(away.values()) and start is None:
                start = e.timestamp
            if not all(away.values()) and start is not None:
                windows.append((start, e.timestamp))
                start = None
        elif start is not None and e.entity_id in plan.motion.values():
            if e.reading == ACTIVE:
                windows.append((start, e.timestamp))
                start = None
    if start is not None:
        windows.append((start, trace.events[-1].timestamp))
    return [(a + 60_000, b - 60_000) for a, b in windows if b - a >= min_len_ms + 120_000]


def _free_slot(
    windows: list[tuple[int, int]],
    used: list[tuple[int, int]],
    length_ms: int,
    rng: random.Random,
) -> tuple[int, int]:
    candidates = []
    for lo, hi in windows:
        cursor = lo
        blockers = sorted(r for r in used if r[0] < hi and r[1] > lo)
        for b_lo, b_hi in blockers + [(hi, hi)]:
            if b_lo - cursor >= length_ms:
                candidates.append((cursor, b_lo))
            cursor = max(cursor, b_hi)
    if not candidates:
        raise InjectionError("no eligible injection window")
    lo, hi = candidates[rng.randrange(len(candidates))]
    start = lo if hi - lo <= length_ms else lo + rng.randrange(0, (hi - lo - length_ms) // 1000 + 1) * 1000
    return start, start + length_ms


def _splice(trace: LabeledTrace, additions: list[tuple[DeviceEvent, str]]) -> LabeledTrace:
    events = list(trace.events)
    labels = list(trace.labels)
    users = list(trace.users)
    for ev, label in additions:
        events.append(ev)
        labels.append(label)
        users.append(None)
    order = sorted(range(len(events)), key=lambda i: (events[i].timestamp, i))
    return LabeledTrace(
        [events[i] for i in order],
        [labels[i] for i in order],
        [users[i] for i in order],
        list(trace.injected_ranges),
    )


def inject_threat(
    trace: LabeledTrace,
    home: HomeDescriptor,
    threat: ThreatScript,
    seed: int,
    assume_idle_from: Optional[int] = None,
) -> LabeledTrace:
    """Inject one threat scenario; injected events carry its label."""
    if not trace.events:
        raise InjectionError("cannot inject into an empty trace")
    rng = random.Random(f"{seed}:{threat.threat_id.value}")
    plan = home_plan(home)
    tid = threat.threat_id
    if tid is ThreatId.T4:
        return _inject_t4(trace, plan, threat, rng)
    additions: list[tuple[DeviceEvent, str]] = []
    used = list(trace.injected_ranges)
    pulse_len = {"T1": 40_000, "T2": 60_000, "T3": 14_000, "T5": 16_000}[tid.value]
    windows = _idle_windows(trace, plan, pulse_len, assume_idle_from)
    if not windows:
        raise InjectionError("no eligible injection window")
    for _ in range(threat.count):
        lo, hi = _free_slot(windows, used, pulse_len, rng)
        used.append((lo, hi))
        additions.extend(_threat_events(tid, plan, lo, threat, rng))
    out = _splice(trace, additions)
    out.injected_ranges = used
    return out


def _threat_events(
    tid: ThreatId, plan: HomePlan, t: int, threat: ThreatScript, rng: random.Random
) -> list[tuple[DeviceEvent, str]]:
    label = tid.value
    mk = lambda ts, ent, reading: (
        DeviceEvent(ts, ent, reading, EventSource.SIMULATED),
        label,
    )
    if tid is ThreatId.T1:
        if plan.lock is None:
            raise InjectionError("home has no smart lock for T1")
        return [mk(t, plan.lock, ACTIVE), mk(t + 30_000, plan.lock, INACTIVE)]
    if tid is ThreatId.T2:
        if plan.smoke is None or plan.alarm is None:
            raise InjectionError("home has no smoke sensor / fire alarm for T2")
        return [
            mk(t, plan.smoke, ACTIVE),
            mk(t, plan.alarm, ACTIVE),
            mk(t + 45_000, plan.smoke, INACTIVE),
            mk(t + 45_000, plan.alarm, INACTIVE),
        ]
    if tid is ThreatId.T3:
        light = threat.params.get("light", plan.light.get("hallway"))
        if light is None:
            raise InjectionError("home has no light for T3")
        out = []
        for k in range(3):
            out.append(mk(t + 4000 * k, light, ACTIVE))
            out.append(mk(t + 4000 * k + 2000, light, INACTIVE))
        return out
    if tid is ThreatId.T5:
        light = threat.params.get(
            "light", plan.light.get("bedroom2", plan.light.get("hallway"))
        )
        out = []
        if plan.camera:
            out.append(mk(t, plan.camera, ACTIVE))
        pattern = [1000, 2200, 3000, 4500, 5200, 6000]  # morse-style toggling
        state = True
        for off in pattern:
            out.append(mk(t + off, light, ACTIVE if state else INACTIVE))
            state = not state
        if plan.camera:
            out.append(mk(t + 8000, plan.camera, INACTIVE))
        return out
    raise InjectionError(f"unknown threat {tid}")


_T4_MAX_WINDOW_MS = 15 * MINUTE_MS


def _inject_t4(
    trace: LabeledTrace, plan: HomePlan, threat: ThreatScript, rng: random.Random
) -> LabeledTrace:
    """Suppress a room's light response to motion: drop the light (and its
    light-level sensor) events from the trigger until the point where the
    light would have switched off again, and label that window malicious.
    Rooms where motion is the only co-dependent signal are preferred."""
    light_by_motion = {
        plan.motion[room]: (room, light)
        for room, light in plan.light.items()
        if room in plan.motion
    }
    door_rooms = {room for pair in plan.doors for room in pair}

    def redundancy(room: str) -> int:
        return (room in door_rooms) + (room in plan.light_sensor)

    candidates: dict[str, list[tuple[int, int, int]]] = {}
    for i, e in enumerate(trace.events):
        if trace.labels[i] is not None or e.entity_id not in light_by_motion:
            continue
        if e.reading != ACTIVE:
            continue
        t0 = e.timestamp
        if any(lo - _T4_MAX_WINDOW_MS <= t0 <= hi for lo, hi in trace.injected_ranges):
            continue
        room, light = light_by_motion[e.entity_id]
        responded = any(
            o.entity_id == light and o.reading == ACTIVE and o.timestamp == t0
            for o in trace.events[max(0, i - 4) : i + 6]
        )
        if not responded:
            continue
        t_end = None
        for o in trace.events[i:]:
            if o.timestamp - t0 > _T4_MAX_WINDOW_MS:
                break
            if o.entity_id == light and o.reading == INACTIVE and o.timestamp > t0:
                t_end = o.timestamp
                break
        if t_end is None:
            continue
        candidates.setdefault(room, []).append((t0, t_end, i))
    if not candidates:
        raise InjectionError("no eligible injection window")
    # round-robin over rooms, least-redundant rooms first
    room_order = sorted(candidates, key=lambda r: (redundancy(r), r))
    for room in candidates:
        rng.shuffle(candidates[room])
    chosen: list[tuple[int, int, str]] = []
    used = list(trace.injected_ranges)
    while len(chosen) < threat.count:
        progress = False
        for room in room_order:
            while candidates[room]:
                t0, t_end, _ = candidates[room].pop()
                if all(t_end < lo or t0 > hi for lo, hi in used):
                    chosen.append((t0, t_end, room))
                    used.append((t0, t_end))
                    progress = True
                    break
            if len(chosen) == threat.count:
                break
        if not progress:
            break
    if len(chosen) < threat.count:
        raise InjectionError("no eligible injection window")
    suppressed_ids: list[tuple[int, int, set[str]]] = []
    for t0, t_end, room in chosen:
        drop = {plan.light[room]}
        if room in plan.light_sensor:
            drop.add(plan.light_sensor[room])
        suppressed_ids.append((t0, t_end, drop))
    events, labels, users = [], [], []
    for j, e in enumerate(trace.events):
        window = next(
            ((t0, t_end, drop) for t0, t_end, drop in suppressed_ids
             if t0 <= e.timestamp <= t_end),
            None,
        )
        if window is not None and e.entity_id in window[2]:
            continue  # the suppressed response never happens
        label = trace.labels[j]
        if label is None and window is not None:
            label = ThreatId.T4.value
        events.append(e)
        labels.append(label)
        users.append(trace.users[j])
    return LabeledTrace(
        events, labels, users, list(trace.injected_ranges) + [(lo, hi) for lo, hi, _ in chosen]
    )


# ---------------------------------------------------------------------------
# Benchmark composition


def sample_corpus(home: HomeDescriptor, count: int = 12) -> list[AppSource]:
    """Generated rule apps for the home: light bindings first, then
    presence/door conveniences, then the smoke alarm rule."""
    plan = home_plan(home)
    sources = []
    for room, light in plan.light.items():
        if room in plan.motion:
            sources.append(
                AppSource(
                    f"Motion Light {room.capitalize()}",
                    binding_app_source(
                        f"Motion Light {room.capitalize()}",
                        plan.motion[room],
                        "motionSensor",
                        "motion",
                        light,
                        "light",
                        (("active", "on"), ("inactive", "off")),
                    ),
                )
            )
    for pair, door in plan.doors.items():
        rooms = sorted(pair)
        light = plan.light.get(rooms[0]) or plan.light.get(rooms[1])
        if light:
            sources.append(
                AppSource(
                    f"Door Light {door}",
                    binding_app_source(
                        f"Door Light {door}",
                        door,
                        "contactSensor",
                        "contact",
                        light,
                        "light",
                        (("open", "on"), ("closed", "off")),
                    ),
                )
            )
    for k, controller in enumerate(plan.controllers, start=1):
        light = plan.light.get(plan.hub)
        if light:
            sources.append(
                AppSource(
                    f"Welcome Light {k}",
                    binding_app_source(
                        f"Welcome Light {k}",
                        controller,
                        "presenceSensor",
                        "presence",
                        light,
                        "light",
                        (("present", "on"), ("away", "off")),
                    ),
                )
            )
    if plan.smoke and plan.alarm:
        sources.append(
            AppSource(
                "Smoke Alarm Rule",
                binding_app_source(
                    "Smoke Alarm Rule",
                    plan.smoke,
                    "smokeDetector",
                    "smoke",
                    plan.alarm,
                    "alarm",
                    (("detected", "on"), ("clear", "off")),
                ),
            )
        )
    while len(sources) < count and plan.light:
        k = len(sources)
        room, light = sorted(plan.light.items())[k % len(plan.light)]
        if room not in plan.motion:
            break
        sources.append(
            AppSource(
                f"Night Light {k}",
                binding_app_source(
                    f"Night Light {k}",
                    plan.motion[room],
                    "motionSensor",
                    "motion",
                    light,
                    "light",
                    (("active", "on"), ("inactive", "off")),
                    guard=("18:00", "06:00"),
                ),
            )
        )
    return sources[:count]


def benchmark_app_db(home: HomeDescriptor) -> AppContextDatabase:
    """Installed-app context database for benchmarks: motion/door light rules
    only (no alarm rule, so forged fire events stay detectable)."""
    db = AppContextDatabase()
    for src in sample_corpus(home, count=12):
        if "Smoke Alarm" in src.name:
            continue
        pairs = extract_app(src, home)
        if pairs:
            db.insert(src.name, merge_contexts(pairs), Provenance.OFFICIAL)
    return db


ALL_THREATS = (ThreatId.T1, ThreatId.T2, ThreatId.T3, ThreatId.T4, ThreatId.T5)


def benchmark_suite(
    layout: Layout,
    users: int,
    seed: int,
    days: int = 10,
    threats: Sequence[ThreatId] = ALL_THREATS,
    injections_per_threat: int = 4,
    noise_rate: float = 0.02,
) -> tuple[HomeDescriptor, LabeledTrace, LabeledTrace, int]:
    """Seed-pinned benchmark: benign trace split 75/25 chronologically, the
    tail injected with every requested threat.

    Returns (home, train trace, test trace, split timestamp).
    """
    if not 1 <= users <= 4:
        raise SimulationError("users must be between 1 and 4")
    home = build_home(layout, users)
    scripts = daily_scripts(home, users)
    benign = simulate_benign(home, scripts, days, seed, noise_rate)
    split_ts = split_timestamp(days)
    train = benign.slice_ts(0, split_ts)
    test = benign.slice_ts(split_ts)
    for tid in threats:
        # the split lands in a weekday away period, so the tail is known
        # idle from its very start
        test = inject_threat(
            test, home, ThreatScript(tid, injections_per_threat), seed,
            assume_idle_from=split_ts,
        )
    return home, train, test, split_ts


def split_timestamp(days: int) -> int:
    """A quiescent weekday-noon boundary at roughly 75% of the trace."""
    day = int(days * 0.75)
    while day > 0 and day % 7 >= 5:
        day -= 1
    return day * DAY_MS + 12 * HOUR_MS


def trace_contexts(
    home: HomeDescriptor, trace: LabeledTrace
) -> tuple[list[ContextArray], list[Optional[str]]]:
    """Context arrays for a trace plus per-snapshot ground truth: a snapshot
    is malicious iff an injected event contributed to it."""
    arrays, spans = stream_to_contexts_with_spans(home, trace.events)
    labels: list[Optional[str]] = []
    for span in spans:
        label = None
        for idx in span:
            if trace.labels[idx] is not None:
                label = trace.labels[idx]
                break
        labels.append(label)
    return arrays, labels
