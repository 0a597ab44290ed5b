"""Core domain types: entities, homes, device events, and context arrays.

A home fixes an ordered list of entities; that order defines the bit
positions of every context array produced for the home. Sensors and devices
occupy one bit each. Controllers (smartphones/tablets) occupy two bits: a
command-activity bit and a home/away location bit, so the bit count of a
home is  n = #sensors + #devices + 2 * #controllers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Union


class AegisError(Exception):
    """Base class for all errors raised by this package."""


class InvalidHomeError(AegisError):
    pass


class UnknownEntityError(AegisError):
    def __init__(self, entity_id: str):
        super().__init__(f"unknown entity: {entity_id!r}")
        self.entity_id = entity_id


class EventParseError(AegisError):
    """Malformed event line; carries the 1-based line and column."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class OutOfOrderEventError(AegisError):
    pass


class ReadingVariantError(AegisError):
    """Reading variant (logical/numeric) does not match the entity."""


class EntityKind(str, Enum):
    SENSOR = "sensor"
    DEVICE = "device"
    CONTROLLER = "controller"


class ValueDomain(str, Enum):
    LOGICAL = "logical"
    NUMERIC = "numeric"


class EventSource(str, Enum):
    PHYSICAL = "physical"
    CONTROLLER_COMMAND = "controller_command"
    SIMULATED = "simulated"


class Layout(str, Enum):
    SINGLE_BEDROOM = "single_bedroom"
    DOUBLE_BEDROOM = "double_bedroom"
    DUPLEX = "duplex"


class PolicyKind(str, Enum):
    TIME_WINDOW = "time_window"
    SENSOR_BINDING = "sensor_binding"


CONTROLLER_SUBKINDS = ("smartphone", "tablet")

ACTIVE = "active"
INACTIVE = "inactive"

Reading = Union[str, float]


@dataclass(frozen=True)
class EntityDescriptor:
    """One sensor, device, or controller, with its binarization rule."""

    id: str
    kind: EntityKind
    subkind: str
    value_domain: ValueDomain
    room: str
    deadband: Optional[float] = None

    def __post_init__(self):
        if not self.id:
            raise InvalidHomeError("entity id must be non-empty")
        if self.value_domain is ValueDomain.NUMERIC:
            if self.deadband is None or self.deadband < 0:
                raise InvalidHomeError(
                    f"numeric entity {self.id!r} needs a non-negative deadband"
                )
        elif self.deadband is not None:
            raise InvalidHomeError(
                f"logical entity {self.id!r} must not carry a deadband"
            )
        if self.kind is EntityKind.CONTROLLER and self.subkind not in CONTROLLER_SUBKINDS:
            raise InvalidHomeError(
                f"controller {self.id!r} subkind must be one of {CONTROLLER_SUBKINDS}"
            )


@dataclass(frozen=True)
class PolicyRule:
    """User policy: a [start, end) time window or a sensor-device binding."""

    kind: PolicyKind
    target_entity: str
    window: Optional[tuple[str, str]] = None  # "HH:MM" pair, may wrap midnight
    triggers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is PolicyKind.TIME_WINDOW and self.window is None:
            raise InvalidHomeError("time_window policy needs a window")
        if self.kind is PolicyKind.SENSOR_BINDING and not self.triggers:
            raise InvalidHomeError("sensor_binding policy needs trigger entities")


def _minutes(hhmm: str) -> int:
    h, m = hhmm.split(":")
    return int(h) * 60 + int(m)


def in_time_window(window: tuple[str, str], timestamp_ms: int) -> bool:
    """True when the time of day of *timestamp_ms* falls in [start, end).

    A window whose start is later than its end wraps past midnight
    (e.g. 18:00-06:00).
    """
    start, end = _minutes(window[0]), _minutes(window[1])
    tod = (timestamp_ms // 60000) % (24 * 60)
    if start <= end:
        return start <= tod < end
    return tod >= start or tod < end


@dataclass(frozen=True)
class HomeDescriptor:
    """A home: layout, ordered entity roster, users, and policies.

    The entity order is normative; it fixes the bit position of every
    context array for this home and is preserved by serialization.
    """

    layout: Layout
    entities: tuple[EntityDescriptor, ...]
    authorized_users: int = 1
    policies: tuple[PolicyRule, ...] = ()

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise InvalidHomeError("entity ids must be unique within a home")
        if self.authorized_users < 1:
            raise InvalidHomeError("authorized_users must be >= 1")
        known = set(ids)
        for p in self.policies:
            for ref in (p.target_entity, *p.triggers):
                if ref not in known:
                    raise InvalidHomeError(f"policy references unknown entity {ref!r}")
        labels: list[str] = []
        starts: dict[str, int] = {}
        for e in self.entities:
            starts[e.id] = len(labels)
            if e.kind is EntityKind.CONTROLLER:
                labels.append(f"{e.id}#cmd")
                labels.append(f"{e.id}#loc")
            else:
                labels.append(e.id)
        object.__setattr__(self, "_bit_labels", tuple(labels))
        object.__setattr__(self, "_bit_start", starts)
        object.__setattr__(self, "_by_id", {e.id: e for e in self.entities})

    @property
    def n_bits(self) -> int:
        return len(self._bit_labels)

    @property
    def bit_labels(self) -> tuple[str, ...]:
        return self._bit_labels

    def entity(self, entity_id: str) -> EntityDescriptor:
        try:
            return self._by_id[entity_id]
        except KeyError:
            raise UnknownEntityError(entity_id) from None

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def bit_of(self, entity_id: str) -> int:
        """Bit position of a sensor/device (the first bit for controllers)."""
        self.entity(entity_id)
        return self._bit_start[entity_id]

    def controller_bits(self, entity_id: str) -> tuple[int, int]:
        """(command-activity bit, home/away bit) of a controller."""
        e = self.entity(entity_id)
        if e.kind is not EntityKind.CONTROLLER:
            raise InvalidHomeError(f"{entity_id!r} is not a controller")
        start = self._bit_start[entity_id]
        return start, start + 1

    def bindings_for(self, trigger_id: str) -> list[PolicyRule]:
        """Sensor-binding policies whose trigger list contains *trigger_id*."""
        return [
            p
            for p in self.policies
            if p.kind is PolicyKind.SENSOR_BINDING and trigger_id in p.triggers
        ]

    def time_window_for(self, target_id: str) -> Optional[tuple[str, str]]:
        for p in self.policies:
            if p.kind is PolicyKind.TIME_WINDOW and p.target_entity == target_id:
                return p.window
        return None


@dataclass(frozen=True)
class DeviceEvent:
    """One state report or command, in milliseconds since the epoch."""

    timestamp: int
    entity_id: str
    reading: Reading
    source: EventSource = EventSource.PHYSICAL

    def is_logical(self) -> bool:
        return isinstance(self.reading, str)


@dataclass(frozen=True)
class ContextArray:
    """The binary snapshot of every entity condition at one instant."""

    bits: tuple[int, ...]
    timestamp: int

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("context array bits must be 0 or 1")

    def key(self) -> str:
        """Canonical state key: the bit string, independent of timestamp."""
        return "".join("1" if b else "0" for b in self.bits)

    def active_labels(self, home: HomeDescriptor) -> tuple[str, ...]:
        return tuple(
            label for label, b in zip(home.bit_labels, self.bits) if b
        )


def canonical_state_key(c: ContextArray) -> str:
    """Hashable, totally ordered key; equal bits map to equal keys."""
    return c.key()


def array_from_key(key: str, timestamp: int = 0) -> ContextArray:
    return ContextArray(tuple(1 if ch == "1" else 0 for ch in key), timestamp)


# ---------------------------------------------------------------------------
# Event log (JSON lines) serialization


def validate_event(e: DeviceEvent, home: HomeDescriptor) -> None:
    """Raise unless the event resolves in the home with a matching reading."""
    ent = home.entity(e.entity_id)
    if ent.value_domain is ValueDomain.LOGICAL:
        if not isinstance(e.reading, str) or e.reading not in (ACTIVE, INACTIVE):
            raise ReadingVariantError(
                f"entity {e.entity_id!r} is logical; reading must be "
                f"'{ACTIVE}' or '{INACTIVE}', got {e.reading!r}"
            )
    else:
        if isinstance(e.reading, str):
            raise ReadingVariantError(
                f"entity {e.entity_id!r} is numeric; reading must be a number"
            )


def serialize_event(e: DeviceEvent) -> str:
    rec = {
        "ts": e.timestamp,
        "entity": e.entity_id,
        "reading": e.reading,
        "source": e.source.value,
    }
    return json.dumps(rec, separators=(", ", ": "))


def parse_event(
    line: str, home: Optional[HomeDescriptor] = None, lineno: int = 1
) -> DeviceEvent:
    """Parse one event log line; errors carry the line/column position."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as err:
        raise EventParseError(err.msg, lineno, err.colno) from None
    if not isinstance(rec, dict):
        raise EventParseError("event line must be a JSON object", lineno)
    try:
        ts = rec["ts"]
        entity = rec["entity"]
        reading = rec["reading"]
    except KeyError as err:
        raise EventParseError(f"missing field {err.args[0]!r}", lineno) from None
    if not isinstance(ts, int):
        raise EventParseError("'ts' must be an integer (milliseconds)", lineno)
    if not isinstance(entity, str):
        raise EventParseError("'entity' must be a string", lineno)
    if isinstance(reading, bool) or not isinstance(reading, (str, int, float)):
        raise EventParseError("'reading' must be a string or a number", lineno)
    if isinstance(reading, int):
        reading = float(reading)
    try:
        source = EventSource(rec.get("source", EventSource.PHYSICAL.value))
    except ValueError:
        raise EventParseError(f"unknown source {rec.get('source')!r}", lineno) from None
    event = DeviceEvent(ts, entity, reading, source)
    if home is not None:
        if not home.has_entity(entity):
            raise EventParseError(f"unknown entity {entity!r}", lineno)
        try:
            validate_event(event, home)
        except ReadingVariantError as err:
            raise EventParseError(str(err), lineno) from None
    return event


def read_events(
    lines: Iterable[str], home: Optional[HomeDescriptor] = None
) -> Iterator[DeviceEvent]:
    """Parse an event log, enforcing non-decreasing timestamps per stream."""
    last_ts = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        event = parse_event(line, home, lineno)
        if last_ts is not None and event.timestamp < last_ts:
            raise OutOfOrderEventError(
                f"line {lineno}: timestamp {event.timestamp} precedes {last_ts}"
            )
        last_ts = event.timestamp
        yield event


def write_events(path: str, events: Iterable[DeviceEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(serialize_event(e))
            fh.write("\n")


def load_events(path: str, home: Optional[HomeDescriptor] = None) -> list[DeviceEvent]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(read_events(fh, home))


# ---------------------------------------------------------------------------
# Home file (JSON) serialization


def home_to_dict(home: HomeDescriptor) -> dict:
    def entity_rec(e: EntityDescriptor) -> dict:
        rec = {
            "id": e.id,
            "kind": e.kind.value,
            "subkind": e.subkind,
            "value_domain": e.value_domain.value,
            "room": e.room,
        }
        if e.deadband is not None:
            rec["deadband"] = e.deadband
        return rec

    def policy_rec(p: PolicyRule) -> dict:
        rec = {"kind": p.kind.value, "target_entity": p.target_entity}
        if p.window is not None:
            rec["window"] = list(p.window)
        if p.triggers:
            rec["triggers"] = list(p.triggers)
        return rec

    return {
        "layout": home.layout.value,
        "entities": [entity_rec(e) for e in home.entities],
        "authorized_users": home.authorized_users,
        "policies": [policy_rec(p) for p in home.policies],
    }


def home_from_dict(doc: dict) -> HomeDescriptor:
    try:
        entities = tuple(
            EntityDescriptor(
                id=rec["id"],
                kind=EntityKind(rec["kind"]),
                subkind=rec["subkind"],
                value_domain=ValueDomain(rec["value_domain"]),
                room=rec["room"],
                deadband=rec.get("deadband"),
            )
            for rec in doc["entities"]
        )
        policies = tuple(
            PolicyRule(
                kind=PolicyKind(rec["kind"]),
                target_entity=rec["target_entity"],
                window=tuple(rec["window"]) if "window" in rec else None,
                triggers=tuple(rec.get("triggers", ())),
            )
            for rec in doc.get("policies", ())
        )
        return HomeDescriptor(
            layout=Layout(doc["layout"]),
            entities=entities,
            authorized_users=doc.get("authorized_users", 1),
            policies=policies,
        )
    except (KeyError, ValueError, TypeError) as err:
        raise InvalidHomeError(f"malformed home document: {err}") from err


def save_home(path: str, home: HomeDescriptor) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(home_to_dict(home), fh, indent=2)
        fh.write("\n")


def load_home(path: str) -> HomeDescriptor:
    with open(path, "r", encoding="utf-8") as fh:
        return home_from_dict(json.load(fh))
