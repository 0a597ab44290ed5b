"""Context engine: fold a timestamped event stream into context arrays.

Events sharing a timestamp form one snapshot batch; the engine emits a new
context array when time advances past the batch and the bit vector differs
from the last emitted one, so consecutive duplicates are suppressed.
Controller command activity is held high for a configurable window and
reverts through a synthetic expiry emission stamped at the window end.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .core import (
    ACTIVE,
    AegisError,
    ContextArray,
    DeviceEvent,
    EntityDescriptor,
    EntityKind,
    EventSource,
    HomeDescriptor,
    OutOfOrderEventError,
    Reading,
    ReadingVariantError,
    ValueDomain,
)

DEFAULT_COMMAND_WINDOW_MS = 5000


class StreamError(AegisError):
    """Ingest error annotated with the offending event index."""


def condition_of(
    entity: EntityDescriptor, prev_reading: Optional[Reading], new_reading: Reading
) -> int:
    """Binarize one reading.

    Logical entities are active iff the reading says so. Numeric entities
    are active when the reading moved more than the deadband since the
    previous one; with no prior reading the condition is inactive.
    """
    if entity.value_domain is ValueDomain.LOGICAL:
        if not isinstance(new_reading, str):
            raise ReadingVariantError(
                f"{entity.id!r} is logical but reading is {new_reading!r}"
            )
        return 1 if new_reading == ACTIVE else 0
    if isinstance(new_reading, str):
        raise ReadingVariantError(
            f"{entity.id!r} is numeric but reading is {new_reading!r}"
        )
    if prev_reading is None:
        return 0
    return 1 if abs(new_reading - prev_reading) > entity.deadband else 0


class ContextEngine:
    """Single-writer fold state for one home's event stream."""

    def __init__(
        self, home: HomeDescriptor, command_window_ms: int = DEFAULT_COMMAND_WINDOW_MS
    ):
        self.home = home
        self.command_window_ms = command_window_ms
        self._bits = [0] * home.n_bits
        self._last_emitted = tuple(self._bits)
        self._last_reading: dict[str, Reading] = {}
        self._expiries: dict[str, int] = {}  # controller id -> M1 window end
        self._pending_ts: Optional[int] = None
        self._pending_events: list[int] = []
        self._last_ts: Optional[int] = None
        self._event_counter = 0
        self.emitted_spans: list[tuple[int, ...]] = []

    @property
    def last_emitted(self) -> tuple[int, ...]:
        return self._last_emitted

    def ingest(self, event: DeviceEvent) -> list[ContextArray]:
        """Apply one event; return any context arrays it caused to emit."""
        if self._last_ts is not None and event.timestamp < self._last_ts:
            raise OutOfOrderEventError(
                f"event at {event.timestamp} precedes {self._last_ts}"
            )
        entity = self.home.entity(event.entity_id)
        out: list[ContextArray] = []
        self._drain(event.timestamp, out)
        if self._pending_ts is None:
            self._pending_ts = event.timestamp
        self._apply(entity, event)
        self._pending_events.append(self._event_counter)
        self._event_counter += 1
        self._last_ts = event.timestamp
        return out

    def finish(self) -> list[ContextArray]:
        """Flush remaining expiries and the trailing batch."""
        out: list[ContextArray] = []
        self._drain(None, out)
        self._flush(out)
        return out

    def flush_now(self) -> list[ContextArray]:
        """Force-emit the pending batch (live ingestion path)."""
        out: list[ContextArray] = []
        self._flush(out)
        return out

    # -- internals ----------------------------------------------------------

    def _apply(self, entity: EntityDescriptor, event: DeviceEvent) -> None:
        if entity.kind is EntityKind.CONTROLLER:
            if not isinstance(event.reading, str):
                raise ReadingVariantError(
                    f"controller {entity.id!r} readings are logical"
                )
            cmd_bit, loc_bit = self.home.controller_bits(entity.id)
            if event.source is EventSource.CONTROLLER_COMMAND:
                self._bits[cmd_bit] = 1
                self._expiries[entity.id] = event.timestamp + self.command_window_ms
            else:
                self._bits[loc_bit] = 1 if event.reading == ACTIVE else 0
            return
        prev = self._last_reading.get(entity.id)
        self._bits[self.home.bit_of(entity.id)] = condition_of(
            entity, prev, event.reading
        )
        self._last_reading[entity.id] = event.reading

    def _drain(self, up_to: Optional[int], out: list[ContextArray]) -> None:
        """Emit due expiries and any older pending batch, in time order."""
        while self._expiries:
            ctrl = min(self._expiries, key=lambda c: (self._expiries[c], c))
            expiry_ts = self._expiries[ctrl]
            if up_to is not None and expiry_ts > up_to:
                break
            if self._pending_ts is not None and self._pending_ts < expiry_ts:
                self._flush(out)
            del self._expiries[ctrl]
            cmd_bit, _ = self.home.controller_bits(ctrl)
            if self._pending_ts is None:
                self._pending_ts = expiry_ts
            self._bits[cmd_bit] = 0
        if (
            up_to is not None
            and self._pending_ts is not None
            and self._pending_ts < up_to
        ):
            self._flush(out)

    def _flush(self, out: list[ContextArray]) -> None:
        if self._pending_ts is None:
            return
        bits = tuple(self._bits)
        if bits != self._last_emitted:
            out.append(ContextArray(bits, self._pending_ts))
            self.emitted_spans.append(tuple(self._pending_events))
            self._last_emitted = bits
        self._pending_ts = None
        self._pending_events = []


def stream_to_contexts(
    home: HomeDescriptor,
    events: Sequence[DeviceEvent],
    command_window_ms: int = DEFAULT_COMMAND_WINDOW_MS,
) -> list[ContextArray]:
    """Fold a time-ordered event stream into its context array sequence.

    The first element is the all-zeros array stamped at the first event.
    """
    arrays, _ = stream_to_contexts_with_spans(home, events, command_window_ms)
    return arrays


def stream_to_contexts_with_spans(
    home: HomeDescriptor,
    events: Sequence[DeviceEvent],
    command_window_ms: int = DEFAULT_COMMAND_WINDOW_MS,
) -> tuple[list[ContextArray], list[tuple[int, ...]]]:
    """Like stream_to_contexts, also returning per-array contributing
    event indices (empty for the baseline and for expiry emissions)."""
    engine = ContextEngine(home, command_window_ms)
    first_ts = events[0].timestamp if events else 0
    arrays = [ContextArray((0,) * home.n_bits, first_ts)]
    for idx, event in enumerate(events):
        try:
            arrays.extend(engine.ingest(event))
        except AegisError as err:
            raise StreamError(f"event {idx}: {err}") from err
    arrays.extend(engine.finish())
    spans = [()] + engine.emitted_spans
    return arrays, spans


def write_contexts(path: str, arrays: Sequence[ContextArray]) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for a in arrays:
            fh.write(json.dumps({"ts": a.timestamp, "bits": a.key()}))
            fh.write("\n")


def load_contexts(path: str) -> list[ContextArray]:
    import json

    from .core import array_from_key

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(array_from_key(rec["bits"], rec["ts"]))
    return out
