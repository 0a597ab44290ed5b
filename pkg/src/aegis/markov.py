"""First-order Markov-chain model over context-array states.

The model keeps sparse transition counts keyed by observed state keys (bit
strings); the 2^n state space is never materialized. A transition i -> j
has probability N_ij / N_i, reproducible exactly from the stored integer
counts. Classification is support-based by default: a transition is
malicious when its destination state was never observed, when the pair was
never observed, or when its probability falls at or below the threshold --
unless the bit difference is explained by an installed app's trigger-action
clause (rare-event validation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .apps import AppContextDatabase
from .core import AegisError, ContextArray, HomeDescriptor, in_time_window


class ModelError(AegisError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    tau: float = 0.0
    epsilon_smoothing: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.tau < 1.0):
            raise ModelError("tau must be in [0, 1)")
        if self.epsilon_smoothing < 0:
            raise ModelError("epsilon_smoothing must be >= 0")


class Label(str, Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"


class Reason(str, Enum):
    KNOWN_TRANSITION = "known_transition"
    UNSEEN_STATE = "unseen_state"
    UNSEEN_TRANSITION = "unseen_transition"
    BELOW_THRESHOLD = "below_threshold"
    APP_CONTEXT_VALIDATED = "app_context_validated"


@dataclass(frozen=True)
class Verdict:
    label: Label
    reason: Reason
    probability: Optional[float] = None
    validated_by: Optional[str] = None

    def __post_init__(self):
        if self.reason is Reason.APP_CONTEXT_VALIDATED and self.label is not Label.BENIGN:
            raise ModelError("app-context validation always yields a benign label")


class TransitionModel:
    """Sparse transition counts over observed states.

    Instances are treated as immutable once built; incremental retraining
    returns a new model so readers can hold a consistent snapshot.
    """

    def __init__(
        self,
        n: int,
        counts: Optional[dict[str, dict[str, int]]] = None,
        trained_snapshots: int = 0,
        config: Optional[DetectorConfig] = None,
    ):
        self.n = n
        self.counts: dict[str, dict[str, int]] = counts or {}
        self.trained_snapshots = trained_snapshots
        self.config = config or DetectorConfig()
        self._totals = {i: sum(row.values()) for i, row in self.counts.items()}
        states = set(self.counts)
        for row in self.counts.values():
            states.update(row)
        self._states = states

    # -- queries ------------------------------------------------------------

    @property
    def observed_states(self) -> frozenset:
        return frozenset(self._states)

    def total_from(self, i: str) -> int:
        return self._totals.get(i, 0)

    def count(self, i: str, j: str) -> int:
        return self.counts.get(i, {}).get(j, 0)

    def transition_count(self) -> int:
        return sum(len(row) for row in self.counts.values())

    def transition_probability(
        self, i: str, j: str, epsilon: Optional[float] = None
    ) -> float:
        """N_ij / N_i, or the epsilon-smoothed estimate when epsilon > 0."""
        eps = self.config.epsilon_smoothing if epsilon is None else epsilon
        n_i = self.total_from(i)
        n_ij = self.count(i, j)
        if eps > 0:
            denom = n_i + eps * len(self._states)
            return (n_ij + eps) / denom if denom > 0 else 0.0
        return n_ij / n_i if n_i > 0 else 0.0

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "trained_snapshots": self.trained_snapshots,
            "config": {
                "tau": self.config.tau,
                "epsilon_smoothing": self.config.epsilon_smoothing,
            },
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TransitionModel":
        cfg = doc.get("config", {})
        return cls(
            n=doc["n"],
            counts={i: dict(row) for i, row in doc["counts"].items()},
            trained_snapshots=doc.get("trained_snapshots", 0),
            config=DetectorConfig(
                tau=cfg.get("tau", 0.0),
                epsilon_smoothing=cfg.get("epsilon_smoothing", 0.0),
            ),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "TransitionModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train(
    contexts: Sequence[ContextArray], config: Optional[DetectorConfig] = None
) -> TransitionModel:
    """Count every consecutive state pair of the context sequence."""
    if len(contexts) < 2:
        raise ModelError("training sequence too short; need at least 2 snapshots")
    n = len(contexts[0].bits)
    counts: dict[str, dict[str, int]] = {}
    prev_key = None
    for c in contexts:
        if len(c.bits) != n:
            raise ModelError(
                f"context length mismatch: expected {n}, got {len(c.bits)}"
            )
        key = c.key()
        if prev_key is not None:
            row = counts.setdefault(prev_key, {})
            row[key] = row.get(key, 0) + 1
        prev_key = key
    return TransitionModel(n, counts, trained_snapshots=len(contexts), config=config)


def retrain_incremental(
    model: TransitionModel, validated: Sequence[ContextArray]
) -> TransitionModel:
    """Add the validated sequence's consecutive pairs to a copy of the model.

    Only pairs inside the sequence are added; to reproduce a batch train
    over a concatenated corpus, prepend the boundary state to the sequence.
    """
    if not validated:
        return model
    for c in validated:
        if len(c.bits) != model.n:
            raise ModelError(
                f"context length mismatch: expected {model.n}, got {len(c.bits)}"
            )
    counts = {i: dict(row) for i, row in model.counts.items()}
    prev_key = None
    for c in validated:
        key = c.key()
        if prev_key is not None:
            row = counts.setdefault(prev_key, {})
            row[key] = row.get(key, 0) + 1
        prev_key = key
    return TransitionModel(
        model.n,
        counts,
        trained_snapshots=model.trained_snapshots + len(validated),
        config=model.config,
    )


def transition_probability(model: TransitionModel, i: str, j: str) -> float:
    return model.transition_probability(i, j)


# ---------------------------------------------------------------------------
# Rare-event validation against installed app contexts


def _diff_positions(prev: ContextArray, nxt: ContextArray) -> set[int]:
    return {k for k, (a, b) in enumerate(zip(prev.bits, nxt.bits)) if a != b}


def _entity_bit(home: HomeDescriptor, entity_id: str) -> int:
    """Bit a rule clause refers to; controllers contribute their location."""
    from .core import EntityKind

    if home.entity(entity_id).kind is EntityKind.CONTROLLER:
        return home.controller_bits(entity_id)[1]
    return home.bit_of(entity_id)


def app_context_explains(
    db: AppContextDatabase,
    home: HomeDescriptor,
    prev: ContextArray,
    nxt: ContextArray,
) -> Optional[str]:
    """Name of a single installed app whose clauses cover every differing bit.

    A clause participates only when its trigger bit actually flipped in the
    transition to the clause's trigger value, its action holds the clause's
    action value in the new state, and its time guard (if any) is satisfied
    at the new snapshot's timestamp.
    """
    diff = _diff_positions(prev, nxt)
    if not diff:
        return None
    for name, ctx in db.items():
        covered: set[int] = set()
        for clause in ctx.clauses:
            if not (home.has_entity(clause.trigger) and home.has_entity(clause.action)):
                continue
            t_pos = _entity_bit(home, clause.trigger)
            a_pos = _entity_bit(home, clause.action)
            if t_pos not in diff:
                continue
            if nxt.bits[t_pos] != clause.trigger_bit:
                continue
            if nxt.bits[a_pos] != clause.action_bit:
                continue
            if clause.guard is not None and not in_time_window(
                clause.guard, nxt.timestamp
            ):
                continue
            covered.add(t_pos)
            covered.add(a_pos)
        if diff <= covered:
            return name
    return None


def implicated_apps(
    db: AppContextDatabase, home: HomeDescriptor, prev: ContextArray, nxt: ContextArray
) -> list[str]:
    """Apps whose clauses touch any entity whose bit changed (near misses)."""
    diff = _diff_positions(prev, nxt)
    names = []
    for name, ctx in db.items():
        for clause in ctx.clauses:
            positions = set()
            if home.has_entity(clause.trigger):
                positions.add(_entity_bit(home, clause.trigger))
            if home.has_entity(clause.action):
                positions.add(_entity_bit(home, clause.action))
            if positions & diff:
                names.append(name)
                break
    return names


def classify(
    model: TransitionModel,
    cfg: DetectorConfig,
    prev: ContextArray,
    nxt: ContextArray,
    apps: Optional[AppContextDatabase] = None,
    home: Optional[HomeDescriptor] = None,
) -> Verdict:
    """Score one transition; depends only on (prev, next)."""
    key_prev, key_next = prev.key(), nxt.key()
    p = model.transition_probability(key_prev, key_next, cfg.epsilon_smoothing)
    if key_next not in model.observed_states:
        reason = Reason.UNSEEN_STATE
    elif model.count(key_prev, key_next) == 0:
        reason = Reason.UNSEEN_TRANSITION
    elif p <= cfg.tau:
        reason = Reason.BELOW_THRESHOLD
    else:
        return Verdict(Label.BENIGN, Reason.KNOWN_TRANSITION, p)
    if apps is not None and home is not None:
        matched = app_context_explains(apps, home, prev, nxt)
        if matched is not None:
            return Verdict(Label.BENIGN, Reason.APP_CONTEXT_VALIDATED, p, matched)
    return Verdict(Label.MALICIOUS, reason, p)


def classify_sequence(
    model: TransitionModel,
    cfg: DetectorConfig,
    contexts: Sequence[ContextArray],
    apps: Optional[AppContextDatabase] = None,
    home: Optional[HomeDescriptor] = None,
) -> list[Verdict]:
    """Verdicts for each transition of a context sequence (length N-1)."""
    out = []
    for prev, nxt in zip(contexts, contexts[1:]):
        out.append(classify(model, cfg, prev, nxt, apps, home))
    return out
