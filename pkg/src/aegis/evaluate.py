"""Detection metrics and desk-scale evaluation experiments.

Orientation follows the framework's reporting convention: benign activity
is the positive class. TP counts correctly identified benign snapshots and
TN counts correctly identified malicious ones. The reported F-score is
computed over the TP and TN rates (2*TP*TN/(TP+TN)); a conventional F1
over benign precision/recall is carried alongside for sanity.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .apps import AppContextDatabase, Provenance, extract_app, merge_contexts
from .core import AegisError, ContextArray, HomeDescriptor, Layout, PolicyKind, PolicyRule
from .markov import (
    DetectorConfig,
    Label,
    TransitionModel,
    Verdict,
    classify,
    retrain_incremental,
    train,
)
from .simulate import (
    ALL_THREATS,
    DAY_MS,
    ActivityScript,
    LabeledTrace,
    Step,
    ThreatId,
    ThreatScript,
    benchmark_app_db,
    benchmark_suite,
    build_home,
    daily_scripts,
    home_plan,
    inject_threat,
    sample_corpus,
    simulate_benign,
    split_timestamp,
    trace_contexts,
)


class EvaluationError(AegisError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp


@dataclass(frozen=True)
class MetricReport:
    tag: str
    counts: ConfusionCounts
    tpr: Optional[float]
    fnr: Optional[float]
    tnr: Optional[float]
    fpr: Optional[float]
    accuracy: Optional[float]
    f_score: Optional[float]
    f1_standard: Optional[float]


def score(
    verdicts: Sequence[Verdict | Label], truth: Sequence[Optional[str]]
) -> ConfusionCounts:
    """Tally verdicts against ground truth (None = benign, else threat id)."""
    if len(verdicts) != len(truth):
        raise EvaluationError(
            f"verdicts ({len(verdicts)}) and labels ({len(truth)}) differ in length"
        )
    tp = fn = tn = fp = 0
    for v, t in zip(verdicts, truth):
        label = v.label if isinstance(v, Verdict) else v
        benign_truth = t is None
        benign_verdict = label is Label.BENIGN
        if benign_truth and benign_verdict:
            tp += 1
        elif benign_truth and not benign_verdict:
            fn += 1
        elif not benign_truth and not benign_verdict:
            tn += 1
        else:
            fp += 1
    return ConfusionCounts(tp, fn, tn, fp)


def metrics(c: ConfusionCounts, tag: str = "") -> MetricReport:
    """The six ratios; zero-denominator metrics are undefined (None)."""
    pos = c.tp + c.fn
    neg = c.tn + c.fp
    tpr = c.tp / pos if pos else None
    fnr = c.fn / pos if pos else None
    tnr = c.tn / neg if neg else None
    fpr = c.fp / neg if neg else None
    accuracy = (c.tp + c.tn) / c.total if c.total else None
    f_score = None
    if tpr is not None and tnr is not None and (tpr + tnr) > 0:
        f_score = 2 * tpr * tnr / (tpr + tnr)
    f1 = None
    if tpr is not None:
        denom = c.tp + c.fp
        precision = c.tp / denom if denom else None
        if precision is not None and (precision + tpr) > 0:
            f1 = 2 * precision * tpr / (precision + tpr)
    return MetricReport(tag, c, tpr, fnr, tnr, fpr, accuracy, f_score, f1)


# ---------------------------------------------------------------------------
# Detection runs


@dataclass
class DetectionRun:
    """Transition-by-transition outcome of one evaluation pass."""

    verdicts: list[Verdict]
    truth: list[Optional[str]]
    timestamps: list[int]
    model: TransitionModel
    feedback_events: int = 0

    def report(self, tag: str = "") -> MetricReport:
        return metrics(score(self.verdicts, self.truth), tag)

    def per_threat_tn_rate(self) -> dict[str, float]:
        out = {}
        for tid in {t for t in self.truth if t is not None}:
            caught = sum(
                1
                for v, t in zip(self.verdicts, self.truth)
                if t == tid and v.label is Label.MALICIOUS
            )
            total = sum(1 for t in self.truth if t == tid)
            out[tid] = caught / total if total else 1.0
        return out

    def daily_alert_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for v, ts in zip(self.verdicts, self.timestamps):
            if v.label is Label.MALICIOUS:
                day = ts // DAY_MS
                counts[day] = counts.get(day, 0) + 1
        return counts


def run_detection(
    model: TransitionModel,
    cfg: DetectorConfig,
    arrays: Sequence[ContextArray],
    labels: Sequence[Optional[str]],
    start: int,
    apps: Optional[AppContextDatabase] = None,
    home: Optional[HomeDescriptor] = None,
    adaptive: bool = False,
    feedback_fraction: float = 1.0,
    feedback_seed: int = 0,
) -> DetectionRun:
    """Classify transitions from arrays[start-1] -> arrays[start] onward.

    In adaptive mode, malicious verdicts on truly benign transitions receive
    oracle feedback with the given probability and immediately retrain the
    model; recorded verdicts are always the pre-feedback ones.
    """
    if start < 1 or start >= len(arrays):
        raise EvaluationError("start index must leave at least one transition")
    rng = random.Random(f"feedback:{feedback_seed}")
    verdicts: list[Verdict] = []
    truth: list[Optional[str]] = []
    timestamps: list[int] = []
    feedback_events = 0
    m = model
    for k in range(start, len(arrays)):
        prev, nxt = arrays[k - 1], arrays[k]
        v = classify(m, cfg, prev, nxt, apps, home)
        verdicts.append(v)
        truth.append(labels[k])
        timestamps.append(nxt.timestamp)
        if adaptive and v.label is Label.MALICIOUS and labels[k] is None:
            if feedback_fraction >= 1.0 or rng.random() < feedback_fraction:
                m = retrain_incremental(m, [prev, nxt])
                feedback_events += 1
    return DetectionRun(verdicts, truth, timestamps, m, feedback_events)


def split_index(arrays: Sequence[ContextArray], split_ts: int) -> int:
    for i, a in enumerate(arrays):
        if a.timestamp >= split_ts:
            return i
    return len(arrays)


@dataclass
class BenchmarkResult:
    home: HomeDescriptor
    report: MetricReport
    run: DetectionRun
    train_arrays: int
    test_arrays: int
    coverage: float


def evaluate_benchmark(
    layout: Layout,
    users: int,
    seed: int,
    adaptive: bool = False,
    days: int = 10,
    threats: Sequence[ThreatId] = ALL_THREATS,
    cfg: Optional[DetectorConfig] = None,
    apps: Optional[AppContextDatabase] = None,
    feedback_fraction: float = 1.0,
    tag: Optional[str] = None,
) -> BenchmarkResult:
    """End-to-end benchmark: simulate, split 75/25, train, detect, score."""
    home, train_trace, test_trace, split_ts = benchmark_suite(
        layout, users, seed, days=days, threats=threats
    )
    joined = LabeledTrace(
        train_trace.events + test_trace.events,
        train_trace.labels + test_trace.labels,
        train_trace.users + test_trace.users,
    )
    arrays, labels = trace_contexts(home, joined)
    cut = split_index(arrays, split_ts)
    cfg = cfg or DetectorConfig()
    model = train(arrays[:cut], cfg)
    db = apps if apps is not None else benchmark_app_db(home)
    run = run_detection(
        model,
        cfg,
        arrays,
        labels,
        start=cut,
        apps=db,
        home=home,
        adaptive=adaptive,
        feedback_fraction=feedback_fraction,
        feedback_seed=seed,
    )
    trained_pairs = {
        (a.key(), b.key()) for a, b in zip(arrays[: cut - 1], arrays[1:cut])
    }
    benign_test_pairs = [
        (arrays[k - 1].key(), arrays[k].key())
        for k in range(cut, len(arrays))
        if labels[k] is None and labels[k - 1] is None
    ]
    coverage = (
        sum(1 for p in benign_test_pairs if p in trained_pairs) / len(benign_test_pairs)
        if benign_test_pairs
        else 1.0
    )
    mode = "adaptive" if adaptive else "normal"
    report = run.report(tag or f"{layout.value}/{users}u/{mode}")
    return BenchmarkResult(home, report, run, cut, len(arrays) - cut, coverage)


# ---------------------------------------------------------------------------
# Experiment suites


def suite_layouts(seed: int, days: int = 10) -> list[MetricReport]:
    rows = []
    for layout in (Layout.SINGLE_BEDROOM, Layout.DOUBLE_BEDROOM, Layout.DUPLEX):
        for adaptive in (False, True):
            rows.append(
                evaluate_benchmark(layout, 1, seed, adaptive=adaptive, days=days).report
            )
    return rows


def suite_multiuser(seed: int, days: int = 10) -> list[MetricReport]:
    rows = []
    for layout in (Layout.SINGLE_BEDROOM, Layout.DOUBLE_BEDROOM, Layout.DUPLEX):
        for users in (2, 3, 4):
            for adaptive in (False, True):
                rows.append(
                    evaluate_benchmark(
                        layout, users, seed, adaptive=adaptive, days=days
                    ).report
                )
    return rows


_ABLATIONS = {
    "full": (),
    "no-motion": ("motion",),
    "no-door": ("contact",),
    "no-temperature": ("temperature",),
    "no-light-sensor": ("light-level",),
}


def drop_sensor_kinds(
    home: HomeDescriptor, subkinds: Sequence[str]
) -> HomeDescriptor:
    """Home with the given sensor subkinds removed; policies touching the
    removed entities are dropped too."""
    removed = {e.id for e in home.entities if e.subkind in subkinds}
    entities = tuple(e for e in home.entities if e.id not in removed)
    policies = tuple(
        p
        for p in home.policies
        if p.target_entity not in removed and not (set(p.triggers) & removed)
    )
    return HomeDescriptor(home.layout, entities, home.authorized_users, policies)


def filter_trace(trace: LabeledTrace, home: HomeDescriptor) -> LabeledTrace:
    idx = [i for i, e in enumerate(trace.events) if home.has_entity(e.entity_id)]
    return LabeledTrace(
        [trace.events[i] for i in idx],
        [trace.labels[i] for i in idx],
        [trace.users[i] for i in idx],
        list(trace.injected_ranges),
    )


def suite_sensors(seed: int, days: int = 10) -> list[MetricReport]:
    """Sensor ablations on the duplex layout, same trace per seed."""
    home, train_trace, test_trace, split_ts = benchmark_suite(
        Layout.DUPLEX, 1, seed, days=days
    )
    joined = LabeledTrace(
        train_trace.events + test_trace.events,
        train_trace.labels + test_trace.labels,
        train_trace.users + test_trace.users,
    )
    rows = []
    for name, subkinds in _ABLATIONS.items():
        reduced_home = drop_sensor_kinds(home, subkinds) if subkinds else home
        reduced = filter_trace(joined, reduced_home)
        arrays, labels = trace_contexts(reduced_home, reduced)
        cut = split_index(arrays, split_ts)
        cfg = DetectorConfig()
        model = train(arrays[:cut], cfg)
        db = benchmark_app_db(reduced_home)
        run = run_detection(
            model, cfg, arrays, labels, start=cut, apps=db, home=reduced_home
        )
        rows.append(run.report(f"duplex/sensors/{name}"))
    return rows


def db_from_sources(home: HomeDescriptor, sources) -> AppContextDatabase:
    db = AppContextDatabase()
    for src in sources:
        pairs = extract_app(src, home)
        if pairs:
            db.insert(src.name, merge_contexts(pairs), Provenance.OFFICIAL)
    return db


_MALICIOUS_ORDER = (ThreatId.T3, ThreatId.T5, ThreatId.T1, ThreatId.T4, ThreatId.T2)


def suite_apps(seed: int, days: int = 10) -> list[MetricReport]:
    """Benign-app count sweep (detection vs installed rule apps) and
    malicious-app count sweep (one threat type per malicious app)."""
    home = build_home(Layout.SINGLE_BEDROOM, 1)
    corpus = sample_corpus(home, 12)
    rows = []
    for k in (1, 3, 6, 9, 12):
        db = db_from_sources(home, corpus[:k])
        rows.append(
            evaluate_benchmark(
                Layout.SINGLE_BEDROOM,
                1,
                seed,
                days=days,
                apps=db,
                tag=f"single_bedroom/benign-apps/{k}",
            ).report
        )
    full_db = db_from_sources(home, corpus)
    for k in range(1, len(_MALICIOUS_ORDER) + 1):
        rows.append(
            evaluate_benchmark(
                Layout.SINGLE_BEDROOM,
                1,
                seed,
                days=days,
                threats=_MALICIOUS_ORDER[:k],
                apps=full_db,
                tag=f"single_bedroom/malicious-apps/{k}",
            ).report
        )
    return rows


def _policy_home(home: HomeDescriptor, policy: str) -> HomeDescriptor:
    plan = home_plan(home)
    policies = list(home.policies)
    if policy == "policy1":  # time-specific light bindings (sunset-sunrise)
        for light in plan.light.values():
            policies.append(
                PolicyRule(PolicyKind.TIME_WINDOW, light, window=("18:00", "06:00"))
            )
    elif policy == "policy2":  # sensor-specific: lights also bound to doors
        for pair, door in plan.doors.items():
            for room in pair:
                if room in plan.light:
                    policies.append(
                        PolicyRule(
                            PolicyKind.SENSOR_BINDING,
                            plan.light[room],
                            triggers=(door,),
                        )
                    )
    return HomeDescriptor(home.layout, home.entities, home.authorized_users, tuple(policies))


def suite_policies(seed: int, days: int = 10) -> list[MetricReport]:
    rows = []
    for policy in ("baseline", "policy1", "policy2"):
        home = build_home(Layout.SINGLE_BEDROOM, 1)
        if policy != "baseline":
            home = _policy_home(home, policy)
        scripts = daily_scripts(home, 1)
        benign = simulate_benign(home, scripts, days, seed)
        split_ts = split_timestamp(days)
        test = benign.slice_ts(split_ts)
        for tid in ALL_THREATS:
            test = inject_threat(
                test, home, ThreatScript(tid, 4), seed, assume_idle_from=split_ts
            )
        joined = LabeledTrace(
            benign.slice_ts(0, split_ts).events + test.events,
            benign.slice_ts(0, split_ts).labels + test.labels,
            benign.slice_ts(0, split_ts).users + test.users,
        )
        arrays, labels = trace_contexts(home, joined)
        cut = split_index(arrays, split_ts)
        cfg = DetectorConfig()
        model = train(arrays[:cut], cfg)
        run = run_detection(
            model, cfg, arrays, labels, start=cut, apps=benchmark_app_db(home), home=home
        )
        rows.append(run.report(f"single_bedroom/{policy}"))
    return rows


SUITES = {
    "layouts": suite_layouts,
    "multiuser": suite_multiuser,
    "sensors": suite_sensors,
    "apps": suite_apps,
    "policies": suite_policies,
}


def run_experiment(suite: str, seed: int, days: int = 10) -> list[MetricReport]:
    if suite not in SUITES:
        raise EvaluationError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    return SUITES[suite](seed, days=days)


# ---------------------------------------------------------------------------
# Adaptive feedback-volume trend


def _trend_variants(home: HomeDescriptor, pool: int = 12) -> list[ActivityScript]:
    """A pool of distinct activity patterns; each leaves a different device
    combination behind, so unseen pool members produce fresh states."""
    plan = home_plan(home)
    rooms = [r for r in plan.rooms if r in plan.light and r != plan.hub]
    variants = []
    for k in range(pool):
        room = rooms[k % len(rooms)]
        other = rooms[(k + 1) % len(rooms)]
        steps = [Step("move", room, 15)]
        if k % 4 == 1:
            steps += [Step("light_on", other, 10), Step("move", other, 15), Step("light_off", other, 10)]
        elif k % 4 == 2:
            steps += [Step("move", plan.hub, 15), Step("light_on", room, 10), Step("move", room, 15)]
        elif k % 4 == 3 and plan.thermostat:
            steps += [Step("thermostat", f"{68 + k % 5}.0", 15)]
        else:
            steps += [Step("move", plan.hub, 15), Step("move", other, 15)]
        steps += [Step("move", plan.hub, 15)]
        variants.append(
            ActivityScript(
                name=f"variant-{k}",
                user_id="u1",
                steps=tuple(steps),
                days=(),
            )
        )
    return variants


def adaptive_trend(
    seed: int,
    days: int = 11,
    layout: Layout = Layout.DOUBLE_BEDROOM,
    feedback_fraction: float = 1.0,
    variants_per_day: int = 6,
) -> dict[int, int]:
    """Benign adaptive run: train on day 0, give oracle feedback afterwards.

    Returns alerts per adaptive day (1-based). Each day performs a base
    routine plus activity variants sampled from a fixed pool, so novelty
    (and with it the alert volume) decays as feedback teaches the model.
    """
    home = build_home(layout, 1)
    rng = random.Random(f"trend:{seed}")
    base = [
        ActivityScript(
            name="routine",
            user_id="u1",
            steps=tuple(
                [Step("move", "hallway", 25)]
                + [Step("move", r, 20) for r in ("living", "hallway", "bedroom", "hallway") * 3]
                + [Step("move", "bedroom", 30), Step("settle", "", 20)]
            ),
            days=("weekday", "weekend"),
            start_minute=8 * 60,
        )
    ]
    pool = _trend_variants(home)
    day_scripts = []
    for day in range(1, days):  # the training day runs the base routine only
        start = 10 * 60
        # the first live day meets the whole activity repertoire; later days
        # revisit a sample of it
        chosen = pool if day == 1 else rng.sample(pool, k=min(variants_per_day, len(pool)))
        for v in chosen:
            day_scripts.append(
                ActivityScript(
                    name=f"{v.name}-d{day}",
                    user_id="u1",
                    steps=v.steps,
                    days=(f"day{day}",),
                    start_minute=start,
                )
            )
            start += 55
    benign = simulate_benign(home, base + day_scripts, days, seed, noise_rate=0.0)
    arrays, labels = trace_contexts(home, benign)
    cut = split_index(arrays, DAY_MS)  # day 0 is the training day
    cfg = DetectorConfig()
    model = train(arrays[:cut], cfg)
    run = run_detection(
        model,
        cfg,
        arrays,
        labels,
        start=cut,
        apps=benchmark_app_db(home),
        home=home,
        adaptive=True,
        feedback_fraction=feedback_fraction,
        feedback_seed=seed,
    )
    return run.daily_alert_counts()


# ---------------------------------------------------------------------------
# Report output


_CSV_FIELDS = [
    "experiment", "tp", "fn", "tn", "fp",
    "tpr", "fnr", "tnr", "fpr", "accuracy", "f_score", "f1_standard",
]


def write_csv(path: str, rows: Sequence[MetricReport]) -> None:
    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(
                {
                    "experiment": r.tag,
                    "tp": r.counts.tp,
                    "fn": r.counts.fn,
                    "tn": r.counts.tn,
                    "fp": r.counts.fp,
                    "tpr": fmt(r.tpr),
                    "fnr": fmt(r.fnr),
                    "tnr": fmt(r.tnr),
                    "fpr": fmt(r.fpr),
                    "accuracy": fmt(r.accuracy),
                    "f_score": fmt(r.f_score),
                    "f1_standard": fmt(r.f1_standard),
                }
            )


def format_table(rows: Sequence[MetricReport]) -> str:
    """Fixed-width table in the layout-report column order."""
    def fmt(x):
        return "  --  " if x is None else f"{x:.4f}"

    header = (
        f"{'Experiment':<38} {'Recall':>7} {'FN':>7} {'TN':>7} {'FP':>7} "
        f"{'Accuracy':>9} {'F-score':>8}"
    )
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.tag:<38} {fmt(r.tpr):>7} {fmt(r.fnr):>7} {fmt(r.tnr):>7} "
            f"{fmt(r.fpr):>7} {fmt(r.accuracy):>9} {fmt(r.f_score):>8}"
        )
    return "\n".join(lines)
