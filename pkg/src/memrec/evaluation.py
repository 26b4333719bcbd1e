"""Offline experimental protocol: ranking metrics, variants, and reports.

run_experiment replays every Test evaluation point through the pipeline in a
canonical order (so shuffled inputs cannot change the report), aggregates
HR/MRR/NDCG at the configured cuts overall and for warm/cold user groups,
and tracks token usage of the memory chain per user.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .dialogue import Corpus, EvaluationPoint, Split, evaluation_points
from .errors import MismatchedCuts
from .general_memory import (
    ExpertModelPort,
    Outcome,
    ReflectionRecord,
    reflect,
    seed_manual_guidelines,
    train_covisit,
)
from .memory_bank import MemoryBank
from .recommender import (
    GeneralMemoryState,
    PipelineConfig,
    Ports,
    build_title_resolver,
    run_pipeline,
)
from .variants import VariantSpec

log = logging.getLogger(__name__)

METRICS = ("hr", "mrr", "ndcg")
DEFAULT_CUTS = (5, 10, 20)

_EPS = 1e-12

# One CJK character counts as one token; otherwise whitespace-delimited.
_TOKEN = re.compile(
    r"[㐀-䶿一-鿿豈-﫿]"
    r"|[^\s㐀-䶿一-鿿豈-﫿]+"
)


def count_tokens(text: str) -> int:
    return len(_TOKEN.findall(text))


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------

def hit_rate_at_k(ranked, truth, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    truth_set = set(truth)
    return 1.0 if any(item in truth_set for item in list(ranked)[:k]) else 0.0


def mrr_at_k(ranked, truth, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    truth_set = set(truth)
    for rank, item in enumerate(list(ranked)[:k], start=1):
        if item in truth_set:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(ranked, truth, k: int) -> float:
    """Binary-gain NDCG: DCG over hit ranks divided by the ideal DCG."""
    if k < 1:
        raise ValueError("k must be >= 1")
    truth_set = set(truth)
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, item in enumerate(list(ranked)[:k], start=1)
        if item in truth_set
    )
    ideal = min(k, len(truth_set))
    if ideal == 0:
        return 0.0
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal + 1))
    return dcg / idcg


def point_metrics(ranked, truth, cuts) -> dict[str, dict[int, float]]:
    """All metrics at all cuts for one point, with sanity assertions.

    For single-item ground truth HR@K >= NDCG@K >= MRR@K must hold, and every
    metric must be non-decreasing in K; both are enforced on every call.
    """
    values = {
        "hr": {k: hit_rate_at_k(ranked, truth, k) for k in cuts},
        "mrr": {k: mrr_at_k(ranked, truth, k) for k in cuts},
        "ndcg": {k: ndcg_at_k(ranked, truth, k) for k in cuts},
    }
    single = len(set(truth)) == 1
    for k in cuts:
        if single and not (
            values["hr"][k] + _EPS >= values["ndcg"][k] >= values["mrr"][k] - _EPS
        ):
            raise AssertionError(
                f"metric ordering violated at k={k}: "
                f"hr={values['hr'][k]} ndcg={values['ndcg'][k]} mrr={values['mrr'][k]}"
            )
    ordered = sorted(cuts)
    for name in METRICS:
        for lo, hi in zip(ordered, ordered[1:]):
            if values[name][lo] > values[name][hi] + _EPS:
                raise AssertionError(f"{name} not monotone in k: {values[name]}")
    return values


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

GROUPS = ("all", "warm", "cold")


@dataclass(frozen=True)
class EvalReport:
    variant: str
    cuts: tuple[int, ...]
    points: int
    degraded_points: int
    group_counts: dict[str, int]
    metrics: dict[str, dict[str, dict[int, float]]]  # group -> metric -> cut -> mean
    tokens: dict[str, float]  # avg per user: total_dialogues / total_um / retrieved
    metadata: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for group, table in self.metrics.items():
            for name, by_cut in table.items():
                ordered = sorted(by_cut)
                for k in ordered:
                    if not (0.0 - _EPS <= by_cut[k] <= 1.0 + _EPS):
                        raise ValueError(f"{group}/{name}@{k} out of [0,1]: {by_cut[k]}")
                for lo, hi in zip(ordered, ordered[1:]):
                    if by_cut[lo] > by_cut[hi] + _EPS:
                        raise ValueError(f"{group}/{name} not monotone in k")

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "cuts": list(self.cuts),
            "points": self.points,
            "degraded_points": self.degraded_points,
            "group_counts": dict(self.group_counts),
            "metrics": {
                g: {m: {str(k): v for k, v in by_cut.items()} for m, by_cut in table.items()}
                for g, table in self.metrics.items()
            },
            "tokens": dict(self.tokens),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), ensure_ascii=False, sort_keys=True, indent=1)

    def render_table(self) -> str:
        header = ["group"] + [f"{m}@{k}" for m in METRICS for k in self.cuts]
        rows = [header]
        for group in GROUPS:
            if group not in self.metrics:
                continue
            row = [group] + [
                f"{self.metrics[group][m][k]:.4f}" for m in METRICS for k in self.cuts
            ]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        token_line = (
            f"tokens/user: dialogues={self.tokens['total_dialogues']:.2f} "
            f"um={self.tokens['total_um']:.2f} retrieved={self.tokens['retrieved']:.2f}"
        )
        return "\n".join(
            [f"variant: {self.variant}  points: {self.points} "
             f"(warm {self.group_counts.get('warm', 0)}, cold {self.group_counts.get('cold', 0)}, "
             f"degraded {self.degraded_points})"]
            + lines
            + [token_line]
        )


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HarnessConfig:
    pipeline: PipelineConfig = PipelineConfig()
    cuts: tuple[int, ...] = DEFAULT_CUTS
    reflect_every: int = 10  # 0 disables reflection during the run
    candidate_count: int = 40
    per_user_average: bool = False


def build_banks(
    corpus: Corpus,
    ports: Ports,
    retry_budget: int = 1,
    user_ids: list[str] | None = None,
) -> dict[str, MemoryBank]:
    """One extraction pass over every user's Train sessions, in order."""
    banks: dict[str, MemoryBank] = {}
    for user_id in sorted(user_ids if user_ids is not None else corpus.users):
        bank = MemoryBank(user_id)
        for session in corpus.sessions_of(user_id, Split.TRAIN):
            bank.extract_and_add(session, ports.llm, ports.templates, retry_budget)
        banks[user_id] = bank
    return banks


def _canonical_points(corpus: Corpus) -> list[EvaluationPoint]:
    return sorted(evaluation_points(corpus, Split.TEST), key=lambda p: p.key)


def _outcome_for(result_items, truth, list_length) -> ReflectionRecord:
    hit = any(item in set(truth) for item in result_items[:list_length])
    if hit:
        return ReflectionRecord(
            trajectory="", outcome=Outcome.HIT,
            response="The user accepted one of the recommendations.",
        )
    return ReflectionRecord(
        trajectory="", outcome=Outcome.MISS,
        response="The user was not satisfied with these recommendations.",
    )


def run_experiment(
    corpus: Corpus,
    variant: VariantSpec,
    cfg: HarnessConfig,
    ports: Ports,
    expert: ExpertModelPort | None = None,
    banks: dict[str, MemoryBank] | None = None,
    run_log: str | Path | None = None,
) -> EvalReport:
    """Evaluate one variant over every Test point of the corpus.

    Points are processed in sorted (user, session, turn) order regardless of
    input order, which makes reports reproducible byte for byte. Banks are
    built fresh from Train sessions unless supplied (and skipped entirely
    for the no-user-memory variant).
    """
    points = _canonical_points(corpus)
    if expert is None:
        expert = train_covisit(corpus, cfg.candidate_count)
    if variant.without_um:
        banks = {}
    elif banks is None:
        banks = build_banks(corpus, ports, cfg.pipeline.retry_budget,
                            user_ids=sorted({p.user_id for p in points}))

    guidelines = seed_manual_guidelines()
    reflection_on = (
        cfg.reflect_every > 0 and not variant.without_rg and not variant.manual_rg
    )
    general = GeneralMemoryState(expert=expert, guidelines=guidelines)
    resolver = build_title_resolver(corpus.catalog)

    train_users = {
        uid for uid in corpus.users if corpus.sessions_of(uid, Split.TRAIN)
    }
    per_point: list[tuple[str, str, dict[str, dict[int, float]]]] = []  # (user, group, metrics)
    retrieved_tokens: dict[str, list[int]] = {}
    degraded = 0
    log_fh = open(run_log, "w", encoding="utf-8") if run_log else None
    try:
        for idx, point in enumerate(points, start=1):
            result, retrieved = run_pipeline(
                corpus.catalog, point, banks, general, ports,
                cfg.pipeline, variant, resolver=resolver,
            )
            values = point_metrics(result.items, point.ground_truth, cfg.cuts)
            group = "warm" if point.user_id in train_users else "cold"
            per_point.append((point.user_id, group, values))
            if result.degraded or retrieved.degraded:
                degraded += 1
            retrieved_tokens.setdefault(point.user_id, []).append(
                sum(count_tokens(t) for t in retrieved.entities)
                + sum(count_tokens(t) for t in retrieved.attitudes)
            )
            if log_fh is not None:
                log_fh.write(json.dumps({
                    "point": {
                        "user_id": point.user_id,
                        "session_id": point.session_id,
                        "turn_index": point.turn_index,
                    },
                    "items": list(result.items),
                    "provenance": [p.value for p in result.provenance],
                    "retrieved_entities": list(retrieved.entities),
                    "hit": values["hr"][max(cfg.cuts)] > 0.0,
                    "degraded": bool(result.degraded or retrieved.degraded),
                    "trajectory": result.trajectory,
                }, ensure_ascii=False, sort_keys=True) + "\n")
            if reflection_on and idx % cfg.reflect_every == 0:
                record = _outcome_for(result.items, point.ground_truth, cfg.pipeline.list_length)
                record = ReflectionRecord(
                    trajectory=result.trajectory,
                    outcome=record.outcome,
                    response=record.response,
                )
                general.guidelines = reflect(
                    general.guidelines, record, ports.llm,
                    ports.templates, cfg.pipeline.retry_budget,
                )
    finally:
        if log_fh is not None:
            log_fh.close()

    # token accounting, averaged per evaluated user
    eval_users = sorted({uid for uid, _, _ in per_point})
    dialogue_tokens = []
    um_tokens = []
    retr_tokens = []
    for uid in eval_users:
        train_text = sum(
            count_tokens(u.text)
            for s in corpus.sessions_of(uid, Split.TRAIN)
            for u in s.utterances
        )
        dialogue_tokens.append(float(train_text))
        bank = banks.get(uid)
        um = 0
        if bank is not None:
            um = sum(
                count_tokens(e.entity) + count_tokens(e.attitude)
                for e in bank.entries.values()
            )
        um_tokens.append(float(um))
        retr_tokens.append(_mean([float(x) for x in retrieved_tokens.get(uid, [])]))

    metrics_by_group: dict[str, dict[str, dict[int, float]]] = {}
    counts: dict[str, int] = {}
    for group in GROUPS:
        rows = [v for _, g, v in per_point if group == "all" or g == group]
        counts[group] = len(rows)
        if cfg.per_user_average and rows:
            by_user: dict[str, list[dict]] = {}
            for uid, g, v in per_point:
                if group == "all" or g == group:
                    by_user.setdefault(uid, []).append(v)
            metrics_by_group[group] = {
                m: {
                    k: _mean([_mean([v[m][k] for v in vs]) for vs in by_user.values()])
                    for k in cfg.cuts
                }
                for m in METRICS
            }
        else:
            metrics_by_group[group] = {
                m: {k: _mean([v[m][k] for v in rows]) for k in cfg.cuts}
                for m in METRICS
            }

    return EvalReport(
        variant=variant.name,
        cuts=tuple(cfg.cuts),
        points=len(points),
        degraded_points=degraded,
        group_counts=counts,
        metrics=metrics_by_group,
        tokens={
            "total_dialogues": _mean(dialogue_tokens),
            "total_um": _mean(um_tokens),
            "retrieved": _mean(retr_tokens),
        },
        metadata={
            "seed": cfg.pipeline.seed,
            "aggregation": "per-user" if cfg.per_user_average else "per-point",
            "tokenizer": "whitespace+cjk-chars",
            "reflect_every": cfg.reflect_every if reflection_on else 0,
            "guidelines_version": general.guidelines.version,
        },
    )


# ---------------------------------------------------------------------------
# Cross-variant comparison
# ---------------------------------------------------------------------------

def compare_reports(reports: list[EvalReport], group: str = "all") -> tuple[str, str]:
    """Aligned comparison across variants; returns (text table, CSV text)."""
    if not reports:
        raise ValueError("no reports to compare")
    cuts = reports[0].cuts
    for rep in reports:
        if rep.cuts != cuts:
            raise MismatchedCuts(f"{rep.variant} has cuts {rep.cuts}, expected {cuts}")
    header = ["variant"] + [f"{m}@{k}" for m in METRICS for k in cuts]
    rows = [header]
    for rep in reports:
        table = rep.metrics[group]
        rows.append([rep.variant] + [repr(table[m][k]) for m in METRICS for k in cuts])

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    csv_text = buf.getvalue()

    display = [rows[0]] + [
        [r[0]] + [f"{float(x):.4f}" for x in r[1:]] for r in rows[1:]
    ]
    widths = [max(len(r[i]) for r in display) for i in range(len(header))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in display)
    return text, csv_text
