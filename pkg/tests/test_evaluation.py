"""Ranking metrics vs brute-force oracles, token accounting, reports."""

from __future__ import annotations

import csv
import io
import json
import math
import random
import time

import pytest

from memrec.errors import MismatchedCuts
from memrec.evaluation import (
    EvalReport,
    HarnessConfig,
    compare_reports,
    count_tokens,
    hit_rate_at_k,
    mrr_at_k,
    ndcg_at_k,
    point_metrics,
    run_experiment,
)
from memrec.variants import variant_by_name


# Brute-force reference implementations, written independently of the
# package versions (explicit loops, no shared helpers).

def brute_hr(ranked, truth, k):
    top = list(ranked)[:k]
    for t in truth:
        if t in top:
            return 1.0
    return 0.0


def brute_mrr(ranked, truth, k):
    for pos, item in enumerate(list(ranked)[:k]):
        if item in truth:
            return 1.0 / (pos + 1)
    return 0.0


def brute_ndcg(ranked, truth, k):
    dcg = 0.0
    for pos, item in enumerate(list(ranked)[:k]):
        if item in truth:
            dcg += 1.0 / math.log2(pos + 2)
    ideal = min(k, len(set(truth)))
    idcg = 0.0
    for pos in range(ideal):
        idcg += 1.0 / math.log2(pos + 2)
    return dcg / idcg if idcg > 0 else 0.0


def _random_triples(n, seed):
    rng = random.Random(seed)
    universe = [f"i{j}" for j in range(100)]
    for _ in range(n):
        ranked = rng.sample(universe, rng.randint(1, 40))
        n_truth = rng.randint(1, 5)
        if rng.random() < 0.5 and ranked:
            truth = set(rng.sample(ranked, min(n_truth, len(ranked))))
        else:
            truth = set(rng.sample(universe, n_truth))
        k = rng.choice((1, 3, 5, 10, 20))
        yield ranked, truth, k


class TestMetrics:
    def test_hr_spot_values(self):
        assert hit_rate_at_k(["a", "b", "c"], {"b"}, 1) == 0.0
        assert hit_rate_at_k(["a", "b", "c"], {"b"}, 2) == 1.0

    def test_mrr_spot_values(self):
        ranked = ["x1", "x2", "x3", "hit", "x5"]
        assert mrr_at_k(ranked, {"hit"}, 20) == 0.25
        assert mrr_at_k(ranked, {"absent"}, 20) == 0.0

    def test_ndcg_spot_values(self):
        assert ndcg_at_k(["hit", "b", "c"], {"hit"}, 5) == 1.0
        # single truth at rank 3: 1/log2(4) = 0.5 exactly
        assert ndcg_at_k(["a", "b", "hit", "d", "e"], {"hit"}, 5) == 0.5
        assert ndcg_at_k(["t1", "t2", "c"], {"t1", "t2"}, 5) == 1.0

    def test_thousand_triples_match_bruteforce(self):
        started = time.monotonic()
        for ranked, truth, k in _random_triples(1000, seed=321):
            assert abs(hit_rate_at_k(ranked, truth, k) - brute_hr(ranked, truth, k)) <= 1e-12
            assert abs(mrr_at_k(ranked, truth, k) - brute_mrr(ranked, truth, k)) <= 1e-12
            assert abs(ndcg_at_k(ranked, truth, k) - brute_ndcg(ranked, truth, k)) <= 1e-12
        assert time.monotonic() - started < 5.0

    def test_point_ordering_and_monotonicity(self):
        rng = random.Random(8)
        cuts = (5, 10, 20)
        for _ in range(300):
            ranked = [f"i{j}" for j in rng.sample(range(50), 30)]
            truth = {rng.choice(ranked)} if rng.random() < 0.8 else {"i999"}
            values = point_metrics(ranked, truth, cuts)  # raises on violation
            for k in cuts:
                assert values["hr"][k] >= values["ndcg"][k] >= values["mrr"][k]

    def test_bad_k_rejected(self):
        for fn in (hit_rate_at_k, mrr_at_k, ndcg_at_k):
            with pytest.raises(ValueError):
                fn(["a"], {"a"}, 0)


class TestCountTokens:
    def test_simple_whitespace(self):
        assert count_tokens("a b c") == 3

    def test_empty(self):
        assert count_tokens("") == 0

    def test_mixed_cjk_latin_hand_count(self):
        # hand count: 我/喜/欢 + sci-fi + 电/影 = 6
        assert count_tokens("我喜欢 sci-fi 电影") == 6
        # embedded CJK splits the latin run: abc + 中 + def = 3
        assert count_tokens("abc中def") == 3

    def test_punctuation_rides_along(self):
        assert count_tokens("hello, world!") == 2


def _report(variant="base", cuts=(5, 10, 20), value=0.5):
    metrics = {
        g: {m: {k: value for k in cuts} for m in ("hr", "mrr", "ndcg")}
        for g in ("all", "warm", "cold")
    }
    return EvalReport(
        variant=variant, cuts=cuts, points=10, degraded_points=0,
        group_counts={"all": 10, "warm": 8, "cold": 2},
        metrics=metrics,
        tokens={"total_dialogues": 100.0, "total_um": 20.0, "retrieved": 5.0},
    )


class TestReports:
    def test_out_of_range_metric_rejected(self):
        with pytest.raises(ValueError):
            _report(value=1.5)

    def test_non_monotone_hr_rejected(self):
        rep = _report()
        bad = {g: {m: dict(by) for m, by in t.items()} for g, t in rep.metrics.items()}
        bad["all"]["hr"] = {5: 0.9, 10: 0.4, 20: 1.0}
        with pytest.raises(ValueError):
            EvalReport(
                variant="x", cuts=rep.cuts, points=1, degraded_points=0,
                group_counts=rep.group_counts, metrics=bad, tokens=rep.tokens,
            )

    def test_single_report_table(self):
        text, csv_text = compare_reports([_report()])
        assert "variant" in text and "base" in text
        rows = list(csv.reader(io.StringIO(csv_text)))
        assert len(rows) == 2

    def test_identical_reports_zero_delta(self):
        _, csv_text = compare_reports([_report("a"), _report("b")])
        rows = list(csv.reader(io.StringIO(csv_text)))
        assert rows[1][1:] == rows[2][1:]

    def test_csv_reparse_equals_source(self):
        rep = _report(value=1.0 / 3.0)
        _, csv_text = compare_reports([rep])
        rows = list(csv.reader(io.StringIO(csv_text)))
        header, data = rows
        for col, cell in zip(header[1:], data[1:]):
            metric, k = col.split("@")
            assert float(cell) == rep.metrics["all"][metric][int(k)]

    def test_mismatched_cuts_rejected(self):
        with pytest.raises(MismatchedCuts):
            compare_reports([_report(), _report(cuts=(5, 10))])


class TestRunExperiment:
    def test_report_json_deterministic_and_order_independent(self, synth_corpus, app_config):
        harness = HarnessConfig(pipeline=app_config.pipeline_config())

        def run():
            return run_experiment(
                synth_corpus, variant_by_name("base"), harness, app_config.make_ports()
            ).to_json()

        first, second = run(), run()
        assert first == second

        # shuffle user ordering in the corpus mapping; report must not move
        from memrec.dialogue import Corpus

        rng = random.Random(99)
        uids = list(synth_corpus.users)
        rng.shuffle(uids)
        shuffled = Corpus(
            users={u: synth_corpus.users[u] for u in uids},
            catalog=synth_corpus.catalog,
            split_assignment=synth_corpus.split_assignment,
        )
        third = run_experiment(
            shuffled, variant_by_name("base"), harness, app_config.make_ports()
        ).to_json()
        assert third == first

    def test_warm_cold_partition_covers_all_users(self, synth_corpus, app_config):
        harness = HarnessConfig(pipeline=app_config.pipeline_config())
        rep = run_experiment(
            synth_corpus, variant_by_name("base"), harness, app_config.make_ports()
        )
        assert rep.group_counts["warm"] + rep.group_counts["cold"] == rep.group_counts["all"]
        assert rep.group_counts["cold"] > 0

    def test_token_chain_holds(self, synth_corpus, app_config):
        harness = HarnessConfig(pipeline=app_config.pipeline_config())
        rep = run_experiment(
            synth_corpus, variant_by_name("base"), harness, app_config.make_ports()
        )
        assert rep.tokens["retrieved"] <= rep.tokens["total_um"] <= rep.tokens["total_dialogues"]

    def test_token_chain_verified_by_direct_summation(self, synth_corpus, app_config):
        # independent check of the per-user inequality chain on raw data
        from memrec.dialogue import Split
        from memrec.evaluation import build_banks

        ports = app_config.make_ports()
        banks = build_banks(synth_corpus, ports)
        for uid, bank in banks.items():
            dialogue = sum(
                count_tokens(u.text)
                for s in synth_corpus.sessions_of(uid, Split.TRAIN)
                for u in s.utterances
            )
            um = sum(
                count_tokens(e.entity) + count_tokens(e.attitude)
                for e in bank.entries.values()
            )
            assert um <= dialogue

    def test_without_um_skips_banks(self, synth_corpus, app_config):
        harness = HarnessConfig(pipeline=app_config.pipeline_config())
        rep = run_experiment(
            synth_corpus, variant_by_name("wo-um"), harness, app_config.make_ports()
        )
        assert rep.tokens["total_um"] == 0.0
        assert rep.tokens["retrieved"] == 0.0

    def test_run_log_written_per_point(self, synth_corpus, app_config, tmp_path):
        harness = HarnessConfig(pipeline=app_config.pipeline_config())
        log_path = tmp_path / "runlog.jsonl"
        rep = run_experiment(
            synth_corpus, variant_by_name("base"), harness, app_config.make_ports(),
            run_log=log_path,
        )
        lines = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert len(lines) == rep.points
        for line in lines:
            assert {"point", "items", "provenance", "retrieved_entities",
                    "hit", "degraded", "trajectory"} <= set(line)

    def test_per_user_average_flag(self, synth_corpus, app_config):
        base = HarnessConfig(pipeline=app_config.pipeline_config())
        per_user = HarnessConfig(pipeline=app_config.pipeline_config(), per_user_average=True)
        rep_a = run_experiment(synth_corpus, variant_by_name("base"), base,
                               app_config.make_ports())
        rep_b = run_experiment(synth_corpus, variant_by_name("base"), per_user,
                               app_config.make_ports())
        assert rep_b.metadata["aggregation"] == "per-user"
        # one point per user in the fixture, so the two aggregations agree
        assert rep_a.metrics["all"] == rep_b.metrics["all"]

    def test_reflection_evolves_guidelines_in_base_run(self, synth_corpus, app_config):
        harness = HarnessConfig(pipeline=app_config.pipeline_config(), reflect_every=10)
        rep = run_experiment(synth_corpus, variant_by_name("base"), harness,
                             app_config.make_ports())
        assert rep.metadata["guidelines_version"] == rep.points // 10
        manual = run_experiment(synth_corpus, variant_by_name("manual-rg"), harness,
                                app_config.make_ports())
        assert manual.metadata["guidelines_version"] == 0
