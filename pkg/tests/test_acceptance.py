"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run as ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Everything runs offline against the deterministic mock model and the
bundled synthetic corpus generator.
"""

from __future__ import annotations

import json
import random
import re
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from memrec.cli import main as cli_main
from memrec.config import AppConfig
from memrec.dialogue import Split, evaluation_points
from memrec.evaluation import (
    HarnessConfig,
    compare_reports,
    hit_rate_at_k,
    mrr_at_k,
    ndcg_at_k,
    run_experiment,
)
from memrec.general_memory import (
    Outcome,
    ReflectionRecord,
    reflect,
    seed_manual_guidelines,
)
from memrec.llm import MockLlm
from memrec.memory_bank import MemoryBank, MemoryStore
from memrec.retrieval import HashNgramEmbedder, RetrievalConfig, retrieve
from memrec.service import create_app
from memrec.variants import VARIANT_NAMES, variant_by_name

from test_evaluation import brute_hr, brute_mrr, brute_ndcg, _random_triples
from test_memory_bank import annotated_session, oracle_fold, oracle_merge
from memrec.textnorm import canonical_entity

ALL_VARIANTS = [n for n in VARIANT_NAMES if n != "mem-ours"]  # alias of base


def report_line(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {status} [{name}]{': ' + detail if detail else ''}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def harness(app_config):
    return HarnessConfig(pipeline=app_config.pipeline_config())


@pytest.fixture(scope="module")
def variant_reports(synth_corpus, app_config, harness, tmp_path_factory):
    """Every variant evaluated once, with run logs."""
    logs = tmp_path_factory.mktemp("runlogs")
    reports = {}
    for name in ALL_VARIANTS:
        reports[name] = run_experiment(
            synth_corpus, variant_by_name(name), harness, app_config.make_ports(),
            run_log=logs / f"{name}.jsonl",
        )
    return reports, logs


def test_criterion_metric_oracle_equivalence():
    started = time.monotonic()
    worst = 0.0
    for ranked, truth, k in _random_triples(1000, seed=20240601):
        worst = max(
            worst,
            abs(hit_rate_at_k(ranked, truth, k) - brute_hr(ranked, truth, k)),
            abs(mrr_at_k(ranked, truth, k) - brute_mrr(ranked, truth, k)),
            abs(ndcg_at_k(ranked, truth, k) - brute_ndcg(ranked, truth, k)),
        )
    spot_ndcg = ndcg_at_k(["a", "b", "hit", "c", "d"], {"hit"}, 5)
    spot_mrr = mrr_at_k(["a", "b", "c", "hit"], {"hit"}, 20)
    elapsed = time.monotonic() - started
    ok = worst <= 1e-12 and spot_ndcg == 0.5 and spot_mrr == 0.25 and elapsed < 5.0
    report_line(
        "metric-oracle-equivalence", ok,
        f"max|delta|={worst:.2e}, ndcg@5(rank3)={spot_ndcg}, mrr(rank4)={spot_mrr}, {elapsed:.2f}s",
    )


def test_criterion_per_point_ordering(synth_corpus, app_config, harness, monkeypatch):
    # the full runs in variant_reports would have raised had any point violated
    # the ordering; here we additionally prove the harness assertion is live
    rng = random.Random(5150)
    for _ in range(500):
        ranked = [f"i{j}" for j in rng.sample(range(60), 25)]
        truth = {rng.choice(ranked)} if rng.random() < 0.8 else {"absent"}
        from memrec.evaluation import point_metrics

        values = point_metrics(ranked, truth, (5, 10, 20))
        for k in (5, 10, 20):
            assert values["hr"][k] >= values["ndcg"][k] >= values["mrr"][k]

    import memrec.evaluation as ev

    monkeypatch.setattr(ev, "ndcg_at_k", lambda ranked, truth, k: 2.0)
    with pytest.raises((AssertionError, ValueError)):
        run_experiment(
            synth_corpus, variant_by_name("base"), harness, app_config.make_ports()
        )
    monkeypatch.undo()
    report_line("per-point-metric-ordering", True,
                "ordering holds on 500 random points; harness assertion verified live")


def test_criterion_memory_property_suite(tmp_path):
    started = time.monotonic()
    llm = MockLlm()
    rng = random.Random(60609)
    entities = [f"ent{i}" for i in range(10)]
    attitudes = ["likes gore", "dislikes gore", "enjoys noir", "avoids noir",
                 "loves musicals", "hates musicals", "prefers short films"]
    store = MemoryStore(tmp_path / "store")
    for seq in range(1000):
        user = f"user{seq}"
        bank = MemoryBank(user)
        shadow: dict[str, str] = {}
        last_ts: dict[str, int] = {}
        for _ in range(rng.randint(2, 8)):
            op = rng.choice(("add", "merge", "delete", "read"))
            if op == "add":
                pairs = [(rng.choice(entities), rng.choice(attitudes))
                         for _ in range(rng.randint(1, 3))]
                deduped = {}
                for e, a in pairs:
                    deduped[e] = a
                bank.extract_and_add(annotated_session("s", user, pairs), llm)
                for e, a in deduped.items():
                    key = canonical_entity(e)
                    shadow[key] = oracle_merge(shadow[key], a) if key in shadow else a
            elif op == "merge" and bank.entries:
                key = rng.choice(sorted(bank.entries))
                new = rng.choice(attitudes)
                bank.merge_attitude(key, new, llm)
                shadow[key] = oracle_merge(shadow[key], new)
            elif op == "delete":
                threshold = rng.randint(1, 5)
                gone = set(bank.delete_stale(threshold))
                for k in gone:
                    shadow.pop(k)
                    last_ts.pop(k, None)
            elif op == "read" and bank.entries:
                keys = rng.sample(sorted(bank.entries), 1)
                bank.read_attitudes(keys)
            assert len(bank.entries) == len(set(bank.entries))
            for k, e in bank.entries.items():
                assert e.last_touched >= last_ts.get(k, 0)
                last_ts[k] = e.last_touched
        assert {k: e.attitude for k, e in bank.entries.items()} == shadow
        if seq % 97 == 0:
            store.persist(bank)
            assert store.restore(user) == bank
    elapsed = time.monotonic() - started
    report_line("memory-op-property-suite", elapsed < 30.0,
                f"1000 sequences, fold+roundtrip ok, {elapsed:.2f}s")


def _cli_pipeline(root: Path, tag: str, sessions: Path, catalog: Path) -> Path:
    out = root / tag
    out.mkdir()
    corpus = out / "corpus.json"
    assert cli_main(["ingest", str(sessions), str(catalog), "--out", str(corpus)]) == 0
    assert cli_main(["split", str(corpus), "--n-valid", "2", "--n-test", "1"]) == 0
    assert cli_main(["build-memory", str(corpus), "--store", str(out / "store")]) == 0
    assert cli_main(["evaluate", str(corpus), "--variant", "base",
                     "--report", str(out / "report"), "--store", str(out / "store")]) == 0
    return out / "report"


def test_criterion_deterministic_replay(tmp_path, synth_paths):
    sessions, catalog = synth_paths["sessions"], synth_paths["catalog"]
    rep_a = _cli_pipeline(tmp_path, "a", sessions, catalog)
    rep_b = _cli_pipeline(tmp_path, "b", sessions, catalog)

    lines = Path(sessions).read_text().splitlines()
    random.Random(31337).shuffle(lines)
    shuffled = tmp_path / "shuffled.jsonl"
    shuffled.write_text("\n".join(lines) + "\n")
    rep_c = _cli_pipeline(tmp_path, "c", shuffled, catalog)

    same = all(
        (rep_a / name).read_bytes() == (rep_b / name).read_bytes() == (rep_c / name).read_bytes()
        for name in ("report-base.json", "report-base.csv")
    )
    report_line("deterministic-e2e-replay", same,
                "two runs + shuffled-order run byte-identical")


def _planted_precision(run_log: Path, planted: dict) -> float:
    num, n = 0.0, 0
    for line in run_log.read_text().splitlines():
        rec = json.loads(line)
        p = rec["point"]
        key = f"{p['user_id']}|{p['session_id']}|{p['turn_index']}"
        want = set(planted.get(key, {}).get("entities", []))
        got = list(rec["retrieved_entities"])
        if not want:
            continue
        n += 1
        num += (len(set(got) & want) / len(got)) if got else 0.0
    return num / n if n else 0.0


def test_criterion_retrieval_effectiveness(synth_corpus, synth_paths, app_config,
                                           variant_reports):
    _, logs = variant_reports
    planted = json.loads(Path(synth_paths["planted"]).read_text())["points"]
    precision = {
        name: _planted_precision(logs / f"{name}.jsonl", planted)
        for name in ("base", "mem-all", "mem-rand", "mem-sim")
    }
    ours = precision["base"]
    ok = (ours > precision["mem-all"] and ours > precision["mem-rand"]
          and ours >= precision["mem-sim"])

    # adversarial mock injects out-of-candidate entities on every retrieval
    fakes = [f"fabricated-{i}" for i in range(3)]

    def inject(prompt: str) -> str:
        m = re.search(r"Candidate entities: (\[.*?\])", prompt, re.S)
        real = json.loads(m.group(1)) if m else []
        return json.dumps(fakes + real[:1])

    adversarial = MockLlm(stubs=[(r"Candidate entities", inject)])
    llm = MockLlm()
    cfg = RetrievalConfig()
    leaked = 0
    checked = 0
    from memrec.evaluation import build_banks

    banks = build_banks(synth_corpus, app_config.make_ports())
    for point in evaluation_points(synth_corpus, Split.TEST):
        bank = banks.get(point.user_id)
        if bank is None or len(bank) == 0:
            continue
        out = retrieve(bank, point.context, adversarial, HashNgramEmbedder(), cfg)
        checked += 1
        leaked += sum(1 for e in out.entities if e in fakes)
    ok = ok and leaked == 0 and checked > 0
    report_line(
        "retrieval-effectiveness", ok,
        f"precision ours={ours:.3f} all={precision['mem-all']:.3f} "
        f"rand={precision['mem-rand']:.3f} sim={precision['mem-sim']:.3f}; "
        f"hallucination guard rejected all fakes over {checked} points",
    )


def test_criterion_memory_efficiency_chain(variant_reports):
    reports, _ = variant_reports
    tokens = reports["base"].tokens
    retrieved, um, dialogues = (
        tokens["retrieved"], tokens["total_um"], tokens["total_dialogues"],
    )
    ok = retrieved <= um <= dialogues and retrieved <= 0.10 * dialogues
    report_line(
        "memory-efficiency-chain", ok,
        f"retrieved={retrieved:.2f} <= um={um:.2f} <= dialogues={dialogues:.2f} "
        f"(ratio {retrieved / dialogues:.1%})",
    )


def test_criterion_ablation_harness_completeness(variant_reports):
    reports, logs = variant_reports
    text, csv_text = compare_reports([reports[n] for n in ALL_VARIANTS])
    rows = csv_text.strip().splitlines()
    aligned = len(rows) == len(ALL_VARIANTS) + 1

    empty_expert_everywhere = True
    for line in (logs / "wo-ck.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if "Expert candidate items: []" not in rec["trajectory"]:
            empty_expert_everywhere = False
            break
    ok = aligned and empty_expert_everywhere and all(r.points > 0 for r in reports.values())
    report_line(
        "ablation-harness-completeness", ok,
        f"{len(ALL_VARIANTS)} variants ran; comparison aligned; w/o CK prompts audited",
    )


def test_criterion_cold_start(synth_corpus, variant_reports):
    reports, _ = variant_reports
    cold_users = {uid for uid in synth_corpus.users
                  if not synth_corpus.sessions_of(uid, Split.TRAIN)}
    classified = reports["base"].group_counts["cold"]
    points = evaluation_points(synth_corpus, Split.TEST)
    expected_cold_points = sum(1 for p in points if p.user_id in cold_users)

    base_hr5 = reports["base"].metrics["cold"]["hr"][5]
    wo_gm_hr5 = reports["wo-gm"].metrics["cold"]["hr"][5]
    ok = (classified == expected_cold_points and len(cold_users) > 0
          and base_hr5 > wo_gm_hr5)
    report_line(
        "cold-start-protocol", ok,
        f"{len(cold_users)} zero-train users classified cold; "
        f"cold HR@5 base={base_hr5:.3f} > wo-gm={wo_gm_hr5:.3f}",
    )


def test_criterion_guideline_cap(mock_llm):
    gs = seed_manual_guidelines()
    seed_ok = gs.guidelines == (
        "Let's think step by step",
        "Consider user's needs during conversations",
    )
    cap_ok = True
    for tick in range(100):
        outcome = Outcome.HIT if tick % 3 else Outcome.MISS
        gs = reflect(gs, ReflectionRecord(f"trajectory {tick}", outcome), mock_llm)
        cap_ok = cap_ok and len(gs.guidelines) <= 10
    report_line(
        "guideline-cap", seed_ok and cap_ok and gs.version == 100,
        f"|R|<=10 after 100 ticks (final {len(gs.guidelines)}); seed verbatim",
    )


def test_criterion_service_contract(tmp_path, synth_paths):
    from memrec.dialogue import chronological_split, filter_duplicate_targets, load_corpus, save_corpus

    corpus = load_corpus(synth_paths["sessions"], synth_paths["catalog"])
    corpus = chronological_split(filter_duplicate_targets(corpus), 2, 1)
    corpus_path = tmp_path / "corpus.json"
    save_corpus(corpus, corpus_path)
    cfg = AppConfig(raw={
        "service.store_root": str(tmp_path / "store"),
        "service.corpus": str(corpus_path),
    })
    client = TestClient(create_app(cfg))

    started = time.monotonic()
    sid = client.post("/api/sessions", json={"user_id": "scripted"}).json()["session_id"]
    pairs = [("space opera", "loves space opera"),
             ("casey brook", "adores casey brook"),
             ("slow burn pacing", "appreciates slow burn pacing")]
    schema_ok = True
    for i, (e, a) in enumerate(pairs):
        body = {"text": f"turn {i}: [[{e}::{a}]] tell me more"}
        if i == 2:
            body["feedback"] = "up"
        resp = client.post(f"/api/sessions/{sid}/utterances", json=body)
        data = resp.json()
        schema_ok = schema_ok and resp.status_code == 200 and set(data) == {
            "reply", "recommendations", "retrieved", "guidelines_version", "fallback",
        } and all(set(r) == {"item_id", "title", "provenance"}
                  for r in data["recommendations"])

    end = client.post(f"/api/sessions/{sid}/end").json()
    expected_entities = len(oracle_fold([pairs]))
    stored = MemoryStore(tmp_path / "store").restore("scripted")
    committed_ok = (end["entities_added"] == expected_entities
                    and len(stored) == expected_entities)

    rejected = client.post(f"/api/sessions/{sid}/utterances", json={"text": "hi"})
    elapsed = time.monotonic() - started
    ok = schema_ok and committed_ok and rejected.status_code == 409 and elapsed < 2.0
    report_line(
        "service-contract", ok,
        f"schema ok, {end['entities_added']} entities committed, post-end 409, {elapsed:.2f}s",
    )
