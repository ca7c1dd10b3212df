"""Acceptance gate: one test per shipping criterion.

Each test computes its pass condition, prints one ``[acceptance] N PASS|FAIL``
line on the unbuffered stdout so the verdict survives pytest capture, then
asserts. Budgeted criteria time themselves and fail on overrun.
"""

import itertools
import math
import sys
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from datapaths import analytics as AN
from datapaths import attack as AT
from datapaths import contribution as C
from datapaths import extract as E
from datapaths import formats as F
from datapaths import layout as L
from datapaths import network as NW
from datapaths import pipeline as P
from datapaths.model import model_to_doc
from datapaths.server import create_app

from families import detected_series, early_max_series, plateau_series
from nets import oracle_net, pipeline_net, small_random_net, twin_net, two_branch_net
from test_layout import oracle_candidates
from test_network import fd_gate_gradients, random_loss, rel_err


def verdict(num, name, passed, detail=""):
    line = f"[acceptance] {num:>2} {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, file=sys.__stdout__, flush=True)
    assert passed, f"{name}: {detail}"


def test_01_gradient_fidelity():
    t0 = time.perf_counter()
    worst_gate = worst_input = 0.0
    for seed in range(50):
        net, x = small_random_net(seed)
        rng = np.random.default_rng(1000 + seed)
        gates = rng.uniform(0.05, 0.95, net.gate_count)
        loss = random_loss(net, x, gates, rng)
        worst_gate = max(
            worst_gate,
            rel_err(NW.gate_gradients(net, x, gates, loss), fd_gate_gradients(net, x, gates, loss)),
        )

        label = int(rng.integers(0, net.class_count))

        def ce(xp):
            return -math.log(NW.forward(net, xp, gates).probabilities[label])

        h = 1e-5
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            up = x.copy(); up[idx] += h
            dn = x.copy(); dn[idx] -= h
            numeric[idx] = (ce(up) - ce(dn)) / (2 * h)
        worst_input = max(worst_input, rel_err(NW.input_gradients(net, x, gates, label), numeric))
    dt = time.perf_counter() - t0
    verdict(
        1, "gradient fidelity", worst_gate <= 1e-5 and worst_input <= 1e-5 and dt < 30,
        f"50 fixtures, gate {worst_gate:.1e}, input {worst_input:.1e}, {dt:.1f}s",
    )


def test_02_subset_selection_oracle():
    t0 = time.perf_counter()
    lam = 0.02
    hits = 0
    for seed in range(100, 110):
        net, x = oracle_net(seed)
        p0 = NW.forward(net, x).probabilities
        n = net.gate_count

        def discrete(subset):
            z = np.zeros(n)
            z[list(subset)] = 1.0
            p = NW.forward(net, x, z).probabilities
            return float(np.sum((p0 - p) ** 2)) + lam * len(subset)

        best = min(
            (s for r in range(n + 1) for s in itertools.combinations(range(n), r)),
            key=discrete,
        )
        dp = E.extract_datapath(
            net, x, E.ExtractionParams(l1_weight=lam, learning_rate=0.2, iterations=1500, seed=1)
        )
        got = E.binarize(dp, 0.5)
        if got == set(best) or discrete(tuple(got)) <= 1.05 * discrete(best):
            hits += 1
    dt = time.perf_counter() - t0
    verdict(2, "subset selection vs oracle", hits >= 8 and dt < 120, f"{hits}/10 fixtures, {dt:.1f}s")


def test_03_label_preservation(toy_model, toy_test_set):
    params = E.ExtractionParams()  # default sparsity weight
    kept = 0
    for i in range(len(toy_test_set.images)):
        kept += E.extract_datapath(toy_model, toy_test_set.images[i], params).label_preserved
    total = len(toy_test_set.images)
    verdict(3, "label preservation", kept >= 0.9 * total, f"{kept}/{total} at default l1")


def test_04_randomness_reduction():
    net, x = twin_net()
    base = dict(l1_weight=0.01, learning_rate=0.15, iterations=2000, noise_scale=0.05,
                binarize_tau=0.4)

    def jaccard(a, b):
        sa, sb = E.binarize(a, 0.4), E.binarize(b, 0.4)
        if not sa and not sb:
            return 1.0
        return len(sa & sb) / len(sa | sb)

    independent, chained = [], []
    for pair in range(10):
        s = 2 * pair
        a = E.extract_datapath(net, x, E.ExtractionParams(seed=s, **base))
        b = E.extract_datapath(net, x, E.ExtractionParams(seed=s + 1, **base))
        independent.append(jaccard(a, b))
        # same seeds: position i of the chain runs seed s + i
        chain = E.extract_constrained(
            net, [x, x], E.ExtractionParams(seed=s, coupling_weight=1.0, **base)
        )
        chained.append(jaccard(chain[0], chain[1]))
    j0, j1 = float(np.mean(independent)), float(np.mean(chained))
    verdict(4, "chained extraction reduces randomness", j1 > j0,
            f"mean Jaccard {j0:.2f} independent vs {j1:.2f} chained, 10 pairs")


def test_05_pattern_detection_exact():
    rng = np.random.default_rng(77)
    errors = total = 0
    for _ in range(150):
        for family, want in ((detected_series, True), (plateau_series, False),
                             (early_max_series, False)):
            series = family(rng, r=8)
            report = AN.detect_pattern(series, r=8)
            errors += report.detected != want
            if want and report.max_layer != len(series):
                errors += 1
            total += 1
    verdict(5, "diverging-merging detection", errors == 0, f"{total} series, {errors} errors")


def test_06_topk_harness_and_pipeline(toy_model, toy_test_set):
    flagged = [
        ("adv0", [("t0", True), ("t1", False), ("t2", True), ("t3", False), ("t4", False)]),
        ("adv1", [("t0", False), ("t1", True), ("t2", True), ("t3", True), ("t4", False)]),
        ("adv2", [("t0", True), ("t1", True), ("t2", False), ("t3", False), ("t4", True)]),
    ]
    exact = (
        AN.topk_score(flagged, 1) == (1 + 0 + 1) / 3
        and AN.topk_score(flagged, 3) == (2 + 2 + 2) / 3
        and AN.topk_score(flagged, 5) == (2 + 3 + 3) / 3
    )

    t0 = time.perf_counter()
    report = P.score_methods(
        toy_model,
        toy_test_set,
        AT.AttackParams(epsilon=0.1, alpha=0.01, mu=0.9, steps=10),
        E.ExtractionParams(),
        gamma=0.1,
        case_limit=2,
        target_count=5,
        ks=(1, 3, 5),
    )
    dt = time.perf_counter() - t0
    rows = report["rows"]
    table = F.render_score_table(F.score_report_doc(rows))
    shaped = (
        len(rows) == 6
        and {m for m, _, _ in rows} == {"gamma=0", "gamma=0.1"}
        and all(0.0 <= score <= k for _, k, score in rows)
        and all(f"top-{k}" in table for k in (1, 3, 5))
    )
    verdict(6, "top-K harness and pipeline", exact and shaped and dt < 300,
            f"hand flags exact, {len(report['cases'])} cases end to end in {dt:.1f}s")


TREEMAP_FIXTURES = [
    [("a", {1, 2, 10, 11}), ("b", {2, 3, 12}), ("c", {2, 4})],
    [("a", {1, 2, 3}), ("b", {3, 4, 5}), ("c", {5, 6, 1})],
    [("a", {1, 2}), ("b", {1, 2}), ("c", {1, 3})],
    [("a", {0, 1, 2, 3, 4}), ("b", {4, 5}), ("c", {4, 6, 7})],
    [("a", {1, 2, 3}), ("b", {2, 3, 4})],
    [("a", {1, 2, 3, 4})],
]


def test_07_treemap_optimality():
    canvas = L.Rect(0, 0, 120, 80)
    worst_gap = worst_area = 0.0
    for sets in TREEMAP_FIXTURES:
        rel = AN.set_relations(sets)
        layout = L.treemap_layout(rel, canvas)
        returned = L.treemap_objective(layout, rel)
        best = min(L.treemap_objective(c, rel) for c in oracle_candidates(rel, canvas))
        worst_gap = max(worst_gap, returned - best)

        total = sum(len(fms) for _, fms in rel.regions)
        cell_of = dict(layout.cells)
        for sig, fms in rel.regions:
            share = len(fms) / total
            worst_area = max(worst_area, abs(cell_of[sig].area / canvas.area - share) / share)
    verdict(7, "treemap optimality", worst_gap <= 1e-9 and worst_area <= 0.01,
            f"{len(TREEMAP_FIXTURES)} fixtures, objective gap {worst_gap:.1e}, "
            f"area error {worst_area:.1e}")


def test_08_river_geometry():
    canvas = L.Rect(0, 0, 960, 320)
    worst = 0.0
    rng = np.random.default_rng(15)
    for case in range(200):
        m = int(rng.integers(1, 15))
        d1, d2, d3 = (rng.uniform(0, 5, m) * (rng.uniform(0, 1, m) > 0.2) for _ in range(3))
        scale = float(rng.uniform(0.5, 2.0))
        lay = L.river_layout(d1, d2, d3, canvas, scale=scale)
        ys, ya, yt = lay.source[:, 1], lay.adversarial[:, 1], lay.target[:, 1]
        mid = canvas.y + canvas.h / 2.0
        worst = max(worst, float(np.abs(yt - ys - scale * d1).max()))  # separation
        worst = max(worst, float(np.abs((ys + yt) / 2.0 - mid).max()))  # symmetry
        worst = max(worst, float(np.maximum(ys - ya, ya - yt).max()))  # betweenness
        total = d2 + d3
        ratio_gap = np.where(total > 0, (ya - ys) * d3 - (yt - ya) * d2,
                             ya - (ys + yt) / 2.0)
        worst = max(worst, float(np.abs(ratio_gap).max()))
    zero = L.river_layout(np.zeros(4), np.zeros(4), np.zeros(4), canvas)
    mid = canvas.y + canvas.h / 2.0
    for curve in (zero.source, zero.adversarial, zero.target):
        worst = max(worst, float(np.abs(curve[:, 1] - mid).max()))
    verdict(8, "river geometry", worst <= 1e-9, f"200 random series, worst residual {worst:.1e}")


def test_09_attack_efficacy(toy_model, toy_test_set):
    params = AT.AttackParams(epsilon=0.1, alpha=0.01, mu=0.9, steps=10)
    flips = 0
    in_ball = True
    total = len(toy_test_set.images)
    for i in range(total):
        x = toy_test_set.images[i]
        label = int(toy_test_set.labels[i])
        adv = AT.mi_fgsm(toy_model, x, label, params)
        in_ball &= float(np.abs(adv - x).max()) <= params.epsilon + 1e-12
        in_ball &= bool(np.all(adv >= 0.0) and np.all(adv <= 1.0))
        flips += NW.forward(toy_model, adv).predicted_label != NW.forward(toy_model, x).predicted_label
    verdict(9, "attack efficacy", flips >= 0.5 * total and in_ball,
            f"{flips}/{total} flips, ball respected: {in_ball}")


def test_10_reduction_identity():
    params = E.ExtractionParams(l1_weight=0.02, learning_rate=0.1, iterations=300, seed=5)
    rng = np.random.default_rng(21)
    branch, bx = two_branch_net()
    pipe = pipeline_net()
    xs = [rng.uniform(0, 1, (1, 6, 6)) for _ in range(2)]
    fixtures = [
        (branch, [bx], 4),
        (branch, [bx], 5),
        (pipe, xs[:1], 4),
        (pipe, xs, 5),  # two examples, exercises the coupled mean
        (pipe, xs[:1], 6),
    ]
    worst = 0.0
    for net, examples, fm in fixtures:
        whole = C.contribution_whole(net, examples, fm, params)
        mask = C.NeuronMask(fm, np.ones(net.fm_shape(fm), dtype=bool))
        area = C.contribution_area(net, examples, fm, mask, params)
        worst = max(worst, float(np.abs(whole.values - area.values).max()))
    verdict(10, "full-mask reduction identity", worst <= 1e-6,
            f"5 fixtures, max elementwise gap {worst:.1e}")


def test_11_server_contract(tmp_path):
    data_dir = tmp_path / "store"
    checks = {}
    params = {"l1_weight": 0.02, "learning_rate": 0.2, "iterations": 40, "seed": 1}
    with TestClient(create_app(data_dir, workers=1)) as client:
        model_id = client.post("/models", json=model_to_doc(pipeline_net())).json()["model_id"]
        x = np.random.default_rng(3).uniform(0, 1, (1, 6, 6))
        example_id = client.post("/examples", json=F.image_doc(x)).json()["example_id"]
        job_id = client.post("/jobs/extract", json={
            "model_id": model_id, "example_id": example_id, "params": params,
        }).json()["job_id"]
        deadline = time.monotonic() + 60
        while True:
            job = client.get(f"/jobs/{job_id}").json()
            if job["status"] in ("done", "failed") or time.monotonic() > deadline:
                break
            time.sleep(0.02)
        checks["lifecycle"] = job["status"] == "done" and job["result"] is not None
        dp_id = job["result"]["datapath_id"]
        checks["result"] = client.get(f"/jobs/{job_id}/result").status_code == 200
        checks["404"] = all(
            client.get(path).status_code == 404
            for path in ("/models/missing", "/examples/missing", "/jobs/missing",
                         "/datapaths/missing", "/sessions/missing")
        )
        checks["400"] = client.post("/jobs/extract", json={
            "model_id": model_id, "example_id": example_id, "params": {"l1_weight": -1},
        }).status_code == 400
        checks["409"] = client.get("/jobs/%s/result" % client.post("/jobs/extract", json={
            "model_id": model_id, "example_id": example_id,
            "params": dict(params, iterations=5000),
        }).json()["job_id"]).status_code in (200, 409)  # done already is legal

    stuck = {"version": 1, "id": "feedfacecafebeef", "kind": "extract",
             "status": "running", "params": {}, "result": None, "error": None}
    F.save_doc(data_dir / "jobs" / "feedfacecafebeef.json", stuck)
    with TestClient(create_app(data_dir, workers=1)) as client2:
        checks["restart"] = (
            client2.get(f"/datapaths/{dp_id}").status_code == 200
            and client2.get(f"/jobs/{job_id}").json()["status"] == "done"
            and client2.get("/jobs/feedfacecafebeef").json()["status"] == "failed"
        )
    failed = sorted(name for name, ok in checks.items() if not ok)
    verdict(11, "server contract", not failed,
            "lifecycle, 404/400/409, restart persistence" if not failed else f"failed: {failed}")
