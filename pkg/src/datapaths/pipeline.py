"""Desk-scale evaluation pipeline: attack, extract, rank, detect, score.

The CLI and tests both call these functions directly so no behaviour lives
only in command wrappers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .analytics import datapath_similarity, detect_pattern, diff_series, topk_score
from .attack import AttackParams, mi_fgsm
from .errors import ValidationError
from .extract import Datapath, ExtractionParams, extract_constrained, extract_datapath
from .model import ModelSpec
from .network import forward
from .toydata import LabeledDataset


@dataclass(frozen=True)
class AttackCase:
    index: int  # position in the source dataset
    source: np.ndarray
    adversarial: np.ndarray
    source_label: int
    predicted_label: int


def attack_cases(model: ModelSpec, dataset: LabeledDataset, params: AttackParams,
                 limit: int | None = None, jobs: int = 1) -> list[AttackCase]:
    """Attack every image and keep the label flips, in dataset order.

    ``jobs`` > 1 attacks images concurrently; the result is identical because
    flips are filtered in dataset order afterwards.
    """
    indices = range(len(dataset))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            advs = list(pool.map(
                lambda i: mi_fgsm(model, dataset.images[i], int(dataset.labels[i]), params),
                indices,
            ))
    else:
        advs = None
    cases = []
    for i in indices:
        x = dataset.images[i]
        label = int(dataset.labels[i])
        adv = advs[i] if advs is not None else mi_fgsm(model, x, label, params)
        predicted = forward(model, adv).predicted_label
        if predicted != label:
            cases.append(AttackCase(i, x, adv, label, predicted))
            if limit is not None and len(cases) >= limit:
                break
    return cases


def sample_targets(dataset: LabeledDataset, label: int, count: int, seed: int,
                   exclude=()) -> list[int]:
    """Deterministic choice of ``count`` indices carrying ``label``."""
    if count < 1:
        raise ValidationError("count must be >= 1", "count")
    pool = [i for i in range(len(dataset))
            if int(dataset.labels[i]) == label and i not in set(exclude)]
    if len(pool) < count:
        return []
    picks = np.random.default_rng(seed).choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(picks)]


def rank_targets(model: ModelSpec, adv_dp: Datapath, src_dp: Datapath,
                 triples, r: int = 8):
    """Rank (target_id, tar_dp[, adv_dp, src_dp]) triples by similarity.

    ``triples`` entries are (target_id, tar_dp) for independently extracted
    datapaths, or (target_id, tar_dp, adv_dp, src_dp) when each target came
    from its own coupled chain. Returns (target_id, flag) pairs sorted by
    descending similarity, ties broken by target id.
    """
    ranked = []
    for entry in triples:
        if len(entry) == 2:
            target_id, tar_dp = entry
            adv_used, src_used = adv_dp, src_dp
        else:
            target_id, tar_dp, adv_used, src_used = entry
        sim = datapath_similarity(adv_used, tar_dp)
        report = detect_pattern(diff_series(model, adv_used, src_used, tar_dp), r)
        ranked.append((target_id, sim, report.detected))
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return [(target_id, flag) for target_id, _, flag in ranked]


def score_cases(model: ModelSpec, cases_data, base_params: ExtractionParams,
                gamma: float, ks, r: int = 8) -> dict:
    """Score prepared triplet cases twice, with and without chain coupling.

    ``cases_data``: (case_id, source, adversarial, [(target_id, image)], meta)
    tuples. Returns {"rows": [(method, k, score)], "cases": detail} comparing
    independent extraction against coupled chains at ``gamma``.
    """
    if gamma <= 0:
        raise ValidationError("gamma must be > 0 for the coupled method", "gamma")
    if not cases_data:
        raise ValidationError("no scorable cases", "cases")
    target_counts = {len(targets) for _, _, _, targets, _ in cases_data}
    if max(ks) > min(target_counts):
        raise ValidationError("every k must be <= the smallest target count", "ks")
    params0 = dataclasses.replace(base_params, coupling_weight=0.0)
    params_g = dataclasses.replace(base_params, coupling_weight=gamma)

    scored = {"independent": [], "coupled": []}
    details = []
    for case_id, source, adversarial, targets, meta in cases_data:
        src_dp = extract_datapath(model, source, params0)
        adv_dp = extract_datapath(model, adversarial, params0)
        independent = [
            (tid, extract_datapath(model, image, params0)) for tid, image in targets
        ]
        coupled = []
        for tid, image in targets:
            chain = extract_constrained(model, [source, adversarial, image], params_g)
            coupled.append((tid, chain[2], chain[1], chain[0]))

        ranked0 = rank_targets(model, adv_dp, src_dp, independent, r)
        ranked_g = rank_targets(model, adv_dp, src_dp, coupled, r)
        scored["independent"].append((case_id, ranked0))
        scored["coupled"].append((case_id, ranked_g))
        details.append(dict(meta, case=case_id, independent=ranked0, coupled=ranked_g))

    rows = []
    for method, name in (("independent", "gamma=0"), ("coupled", f"gamma={gamma:g}")):
        for k in ks:
            rows.append((name, k, topk_score(scored[method], k)))
    return {"rows": rows, "cases": details}


def score_methods(model: ModelSpec, dataset: LabeledDataset, attack_params: AttackParams,
                  base_params: ExtractionParams, gamma: float, case_limit: int,
                  target_count: int, ks, target_seed: int = 0, r: int = 8,
                  jobs: int = 1) -> dict:
    """Full pipeline from a labeled dataset: attack, sample targets, score.

    Cases whose predicted class has too few candidate targets are dropped.
    """
    cases_data = []
    for case in attack_cases(model, dataset, attack_params, limit=case_limit, jobs=jobs):
        target_ids = sample_targets(dataset, case.predicted_label, target_count,
                                    seed=target_seed + case.index, exclude={case.index})
        if not target_ids:
            continue
        cases_data.append((
            case.index,
            case.source,
            case.adversarial,
            [(t, dataset.images[t]) for t in target_ids],
            {"source_label": case.source_label, "predicted_label": case.predicted_label,
             "targets": target_ids},
        ))
    if not cases_data:
        raise ValidationError("no scorable cases: attack flipped nothing "
                              "or target classes are too small", "dataset")
    return score_cases(model, cases_data, base_params, gamma, ks, r)
