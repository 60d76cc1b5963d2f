"""Manifest-driven evaluation runs: reader, extractor, matcher and black-box.

Each runner returns an :class:`EvalRun` holding a JSON-ready report and the
CSV tables.  Reports depend only on the manifest, the dataset bytes and the
seed: records are processed in manifest order, parallel work is gathered in
submission order, and no timestamps or absolute paths are emitted.
"""
from __future__ import annotations

import logging
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import extractor_eval as xe
from . import quality as q
from .core import ADVERSE_CONDITIONS, CONDITION_FAMILIES, CaptureCondition, DataError, MinutiaeSet
from .io import ManifestError, Record, RunManifest, SystemSpec, Table, load_image, load_template, save_template
from .matcher import (
    ExternalResult,
    FailureLog,
    extract_external,
    match_external,
    match_score,
    parallel_map,
    quality_external,
)
from .perturb import PerturbationSpec, table_ladder
from .stats import fnmr_at_threshold, threshold_at_far, two_sample_t
from .uncertainty import gi_to_unit, uncertainty_from_scores

logger = logging.getLogger(__name__)

FAILURE_LIMIT = 0.10


@dataclass
class EvalRun:
    manifest: RunManifest
    report: dict
    tables: list[Table]
    processed: int
    excluded: dict[str, int]
    failures: FailureLog = field(default_factory=FailureLog)

    @property
    def n_excluded(self) -> int:
        return sum(self.excluded.values())

    @property
    def external_limit_exceeded(self) -> list[str]:
        return self.failures.exceeded(FAILURE_LIMIT)


def record_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator keyed by the global seed and stable per-item identifiers."""
    ent = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        ent.append(zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(ent))


def _finish(manifest: RunManifest, report: dict, tables: list[Table], processed: int,
            excluded: dict[str, int], failures: FailureLog) -> EvalRun:
    total = len(manifest.records)
    if processed + sum(excluded.values()) != total:
        raise AssertionError(f"record accounting mismatch: {processed} + {excluded} != {total}")
    report["records"] = {"total": total, "processed": processed, "excluded": dict(sorted(excluded.items()))}
    report["external"] = failures.to_dict()
    report["kind"] = manifest.kind
    report["seed"] = manifest.seed
    return EvalRun(manifest, report, tables, processed, excluded, failures)


def _bump(excluded: dict[str, int], reason: str) -> None:
    excluded[reason] = excluded.get(reason, 0) + 1


def _condition_order(conds) -> list[str]:
    order = {c.value: i for i, c in enumerate(CaptureCondition)}
    return sorted(conds, key=lambda c: order[c])


def _fmt_mean_sd(v: tuple[float, float, int]) -> str:
    mean, sd, n = v
    if n == 0:
        return ""
    return f"{mean:.4f} ({sd:.4f})"


# ---------------------------------------------------------------- reader


def run_reader_eval(manifest: RunManifest, jobs: int | None = None) -> EvalRun:
    """Quality distributions, condition-vs-pooled t-tests and per-family uncertainty."""
    if manifest.kind != "reader":
        raise ManifestError(f"expected a reader manifest, got {manifest.kind!r}")
    externals = [s for s in manifest.systems_for("quality") if s.type == "external"]
    metrics = list(q.METRICS) + [s.name for s in externals]
    bounds = {m: (0.0, 1.0) for m in q.METRICS}
    bounds.update({s.name: s.score_range for s in externals})
    failures = FailureLog()
    excluded: dict[str, int] = {}

    usable: list[Record] = []
    for rec in manifest.records:
        if rec.condition is None:
            logger.warning("record %s has no capture condition; skipped", rec.id)
            _bump(excluded, "missing_condition")
        elif rec.image is None:
            _bump(excluded, "missing_image")
        else:
            usable.append(rec)

    def score(rec: Record):
        try:
            img = load_image(rec.image, manifest.resolution)
        except DataError as exc:
            logger.warning("record %s: %s", rec.id, exc)
            return None
        out = q.compute_all(img)
        ext = [quality_external(s.external, rec.image) for s in externals]
        return out, ext

    results = parallel_map(score, usable, jobs)
    scored: list[tuple[Record, dict[str, float]]] = []
    for rec, res in zip(usable, results):
        if res is None:
            _bump(excluded, "unreadable_image")
            continue
        out, ext = res
        for s, r in zip(externals, ext):
            failures.record(s.name, r, {"record": rec.id})
            if r.ok:
                out[s.name] = r.score
        scored.append((rec, out))

    dists = q.quality_by_condition((r.reader, r.condition, s) for r, s in scored)
    readers = sorted({r.reader for r, _ in scored})
    conditions = _condition_order({r.condition.value for r, _ in scored})

    # condition-specific vs pooled distribution, per reader and metric
    ttests: dict[str, dict[str, dict]] = {}
    for cond in conditions:
        row = {}
        for reader in readers:
            for metric in metrics:
                a = dists.by_condition.get((reader, cond, metric), [])
                b = dists.pooled.get((reader, metric), [])
                key = f"{reader}/{metric}"
                try:
                    res = two_sample_t(a, b)
                    row[key] = {"t": res.t, "dof": res.dof, "band": res.band, "n": len(a)}
                except (ValueError, DataError) as exc:
                    row[key] = {"t": None, "dof": None, "band": None, "n": len(a), "note": str(exc)}
        ttests[cond] = row
    columns = [f"{r}/{m}" for r in readers for m in metrics]
    t_table = Table(
        "ttest",
        ["condition"] + columns,
        [[c] + [ttests[c][k]["t"] for k in columns] for c in conditions],
    )
    band_table = Table(
        "ttest_bands",
        ["condition"] + columns,
        [[c] + [ttests[c][k]["band"] for k in columns] for c in conditions],
    )

    # uncertainty: normal impressions are references, same-finger adverse ones the perturbations
    by_finger: dict[tuple[str, str], list[tuple[Record, dict[str, float]]]] = defaultdict(list)
    for rec, s in scored:
        by_finger[(rec.reader, rec.finger)].append((rec, s))
    no_normal = sorted(
        f"{reader}/{finger}" for (reader, finger), items in by_finger.items()
        if not any(r.condition is CaptureCondition.NORMAL for r, _ in items)
    )
    unc: dict[str, dict[str, dict | None]] = {}
    for family, members in CONDITION_FAMILIES.items():
        row = {}
        for reader in readers:
            for metric in metrics:
                raw, labels = [], []
                for (rd, finger), items in sorted(by_finger.items()):
                    if rd != reader:
                        continue
                    perts = [s[metric] for r, s in items if r.condition in members and metric in s]
                    refs = [r for r, s in items if r.condition is CaptureCondition.NORMAL]
                    if not perts:
                        continue
                    for ref in refs:
                        raw.append(perts)
                        labels.append(ref.id)
                key = f"{reader}/{metric}"
                row[key] = uncertainty_from_scores(raw, bounds[metric], labels).to_dict() if raw else None
        unc[family] = row
    u_table = Table(
        "uncertainty",
        ["family"] + columns,
        [[f] + [(unc[f][k] or {}).get("u_total") for k in columns] for f in CONDITION_FAMILIES],
    )

    report = {
        "metrics": metrics,
        "readers": readers,
        "conditions": conditions,
        "distributions": {
            "by_condition": {
                f"{r}/{c}/{m}": v for (r, c, m), v in sorted(dists.by_condition.items())
            },
            "pooled": {f"{r}/{m}": v for (r, m), v in sorted(dists.pooled.items())},
        },
        "ttest": ttests,
        "uncertainty": unc,
        "uncertainty_excluded_fingers": {"count": len(no_normal), "fingers": no_normal},
    }
    return _finish(manifest, report, [t_table, band_table, u_table], len(scored), excluded, failures)


# ---------------------------------------------------------------- extractor


def run_extractor_eval(manifest: RunManifest, jobs: int | None = None, work_dir: Path | None = None) -> EvalRun:
    """Detection/localisation statistics per condition and GI-based uncertainty."""
    if manifest.kind != "extractor":
        raise ManifestError(f"expected an extractor manifest, got {manifest.kind!r}")
    systems = manifest.systems_for("extractor")
    if not systems:
        raise ManifestError("extractor evaluation needs at least one external extractor")
    work = Path(work_dir or manifest.output_dir) / "work"
    failures = FailureLog()
    excluded: dict[str, int] = {}

    usable: list[tuple[Record, MinutiaeSet]] = []
    for rec in manifest.records:
        if rec.condition is None:
            _bump(excluded, "missing_condition")
        elif rec.ground_truth is None or rec.image is None:
            _bump(excluded, "missing_ground_truth_or_image")
        else:
            gt = load_template(rec.ground_truth)
            if len(gt) == 0:
                _bump(excluded, "empty_ground_truth")
            else:
                usable.append((rec, gt))

    def run_one(args: tuple[SystemSpec, Record, MinutiaeSet]):
        system, rec, gt = args
        out_path = work / system.name / f"{rec.id}.txt"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if out_path.exists():
            out_path.unlink()
        res = extract_external(system.external, rec.image, out_path)
        if not res.ok:
            return res, None
        try:
            det = load_template(out_path)
        except DataError as exc:
            return ExternalResult(None, failure="output", detail=str(exc)), None
        if det.shape != gt.shape:
            return ExternalResult(None, failure="output", detail="template dimensions differ from ground truth"), None
        return res, det

    tasks = [(s, rec, gt) for s in systems for rec, gt in usable]
    outputs = parallel_map(run_one, tasks, jobs)
    detected: dict[tuple[str, str], MinutiaeSet] = {}
    for (s, rec, _), (res, det) in zip(tasks, outputs):
        failures.record(s.name, res, {"record": rec.id})
        if det is not None:
            detected[(s.name, rec.id)] = det

    stats: dict[str, dict] = {}
    per_case: dict[str, dict[str, dict]] = {}
    for s in systems:
        cases = [(gt, detected[(s.name, rec.id)], rec.condition) for rec, gt in usable if (s.name, rec.id) in detected]
        rep = xe.extractor_report(cases)
        stats[s.name] = rep.to_dict()
        per_case[s.name] = {}
        for rec, gt in usable:
            det = detected.get((s.name, rec.id))
            if det is None:
                continue
            pairing = xe.pair_minutiae(gt, det)
            per_case[s.name][rec.id] = {"gi": xe.goodness_index(gt, det, pairing), "paired": len(pairing),
                                       "ground": len(gt), "detected": len(det)}

    conditions = _condition_order({rec.condition.value for rec, _ in usable})
    rows = []
    for cond in conditions:
        for key, label in xe.METRIC_ROWS:
            row = [cond, label]
            for s in systems:
                cell = stats[s.name]["conditions"].get(cond, {}).get(key)
                row.append(_fmt_mean_sd((cell["mean"], cell["sd"], cell["n"])) if cell else "")
            rows.append(row)
    stats_table = Table("extractor_stats", ["condition", "metric"] + [s.name for s in systems], rows)

    by_finger: dict[tuple[str, str], list[Record]] = defaultdict(list)
    for rec, _ in usable:
        by_finger[(rec.reader, rec.finger)].append(rec)
    unc: dict[str, dict[str, dict | None]] = {}
    for family, members in CONDITION_FAMILIES.items():
        unc[family] = {}
        for s in systems:
            raw, labels = [], []
            for key in sorted(by_finger):
                recs = by_finger[key]
                perts = [gi_to_unit(per_case[s.name][r.id]["gi"]) for r in recs
                         if r.condition in members and r.id in per_case[s.name]]
                if not perts:
                    continue
                for ref in (r for r in recs if r.condition is CaptureCondition.NORMAL):
                    raw.append(perts)
                    labels.append(ref.id)
            unc[family][s.name] = uncertainty_from_scores(raw, (0.0, 1.0), labels).to_dict() if raw else None
    u_table = Table(
        "uncertainty",
        ["family"] + [s.name for s in systems],
        [[f] + [(unc[f][s.name] or {}).get("u_total") for s in systems] for f in CONDITION_FAMILIES],
    )
    report = {
        "systems": [s.name for s in systems],
        "conditions": conditions,
        "statistics": stats,
        "cases": per_case,
        "uncertainty": unc,
        "gi_to_unit_scale": 0.25,
    }
    return _finish(manifest, report, [stats_table, u_table], len(usable), excluded, failures)


# ---------------------------------------------------------------- matcher


def _matcher_systems(manifest: RunManifest) -> list[SystemSpec]:
    systems = manifest.systems_for("matcher")
    return systems or [SystemSpec("baseline")]


class _Scorer:
    """Scores template pairs with one system; external calls go through files."""

    def __init__(self, system: SystemSpec, work: Path, failures: FailureLog):
        self.system = system
        self.work = work / system.name
        self.failures = failures

    def __call__(self, a: MinutiaeSet, b: MinutiaeSet, a_path: Path | None, b_path: Path | None,
                 tag: str) -> tuple[float | None, ExternalResult | None]:
        if self.system.type == "baseline":
            return match_score(a, b), None
        if a_path is None:
            a_path = save_template(a, self.work / f"{tag}_a.txt", drop_out_of_bounds=True)
        if b_path is None:
            b_path = save_template(b, self.work / f"{tag}_b.txt", drop_out_of_bounds=True)
        return None, match_external(self.system.external, a_path, b_path)

    def gather(self, outputs, tags) -> list[float | None]:
        """Record external outcomes in submission order and return the scores."""
        scores = []
        for (value, res), tag in zip(outputs, tags):
            if res is not None:
                self.failures.record(self.system.name, res, {"pair": tag})
                value = res.score
            scores.append(value)
        return scores


def _template_of(rec: Record) -> Path | None:
    return rec.template or rec.ground_truth


def run_matcher_eval(manifest: RunManifest, jobs: int | None = None, work_dir: Path | None = None) -> EvalRun:
    """Genuine scores per perturbation arm, FNMR at the FAR threshold, and per-family uncertainty."""
    if manifest.kind != "matcher":
        raise ManifestError(f"expected a matcher manifest, got {manifest.kind!r}")
    systems = _matcher_systems(manifest)
    arms = manifest.perturbations or table_ladder()
    work = Path(work_dir or manifest.output_dir) / "work"
    failures = FailureLog()
    excluded: dict[str, int] = {}

    refs: list[tuple[Record, MinutiaeSet]] = []
    for rec in manifest.records:
        path = _template_of(rec)
        if path is None:
            _bump(excluded, "missing_template")
            continue
        refs.append((rec, load_template(path)))

    # perturbed copies, seeded per (record, arm, trial)
    perturbed: dict[tuple[int, int, int], MinutiaeSet] = {}
    for k, (rec, tpl) in enumerate(refs):
        for a, arm in enumerate(arms):
            for n in range(manifest.trials):
                perturbed[(k, a, n)] = _apply_arm(arm, tpl, record_rng(manifest.seed, rec.id, a, n))

    families: dict[str, list[int]] = {}
    for a, arm in enumerate(arms):
        families.setdefault(arm.family, []).append(a)

    impostor_pairs = [(i, j) for i in range(len(refs)) for j in range(i + 1, len(refs))
                      if refs[i][0].finger != refs[j][0].finger]
    report_systems = {}
    fnmr_rows = []
    unc_rows: dict[str, dict[str, float | None]] = {f: {} for f in families}
    for system in systems:
        scorer = _Scorer(system, work, failures)
        gen_keys = sorted(perturbed)

        gen_tags = [f"{refs[k][0].id}_arm{a}_t{n}" for k, a, n in gen_keys]
        imp_tags = [f"{refs[i][0].id}_vs_{refs[j][0].id}" for i, j in impostor_pairs]

        def genuine(item):
            (k, a, n), tag = item
            rec, tpl = refs[k]
            return scorer(tpl, perturbed[(k, a, n)], _template_of(rec), None, tag)

        def impostor(item):
            (i, j), tag = item
            return scorer(refs[i][1], refs[j][1], _template_of(refs[i][0]), _template_of(refs[j][0]), tag)

        gen_out = parallel_map(genuine, list(zip(gen_keys, gen_tags)), jobs)
        gen_scores = dict(zip(gen_keys, scorer.gather(gen_out, gen_tags)))
        imp_out = parallel_map(impostor, list(zip(impostor_pairs, imp_tags)), jobs)
        imp_scores = [s for s in scorer.gather(imp_out, imp_tags) if s is not None]
        threshold = threshold_at_far(imp_scores, manifest.far) if imp_scores else None

        arm_out = []
        for a, arm in enumerate(arms):
            g = [v for (k, aa, n), v in gen_scores.items() if aa == a and v is not None]
            fnmr = fnmr_at_threshold(g, threshold) if g and threshold is not None else None
            arm_out.append({"family": arm.family, "label": arm.label, "spec": arm.to_dict(),
                            "fnmr": fnmr, "genuine": g})
            fnmr_rows.append([arm.family, arm.label, system.name, fnmr, len(g)])

        fam_out = {}
        for family, arm_ids in families.items():
            raw, labels = [], []
            for k, (rec, _) in enumerate(refs):
                row = [gen_scores[(k, a, n)] for a in arm_ids for n in range(manifest.trials)]
                row = [v for v in row if v is not None]
                if row:
                    raw.append(row)
                    labels.append(rec.id)
            rep = uncertainty_from_scores(raw, system.score_range, labels).to_dict() if raw else None
            fam_out[family] = rep
            unc_rows[family][system.name] = rep["u_total"] if rep else None
        report_systems[system.name] = {
            "threshold": threshold,
            "impostor": imp_scores,
            "arms": arm_out,
            "uncertainty": fam_out,
        }

    fnmr_table = Table("fnmr", ["family", "magnitude", "system", "fnmr", "n_genuine"], fnmr_rows)
    u_table = Table(
        "uncertainty",
        ["family"] + [s.name for s in systems],
        [[f] + [unc_rows[f].get(s.name) for s in systems] for f in families],
    )
    report = {
        "systems": report_systems,
        "arms": [arm.to_dict() for arm in arms],
        "far": manifest.far,
        "trials": manifest.trials,
        "impostor_pairs": len(impostor_pairs),
    }
    return _finish(manifest, report, [fnmr_table, u_table], len(refs), excluded, failures)


def _apply_arm(arm: PerturbationSpec, tpl: MinutiaeSet, rng: np.random.Generator) -> MinutiaeSet:
    # removal counts larger than the template remove everything
    if arm.kind.value == "RemoveRandom" and arm.params["count"] > len(tpl):
        arm = PerturbationSpec(arm.kind, {"count": len(tpl)})
    return arm.apply(tpl, rng)


# ---------------------------------------------------------------- black-box


def run_blackbox_eval(manifest: RunManifest, jobs: int | None = None, work_dir: Path | None = None) -> EvalRun:
    """FNMR at the FAR threshold per adverse condition and per system.

    Genuine pairs join each normal impression with every adverse impression
    of the same finger on the same reader; impostor pairs join normal
    impressions of different fingers on the same reader.
    """
    if manifest.kind != "blackbox":
        raise ManifestError(f"expected a blackbox manifest, got {manifest.kind!r}")
    systems = _matcher_systems(manifest)
    needs_template = any(s.type == "baseline" or s.inputs == "template" for s in systems)
    needs_image = any(s.type == "external" and s.inputs == "image" for s in systems)
    work = Path(work_dir or manifest.output_dir) / "work"
    failures = FailureLog()
    excluded: dict[str, int] = {}

    labelled: list[Record] = []
    for rec in manifest.records:
        if rec.condition is None:
            _bump(excluded, "missing_condition")
        elif needs_template and rec.template is None:
            _bump(excluded, "missing_template")
        elif needs_image and rec.image is None:
            _bump(excluded, "missing_image")
        else:
            labelled.append(rec)

    groups: dict[tuple[str, str], list[Record]] = defaultdict(list)
    for rec in labelled:
        groups[(rec.reader, rec.finger)].append(rec)
    kept: list[Record] = []
    no_normal = []
    for key in sorted(groups):
        recs = groups[key]
        if any(r.condition is CaptureCondition.NORMAL for r in recs):
            kept.extend(recs)
        else:
            no_normal.append(f"{key[0]}/{key[1]}")
            for _ in recs:
                _bump(excluded, "finger_without_normal")

    templates = {r.id: load_template(r.template) for r in kept if r.template is not None}
    normals = [r for r in kept if r.condition is CaptureCondition.NORMAL]
    genuine_pairs = [
        (n, r) for n in normals for r in kept
        if r.condition.is_adverse and r.finger == n.finger and r.reader == n.reader
    ]
    impostor_pairs = [
        (normals[i], normals[j]) for i in range(len(normals)) for j in range(i + 1, len(normals))
        if normals[i].finger != normals[j].finger and normals[i].reader == normals[j].reader
    ]

    results = {}
    rows = []
    for system in systems:
        def score(pair: tuple[Record, Record]):
            a, b = pair
            if system.type == "baseline":
                return match_score(templates[a.id], templates[b.id]), None
            pa, pb = (a.image, b.image) if system.inputs == "image" else (a.template, b.template)
            return None, match_external(system.external, pa, pb)

        def gather(pairs):
            out = []
            for (a, b), (value, res) in zip(pairs, parallel_map(score, pairs, jobs)):
                if res is not None:
                    failures.record(system.name, res, {"pair": f"{a.id}_vs_{b.id}"})
                    value = res.score
                out.append(value)
            return out

        gen = gather(genuine_pairs)
        imp = [s for s in gather(impostor_pairs) if s is not None]
        threshold = threshold_at_far(imp, manifest.far) if imp else None
        per_cond = {}
        for cond in ADVERSE_CONDITIONS:
            g = [s for (n, r), s in zip(genuine_pairs, gen) if r.condition is cond and s is not None]
            fnmr = fnmr_at_threshold(g, threshold) if g and threshold is not None else None
            per_cond[cond.value] = {"fnmr": fnmr, "n_genuine": len(g), "genuine": g}
        results[system.name] = {"threshold": threshold, "impostor": imp, "conditions": per_cond}

    for cond in ADVERSE_CONDITIONS:
        rows.append([cond.value] + [results[s.name]["conditions"][cond.value]["fnmr"] for s in systems])
    table = Table("fnmr", ["condition"] + [s.name for s in systems], rows)
    report = {
        "systems": results,
        "far": manifest.far,
        "genuine_pairs": len(genuine_pairs),
        "impostor_pairs": len(impostor_pairs),
        "excluded_fingers": {"count": len(no_normal), "fingers": no_normal},
    }
    return _finish(manifest, report, [table], len(kept), excluded, failures)


RUNNERS: dict[str, Callable[..., EvalRun]] = {
    "reader": run_reader_eval,
    "extractor": run_extractor_eval,
    "matcher": run_matcher_eval,
    "blackbox": run_blackbox_eval,
}
