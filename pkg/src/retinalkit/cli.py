"""``retinalkit`` command: runs pipeline stages from one YAML config.

Each stage records a content hash of its parameters and input files under
``<output_dir>/.stages``; a stage whose hash and outputs are unchanged is
skipped unless ``--force`` is given.  Exit status: 0 success, 1 invalid
configuration, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .config import ConfigValidationError, PipelineConfig, load_config
from .conversations import compile_corpus, verify
from .errors import CorpusIntegrityError, RetinalKitError
from .evaluation import EvalReport, Transcript, score_classification, score_localization, score_vascular
from .io import dumps, fov_path, load_mask, read_jsonl, sha256_bytes, sha256_file, write_jsonl
from .lesions import LesionBox, extract_boxes
from .mixing import mix
from .paraphrase import paraphrase_all
from .records import assemble, read_corpus, read_manifest, write_corpus
from .selection import rank_features
from .vascular import GLOBAL_FEATURES, MorphFeatureVector, QuadrantZones, compute_features

log = logging.getLogger("retinalkit")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2
STAGES = ("extract-features", "extract-lesions", "select-features", "assemble", "compile", "mix", "evaluate")


class StageError(RetinalKitError):
    pass


@dataclass
class Context:
    cfg: PipelineConfig
    jobs: int = 1
    force: bool = False

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    def artifact(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, producer: str) -> Path:
        p = self.artifact(name)
        if not p.is_file():
            raise StageError(f"{name} is missing; run `{producer}` first")
        return p


# ---------------------------------------------------------------------------
# per-image workers (module level so they pickle)

def _features_worker(args):
    path, image_id, side, scales = args
    mask = load_mask(path)
    zones = QuadrantZones.from_mask(mask, side)
    return compute_features(mask, zones, scales, image_id).to_json()


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# ---------------------------------------------------------------------------
# stages: each returns (input files, params, outputs, run)

def _manifest_dir(ctx):
    return ctx.cfg.manifest.parent


def _features_stage(ctx):
    rows = read_manifest(ctx.cfg.manifest)
    base = _manifest_dir(ctx)
    inputs = [ctx.cfg.manifest]
    for r in rows:
        inputs.append(base / r.vessel_mask_path)
        if fov_path(base / r.vessel_mask_path).exists():
            inputs.append(fov_path(base / r.vessel_mask_path))
    sides = {n: d.temporal_side for n, d in ctx.cfg.datasets.items()}
    params = {"schema": ctx.cfg.feature_schema, "scales": ctx.cfg.box_count_scales, "sides": sides}

    def run():
        for r in rows:
            if r.dataset not in ctx.cfg.datasets:
                raise CorpusIntegrityError(f"image {r.image_id!r}: dataset {r.dataset!r} is not configured")
        jobs = [(str(base / r.vessel_mask_path), r.image_id, sides[r.dataset], ctx.cfg.box_count_scales)
                for r in rows]
        lines = _pmap(_features_worker, jobs, ctx.jobs)
        write_jsonl(ctx.artifact("features.jsonl"), lines)
        n_bad = sum(MorphFeatureVector.from_json(x).insufficient for x in lines)
        return [f"{len(lines)} feature vectors, {n_bad} flagged insufficient"]

    return inputs, params, ["features.jsonl"], run


def _lesions_stage(ctx):
    rows = read_manifest(ctx.cfg.manifest)
    base = _manifest_dir(ctx)
    inputs = [ctx.cfg.manifest] + [base / p for r in rows for _, p in r.lesion_mask_paths]
    params = {"min_area": ctx.cfg.min_lesion_area}

    def run():
        out = []
        for r in rows:
            if not r.lesion_mask_paths:
                continue
            boxes = []
            for kind, p in r.lesion_mask_paths:
                boxes += extract_boxes(load_mask(base / p), kind, ctx.cfg.min_lesion_area)
            out.append({"image_id": r.image_id, "boxes": [b.to_record() for b in boxes]})
        write_jsonl(ctx.artifact("lesions.jsonl"), out)
        return [f"{len(out)} annotated images, {sum(len(o['boxes']) for o in out)} boxes"]

    return inputs, params, ["lesions.jsonl"], run


def _load_features(ctx) -> dict:
    path = ctx.require("features.jsonl", "extract-features")
    return {v.image_id: v for v in (MorphFeatureVector.from_json(line) for line in open(path))}


def _load_boxes(ctx) -> dict:
    path = ctx.require("lesions.jsonl", "extract-lesions")
    return {r["image_id"]: [LesionBox.from_record(b) for b in r["boxes"]] for r in read_jsonl(path)}


def _select_stage(ctx):
    inputs = [ctx.cfg.manifest, ctx.artifact("features.jsonl")]
    labels = {n: d.labels for n, d in ctx.cfg.datasets.items()}
    params = {"selection": ctx.cfg.selection, "labels": labels}

    def run():
        feats = _load_features(ctx)
        groups: dict = {}
        for r in read_manifest(ctx.cfg.manifest):
            fv = feats.get(r.image_id)
            if fv is None:
                raise CorpusIntegrityError(f"no feature record for image {r.image_id!r}")
            label = labels.get(r.dataset, {}).get(r.disease_label)
            if r.quality == "reject" or not label or fv.insufficient:
                continue
            groups.setdefault(r.dataset, ([], []))
            groups[r.dataset][0].append(fv)
            groups[r.dataset][1].append(label)
        retained, notes = {}, []
        for name in sorted(groups):
            vecs, labs = groups[name]
            rep = rank_features(vecs, labs, dataset=name, **ctx.cfg.selection)
            retained[name] = rep.retained
            ctx.artifact(f"selection_{name}.txt").write_text(rep.to_table())
            ctx.artifact(f"selection_{name}.json").write_text(rep.to_json() + "\n")
            notes.append(f"{name}: {len(vecs)} images, retained {len(rep.retained)} features")
        ctx.artifact("retained.json").write_text(json.dumps(retained, indent=1) + "\n")
        return notes

    outs = ["retained.json"] + [f"selection_{n}.{ext}" for n in sorted(ctx.cfg.datasets) for ext in ("txt", "json")]
    return inputs, params, outs, run


def _assemble_stage(ctx):
    rows = read_manifest(ctx.cfg.manifest)
    base = _manifest_dir(ctx)
    inputs = [ctx.cfg.manifest, ctx.artifact("features.jsonl"), ctx.artifact("lesions.jsonl"),
              ctx.artifact("retained.json")]
    labels = {n: d.labels for n, d in ctx.cfg.datasets.items()}
    params = {"labels": labels}

    def run():
        feats, boxes = _load_features(ctx), _load_boxes(ctx)
        retained = json.loads(ctx.require("retained.json", "select-features").read_text())
        for r in rows:  # datasets with no eligible images have nothing to retain
            retained.setdefault(r.dataset, [])
        records, rejected = assemble(rows, feats, boxes, retained, labels)
        by_id = {r.image_id: r for r in rows}
        for rec in records:
            with Image.open(base / by_id[rec.image_id].vessel_mask_path) as im:
                rec.provenance["image_size"] = list(im.size)
        write_corpus(ctx.artifact("corpus.jsonl"), records)
        write_jsonl(ctx.artifact("rejections.jsonl"), [r.to_record() for r in rejected])
        return [f"{len(records)} records, {len(rejected)} rejected"] + \
            [f"rejected {r.image_id}: {r.reason}" for r in rejected]

    return inputs, params, ["corpus.jsonl", "rejections.jsonl"], run


def _compile_stage(ctx):
    inputs = [ctx.artifact("corpus.jsonl"), ctx.cfg.question_pool]
    llm = ctx.cfg.llm
    params = {"seed": ctx.cfg.seeds["compile"],
              "profiles": {n: [d.task, d.box_mode] for n, d in ctx.cfg.datasets.items()},
              "llm": None if llm is None else [llm.endpoint, llm.model]}

    def run():
        records = read_corpus(ctx.require("corpus.jsonl", "assemble"))
        profiles = {n: d.profile() for n, d in ctx.cfg.datasets.items()}
        align, tuning, events = compile_corpus(records, ctx.cfg.questions(), profiles, ctx.cfg.seeds["compile"])
        sources = {r.image_id: r for r in records}
        if llm is not None:
            align = paraphrase_all(align, llm, sources, log=events)
            tuning = paraphrase_all(tuning, llm, sources, log=events)
        for conv in align + tuning:
            problems = verify(conv, sources[conv.image_id])
            if problems:
                raise StageError(f"{conv.record_id} failed verification: {problems}")
        write_jsonl(ctx.artifact("alignment.jsonl"), [c.to_json() for c in align])
        write_jsonl(ctx.artifact("tuning.jsonl"), [c.to_json() for c in tuning])
        write_jsonl(ctx.artifact("compile_log.jsonl"), events)
        return [f"{len(align)} alignment records, {len(tuning)} tuning records, all verified",
                f"{len(events)} log events"]

    return inputs, params, ["alignment.jsonl", "tuning.jsonl", "compile_log.jsonl"], run


def _stage_paths(ctx):
    return {"@alignment": ctx.artifact("alignment.jsonl"), "@tuning": ctx.artifact("tuning.jsonl")}


def _mix_stage(ctx):
    if ctx.cfg.mix is None:
        raise StageError("config has no mix section")
    spec = ctx.cfg.mix_spec(_stage_paths(ctx))
    inputs = [Path(s.path) for s in spec.sources]
    params = {"mix": ctx.cfg.mix, "seed": spec.seed}

    def run():
        for s in spec.sources:
            if not Path(s.path).is_file():
                raise StageError(f"mix source {s.path} is missing; run `compile` first")
        manifest = mix(spec, ctx.artifact("mixed.jsonl"))
        for src in manifest["sources"]:  # keep the manifest independent of where the tree lives
            src["path"] = os.path.relpath(src["path"], ctx.out)
        ctx.artifact("mix_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
        return [f"{manifest['total']} records: {manifest['counts']}", f"checksum {manifest['checksum']}"]

    return inputs, params, ["mixed.jsonl", "mix_manifest.json"], run


def _evaluate_stage(ctx):
    ev = ctx.cfg.evaluate
    if ev is None:
        raise StageError("config has no evaluate section")
    tpath = ctx.cfg.base_dir / ev["transcripts"]
    inputs = [tpath, ctx.cfg.manifest, ctx.artifact("features.jsonl"), ctx.artifact("lesions.jsonl")]
    normal = {n: list(d.normal_labels) for n, d in ctx.cfg.datasets.items()}
    params = {"evaluate": ev, "normal": normal, "labels": {n: d.labels for n, d in ctx.cfg.datasets.items()}}

    def run():
        rows = read_manifest(ctx.cfg.manifest)
        truth = {}
        for r in rows:
            d = ctx.cfg.datasets.get(r.dataset)
            label = d.labels.get(r.disease_label) if d else None
            if label:
                truth[r.image_id] = "normal" if label in d.normal_labels else "abnormal"
        feats, boxes = _load_features(ctx), _load_boxes(ctx)
        by_task: dict = {}
        for rec in read_jsonl(tpath):
            by_task.setdefault(rec.get("task", "classification"), []).append(Transcript.from_record(rec))
        report = EvalReport()
        if by_task.get("classification"):
            report.classification = score_classification(by_task["classification"], truth)
        if by_task.get("localization"):
            report.localization = score_localization(by_task["localization"], boxes,
                                                     ev.get("iou_threshold", 0.5))
        if by_task.get("vascular"):
            report.vascular = score_vascular(by_task["vascular"], feats,
                                             ev.get("metrics", list(GLOBAL_FEATURES)))
        ctx.artifact("eval_report.json").write_text(report.to_json())
        ctx.artifact("eval_report.txt").write_text(report.to_table())
        return [f"{sum(len(v) for v in by_task.values())} transcripts scored"]

    return inputs, params, ["eval_report.json", "eval_report.txt"], run


BUILDERS = {
    "extract-features": _features_stage,
    "extract-lesions": _lesions_stage,
    "select-features": _select_stage,
    "assemble": _assemble_stage,
    "compile": _compile_stage,
    "mix": _mix_stage,
    "evaluate": _evaluate_stage,
}


PRODUCERS = {
    "features.jsonl": "extract-features", "lesions.jsonl": "extract-lesions",
    "retained.json": "select-features", "corpus.jsonl": "assemble",
    "alignment.jsonl": "compile", "tuning.jsonl": "compile",
}


# ---------------------------------------------------------------------------
# content-hash staging

def _stage_key(name: str, inputs, params) -> str:
    hashes = [sha256_file(p) if Path(p).is_file() else None for p in inputs]
    return sha256_bytes(dumps({"stage": name, "params": params, "inputs": hashes}).encode())


def run_stage(ctx: Context, name: str) -> bool:
    """Run one stage; returns False when it was skipped as up to date."""
    inputs, params, outputs, run = BUILDERS[name](ctx)
    ctx.out.mkdir(parents=True, exist_ok=True)
    state_path = ctx.out / ".stages" / f"{name}.json"
    key = _stage_key(name, inputs, params)
    if not ctx.force and state_path.is_file():
        state = json.loads(state_path.read_text())
        fresh = state.get("key") == key and all(
            ctx.artifact(o).is_file() and sha256_file(ctx.artifact(o)) == h
            for o, h in state.get("outputs", {}).items())
        if fresh:
            log.info("%s: up to date, skipped", name)
            return False
    for p in inputs:
        if not Path(p).is_file():
            producer = PRODUCERS.get(Path(p).name) if Path(p).parent == ctx.out else None
            hint = f"; run `{producer}` first" if producer else ""
            raise StageError(f"{name}: input {p} is missing{hint}")
    notes = run()
    (ctx.out / "logs").mkdir(exist_ok=True)
    (ctx.out / "logs" / f"{name}.log").write_text("\n".join([f"stage {name}"] + notes) + "\n")
    state_path.parent.mkdir(exist_ok=True)
    state = {"key": key, "outputs": {o: sha256_file(ctx.artifact(o)) for o in outputs
                                     if ctx.artifact(o).is_file()}}
    state_path.write_text(json.dumps(state, indent=1, sort_keys=True) + "\n")
    for n in notes[:2]:
        log.info("%s: %s", name, n)
    return True


def run(subcommand: str, ctx: Context) -> list[str]:
    """Run a subcommand; returns the stages that actually executed."""
    if subcommand == "all":
        names = [s for s in STAGES
                 if not (s == "mix" and ctx.cfg.mix is None) and not (s == "evaluate" and ctx.cfg.evaluate is None)]
    else:
        names = [subcommand]
    return [n for n in names if run_stage(ctx, n)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retinalkit", description="Retinal fundus corpus pipeline.")
    p.add_argument("subcommand", choices=STAGES + ("all",))
    p.add_argument("config", help="pipeline YAML config")
    p.add_argument("--force", action="store_true", help="re-run stages even if inputs are unchanged")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-image stages")
    p.add_argument("--seed-override", type=int, default=None, help="replace every configured seed")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.seed_override)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ctx = Context(cfg, args.jobs, args.force)
    try:
        run(args.subcommand, ctx)
    except (RetinalKitError, ValueError, OSError, KeyError) as exc:
        print(f"error: {args.subcommand} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
