"""Command-line entry point: ``tau <subcommand>``.

Machine-readable output goes to stdout, diagnostics to stderr. Exit status is
0 on success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import grpo as grpo_mod
from .chat import ChatClient
from .config import AppConfig, describe_defaults
from .core import (
    AnomalyClass,
    DecomposedAnnotation,
    ParsedLabel,
    TauError,
    build_training_plan,
    dataset_stats,
    load_manifest,
    parse_anomaly_label,
    stratified_split,
)
from .judge import API_KEY_ENV, build_judge_request, judge_batch, rule_based_judge
from .metrics import bleu, confusion_and_counts, meteor, rouge_l
from .pipeline import ChatCompletionBackend, DEFAULT_VIDEO_PARAMS, MockBackend, PipelineConfig, run_pipeline
from .profiler import StageTimings, aggregate, efficiency_table, RunProfile
from .prompts import PromptSet
from .rewards import JudgeVerdict, classification_reward, g_score, summarization_reward

log = logging.getLogger("tau_toolkit")

# Independent copy of the classification reward table; reward-check compares against it.
EXPECTED_REWARD_TABLE = {
    # pred: {gt: reward}
    "A": {"A": 1.5, "B": -1.5, "C": -1.5, "D": -1.5},
    "B": {"A": -1.25, "B": 1.5, "C": -0.75, "D": -0.75},
    "C": {"A": -1.25, "B": -0.75, "C": 1.5, "D": -0.75},
    "D": {"A": -1.25, "B": -0.75, "C": -0.75, "D": 1.5},
    "Invalid": {"A": -2.0, "B": -2.0, "C": -2.0, "D": -2.0},
}


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def _write_or_print(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _clip_filter(path: Optional[str]) -> Optional[set]:
    if not path:
        return None
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("test", data.get("clip_ids", []))
    return set(map(str, data))


# --- subcommands ---


def cmd_split(args, config):
    manifest = load_manifest(args.manifest)
    train, test = stratified_split(manifest, args.test_count, args.seed)
    _write_or_print(json.dumps({"seed": args.seed, "train": train, "test": test}, indent=2) + "\n", args.out)


def cmd_stats(args, config):
    _emit_json(dataset_stats(load_manifest(args.manifest)).to_dict())


def cmd_plan(args, config):
    _write_or_print(build_training_plan(args.role).to_json() + "\n", args.out)


def reward_table_text() -> tuple[str, bool]:
    preds = [ParsedLabel.of(c) for c in AnomalyClass] + [ParsedLabel.invalid("<invalid>")]
    lines = ["pred\\gt " + " ".join(f"{g.value:>6}" for g in AnomalyClass)]
    ok = True
    for pred in preds:
        cells = []
        for gt in AnomalyClass:
            value = classification_reward(pred, gt)
            ok &= value == EXPECTED_REWARD_TABLE[str(pred)][gt.value]
            cells.append(f"{value:>6.2f}")
        lines.append(f"{str(pred):<8}" + " ".join(cells))
    lines.append("OK" if ok else "MISMATCH")
    return "\n".join(lines) + "\n", ok


def cmd_reward_check(args, config):
    text, ok = reward_table_text()
    sys.stdout.write(text)
    if not ok:
        raise TauError("classification reward table does not match the expected values")


def cmd_train_grpo_toy(args, config):
    g = config.grpo
    cfg = grpo_mod.GrpoConfig(
        epsilon=args.epsilon if args.epsilon is not None else g.epsilon,
        beta=args.beta if args.beta is not None else g.beta,
        group_size=args.group_size if args.group_size is not None else g.group_size,
        advantage_epsilon=g.advantage_epsilon,
        seed=args.seed if args.seed is not None else g.seed,
    )
    mix = grpo_mod.parse_class_mix(args.class_mix)
    env = grpo_mod.make_synthetic_env(args.contexts, mix, seed=cfg.seed)
    held = grpo_mod.make_synthetic_env(args.contexts, mix, seed=cfg.seed + 10_000)
    iters = args.iters if args.iters is not None else g.iterations
    lr = args.lr if args.lr is not None else g.learning_rate
    policy, curve = grpo_mod.train_toy_grpo(env, cfg, iters, lr, batch_size=g.batch_size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "mean_reward", "fn_rate", "fp_rate"])
    for s in curve:
        w.writerow([s.iteration, repr(s.mean_reward), repr(s.fn_rate), repr(s.fp_rate)])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    fn, fp = grpo_mod.binary_error_counts(policy, held)
    k = min(10, len(curve))
    _emit_json({
        "iterations": iters,
        "first_mean_reward": sum(s.mean_reward for s in curve[:k]) / k,
        "last_mean_reward": sum(s.mean_reward for s in curve[-k:]) / k,
        "heldout_fn": fn,
        "heldout_fp": fp,
        "curve": args.out,
    })


def _parsed_from_text(text) -> ParsedLabel:
    if text in (None, "Invalid"):
        return ParsedLabel.invalid(text or "")
    return parse_anomaly_label(str(text))


def cmd_eval_classify(args, config):
    if args.report:
        data = json.loads(Path(args.report).read_text(encoding="utf-8"))
        gts = data["labels"]["gt"]
        preds = [_parsed_from_text(p) for p in data["labels"]["pred"]]
    else:
        rows = _read_jsonl(args.predictions)
        gts = [r["gt"] for r in rows]
        preds = [_parsed_from_text(r.get("pred")) for r in rows]
    if any(g is None for g in gts):
        raise TauError("every record needs a ground-truth label")
    report = confusion_and_counts(preds, [AnomalyClass.parse(g) for g in gts])
    _emit_json(report.to_dict())


def _summaries(args) -> dict:
    """clip_id -> {"summary": text, "annotation": optional dict}."""
    if args.report:
        data = json.loads(Path(args.report).read_text(encoding="utf-8"))
        return {r["clip_id"]: {"summary": r.get("summary") or ""} for r in data["records"]}
    return {str(r["clip_id"]): r for r in _read_jsonl(args.predictions)}


def cmd_eval_summarize(args, config):
    manifest = load_manifest(args.manifest)
    preds = _summaries(args)
    clips = [c for c in manifest.clips
             if c.label.is_abnormal and c.clip_id in preds and c.clip_id in manifest.annotations]
    if not clips:
        raise TauError("no abnormal annotated clips overlap with the predictions")

    verdicts: dict[str, Optional[JudgeVerdict]] = {}
    if args.judge == "replay":
        for row in _read_jsonl(args.verdicts):
            verdicts[str(row["clip_id"])] = JudgeVerdict.from_dict(row["verdict"]) if row.get("verdict") else None
    elif args.judge == "rule":
        for c in clips:
            cand = preds[c.clip_id].get("annotation")
            if cand is None:
                raise TauError(f"rule judge needs a structured 'annotation' for clip {c.clip_id}")
            verdicts[c.clip_id] = rule_based_judge(manifest.annotations[c.clip_id], DecomposedAnnotation.from_dict(cand))
    elif args.judge == "remote":
        j = config.judge
        endpoint = args.judge_endpoint or j.endpoint
        requests = {
            c.clip_id: build_judge_request(manifest.annotations[c.clip_id], preds[c.clip_id].get("summary", ""),
                                           args.mode, j.model, j.reasoning,
                                           template_dir=config.prompts.template_dir or None)
            for c in clips
        }
        with ChatClient(endpoint, api_key_env=API_KEY_ENV, timeout=j.timeout_s) as client:
            responses = judge_batch(client, requests, concurrency=j.concurrency, max_retries=j.max_retries)
        verdicts = {k: (r.verdict if r else None) for k, r in responses.items()}

    if args.save_verdicts and verdicts:
        with open(args.save_verdicts, "w", encoding="utf-8") as f:
            for cid, v in verdicts.items():
                f.write(json.dumps({"clip_id": cid, "verdict": v.to_dict() if v else None}) + "\n")

    rows = []
    for c in clips:
        cand = preds[c.clip_id].get("summary") or ""
        ref = manifest.annotations[c.clip_id].summary
        v = verdicts.get(c.clip_id)
        rows.append({
            "clip_id": c.clip_id,
            "bleu": bleu(cand, ref),
            "rouge_l": rouge_l(cand, ref),
            "meteor": meteor(cand, ref),
            "g_score": g_score(v) if v else None,
            "reward": summarization_reward(v) if v else None,
        })
    sys.stdout.write(summary_csv(rows))


def summary_csv(rows: list[dict]) -> str:
    """Per-clip rows plus a ``mean`` row; clips without a verdict are left out of the g_score mean."""
    cols = ["bleu", "rouge_l", "meteor", "g_score"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip_id"] + cols)
    for r in rows:
        w.writerow([r["clip_id"]] + ["" if r[c] is None else f"{r[c]:.6f}" for c in cols])
    means = []
    for c in cols:
        vals = [r[c] for r in rows if r[c] is not None]
        means.append(f"{math.fsum(vals) / len(vals):.6f}" if vals else "")
    w.writerow(["mean"] + means)
    return buf.getvalue()


def _load_mock_script(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_run_pipeline(args, config):
    manifest = load_manifest(args.manifest)
    wanted = _clip_filter(args.clip_ids)
    clips = [c for c in manifest.clips if wanted is None or c.clip_id in wanted]
    b = config.backends
    if args.mock_script:
        doc = _load_mock_script(args.mock_script)
        cls_script = doc.get("classifier") or {}
        if cls_script.get("perfect"):
            classifier = MockBackend.perfect_classifier(clips, per_call_delay=float(cls_script.get("delay_ms", 0)) / 1000)
        else:
            classifier = MockBackend.from_script(cls_script, "A")
        summarizer = MockBackend.from_script(doc.get("summarizer") or {}, "mock summary")
    else:
        c_ep = args.classifier_endpoint or b.classifier_endpoint
        s_ep = args.summarizer_endpoint or b.summarizer_endpoint
        if not (c_ep and s_ep):
            raise TauError("need --mock-script or both classifier and summarizer endpoints")
        params = {"video": DEFAULT_VIDEO_PARAMS}
        classifier = ChatCompletionBackend(ChatClient(c_ep, api_key_env=b.api_key_env, timeout=b.timeout_s),
                                           b.classifier_model, params)
        summarizer = ChatCompletionBackend(ChatClient(s_ep, api_key_env=b.api_key_env, timeout=b.timeout_s),
                                           b.summarizer_model, params)
    p = config.pipeline
    pconf = PipelineConfig(
        workers=args.workers if args.workers is not None else p.workers,
        use_prior_label=p.use_prior_label and not args.no_prior_label,
        serialize_backends=p.serialize_backends,
    )
    prompts = PromptSet.load(config.prompts.template_dir or None)
    report = run_pipeline(classifier, summarizer, clips, pconf, prompts)
    _write_or_print(report.to_json() + "\n", args.out)
    log.info("pipeline: %s", report.aggregates())


def profiles_from_report(data: dict, classifier_video_s=None, summarizer_video_s=None) -> tuple[RunProfile, RunProfile]:
    records = data["records"]
    c_timings, c_dur, s_timings, s_dur = [], [], [], []
    for r in records:
        t = r["decision"].get("timings")
        if t:
            c_timings.append(StageTimings.from_dict(t))
            c_dur.append(r["duration_s"])
        if r.get("summarizer_timings"):
            s_timings.append(StageTimings.from_dict(r["summarizer_timings"]))
            s_dur.append(r["duration_s"])
    classifier = aggregate(c_timings, c_dur)
    summarizer = aggregate(s_timings, s_dur) if s_timings else RunProfile(0, 0.0, 0.0)
    if classifier_video_s is not None:
        classifier = RunProfile(classifier.clip_count, classifier.total_runtime_s, classifier_video_s,
                                classifier.stage_totals_ms, classifier.per_clip)
    if summarizer_video_s is not None:
        summarizer = RunProfile(summarizer.clip_count, summarizer.total_runtime_s, summarizer_video_s,
                                summarizer.stage_totals_ms, summarizer.per_clip)
    return classifier, summarizer


def cmd_profile(args, config):
    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    classifier, summarizer = profiles_from_report(data, args.classifier_video_s, args.summarizer_video_s)
    table = efficiency_table(classifier, summarizer)
    twin = {"table": table.to_dict(), "classifier": classifier.to_dict(), "summarizer": summarizer.to_dict()}
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(twin, indent=2) + "\n", encoding="utf-8")
    if args.format == "json":
        _emit_json(twin)
    else:
        sys.stdout.write(table.render())


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tau",
        description="Traffic anomaly understanding toolkit: dataset ops, rewards, toy GRPO, evaluation, "
                    "two-layer inference and profiling.",
        epilog="config keys and defaults (set via --config INI file):\n" + describe_defaults()
               + f"\n\nThe judge API key is read from ${API_KEY_ENV}.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("split", help="class-stratified train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-count", type=int, default=42)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plan", help="emit a training plan as JSON")
    p.add_argument("--role", choices=["classifier", "summarizer"], required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("reward-check", help="print and verify the classification reward table")
    p.set_defaults(func=cmd_reward_check)

    p = sub.add_parser("train-grpo-toy", help="GRPO on a toy softmax policy")
    p.add_argument("--group-size", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--class-mix", default="1:1:1:1", help="A:B:C:D weights (default 1:1:1:1)")
    p.add_argument("--contexts", type=int, default=400)
    p.add_argument("--out", help="reward curve CSV")
    p.set_defaults(func=cmd_train_grpo_toy)

    p = sub.add_parser("eval-classify", help="classification metrics as JSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", help="pipeline report JSON")
    src.add_argument("--predictions", help="JSONL with clip_id, gt, pred")
    p.set_defaults(func=cmd_eval_classify)

    p = sub.add_parser("eval-summarize", help="summary metrics as CSV")
    p.add_argument("--manifest", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", help="pipeline report JSON")
    src.add_argument("--predictions", help="JSONL with clip_id, summary and optional annotation")
    p.add_argument("--judge", choices=["none", "rule", "remote", "replay"], default="none")
    p.add_argument("--mode", choices=["eval", "reward"], default="eval")
    p.add_argument("--judge-endpoint")
    p.add_argument("--verdicts", help="JSONL verdicts to replay")
    p.add_argument("--save-verdicts", help="write verdicts as JSONL")
    p.set_defaults(func=cmd_eval_summarize)

    p = sub.add_parser("run-pipeline", help="two-layer classify-then-summarize run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--classifier-endpoint")
    p.add_argument("--summarizer-endpoint")
    p.add_argument("--mock-script", help="JSON script for mock backends")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-prior-label", action="store_true")
    p.add_argument("--clip-ids", help="JSON list of clip ids, or a split file (uses its test ids)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run_pipeline)

    p = sub.add_parser("profile", help="efficiency table from a pipeline report")
    p.add_argument("--report", required=True)
    p.add_argument("--classifier-video-s", type=float)
    p.add_argument("--summarizer-video-s", type=float)
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        sys.stderr.write("tau: error: a subcommand is required\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "eval-summarize" and args.judge == "replay" and not args.verdicts:
        sys.stderr.write("tau: error: --judge replay needs --verdicts\n")
        return 2
    try:
        config = AppConfig.load(args.config)
        args.func(args, config)
    except (TauError, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(f"tau: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
