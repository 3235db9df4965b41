"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 oracle or transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import autoprompt as ap
from .config import ConfigError, PipelineConfig, load_config, write_resolved
from .dialogue import TrajectoryError, TurnSample, ingest_path, render_transcript, segment
from .exporters import ExportError, Variant, export_dpo, export_rl, export_sft, write_export
from .graph_env import GraphOracle, InfoGraph, InvalidGraph, synthesize
from .hindsight import (
    ExtractionParseError,
    HindsightTarget,
    build_generic_blacklist,
    eligible,
    finalize_targets,
    load_manual_blacklist,
    raw_targets,
)
from .jsonl import read_jsonl, write_jsonl
from .metrics import GradedSample, compute
from .oracle import (
    Decode,
    GraderParseError,
    Oracle,
    OracleError,
    PromptTemplate,
    PromptType,
    RemoteOracle,
    TemplateError,
    default_template,
    sample_rollouts,
)
from .policy import TrainConfig, TrainingDiverged, evaluate_policy, load_policy, save_policy, train, write_trace
from .reward import Ablation, CandidateAction, FusionMode, grade_many

log = logging.getLogger("hindsight_dialogue")

EXIT_OK, EXIT_INVALID, EXIT_ORACLE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for oracle failures here
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers ---------------------------------------------------------------


def _read_samples(path: str) -> list[TurnSample]:
    return [TurnSample.from_record(r) for r in read_jsonl(path)]


def _read_targets(path: str) -> list[HindsightTarget]:
    return [HindsightTarget.from_record(r) for r in read_jsonl(path)]


def _read_template(path: str | None, prompt_type: PromptType) -> PromptTemplate:
    if path is None:
        return default_template(prompt_type)
    return PromptTemplate(prompt_type, Path(path).read_text(encoding="utf-8"), name=Path(path).stem)


def _oracle(args: argparse.Namespace, cfg: PipelineConfig, role: str) -> Oracle:
    if args.backend == "graph":
        if not args.graph:
            raise ConfigError("--backend graph needs --graph")
        return GraphOracle(InfoGraph.load(args.graph))
    ep = cfg.endpoint(role)
    if not ep.url or not ep.model:
        raise ConfigError(f"no remote endpoint configured for the {role} role")
    return RemoteOracle(ep.url, ep.model, ep.key)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    keys = ("beta", "mode", "generic_threshold", "drop_empty_continue", "group_size",
            "autoprompt_k", "autoprompt_n", "seed", "include_failures")
    return {k: getattr(args, k, None) for k in keys}


def _done(cfg: PipelineConfig, out: str, msg: str) -> int:
    write_resolved(cfg, out)
    print(msg)
    return EXIT_OK


# -- commands --------------------------------------------------------------


def cmd_ingest(args, cfg):
    trajs, rejections = ingest_path(args.input)
    write_jsonl(args.out, (t.to_record() for t in trajs))
    if args.rejects:
        write_jsonl(args.rejects, (r.to_record() for r in rejections))
    for r in rejections:
        log.warning("line %d rejected (%s): %s", r.line_number, r.invariant, r.message)
    return _done(cfg, args.out, f"ingested {len(trajs)} trajectories, rejected {len(rejections)} lines")


def cmd_segment(args, cfg):
    trajs, rejections = ingest_path(args.input)
    if rejections:
        raise ConfigError(f"{len(rejections)} invalid trajectory lines in {args.input}; run ingest first")
    samples = [s for t in eligible(trajs, cfg.include_failures) for s in segment(t)]
    n = write_jsonl(args.out, (s.to_record() for s in samples))
    return _done(cfg, args.out, f"wrote {n} turn samples")


def cmd_extract(args, cfg):
    samples = _read_samples(args.input)
    oracle = _oracle(args, cfg, "extract")
    targets = raw_targets(samples, _read_template(args.prompt, PromptType.EXTRACT), oracle)
    n = write_jsonl(args.out, (t.to_record() for t in targets))
    return _done(cfg, args.out, f"wrote {n} hindsight targets")


def cmd_filter_generic(args, cfg):
    targets = _read_targets(args.input)
    blacklist = build_generic_blacklist(targets, cfg.generic_threshold)
    if args.blacklist:
        blacklist |= load_manual_blacklist(Path(args.blacklist).read_text(encoding="utf-8").splitlines())
    out = finalize_targets(targets, blacklist, cfg.drop_empty_continue)
    n = write_jsonl(args.out, (t.to_record() for t in out))
    if args.blacklist_out:
        Path(args.blacklist_out).write_text("".join(f"{b}\n" for b in sorted(blacklist)), encoding="utf-8")
    return _done(cfg, args.out, f"blacklisted {len(blacklist)} items; wrote {n} targets")


def cmd_reward(args, cfg):
    samples = {(s.trajectory_id, s.turn_index): s for s in _read_samples(args.samples)}
    targets = _read_targets(args.targets)
    grader_oracle = _oracle(args, cfg, "grader")
    grader = _read_template(args.grader_prompt, PromptType.GRADER)
    rows: list[tuple[HindsightTarget, TurnSample | None, int, str]] = []
    if args.candidates:
        by_ref = {t.sample_ref: t for t in targets}
        counts: dict[tuple[str, int], int] = {}
        for r in read_jsonl(args.candidates):
            ref = (r["trajectory_id"], int(r["turn_index"]))
            if ref not in by_ref:
                raise ConfigError(f"candidate for unknown sample {ref}")
            idx = r.get("candidate_idx", counts.get(ref, 0))
            counts[ref] = idx + 1
            rows.append((by_ref[ref], samples.get(ref), idx, r["candidate"]))
    else:
        rollout_oracle = _oracle(args, cfg, "rollout")
        template = _read_template(args.rollout_prompt, PromptType.ROLLOUT)
        base = cfg.stage_seed("reward")
        for k, t in enumerate(targets):
            s = samples.get(t.sample_ref)
            if s is None:
                raise ConfigError(f"no sample for target {t.sample_ref}")
            bindings = {"goal": s.goal, "context": render_transcript(s.context)}
            outs = sample_rollouts(rollout_oracle, template, bindings, cfg.group_size,
                                   Decode(temperature=1.0), base + k * cfg.group_size)
            for i, o in enumerate(outs):
                if isinstance(o, OracleError):
                    log.warning("rollout %d for %s failed: %s", i, t.sample_ref, o)
                else:
                    rows.append((t, s, i, o))
    breakdowns = grade_many([r[3] for r in rows], [r[0] for r in rows], [r[1] for r in rows],
                            grader, grader_oracle, cfg.beta, cfg.mode)
    records = []
    for (t, _, idx, text), b in zip(rows, breakdowns):
        rec = GradedSample.of(t, b, CandidateAction(text).assessment).to_record()
        rec.update(candidate_idx=idx, candidate=text)
        records.append(rec)
    n = write_jsonl(args.out, records)
    return _done(cfg, args.out, f"graded {n} candidates")


def cmd_metrics(args, cfg):
    graded = [GradedSample.from_record(r) for r in read_jsonl(args.input)]
    report = compute(graded, wa_on_predicted_continue=not args.wa_all_continue)
    print(report.table())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_resolved(cfg, args.json)
    return EXIT_OK


def cmd_autoprompt(args, cfg):
    ptype = PromptType(args.type)
    role = {PromptType.EXTRACT: "extract", PromptType.GRADER: "grader", PromptType.ROLLOUT: "rollout"}[ptype]
    oracle = _oracle(args, cfg, role)
    anchors = ap.AnchorSet.from_records(ptype, read_jsonl(args.anchors))
    seed = _read_template(args.seed_prompt, ptype)
    if ptype is PromptType.EXTRACT:
        scorer = lambda p: ap.score_extract(p, anchors, oracle)
    elif ptype is PromptType.GRADER:
        scorer = lambda p: ap.score_grader(p, anchors, oracle)
    else:
        rcfg = ap.RolloutConfig(n=cfg.group_size, beta=cfg.beta, mode=cfg.mode, seed=cfg.stage_seed("autoprompt"))
        fixed = ap.rollout_targets(anchors, oracle, rcfg)
        scorer = lambda p: ap.score_rollout(p, anchors, oracle, rcfg, fixed)
    if args.mutator == "level":
        mutator = ap.IntParamMutator(args.param, args.param_min, args.param_max)
    else:
        mutator = ap.ParaphraseMutator(_oracle(args, cfg, "mutator"))
    run = ap.calibrate(seed, scorer, cfg.autoprompt_k, cfg.autoprompt_n, mutator, cfg.stage_seed("autoprompt"))
    Path(args.out).write_text(run.best.body, encoding="utf-8")
    if args.trace:
        write_jsonl(args.trace, run.trace_records())
    write_resolved(cfg, args.out)
    sys.stdout.write(run.best.body)
    if not run.best.body.endswith("\n"):
        sys.stdout.write("\n")
    log.info("best score %.4f after %d iterations", run.best.score, len(run.iterations))
    return EXIT_OK


def cmd_synth(args, cfg):
    g = InfoGraph.load(args.graph)
    trajs = synthesize(g, cfg.seed, args.n)
    n = write_jsonl(args.out, (t.to_record() for t in trajs))
    return _done(cfg, args.out, f"synthesized {n} trajectories on graph {g.name}")


def cmd_train(args, cfg):
    g = InfoGraph.load(args.graph)
    tcfg = TrainConfig(lr=args.lr, group_size=cfg.group_size, iterations=args.iterations, beta=cfg.beta,
                       seed=cfg.seed, mode=cfg.mode, ablation=Ablation(args.ablation),
                       n_trajectories=args.n_trajectories, patience=args.patience)
    policy, trace = train(g, tcfg)
    save_policy(args.out, policy)
    if args.trace:
        write_trace(args.trace, trace)
    return _done(cfg, args.out, f"trained {len(trace)} iterations; policy covers {len(policy.logits)} states")


def cmd_eval_policy(args, cfg):
    g = InfoGraph.load(args.graph)
    report = evaluate_policy(load_policy(args.policy), g, args.n_rollouts, cfg.seed,
                             greedy=not args.sample, beta=cfg.beta, mode=cfg.mode)
    print(report.table())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_resolved(cfg, args.json)
    return EXIT_OK


def cmd_export(args, cfg):
    variant = Variant(args.format)
    samples = _read_samples(args.samples)
    if variant is Variant.SFT:
        records = export_sft(samples)
    elif variant is Variant.DPO:
        oracle = _oracle(args, cfg, "rollout")
        records = export_dpo(samples, oracle, seed=cfg.stage_seed("dpo"))
    else:
        if not args.targets:
            raise ConfigError("export --format rl needs --targets")
        records = export_rl(_read_targets(args.targets), samples, Ablation(args.ablation))
    n = write_export(args.out, records, variant)
    return _done(cfg, args.out, f"exported {n} {variant.value} records")


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--beta", type=float)
    common.add_argument("--mode", choices=[m.value for m in FusionMode])
    common.add_argument("--group-size", dest="group_size", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    backend = _Parser(add_help=False)
    backend.add_argument("--backend", choices=["graph", "remote"], default="graph")
    backend.add_argument("--graph", help="graph JSON for the deterministic backend")

    p = _Parser(prog="hindsight-dialogue", description="Hindsight-supervised dialogue data pipeline.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="validate raw trajectory JSONL")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rejects")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("segment", parents=[common], help="split trajectories into turn samples")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--include-failures", dest="include_failures", action="store_true", default=None)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("extract", parents=[common, backend], help="hindsight targets for turn samples")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--prompt", help="EXTRACT template file")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("filter-generic", parents=[common], help="remove generic info items")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", dest="generic_threshold", type=float)
    s.add_argument("--blacklist", help="manual blacklist, one item per line")
    s.add_argument("--blacklist-out")
    s.add_argument("--drop-empty-continue", dest="drop_empty_continue", action="store_true", default=None)
    s.set_defaults(func=cmd_filter_generic)

    s = sub.add_parser("reward", parents=[common, backend], help="grade candidate actions")
    s.add_argument("--samples", required=True)
    s.add_argument("--targets", required=True)
    s.add_argument("--candidates", help="JSONL of {trajectory_id, turn_index, candidate}; sampled if omitted")
    s.add_argument("--grader-prompt")
    s.add_argument("--rollout-prompt")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reward)

    s = sub.add_parser("metrics", parents=[common], help="metric suite over graded JSONL")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--json")
    s.add_argument("--wa-all-continue", action="store_true",
                   help="compute WA over all target-CONTINUE samples")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("autoprompt", parents=[common, backend], help="calibrate a prompt on anchors")
    s.add_argument("--type", required=True, choices=[t.value for t in PromptType])
    s.add_argument("--anchors", required=True)
    s.add_argument("--seed-prompt")
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.add_argument("--K", dest="autoprompt_k", type=int)
    s.add_argument("--n-per-iter", dest="autoprompt_n", type=int)
    s.add_argument("--mutator", choices=["paraphrase", "level"], default="paraphrase")
    s.add_argument("--param", default="level")
    s.add_argument("--param-min", type=int, default=0)
    s.add_argument("--param-max", type=int, default=20)
    s.set_defaults(func=cmd_autoprompt)

    s = sub.add_parser("synth", parents=[common], help="synthesize expert trajectories on a graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a tabular policy on a graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--ablation", choices=[a.value for a in Ablation], default="full")
    s.add_argument("--n-trajectories", type=int, default=64)
    s.add_argument("--patience", type=int, default=50)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-policy", parents=[common], help="evaluate a trained policy")
    s.add_argument("--graph", required=True)
    s.add_argument("--policy", required=True)
    s.add_argument("--n-rollouts", type=int, default=200)
    s.add_argument("--sample", action="store_true", help="sample actions instead of greedy")
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval_policy)

    s = sub.add_parser("export", parents=[common, backend], help="build SFT/DPO/RL datasets")
    s.add_argument("--format", required=True, choices=[v.value for v in Variant])
    s.add_argument("--samples", required=True)
    s.add_argument("--targets")
    s.add_argument("--ablation", choices=[a.value for a in Ablation], default="full")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except (OracleError, GraderParseError, ExtractionParseError) as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except ap.CalibrationInvalid as exc:
        print(f"calibration invalid: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, TrajectoryError, ExportError, TemplateError, InvalidGraph,
            ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
