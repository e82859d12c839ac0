"""Command-line entry point (``rnaforge``).

Errors print one ``CODE: message`` line to stderr and exit with 2 (usage),
3 (data) or 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from . import data
from .errors import RNAForgeError
from .folding import fold, fold_summary
from .policy import Policy, PolicyConfig, load_checkpoint, save_checkpoint, target_init_sample
from .structure import StructureSet, as_structure, check_sequence, read_structures, \
    write_structures
from .thermo import EnergyParams, load_params
from .training import TrainConfig, rl_defaults, train_rl, train_sl
from .validation import check_design_pairs

log = logging.getLogger("rnaforge")

GLOBAL_DEFAULTS = {"params": None, "seed": 0, "threads": 1, "out": None, "verbose": False}


class UsageError(Exception):
    code = "USAGE"
    exit_status = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the flags appear before or after the subcommand
    s = argparse.SUPPRESS
    parser.add_argument("--params", default=s, help="energy parameter file")
    parser.add_argument("--seed", type=int, default=s, help="random seed (default 0)")
    parser.add_argument("--threads", type=int, default=s,
                        help="worker threads (RNAFORGE_THREADS overrides)")
    parser.add_argument("--out", default=s, help="output file or prefix (default stdout)")
    parser.add_argument("-v", "--verbose", action="store_true", default=s)


def _emit(args, text: str, suffix: str = "") -> None:
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(f"{args.out}{suffix}").write_text(text, encoding="utf-8")


def _params(args) -> EnergyParams:
    return load_params(args.params) if args.params else EnergyParams()


def _structures(args, p: EnergyParams) -> StructureSet:
    items = []
    for src in args.structures:
        if Path(src).is_file():
            items += list(read_structures(src, p.h_min))
        else:
            items.append(as_structure(src, p.h_min))
    return StructureSet(items)


def _pairs_file(path, p: EnergyParams):
    return [(r.target, r.design) for r in data.read_sl_corpus(path, p)]


def _tsv(rows, header=None) -> str:
    out = io.StringIO()
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def _policy(path) -> Policy:
    return load_checkpoint(path)


# -- subcommands ----------------------------------------------------------------------


def cmd_fold(args):
    p = _params(args)
    seqs = []
    for src in args.sequences:
        if Path(src).is_file():
            seqs += [ln.strip() for ln in Path(src).read_text().splitlines()
                     if ln.strip() and not ln.startswith("#")]
        else:
            seqs.append(src)
    header = ["sequence", "mfe_structure", "mfe_kcal", "mfe_count", "log_q"]
    target = as_structure(args.target, p.h_min) if args.target else None
    if target is not None:
        header += ["target", "prob", "ned", "is_mfe", "is_umfe"]
    rows = []
    for x in seqs:
        x = check_sequence(x)
        if target is None:
            s = fold(x, p, with_pair_probs=False)
            extra = []
        else:
            ev = fold_summary(x, target, p)
            s = ev.summary
            extra = [target.text, repr(ev.prob), repr(ev.ned), int(ev.is_mfe), int(ev.is_umfe)]
        rows.append([s.sequence, s.mfe_structure.text, f"{s.mfe_value / 10:.1f}", s.mfe_count,
                     repr(s.log_q)] + extra)
    _emit(args, _tsv(rows, header))


def cmd_eval(args):
    p = _params(args)
    if args.pairs:
        pairs = _pairs_file(args.pairs, p)
    else:
        if not (args.structure and args.sequence):
            raise UsageError("eval needs --pairs FILE or both --structure and --sequence")
        ys, xs = check_design_pairs([args.structure], [args.sequence], p.h_min)
        pairs = list(zip(ys, xs))
    report = bench_mod.evaluate_designs(pairs, p, bench_mod.resolve_workers(args.threads))
    if args.out is None:
        sys.stdout.write(report.to_tsv())
    else:
        Path(f"{args.out}.tsv").write_text(report.to_tsv(), encoding="utf-8")
        Path(f"{args.out}.json").write_text(report.to_json(), encoding="utf-8")


def _sampler_for(args, p: EnergyParams):
    if args.method == "lm":
        if not args.checkpoint:
            raise UsageError("--method lm needs --checkpoint")
        return _policy(args.checkpoint), None
    if args.method == "target-init":
        return None, lambda y, k: target_init_sample(y, [args.seed, k])
    raise UsageError(f"unknown method {args.method}")


def cmd_design(args):
    p = _params(args)
    structs = _structures(args, p)
    rows = []
    if args.method == "local-search":
        for i, y in enumerate(structs):
            x = data.teacher_design(y, args.budget, [args.seed, i], p)
            ev = fold_summary(x, y, p)
            rows.append([y.text, x, ev.prob, ev.ned, ev.is_mfe, ev.is_umfe])
    else:
        policy, sampler = _sampler_for(args, p)
        report = _run_bench(args, policy, structs, p, sampler)
        for y, r in zip(structs, report.rows):
            rows.append([y.text, r.sequence or "NA", r.best_prob, r.best_ned, r.is_mfe,
                         r.is_umfe])
        if args.out:
            Path(f"{args.out}.curves.csv").write_text(report.curves_csv(), encoding="utf-8")
    rows = [r[:2] + [bench_mod._fmt(v) for v in r[2:]] for r in rows]
    header = ["structure", "sequence", "prob", "ned", "is_mfe", "is_umfe"]
    _emit(args, _tsv(rows, header), ".tsv" if args.out else "")


def _run_bench(args, policy, structs, p: EnergyParams, sampler):
    return bench_mod.benchmark(policy, structs, args.n, args.metric, args.seed, p,
                               bench_mod.resolve_workers(args.threads),
                               constrained=args.constrained == "true",
                               temperature=args.temperature, sampler=sampler)


def cmd_gen_data(args):
    p = _params(args)
    seqs = data.gen_random_sequences(args.count, args.len_min, args.len_max, args.seed)
    corpus = data.build_structure_corpus(seqs, p, bench_mod.resolve_workers(args.threads))
    if args.testset:
        corpus = data.filter_by_distance(corpus, read_structures(args.testset, p.h_min),
                                         args.threshold)
    if args.max_structures:
        corpus = StructureSet(list(corpus)[: args.max_structures], corpus.source_tag)
    prefix = args.out or "corpus"
    write_structures(corpus, f"{prefix}.structures.txt")
    if args.designs_per_structure > 0:
        records = data.build_sl_dataset(corpus, args.designs_per_structure, args.budget,
                                        args.seed, p, bench_mod.resolve_workers(args.threads))
        data.write_sl_corpus(records, f"{prefix}.sl.tsv")
    print(f"{len(corpus)} structures written with prefix {prefix}", file=sys.stderr)


def cmd_filter_data(args):
    p = _params(args)
    kept = data.filter_by_distance(read_structures(args.candidates, p.h_min),
                                   read_structures(args.testset, p.h_min), args.threshold)
    _emit(args, "".join(y.text + "\n" for y in kept))


def cmd_select_rl(args):
    p = _params(args)
    stats, kept = data.select_rl_subset(read_structures(args.candidates, p.h_min),
                                        _policy(args.checkpoint_in), args.k, p, args.seed,
                                        workers=bench_mod.resolve_workers(args.threads))
    prefix = args.out or "rl"
    data.write_rl_stats(stats, f"{prefix}.stats.tsv")
    write_structures(kept, f"{prefix}.structures.txt")
    print(f"{len(kept)} of {len(stats)} structures kept", file=sys.stderr)


def _policy_config(args) -> PolicyConfig:
    return PolicyConfig(args.layers, args.heads, args.d_model, args.d_ff, args.max_context)


def cmd_train_sl(args):
    p = _params(args)
    records = data.read_sl_corpus(args.corpus, p)
    policy = (_policy(args.checkpoint_in) if args.checkpoint_in
              else Policy.initialize(_policy_config(args), seed=args.seed))
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch, total_steps=args.steps, seed=args.seed)
    policy, trace = train_sl(policy, records, cfg)
    save_checkpoint(policy, args.checkpoint_out)
    _emit(args, "step,loss\n" + "".join(f"{s},{v!r}\n" for s, v in trace), ".trace.csv"
          if args.out else "")


def cmd_train_rl(args):
    p = _params(args)
    structs = read_structures(args.structures, p.h_min)
    cfg = rl_defaults(lr=args.lr, group_k=args.group_k, total_steps=args.steps, seed=args.seed)
    policy, trace = train_rl(_policy(args.checkpoint_in), structs, cfg, p)
    save_checkpoint(policy, args.checkpoint_out)
    text = "step,structure,mean_reward\n" + "".join(f"{s},{y},{r!r}\n" for s, y, r in trace)
    _emit(args, text, ".trace.csv" if args.out else "")


def cmd_bench(args):
    p = _params(args)
    structs = _structures(args, p)
    policy, sampler = _sampler_for(args, p)
    report = _run_bench(args, policy, structs, p, sampler)
    if args.out is None:
        sys.stdout.write(report.to_tsv(timing=not args.no_timing))
        sys.stdout.write(json.dumps(report.aggregate, sort_keys=True) + "\n")
    else:
        report.write(args.out)


def cmd_validity_sweep(args):
    p = _params(args)
    structs = _structures(args, p)
    policy = Policy.zeros() if args.checkpoint is None else _policy(args.checkpoint)
    sweep = bench_mod.validity_sweep(policy, structs, args.samples, args.seed)
    _emit(args, sweep.to_tsv(timing=not args.no_timing))


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rnaforge", description="RNA design workbench")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp)
        sp.set_defaults(func=fn)
        return sp

    sp = add("fold", cmd_fold, "MFE structure, co-optimal count and log Q")
    sp.add_argument("sequences", nargs="+", help="sequences or files of sequences")
    sp.add_argument("--target", help="target structure: adds p, NED, is_mfe, is_umfe")

    sp = add("eval", cmd_eval, "evaluate designs against their targets")
    sp.add_argument("--pairs", help="TSV of structure<TAB>sequence")
    sp.add_argument("--structure")
    sp.add_argument("--sequence")

    for name, fn, text in (("design", cmd_design, "design sequences for structures"),
                           ("bench", cmd_bench, "best-of-N benchmark with curves")):
        sp = add(name, fn, text)
        sp.add_argument("structures", nargs="+", help="structures or files of structures")
        sp.add_argument("--checkpoint")
        sp.add_argument("--method", choices=("lm", "target-init", "local-search")
                        if name == "design" else ("lm", "target-init"), default="lm")
        sp.add_argument("-n", "--n", type=int, default=16, help="samples per structure")
        sp.add_argument("--metric", choices=("prob", "ned", "mfe", "umfe"), default="prob")
        sp.add_argument("--temperature", type=float, default=1.0)
        sp.add_argument("--constrained", choices=("true", "false"), default="true")
        if name == "design":
            sp.add_argument("--budget", type=int, default=500)
        else:
            sp.add_argument("--no-timing", action="store_true",
                            help="omit wall-time columns from stdout")

    sp = add("gen-data", cmd_gen_data, "random-sequence structures and teacher designs")
    sp.add_argument("--count", type=int, default=10000)
    sp.add_argument("--len-min", type=int, default=10)
    sp.add_argument("--len-max", type=int, default=80)
    sp.add_argument("--designs-per-structure", type=int, default=10)
    sp.add_argument("--budget", type=int, default=500)
    sp.add_argument("--max-structures", type=int, default=0)
    sp.add_argument("--testset", help="exclude structures close to these")
    sp.add_argument("--threshold", type=float, default=0.2)

    sp = add("filter-data", cmd_filter_data, "drop candidates close to a test set")
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--testset", required=True)
    sp.add_argument("--threshold", type=float, default=0.2)

    sp = add("select-rl", cmd_select_rl, "AoN/NSD selection of RL structures")
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--checkpoint-in", required=True)
    sp.add_argument("-k", "--k", type=int, default=16)

    sp = add("train-sl", cmd_train_sl, "supervised training on a pair corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--checkpoint-in")
    sp.add_argument("--checkpoint-out", required=True)
    sp.add_argument("--steps", type=int, default=600)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--d-model", type=int, default=64)
    sp.add_argument("--d-ff", type=int, default=256)
    sp.add_argument("--max-context", type=int, default=1088)

    sp = add("train-rl", cmd_train_rl, "GRPO refinement of a checkpoint")
    sp.add_argument("--structures", required=True)
    sp.add_argument("--checkpoint-in", required=True)
    sp.add_argument("--checkpoint-out", required=True)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--group-k", type=int, default=8)
    sp.add_argument("--lr", type=float, default=1e-5)

    sp = add("validity-sweep", cmd_validity_sweep, "invalidity of free vs masked decoding")
    sp.add_argument("structures", nargs="+")
    sp.add_argument("--checkpoint", help="default: the uniform (all-zero) policy")
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--no-timing", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for k, v in GLOBAL_DEFAULTS.items():
            if not hasattr(args, k):
                setattr(args, k, v)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except (RNAForgeError, UsageError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"{exc.code}: {msg}", file=sys.stderr)
        return exc.exit_status
    except FileNotFoundError as exc:
        print(f"IO_ERROR: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"IO_ERROR: {exc}".replace("\n", " "), file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"INVALID_ARGUMENT: {exc}".replace("\n", " "), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
