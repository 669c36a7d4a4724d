"""Command-line surface: train, generate, attack, detect, evaluate, and the
experiment runners.

Every subcommand reads and writes JSONL (one record per line) or JSON and
routes all randomness through explicit ``--seed`` flags, so any artifact can
be reproduced from its own fields. Exit codes: 0 success, 1 validation
error, 2 I/O error.
"""

import argparse
import json
import sys
import time

import numpy as np

from . import experiments, metrics
from .attacks import apply_attacks, parse_attack_spec
from .coding import codes_for_lm
from .detection import (DetectionConfig, available_backends, detect_pvalue,
                        detect_seed_scan, min_block_cost)
from .generation import GenerationResult, generate, key_sequence_for
from .lm import load_lm, peaked_lm, save_lm, skewed_lm, train_from_text, uniform_lm
from .sampling import SAMPLER_KINDS


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_lines(path, lines):
    if path == "-":
        for line in lines:
            print(line)
        return
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _load_config_defaults(argv):
    """Pull key=value defaults out of a --config file; explicit flags win."""
    if "--config" not in argv:
        return argv, {}
    i = argv.index("--config")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2 :]
    defaults = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            try:
                defaults[key] = json.loads(value)
            except json.JSONDecodeError:
                defaults[key] = value
    return rest, defaults


def cmd_train_lm(args):
    with open(args.corpus, encoding="utf-8") as fh:
        text = fh.read()
    lm = train_from_text(text, args.tokenizer, args.smoothing)
    save_lm(lm, args.out)
    print(f"trained {lm.size}-token model -> {args.out}")
    return 0


def _builtin_lm(name):
    kind, _, arg = name.partition(":")
    if kind == "uniform":
        return uniform_lm(int(arg or 8))
    if kind == "skewed":
        return skewed_lm(int(arg or 4))
    if kind == "peaked":
        n, _, top = arg.partition(",")
        return peaked_lm(int(n or 8), float(top or 0.9))
    raise ValueError(f"unknown builtin model {name!r}")


def _load_model(args):
    if args.lm.startswith(("uniform", "skewed", "peaked")):
        return _builtin_lm(args.lm)
    return load_lm(args.lm)


def cmd_generate(args):
    lm = _load_model(args)
    if args.prompt_ids:
        prompt = [int(t) for t in args.prompt_ids.split(",") if t != ""]
    elif args.prompt:
        prompt = lm.vocab.encode(args.prompt.split())
    else:
        prompt = []
    code = codes_for_lm(lm, args.coding) if args.sampler == "bs" else None
    rng = np.random.default_rng(args.seed)
    salt = bytes.fromhex(args.salt) if args.salt else rng.bytes(16)
    lines = []
    for i in range(args.count):
        res = generate(
            lm, prompt, args.entropy_threshold, args.m, args.sampler, salt, rng,
            code=code, top_p=args.top_p, temperature=args.temperature,
            rng_seed=args.seed,
        )
        lines.append(res.to_json())
    _write_lines(args.out, lines)
    return 0


def cmd_attack(args):
    specs = []
    for text in args.attack:
        specs.extend(parse_attack_spec(text))
    records = _read_jsonl(args.infile)
    rng = np.random.default_rng(args.seed)
    n_vocab = args.vocab_size or (_load_model(args).size if args.lm else None)
    lines = []
    for rec in records:
        n = n_vocab or (max(rec["tokens"]) + 1)
        res = GenerationResult.from_record(rec)
        seed_block = res.seed_block()
        out = dict(rec)
        out["tokens"] = apply_attacks(rec["tokens"], specs, n, rng)
        out["attack"] = args.attack
        out["attack_seed"] = args.seed
        if seed_block is not None:
            out["seed_tokens"] = list(seed_block.tokens)
        lines.append(json.dumps(out))
    _write_lines(args.out, lines)
    return 0


def cmd_detect(args):
    lm = _load_model(args)
    records = _read_jsonl(args.infile)
    config = DetectionConfig(cost=args.cost, k=args.k, T=args.T,
                             h_mode=args.h_mode, s_max=args.s_max,
                             backend=args.backend)
    rng = np.random.default_rng(args.seed)
    code = codes_for_lm(lm, args.coding) if args.cost == "bs" else None
    lines = []
    for rec in records:
        res = GenerationResult.from_record(rec)
        if args.mode == "scan":
            report = detect_seed_scan(rec["tokens"], config, res.salt, lm.size, rng,
                                      code=code, lm=lm, lam=res.lam)
        else:
            keyseq = _keys_for_record(rec, res, lm.size, code, args.cost)
            report = detect_pvalue(rec["tokens"], keyseq, config, rng, lm.size,
                                   code=code, boundary=res.boundary)
        lines.append(report.to_json())
    _write_lines(args.out, lines)
    return 0


def _keys_for_record(rec, res, n_vocab, code, cost):
    """Key-supplied mode: rebuild the key sequence from the recorded seed."""
    if "seed_tokens" in rec and res.boundary is not None:
        from .keys import SeedBlock, derive_key_sequence

        seed = SeedBlock(tuple(rec["seed_tokens"]), res.salt)
        n = res.m - res.boundary
        if n < 1:
            raise ValueError("record has no watermarked positions")
        n_bits = code.max_bits if code is not None else max(1, (n_vocab - 1).bit_length())
        return derive_key_sequence(seed, cost, n, n_vocab, n_bits)
    return key_sequence_for(res, n_vocab, code=code, kind=cost)


def cmd_eval_roc(args):
    pos = np.loadtxt(args.pos, ndmin=1)
    neg = np.loadtxt(args.neg, ndmin=1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("score files must be non-empty")
    summary = metrics.roc_auc(pos, neg)
    _write_lines(args.out, [summary.to_json()])
    return 0


def cmd_benchmark(args):
    rng = np.random.default_rng(args.seed)
    costs = rng.standard_normal((args.n, args.m))
    print(f"alignment search over {args.n} key offsets x {args.m - args.k + 1} "
          f"text blocks (k={args.k}), best of {args.reps}")
    results = {}
    for backend in available_backends():
        best = float("inf")
        for _ in range(args.reps):
            t0 = time.perf_counter()
            results[backend] = min_block_cost(costs, args.k, backend)
            best = min(best, time.perf_counter() - t0)
        print(f"  {backend:9s} {best * 1e3:9.3f} ms")
    if len(results) == 2 and results["compiled"] != results["python"]:
        print("  WARNING: backends disagree")
        return 1
    return 0


def _print_record(record, out):
    _write_lines(out, [record.to_json()])
    status = {True: "PASS", False: "FAIL", None: "done"}[record.passed]
    print(f"{record.name}: {status} {record.metrics}", file=sys.stderr)
    return 0 if record.passed in (True, None) else 1


def cmd_exp(args):
    if args.experiment == "collision-bound":
        print(experiments.collision_bound(args.cells, args.p))
        return 0
    if args.experiment == "seed-collisions":
        lm = _load_model(args)
        rec = experiments.run_seed_collisions(lm, args.entropy_threshold, args.trials,
                                              args.m, args.seed)
    elif args.experiment == "indistinguishability":
        lm = _load_model(args)
        rec = experiments.run_indistinguishability(lm, args.entropy_threshold, args.m,
                                                   args.samples, seed=args.seed)
    elif args.experiment == "covariance-gap":
        rec = experiments.run_covariance_gap(args.vocab_size, args.m, args.samples, args.seed)
    elif args.experiment == "hoeffding-bound":
        rec = experiments.run_hoeffding_bound(uniform_lm(args.vocab_size), args.k_values,
                                              args.samples, args.seed)
    elif args.experiment == "pvalue-validity":
        rec = experiments.run_pvalue_validity(args.vocab_size, args.m, args.trials,
                                              args.T, seed=args.seed)
    elif args.experiment == "detect-curve":
        lm = _load_model(args)
        rec = experiments.run_detect_curve(lm, args.entropy_threshold, args.m_values,
                                           n_pos=args.samples, n_neg=args.samples,
                                           seed=args.seed)
    elif args.experiment == "attack-auc":
        lm = _load_model(args)
        specs = []
        for text in args.attack:
            specs.extend(parse_attack_spec(text))
        rec = experiments.run_attack_auc(lm, args.entropy_threshold, args.m,
                                         attack_specs=specs, n_pos=args.samples,
                                         n_neg=args.samples, seed=args.seed)
    elif args.experiment == "error-lower-bound":
        lm = _load_model(args)
        rec = experiments.run_error_lower_bound(lm, args.c, args.m, args.samples,
                                                seed=args.seed,
                                                lam=args.entropy_threshold)
    else:
        raise ValueError(f"unknown experiment {args.experiment!r}")
    return _print_record(rec, args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="entmark",
                                     description="entropy-gated text watermarking toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-lm", help="train the bigram model from a text file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tokenizer", choices=("whitespace", "char"), default="whitespace")
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("generate", help="generate watermarked continuations")
    p.add_argument("--lm", required=True,
                   help="model file, or builtin uniform:N / skewed:N / peaked:N,top")
    p.add_argument("--prompt", default="")
    p.add_argument("--prompt-ids", default="")
    p.add_argument("--lambda", dest="entropy_threshold", type=float, default=2.0,
                   help="cumulative watermark-entropy gate (inf disables)")
    p.add_argument("--m", type=int, default=100, help="generation budget in tokens")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--sampler", choices=SAMPLER_KINDS, default="its")
    p.add_argument("--coding", choices=("fixed", "huffman"), default="fixed")
    p.add_argument("--salt", default="", help="hex salt; fresh random if omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("attack", help="corrupt generated token streams")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--attack", action="append", required=True,
                   help="substitute:R | insert:R | delete:R | crop:A:B | paraphrase-proxy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lm", default="")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("detect", help="permutation-test detection on records")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--mode", choices=("key", "scan"), default="key")
    p.add_argument("--cost", choices=("its", "bs"), default="its")
    p.add_argument("--coding", choices=("fixed", "huffman"), default="fixed")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--T", type=int, default=99)
    p.add_argument("--h-mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--s-max", type=int, default=None)
    p.add_argument("--backend", choices=("compiled", "python"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval-roc", help="ROC/AUC from score files (one per line)")
    p.add_argument("--pos", required=True)
    p.add_argument("--neg", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval_roc)

    p = sub.add_parser("benchmark", help="compare alignment-search backends")
    p.add_argument("--n", type=int, default=400, help="key sequence length")
    p.add_argument("--m", type=int, default=400, help="text length")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("exp", help="run a statistical validation experiment")
    p.add_argument("experiment", choices=(
        "collision-bound", "seed-collisions", "indistinguishability",
        "covariance-gap", "hoeffding-bound", "pvalue-validity",
        "detect-curve", "attack-auc", "error-lower-bound"))
    p.add_argument("--lm", default="uniform:8")
    p.add_argument("--lambda", dest="entropy_threshold", type=float, default=2.0)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--m-values", type=int, nargs="+", default=(50, 100, 200, 400))
    p.add_argument("--k-values", type=int, nargs="+", default=(20, 50, 100))
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--T", type=int, default=99)
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--cells", type=float, default=365.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--c", type=float, default=0.1)
    p.add_argument("--attack", action="append", default=["substitute:0.1"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_exp)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    argv, defaults = _load_config_defaults(argv)
    parser = build_parser()
    if defaults:
        for sub in parser._subparsers._group_actions[0].choices.values():
            known = set()
            for action in sub._actions:
                if action.dest in defaults:
                    action.required = False  # a config value satisfies it
                    known.add(action.dest)
            sub.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage problems are validation errors
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
