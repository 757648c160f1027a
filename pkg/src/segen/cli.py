"""``segen`` command line: train, generate, evaluate, align, oracle-check."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import (DataInstance, ParseError, encode, parse_e2e_mr, read_e2e_csv, read_webnlg, tokenize,
                     write_e2e_csv)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _read_data(path: str, fmt: str = "auto") -> list[DataInstance]:
    if fmt == "auto":
        fmt = "webnlg" if Path(path).suffix in (".txt", ".triples") else "e2e"
    return read_webnlg(path) if fmt == "webnlg" else read_e2e_csv(path)


def _inputs(args) -> list[DataInstance]:
    if args.mr:
        ref = tokenize(args.ref) if getattr(args, "ref", None) else []
        return [DataInstance(parse_e2e_mr(mr), ref) for mr in args.mr]
    if args.data:
        return _read_data(args.data, args.format)
    raise UsageError("give --data FILE or --mr STRING")


def _cmd_train(args) -> int:
    from .toolkit.config import load_config, parse_config
    from .toolkit.synthetic import make_synthetic
    from .trainer import TrainConfig, TrainingDiverged, train

    cfg = TrainConfig.for_profile(args.profile)
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    if args.make_synthetic:
        n = args.make_synthetic
        data = make_synthetic(n + max(n // 5, 1), seed=cfg.seed)
        train_data, valid_data = data[:n], data[n:]
        if args.write_data:
            out = Path(args.write_data)
            out.mkdir(parents=True, exist_ok=True)
            write_e2e_csv(out / "train.csv", train_data)
            write_e2e_csv(out / "valid.csv", valid_data)
    elif args.train:
        train_data = _read_data(args.train, args.format)
        if not args.valid:
            raise UsageError("--valid is required with --train")
        valid_data = _read_data(args.valid, args.format)
    else:
        raise UsageError("give --train FILE --valid FILE or --make-synthetic N")
    if not valid_data:
        raise UsageError("empty validation split")

    def log(entry):
        print(f"epoch {entry.epoch:3d}  train {entry.train_loss:.4f}  val {entry.val_loss:.4f}  "
              f"lr {entry.lr:.1e}  E[segments] {entry.mean_expected_segments:.3f}", flush=True)

    try:
        result = train(train_data, valid_data, cfg, metrics_path=args.metrics, checkpoint_path=args.out, log=log)
    except TrainingDiverged as err:
        print(f"error: {err}; last good parameters saved to {args.out}", file=sys.stderr)
        return 3
    print(f"best epoch {result.best_epoch}; checkpoint {args.out}")
    return 0


def _parse_structure(spec: str, instance: DataInstance) -> list[int]:
    order = []
    for item in spec.split(","):
        item = item.strip()
        if item.isdigit():
            order.append(int(item))
            continue
        matches = [r.index for r in instance.records if r.label().lower() == item.lower()]
        if not matches:
            raise UsageError(f"--structure: no record named {item!r}")
        order.append(matches[0])
    return order


def _cmd_generate(args) -> int:
    from .decoder import IncompleteCoverageError, decode, forced_structure_decode
    from .toolkit.checkpoint import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    vocab = model.vocab
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    status = 0
    try:
        for inst in _inputs(args):
            enc = encode(inst, vocab, target=[])
            try:
                if args.structure:
                    hyp = forced_structure_decode(enc, model, _parse_structure(args.structure, inst),
                                                  allow_null=args.allow_null, beam=args.beam, max_len=args.max_len)
                else:
                    hyp = decode(enc, model, args.constraints, beam=args.beam, max_len=args.max_len)
            except IncompleteCoverageError as err:
                print(f"error: {err}", file=sys.stderr)
                print("")
                status = 4
                continue
            print(hyp.text(vocab, enc.oov))
            if trace is not None:
                trace.write(json.dumps(hyp.trace(vocab, enc)) + "\n")
    finally:
        if trace is not None:
            trace.close()
    return status


def _read_lines(path: str) -> list[str]:
    return [" ".join(tokenize(line)) for line in Path(path).read_text(encoding="utf-8").splitlines()]


def _cmd_evaluate(args) -> int:
    from .toolkit.metrics import bleu4, corpus_alignment_accuracy, distinct_ngrams

    out = {}
    if args.hyps:
        hyps = _read_lines(args.hyps)
        if args.refs:
            refs = _read_lines(args.refs)
        elif args.data:
            refs = [" ".join(x.target) for x in _read_data(args.data, args.format)]
        else:
            raise UsageError("--hyps needs --refs FILE or --data FILE")
        out["bleu4"] = bleu4(hyps, refs, smooth=args.smooth)
        out["dist1"] = distinct_ngrams(hyps, 1)
        out["dist3"] = distinct_ngrams(hyps, 3)
    if args.checkpoint:
        from .decoder import viterbi_align_batch
        from .toolkit.checkpoint import load_checkpoint

        if not args.data:
            raise UsageError("--checkpoint needs --data FILE with gold alignments")
        data = [x for x in _read_data(args.data, args.format) if x.gold is not None]
        if not data:
            raise UsageError("no gold alignments in --data")
        model = load_checkpoint(args.checkpoint)
        pred = []
        for s in range(0, len(data), 64):
            pred += viterbi_align_batch([encode(x, model.vocab) for x in data[s:s + 64]], model)
        gold = [x.gold for x in data]
        out["alignment_accuracy"] = corpus_alignment_accuracy(pred, gold, exclude_null=args.exclude_null)
    if not out:
        raise UsageError("nothing to evaluate: give --hyps and/or --checkpoint")
    for k, v in out.items():
        print(f"{k}\t{v:.6g}" if isinstance(v, float) else f"{k}\t{v}")
    return 0


def _cmd_align(args) -> int:
    from .decoder import format_alignment, viterbi_align
    from .lattice import dump_lattice, lattice_tables, precompute_segment_scores
    from .toolkit.checkpoint import load_checkpoint
    from .autodiff import no_grad

    model = load_checkpoint(args.checkpoint)
    if args.dump_lattice:
        Path(args.dump_lattice).mkdir(parents=True, exist_ok=True)
    for n, inst in enumerate(_inputs(args)):
        if not inst.target:
            raise UsageError("align needs a reference text (--ref or a ref column)")
        enc = encode(inst, model.vocab)
        seg = viterbi_align(enc, model)
        print(format_alignment(inst.target, seg, inst.records))
        if args.dump_lattice:
            with no_grad():
                table = lattice_tables(precompute_segment_scores(enc, None, model))
            with open(Path(args.dump_lattice) / f"lattice_{n:05d}.tsv", "w", encoding="utf-8") as fh:
                dump_lattice(table, fh)
    return 0


def _cmd_oracle_check(args) -> int:
    from .toolkit.oracle_check import run_oracle_suite

    rep = run_oracle_suite(cases=args.cases, seed=args.seed, grad_cases=args.grad_cases)
    print("\n".join(rep.lines()))
    ok = (max(rep.max_loglik_dev, rep.max_kernel_dev, rep.max_segments_dev) <= 1e-6
          and rep.max_viterbi_dev <= 1e-9 and rep.max_grad_rel_err <= 1e-3)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="segen", description="Segment-level data-to-text generation with latent record alignment.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def data_opts(sp, ref: bool = False):
        sp.add_argument("--data", help="E2E-style CSV (mr, ref[, gold]) or WebNLG triples file")
        sp.add_argument("--format", choices=["auto", "e2e", "webnlg"], default="auto")
        sp.add_argument("--mr", action="append", help="inline meaning representation (repeatable)")
        if ref:
            sp.add_argument("--ref", help="reference text for an inline --mr")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--train")
    t.add_argument("--valid")
    t.add_argument("--format", choices=["auto", "e2e", "webnlg"], default="auto")
    t.add_argument("--make-synthetic", type=int, metavar="N", help="train on N synthetic instances")
    t.add_argument("--write-data", metavar="DIR", help="also write the synthetic splits as CSV")
    t.add_argument("--profile", choices=["e2e", "webnlg"], default="e2e")
    t.add_argument("--config", help="flat key = value file of training options")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one option (repeatable)")
    t.add_argument("--out", default="model.segen", help="checkpoint path")
    t.add_argument("--metrics", help="per-epoch CSV metrics log")
    t.set_defaults(func=_cmd_train)

    g = sub.add_parser("generate", help="generate text from records")
    g.add_argument("--checkpoint", required=True)
    data_opts(g)
    g.add_argument("--constraints", choices=["base", "R", "RM"], default="RM")
    g.add_argument("--beam", type=int, default=1)
    g.add_argument("--max-len", type=int, default=80)
    g.add_argument("--structure", help="forced record order, e.g. 'name,food,area' or '1,3,2'")
    g.add_argument("--allow-null", action="store_true", help="let null segments interleave a forced structure")
    g.add_argument("--trace", metavar="FILE", help="write JSON-lines segment traces")
    g.set_defaults(func=_cmd_generate)

    e = sub.add_parser("evaluate", help="BLEU-4, Dist-1/3 and alignment accuracy")
    e.add_argument("--hyps", help="one hypothesis per line")
    e.add_argument("--refs", help="one reference per line")
    e.add_argument("--data", help="inputs with references (and gold alignments)")
    e.add_argument("--format", choices=["auto", "e2e", "webnlg"], default="auto")
    e.add_argument("--checkpoint", help="score Viterbi alignments against gold labels")
    e.add_argument("--exclude-null", action="store_true", help="skip null-labeled gold tokens")
    e.add_argument("--smooth", action="store_true", help="add-one smoothing for BLEU")
    e.set_defaults(func=_cmd_evaluate)

    a = sub.add_parser("align", help="Viterbi segmentation of reference texts")
    a.add_argument("--checkpoint", required=True)
    data_opts(a, ref=True)
    a.add_argument("--dump-lattice", metavar="DIR", help="write forward tables as TSV")
    a.set_defaults(func=_cmd_align)

    o = sub.add_parser("oracle-check", help="lattice vs. brute-force enumeration on random tiny models")
    o.add_argument("--cases", type=int, default=200)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--grad-cases", type=int, default=3)
    o.set_defaults(func=_cmd_oracle_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"segen: error: {err}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, OSError) as err:
        print(f"segen: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
