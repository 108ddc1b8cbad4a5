"""Command-line interface: translate, bench, genmodel, compare,
quantize-report, and bleu subcommands.

Exit codes: 0 success; 1 file, format, or configuration error; 2 translation
completed but one or more sentences failed to decode (each failure produces
an empty output line and a warning on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

from . import bench as bench_mod
from . import decoder as decoder_mod
from . import model as model_mod
from .bleu import bleu as _bleu
from .errors import QnmtError


def _read_lines(path: str) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _load_models(paths) -> list:
    return [model_mod.load_model(p) for p in paths]


def _decode_cfg(args) -> decoder_mod.DecodeConfig:
    return decoder_mod.DecodeConfig(
        beam=args.beam, max_ratio=args.max_ratio, precision=args.precision)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_translate(args) -> int:
    models = _load_models(args.model)
    cfg = _decode_cfg(args)
    if cfg.precision == "int8":
        models = [model_mod.quantize_model(m) for m in models]
    lines = _read_lines(args.input)

    failures = 0

    def job(indexed):
        idx, line = indexed
        try:
            tokens, _ = decoder_mod.translate(models, line.split(), cfg)
            return idx, decoder_mod.bpe_merge(tokens), None
        except QnmtError as exc:
            return idx, "", f"sentence {idx}: {exc}"

    work = list(enumerate(lines))
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(job, work))
    else:
        results = [job(w) for w in work]

    with open(args.output, "w", encoding="utf-8") as fh:
        for _, text, err in sorted(results):
            if err is not None:
                failures += 1
                print(f"warning: {err}", file=sys.stderr)
            fh.write(text + "\n")
    return 2 if failures else 0


def cmd_bench(args) -> int:
    model = model_mod.load_model(args.model[0])
    corpus = [line.split() for line in _read_lines(args.input)]
    precisions = ["fp32", "int8"] if args.precision == "both" else [args.precision]

    reports = []
    for precision in precisions:
        cfg = decoder_mod.DecodeConfig(beam=args.beam, max_ratio=args.max_ratio,
                                       precision=precision)
        reports.append(bench_mod.run_benchmark(
            model, corpus, cfg, workers=args.threads, repeats=args.repeats))

    ratio = None
    if len(reports) == 2 and reports[0].wpcs > 0:
        ratio = reports[1].wpcs / reports[0].wpcs

    if args.format == "json":
        doc = {"reports": [r.to_dict() for r in reports],
               "speed_ratio_int8_over_fp32": ratio}
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0

    print(f"{'mode':8s} {'words':>8s} {'median s':>10s} {'WPS':>10s} {'WPCS':>10s}")
    for r in reports:
        print(f"{r.precision:8s} {r.total_words:8d} {r.median_seconds:10.3f} "
              f"{r.wps:10.1f} {r.wpcs:10.1f}")
    for r in reports:
        print(f"\nphase profile ({r.precision}):")
        for name, pct in sorted(r.phase_fractions.items(), key=lambda kv: -kv[1]):
            print(f"  {pct:6.2f}%  {name}")
    if ratio is not None:
        print(f"\nspeed ratio int8/fp32 (WPCS): {ratio:.2f}x")
    return 0


def cmd_genmodel(args) -> int:
    params = model_mod.generate_model(
        src_vocab=args.src_vocab, tgt_vocab=args.tgt_vocab, embed=args.embed,
        hidden=args.hidden, seed=args.seed, attn=args.attn_dim,
        readout=args.readout, weight_scale=args.weight_scale,
        s0_mode=args.s0_mode, attention_query=args.attention_query)
    model_mod.save_model(params, args.output)
    total = sum(model_mod._get_tensor(params, n).size
                for n, _ in model_mod.tensor_specs(params.dims))
    print(f"wrote {args.output}: dims={params.dims} parameters={total}")
    return 0


def cmd_compare(args) -> int:
    model = model_mod.load_model(args.model[0])
    sentences = [line.split() for line in _read_lines(args.input)]
    cfg = decoder_mod.DecodeConfig(beam=args.beam, max_ratio=args.max_ratio)
    report = decoder_mod.compare_precisions(model, sentences, cfg)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0
    print(f"sentences:          {report.sentences}")
    print(f"identical outputs:  {report.identical} ({100 * report.identical_fraction:.1f}%)")
    print(f"mean edit distance: {report.mean_edit_distance:.2f}")
    print(f"BLEU int8 vs fp32:  {report.bleu_int8_vs_fp32:.2f}")
    return 0


def cmd_quantize_report(args) -> int:
    model = model_mod.load_model(args.model[0])
    qmodel = model_mod.quantize_model(model)
    stats = [qmodel.stats[k] for k in sorted(qmodel.stats)]
    if args.format == "json":
        print(json.dumps([s.__dict__ for s in stats], indent=2, sort_keys=True))
        return 0
    print(f"{'tensor':16s} {'scale':>12s} {'max|w|':>10s} {'rms err':>10s} {'max err':>10s}")
    for s in stats:
        print(f"{s.name:16s} {s.scale:12.4f} {s.max_abs:10.6f} "
              f"{s.rms_error:10.2e} {s.max_error:10.2e}")
    return 0


def cmd_bleu(args) -> int:
    score = _bleu(_read_lines(args.input), _read_lines(args.reference))
    print(f"{score:.2f}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _add_model_flag(p, required=True):
    p.add_argument("--model", action="append", required=required, default=None,
                   help="model file; repeat the flag to decode with an ensemble")


def _add_decode_flags(p):
    p.add_argument("--precision", choices=["fp32", "int8"], default="fp32")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-ratio", type=float, default=3.0,
                   help="max output length = ceil(ratio * source length) + 1")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="qnmt",
                                  description="8-bit / 32-bit GRU translation engine")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("translate", help="translate a file, one sentence per line")
    _add_model_flag(p)
    _add_decode_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("bench", help="benchmark decoding speed")
    _add_model_flag(p)
    p.add_argument("--precision", choices=["fp32", "int8", "both"], default="both")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-ratio", type=float, default=3.0)
    p.add_argument("--input", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("genmodel", help="generate a seeded random model")
    p.add_argument("--output", required=True)
    p.add_argument("--src-vocab", type=int, required=True)
    p.add_argument("--tgt-vocab", type=int, required=True)
    p.add_argument("--embed", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attn-dim", type=int, default=None)
    p.add_argument("--readout", type=int, default=None)
    p.add_argument("--weight-scale", type=float, default=model_mod.DEFAULT_WEIGHT_SCALE)
    p.add_argument("--s0-mode", choices=["transform", "zero"], default="transform")
    p.add_argument("--attention-query", choices=["current", "previous"], default="current")
    p.set_defaults(fn=cmd_genmodel)

    p = sub.add_parser("compare", help="decode under both precisions and diff")
    _add_model_flag(p)
    p.add_argument("--input", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-ratio", type=float, default=3.0)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("quantize-report", help="per-tensor quantization scales and errors")
    _add_model_flag(p)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(fn=cmd_quantize_report)

    p = sub.add_parser("bleu", help="corpus BLEU of a hypothesis file against a reference")
    p.add_argument("--input", required=True, help="hypothesis file")
    p.add_argument("--reference", required=True)
    p.set_defaults(fn=cmd_bleu)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (QnmtError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
