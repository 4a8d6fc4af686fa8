"""Command-line entry points tying the pipeline together.

Every subcommand writes its outputs under --out together with a manifest
recording the config hash, the effective seeds, and the SHA-256 of every
output file, so a fixed config and seed reproduce every output byte.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import dataio, encoder, priming, simeval, textmodels, vge, world

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps the subparser from clobbering values the main parser
    # already consumed (the flags work both before and after the command).
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="key=value run configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the active section's seed")
    parser = argparse.ArgumentParser(
        prog="vgekit", parents=[common],
        description="Grounded-embedding pipeline: train, extract, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=lambda **kw: argparse.ArgumentParser(
                                    parents=[common], **kw))

    p = sub.add_parser("gen-world", help="generate a synthetic grounded world")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-grounded", help="train the retrieval encoder")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--dev-corpus", type=Path, default=None,
                   help="held-out captions scored for recall after each epoch")
    p.add_argument("--dev-features", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-text", help="train a text-only baseline")
    p.add_argument("method", choices=["sgns", "fasttext", "glove"])
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("extract-vge", help="extract word embeddings from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--layer", choices=["bottleneck", "input"], default="bottleneck")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval-sim", help="similarity-judgement experiment")
    p.add_argument("--vectors", action="append", default=[], metavar="NAME=PATH",
                   required=True)
    p.add_argument("--dataset", action="append", default=[], type=Path,
                   required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--control", action="append", default=[],
                   help="control table name, or 'a+b' for a joint block")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval-priming", help="priming regression experiment")
    p.add_argument("--vectors", action="append", default=[], metavar="NAME=PATH",
                   required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--text-model", action="append", default=[],
                   help="text model fitted on its own against the baseline")
    p.add_argument("--control", action="append", default=[],
                   help="stacked control block for the LLR test ('a' or 'a+b')")
    p.add_argument("--spp", type=Path, required=True)
    p.add_argument("--lexicon", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="merge long-format eval outputs")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _load_config(args) -> dataio.RunConfig:
    config = getattr(args, "config", None)
    if config is not None:
        return dataio.load_config(config)
    return dataio.RunConfig.default()


def _parse_named(pairs: list[str]) -> dict[str, Path]:
    out = {}
    for item in pairs:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ValueError(f"--vectors expects NAME=PATH, got {item!r}")
        out[name] = Path(path)
    return out


def _cmd_gen_world(args, cfg: dataio.RunConfig) -> int:
    spec = cfg.world
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    w = world.generate_world(spec)
    from .corpus import ImageFeatureStore

    dataio.save_corpus(w.corpus, out / "corpus.tsv")
    dataio.save_image_features(
        ImageFeatureStore(w.corpus.feature_dim, w.corpus.features),
        out / "features.tsv")
    dataio.save_sim_dataset(w.sim_dataset, out / "similarity.tsv")
    dataio.save_spp(w.trials, out / "priming.csv")
    dataio.save_lexicon(w.lexicon, out / "lexicon.tsv")
    dataio.write_manifest(out, "gen-world", cfg, {"world": spec.seed}, {
        "corpus.tsv": out / "corpus.tsv",
        "features.tsv": out / "features.tsv",
        "similarity.tsv": out / "similarity.tsv",
        "priming.csv": out / "priming.csv",
        "lexicon.tsv": out / "lexicon.tsv",
    })
    print(f"world written to {out}")
    return 0


def _cmd_train_grounded(args, cfg: dataio.RunConfig) -> int:
    train_cfg = cfg.grounded
    if getattr(args, "seed", None) is not None:
        train_cfg.seed = args.seed
    corpus = dataio.load_corpus(args.corpus)
    store = dataio.load_image_features(args.features)
    corpus = corpus.with_features(store)
    dev = None
    if args.dev_corpus is not None:
        if args.dev_features is None:
            raise ValueError("--dev-corpus requires --dev-features")
        dev = dataio.load_corpus(args.dev_corpus).with_features(
            dataio.load_image_features(args.dev_features))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    params, logrec = encoder.train(corpus, train_cfg, dev=dev)
    encoder.save_checkpoint(params, out / "model.ckpt")
    dataio.save_vocab(params.vocab, out / "vocab.tsv")
    with open(out / "trainlog.tsv", "w", encoding="utf-8") as f:
        f.write("epoch\tmean_loss\trecall_at\n")
        for e in logrec.epochs:
            recall = ";".join(f"{k}:{v:.4f}" for k, v in sorted(e.recall_at.items()))
            f.write(f"{e.epoch}\t{e.mean_loss:.6f}\t{recall}\n")
        f.write("\nstep\tlr\n")
        for t, lr in enumerate(logrec.step_lrs):
            f.write(f"{t}\t{lr:.9g}\n")
    dataio.write_manifest(out, "train-grounded", cfg, {"grounded": train_cfg.seed}, {
        "model.ckpt": out / "model.ckpt",
        "vocab.tsv": out / "vocab.tsv",
        "trainlog.tsv": out / "trainlog.tsv",
    })
    print(f"final epoch loss {logrec.epochs[-1].mean_loss:.4f}; model in {out}")
    return 0


def _cmd_train_text(args, cfg: dataio.RunConfig) -> int:
    corpus = dataio.load_corpus(args.corpus)
    section = {"sgns": cfg.sgns, "fasttext": cfg.fasttext, "glove": cfg.glove}
    method_cfg = section[args.method]
    if getattr(args, "seed", None) is not None:
        method_cfg.seed = args.seed
    if args.method == "sgns":
        table = textmodels.train_sgns(corpus, method_cfg)
    elif args.method == "fasttext":
        table = textmodels.train_fasttext(corpus, method_cfg)
    else:
        counts = textmodels.build_cooccurrence(corpus, method_cfg.window)
        table = textmodels.train_glove(counts, method_cfg)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.method}.txt"
    dataio.save_vectors(table, path)
    dataio.write_manifest(out, f"train-text {args.method}", cfg,
                          {args.method: method_cfg.seed},
                          {path.name: path})
    print(f"{len(table)} vectors written to {path}")
    return 0


def _cmd_extract_vge(args, cfg: dataio.RunConfig) -> int:
    vocab = dataio.load_vocab(args.vocab)
    params = encoder.load_checkpoint(args.checkpoint, vocab)
    corpus = dataio.load_corpus(args.corpus)
    if args.layer == "bottleneck":
        table = vge.extract_vges(params, corpus)
        name = "vge.txt"
    else:
        table = vge.extract_input_embeddings(params)
        name = "input_embeddings.txt"
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_vectors(table, out / name)
    dataio.write_manifest(out, f"extract-vge {args.layer}", cfg, {},
                          {name: out / name})
    print(f"{len(table)} vectors written to {out / name}")
    return 0


def _parse_blocks(specs: list[str]) -> list[tuple[str, ...]]:
    return [tuple(s.split("+")) for s in specs]


def _cmd_eval_sim(args, cfg: dataio.RunConfig) -> int:
    tables = {name: dataio.load_vectors(path)
              for name, path in _parse_named(args.vectors).items()}
    datasets = [dataio.load_sim_dataset(path) for path in args.dataset]
    plan = simeval.ControlPlan(target=args.target,
                               controls=_parse_blocks(args.control),
                               fdr_q=cfg.eval.fdr_q)
    report = simeval.run_similarity_experiment(tables, datasets, plan)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(simeval.report_tsv(report), encoding="utf-8")
    (out / "report_long.csv").write_text(simeval.report_long_csv(report),
                                         encoding="utf-8")
    dataio.write_manifest(out, "eval-sim", cfg, {}, {
        "report.tsv": out / "report.tsv",
        "report_long.csv": out / "report_long.csv",
    })
    print(f"similarity report in {out}")
    return 0


def _cmd_eval_priming(args, cfg: dataio.RunConfig) -> int:
    tables = {name: dataio.load_vectors(path)
              for name, path in _parse_named(args.vectors).items()}
    corpus = dataio.load_corpus(args.corpus)
    lexicon = dataio.load_lexicon(args.lexicon)
    trials = dataio.load_spp(args.spp)
    table = priming.preprocess_spp(trials, set(corpus.vocab.words), lexicon,
                                   cfg.priming)
    plan = priming.PrimingPlan(vge=args.target,
                               text_models=list(args.text_model),
                               stacked=_parse_blocks(args.control))
    report = priming.run_priming_experiment(table, tables, plan)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "priming.tsv").write_text(priming.priming_report_tsv(report),
                                     encoding="utf-8")
    (out / "priming_long.csv").write_text(priming.priming_report_long_csv(report),
                                          encoding="utf-8")
    dataio.write_manifest(out, "eval-priming", cfg, {}, {
        "priming.tsv": out / "priming.tsv",
        "priming_long.csv": out / "priming_long.csv",
    })
    print(f"priming report in {out} ({report.n_rows} rows)")
    return 0


def _cmd_report(args, cfg: dataio.RunConfig) -> int:
    rows = ["run,dataset_or_model,statistic,value,significance_or_p"]
    for run_dir in args.runs:
        for name in ("report_long.csv", "priming_long.csv"):
            path = run_dir / name
            if not path.exists():
                continue
            lines = path.read_text(encoding="utf-8").splitlines()[1:]
            for line in lines:
                parts = line.split(",")
                if name == "report_long.csv":
                    rows.append(f"{run_dir.name},{parts[0]}/{parts[1]},"
                                f"{parts[2]},{parts[3]},{parts[4]}")
                else:
                    rows.append(f"{run_dir.name},{parts[0]},{parts[1]},"
                                f"{parts[2]},{parts[3]}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"combined report in {args.out}")
    return 0


_HANDLERS = {
    "gen-world": _cmd_gen_world,
    "train-grounded": _cmd_train_grounded,
    "train-text": _cmd_train_text,
    "extract-vge": _cmd_extract_vge,
    "eval-sim": _cmd_eval_sim,
    "eval-priming": _cmd_eval_priming,
    "report": _cmd_report,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        return _HANDLERS[args.command](args, cfg)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(cli_main())
