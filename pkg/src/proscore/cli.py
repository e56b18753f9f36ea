"""Command-line entry point orchestrating the scoring pipeline.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
divergence. Every command is deterministic given its config and seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import assess, dnf, flow, gmm, gop, ivector, pipeline, regress
from .corpus import (CorpusError, SynthConfig, load_corpus, save_corpus,
                     synth_corpus)
from .flow import TrainingDivergence
from .formats import FormatError
from .pipeline import ConfigError

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_corpus_arg(args):
    return load_corpus(args.manifest)


def _train_split_frames(corpus):
    return corpus.frames_for(list(corpus.splits.train_ids))


def cmd_run(args) -> int:
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    result = pipeline.run_pipeline(cfg, force=args.force)
    print(f"report written to {result.report_path}")
    return 0


def cmd_synth(args) -> int:
    synth = SynthConfig(seed=args.seed if args.seed is not None else 7)
    corpus, oracle = synth_corpus(synth)
    manifest = save_corpus(corpus, args.out)
    pipeline._write_oracle(Path(args.out) / "oracle.tsv", oracle)
    print(f"manifest written to {manifest}")
    return 0


def cmd_train_gmm(args) -> int:
    corpus = _load_corpus_arg(args)
    model, _trace = gmm.gmm_train(_train_split_frames(corpus),
                                  args.components, args.iters, args.seed or 0)
    gmm.save_gmm(args.out, model)
    print(f"model written to {args.out}")
    return 0


def cmd_train_ivector(args) -> int:
    corpus = _load_corpus_arg(args)
    ubm = gmm.load_gmm(args.ubm)
    stats = [ivector.ubm_stats(ubm, corpus.features[uid])
             for uid in corpus.splits.train_ids]
    model, _trace = ivector.tmatrix_train(ubm, stats, args.dim, args.iters,
                                          args.seed or 0)
    ivector.save_ivector_model(args.out, model)
    print(f"model written to {args.out}")
    return 0


def _adam_from_args(args) -> flow.AdamConfig:
    return flow.AdamConfig(learning_rate=args.learning_rate,
                           batch_size=args.batch_size, epochs=args.epochs,
                           seed=args.seed or 0)


def cmd_train_flow(args) -> int:
    corpus = _load_corpus_arg(args)
    frames = _train_split_frames(corpus)
    base = flow.build_flow(frames.shape[1], args.layers, args.width,
                           seed=args.seed or 0)
    model, trace = flow.flow_train(base, frames, _adam_from_args(args))
    flow.save_flow(args.out, model)
    if args.trace:
        _write_text(args.trace, "epoch\tnll\n" + "".join(
            f"{i}\t{v:.17g}\n" for i, v in enumerate(trace)))
    print(f"model written to {args.out}")
    return 0


def cmd_train_dnf(args) -> int:
    corpus = _load_corpus_arg(args)
    frames, classes = [], []
    for uid in corpus.splits.train_ids:
        fs = corpus.features[uid]
        cls = dnf.classes_from_mean_scores(
            [corpus.labels[uid].mean_score], args.classes)[0]
        frames.append(fs.frames)
        classes.append(np.full(fs.num_frames, cls, dtype=np.int64))
    model, _trace = dnf.dnf_train(np.vstack(frames), np.concatenate(classes),
                                  _adam_from_args(args),
                                  num_classes=args.classes,
                                  num_layers=args.layers, width=args.width)
    dnf.save_dnf(args.out, model)
    print(f"model written to {args.out}")
    return 0


def cmd_train_svr(args) -> int:
    corpus = _load_corpus_arg(args)
    emb = _read_embeddings(args.embeddings)
    params = regress.SvrParams(C=args.C, epsilon=args.epsilon,
                               kernel=args.kernel, gamma=args.gamma)
    train_ids = [u for u in corpus.splits.train_ids if u in emb]
    if not train_ids:
        raise CorpusError("no train-split utterances in the embeddings file")
    X = np.array([emb[u] for u in train_ids])
    y = np.array([corpus.labels[u].mean_score for u in train_ids])
    model = regress.svr_train(X, y, params, args.seed or 0)
    regress.save_svr(args.out, model)
    print(f"model written to {args.out}")
    return 0


def _model_magic(path) -> str:
    with open(path, "rb") as f:
        return f.read(4).decode("ascii", errors="replace")


def _read_embeddings(path) -> dict:
    emb = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            emb[parts[0]] = np.array([float(v) for v in parts[1:]])
    return emb


def _write_embeddings(path, emb: dict) -> None:
    lines = []
    for uid in sorted(emb):
        vec = "\t".join(f"{v:.17g}" for v in emb[uid])
        lines.append(f"{uid}\t{vec}\n")
    _write_text(path, "".join(lines))


def cmd_embed(args) -> int:
    corpus = _load_corpus_arg(args)
    magic = _model_magic(args.model)
    if magic == ivector.IVECTOR_MAGIC:
        model = ivector.load_ivector_model(args.model)
        emb = {uid: ivector.ivector_infer(
            model, ivector.ubm_stats(model.ubm, fs))[0]
            for uid, fs in corpus.features.items()}
    elif magic == flow.FLOW_MAGIC:
        model = flow.load_flow(args.model)
        emb = {uid: flow.flow_embed(model, fs)
               for uid, fs in corpus.features.items()}
    elif magic == dnf.DNF_MAGIC:
        model = dnf.load_dnf(args.model)
        emb = {uid: dnf.dnf_embed(model, fs)
               for uid, fs in corpus.features.items()}
    else:
        raise CorpusError(f"unknown model file magic in {args.model}")
    _write_embeddings(args.out, emb)
    return 0


def cmd_score(args) -> int:
    corpus = _load_corpus_arg(args)
    ids = sorted(corpus.features)
    if args.split:
        ids = sorted({"train": corpus.splits.train_ids,
                      "dev": corpus.splits.dev_ids,
                      "eval": corpus.splits.eval_ids}[args.split])
    columns = []
    if args.gop:
        vals = {uid: gop.gop_score(corpus.posteriors[uid],
                                   corpus.alignments[uid]).gop for uid in ids}
        columns.append(("gop", vals))
    for model_path in args.model or []:
        magic = _model_magic(model_path)
        if magic == gmm.GMM_MAGIC:
            model = gmm.load_gmm(model_path)
            vals = {uid: gmm.gmm_loglik(model, corpus.features[uid])[1]
                    for uid in ids}
            columns.append(("gmm_loglik", vals))
        elif magic == flow.FLOW_MAGIC:
            model = flow.load_flow(model_path)
            vals = {uid: float(flow.flow_logprob(
                model, corpus.features[uid].frames).mean()) for uid in ids}
            columns.append(("nf_loglik", vals))
        elif magic == dnf.DNF_MAGIC:
            model = dnf.load_dnf(model_path)
            vals = {uid: float(flow.flow_logprob(
                model.backbone, corpus.features[uid].frames).mean())
                for uid in ids}
            columns.append(("dnf_loglik", vals))
        else:
            raise CorpusError(f"unknown model file magic in {model_path}")
    if args.svr:
        if not args.embeddings:
            raise ConfigError("--svr requires --embeddings")
        model = regress.load_svr(args.svr)
        emb = _read_embeddings(args.embeddings)
        vals = {uid: regress.svr_predict(model, emb[uid]) for uid in ids}
        columns.append(("predicted", vals))
    if not columns:
        raise ConfigError("no score columns requested (use --gop/--model/--svr)")
    header = "utterance_id\t" + "\t".join(name for name, _ in columns)
    lines = [header]
    for uid in ids:
        lines.append(uid + "\t" + "\t".join(
            f"{vals[uid]:.17g}" for _, vals in columns))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_fuse(args) -> int:
    table = assess.read_score_table(args.scores)
    dev_table = assess.read_score_table(args.dev_scores)
    if args.lam is None:
        lam, _curve = assess.select_lambda(dev_table, args.grid_step,
                                           args.normalization)
    else:
        lam = args.lam
    stats = (assess.fusion_stats(dev_table)
             if args.normalization == "zscore" else None)
    fused = assess.score_fuse(table,
                              assess.FusionConfig(lam, args.normalization),
                              stats)
    _write_text(args.out, assess.score_table_to_tsv(fused))
    print(f"lambda = {lam:.2f}")
    return 0


def cmd_evaluate(args) -> int:
    corpus = _load_corpus_arg(args)
    table = assess.read_score_table(args.scores)
    rows = assess.evaluate(table, corpus.splits, split_name=args.split)
    _write_text(args.out, assess.report_to_tsv(rows))
    return 0


def cmd_simulate(args) -> int:
    if args.steps < 1:
        raise ConfigError("steps must be >= 1")
    if args.a <= 0:
        raise ConfigError("a must be positive")
    if args.steps == 1:
        deltas = [args.delta_min]
    else:
        deltas = np.linspace(args.delta_min, args.delta_max, args.steps)
    points = gop.competition_sweep(args.a, deltas)
    _write_text(args.out, gop.sweep_to_tsv(points))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proscore",
        description="ASR-free pronunciation proficiency scoring pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None)
        return p

    p = add("run", cmd_run, help="run the full pipeline from a config file")
    p.add_argument("config")
    p.add_argument("--force", action="store_true",
                   help="recompute stages even when cached")

    p = add("synth", cmd_synth, help="generate the synthetic corpus preset")
    p.add_argument("--out", required=True)

    p = add("train-gmm", cmd_train_gmm, help="train the GMM marginal model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int, default=16)
    p.add_argument("--iters", type=int, default=25)

    p = add("train-ivector", cmd_train_ivector, help="train the i-vector extractor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ubm", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--iters", type=int, default=5)

    for name, func in (("train-flow", cmd_train_flow),
                       ("train-dnf", cmd_train_dnf)):
        p = add(name, func, help=f"train the {name.split('-')[1]} model")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--layers", type=int, default=6)
        p.add_argument("--width", type=int, default=48)
        p.add_argument("--epochs", type=int, default=12)
        p.add_argument("--batch-size", type=int, default=256)
        p.add_argument("--learning-rate", type=float, default=0.001)
        if name == "train-flow":
            p.add_argument("--trace", default=None,
                           help="optional epoch/NLL TSV output")
        else:
            p.add_argument("--classes", type=int, default=5)

    p = add("train-svr", cmd_train_svr, help="train the SVR prediction model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--kernel", choices=("linear", "rbf"), default="rbf")
    p.add_argument("--gamma", default="scale")

    p = add("embed", cmd_embed, help="extract utterance embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, help="score utterances into a TSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--gop", action="store_true")
    p.add_argument("--model", action="append")
    p.add_argument("--svr", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--split", choices=("train", "dev", "eval"), default=None)

    p = add("fuse", cmd_fuse, help="score fusion of GOP and prediction")
    p.add_argument("--scores", required=True)
    p.add_argument("--dev-scores", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--grid-step", type=float, default=0.02)
    p.add_argument("--normalization", choices=("zscore", "none"),
                   default="zscore")

    p = add("evaluate", cmd_evaluate, help="PCC report for a score table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--split", choices=("train", "dev", "eval"), default="eval")

    p = add("simulate", cmd_simulate, help="two-Gaussian phone competition sweep")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--delta-min", type=float, default=-1.0)
    p.add_argument("--delta-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=41)
    p.add_argument("--out", default="-")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, regress.SvrError, ValueError) as exc:
        if isinstance(exc, (CorpusError, FormatError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
