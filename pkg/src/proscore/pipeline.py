"""End-to-end experiment pipeline: synthesize, train, score, fuse, report.

Stages run in dependency order and cache their artifacts on disk keyed by
a content digest of their inputs and config section, so re-running a
config retrains only what changed. All stages are deterministic given the
config and seed.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import assess, dnf, flow, gmm, gop, ivector, regress
from .corpus import (Corpus, CorpusError, SynthConfig, load_corpus,
                     save_corpus, synth_corpus)


class ConfigError(ValueError):
    pass


DEFAULT_SYSTEMS = ("gop", "gmm", "ivector", "nf", "dnf")
DEFAULT_FUSION_MODES = ("score", "feature")


def default_config(work_dir: str = ".") -> dict:
    """The shipped synthetic preset (seed 7, D=16, P=12, 60 speakers)."""
    return {
        "seed": 7,
        "work_dir": work_dir,
        "corpus": {"synth": {}},
        "model_dir": "models",
        "report_dir": "reports",
        "systems": list(DEFAULT_SYSTEMS),
        "fusion": {"modes": list(DEFAULT_FUSION_MODES),
                   "grid_step": 0.02, "normalization": "zscore"},
        "gop": {"mode": "mean-then-log"},
        "gmm": {"components": 16, "iters": 25},
        "ivector": {"dim": 16, "iters": 5, "ubm_components": 2,
                    "ubm_iters": 25},
        "nf": {"layers": 6, "width": 48, "learning_rate": 0.001,
               "batch_size": 256, "epochs": 16},
        "dnf": {"layers": 6, "width": 48, "learning_rate": 0.001,
                "batch_size": 256, "epochs": 16, "classes": 5},
        "svr": {"C": 1.0, "epsilon": 0.1, "kernel": "rbf", "gamma": "scale"},
    }


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    cfg.setdefault("work_dir", str(path.parent))
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if "seed" not in cfg:
        raise ConfigError("missing required field: seed")
    corpus_cfg = cfg.get("corpus")
    if not isinstance(corpus_cfg, dict):
        raise ConfigError("missing required field: corpus")
    if "synth" not in corpus_cfg and "manifest" not in corpus_cfg:
        raise ConfigError("corpus must define either 'synth' or 'manifest'")
    for sys_name in cfg.get("systems", DEFAULT_SYSTEMS):
        if sys_name not in DEFAULT_SYSTEMS:
            raise ConfigError(f"unknown system {sys_name!r}")
    for mode in cfg.get("fusion", {}).get("modes", DEFAULT_FUSION_MODES):
        if mode not in DEFAULT_FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {mode!r}")


def _merged(cfg: dict, key: str) -> dict:
    base = dict(default_config()[key])
    base.update(cfg.get(key, {}))
    return base


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class StageCache:
    """Digest-stamped artifact cache under the model directory."""

    def __init__(self, root: Path, force: bool):
        self.root = root
        self.force = force
        root.mkdir(parents=True, exist_ok=True)

    def run(self, name: str, key: str, artifacts, compute, load):
        """Return load() if the stamp matches, else compute() and stamp."""
        stamp = self.root / f"{name}.digest"
        paths = [self.root / a for a in artifacts]
        if (not self.force and stamp.exists()
                and stamp.read_text() == key
                and all(p.exists() for p in paths)):
            return load()
        result = compute()
        stamp.write_text(key)
        return result


@dataclass
class PipelineResult:
    corpus: Corpus
    oracle: dict | None
    report_rows: list
    report_path: Path
    score_tables: dict      # system -> ScoreTable (fused on eval where applicable)
    lambdas: dict           # system -> selected lambda
    pcc_by_system: dict     # report system name -> eval PCC


def run_pipeline(cfg: dict, force: bool = False) -> PipelineResult:
    validate_config(cfg)
    seed = int(cfg["seed"])
    work = Path(cfg.get("work_dir", "."))
    model_dir = work / cfg.get("model_dir", "models")
    report_dir = work / cfg.get("report_dir", "reports")
    report_dir.mkdir(parents=True, exist_ok=True)
    cache = StageCache(model_dir, force)
    systems = list(cfg.get("systems", DEFAULT_SYSTEMS))

    corpus, oracle, corpus_key = _corpus_stage(cfg, work, seed, force)
    train_ids = list(corpus.splits.train_ids)
    dev_ids = list(corpus.splits.dev_ids)
    eval_ids = list(corpus.splits.eval_ids)
    all_ids = sorted(corpus.features)
    train_frames = corpus.frames_for(train_ids)

    # GOP is needed by every fusion mode, so it always runs
    gop_cfg = _merged(cfg, "gop")
    gop_scores = {
        uid: gop.gop_score(corpus.posteriors[uid], corpus.alignments[uid],
                           gop_cfg["mode"]).gop
        for uid in all_ids if uid in corpus.alignments
    }

    label_means = {uid: corpus.labels[uid].mean_score for uid in corpus.labels}

    report_rows = []
    pcc_by_system = {}
    eval_labels = np.array([label_means[u] for u in eval_ids])

    rater_counts = {len(corpus.labels[u].rater_scores) for u in eval_ids}
    if len(rater_counts) == 1 and rater_counts != {1}:
        ratings = np.array([corpus.labels[u].rater_scores for u in eval_ids],
                           dtype=np.float64)
        human = assess.inter_rater_pcc(ratings)
        report_rows.append(assess.ReportRow("human", "eval", human))
        pcc_by_system["human"] = human
    else:
        warnings.warn("skipping inter-rater PCC: rater counts differ")

    gop_eval = np.array([gop_scores[u] for u in eval_ids])
    gop_pcc = assess.pcc(gop_eval, eval_labels)
    report_rows.append(assess.ReportRow("gop", "eval", gop_pcc))
    pcc_by_system["gop"] = gop_pcc

    # ---- marginal models -------------------------------------------------
    gmm_model = None
    if "gmm" in systems:
        gmm_cfg = _merged(cfg, "gmm")
        key = _digest("gmm", gmm_cfg, corpus_key, seed)
        gmm_model = cache.run(
            "gmm", key, ["gmm.pgmm"],
            lambda: _train_gmm(train_frames, gmm_cfg, seed, model_dir),
            lambda: gmm.load_gmm(model_dir / "gmm.pgmm"))
    if "gmm" in systems:
        scores = {uid: gmm.gmm_loglik(gmm_model, corpus.features[uid])[1]
                  for uid in all_ids}
        val = assess.pcc(np.array([scores[u] for u in eval_ids]), eval_labels)
        report_rows.append(assess.ReportRow("gmm_loglik", "eval", val))
        pcc_by_system["gmm_loglik"] = val

    nf_model = None
    if "nf" in systems:
        nf_cfg = _merged(cfg, "nf")
        key = _digest("nf", nf_cfg, corpus_key, seed)
        nf_model = cache.run(
            "nf", key, ["nf.pnf1"],
            lambda: _train_nf(train_frames, nf_cfg, seed, model_dir),
            lambda: flow.load_flow(model_dir / "nf.pnf1"))
        scores = {uid: float(flow.flow_logprob(nf_model,
                                               corpus.features[uid].frames).mean())
                  for uid in all_ids}
        val = assess.pcc(np.array([scores[u] for u in eval_ids]), eval_labels)
        report_rows.append(assess.ReportRow("nf_loglik", "eval", val))
        pcc_by_system["nf_loglik"] = val

    dnf_model = None
    if "dnf" in systems:
        dnf_cfg = _merged(cfg, "dnf")
        key = _digest("dnf", dnf_cfg, corpus_key, seed)
        dnf_model = cache.run(
            "dnf", key, ["dnf.pdnf"],
            lambda: _train_dnf(corpus, train_ids, dnf_cfg, seed, model_dir),
            lambda: dnf.load_dnf(model_dir / "dnf.pdnf"))

    iv_model = None
    if "ivector" in systems:
        iv_cfg = _merged(cfg, "ivector")
        key = _digest("ivector", iv_cfg, corpus_key, seed)
        iv_model = cache.run(
            "ivector", key, ["ivector.pivm"],
            lambda: _train_ivector(corpus, train_ids, train_frames, iv_cfg,
                                   seed, model_dir),
            lambda: ivector.load_ivector_model(model_dir / "ivector.pivm"))

    # ---- embeddings and prediction models --------------------------------
    embeddings = {}
    if iv_model is not None:
        embeddings["ivector"] = {
            uid: ivector.ivector_infer(
                iv_model, ivector.ubm_stats(iv_model.ubm, corpus.features[uid]))[0]
            for uid in all_ids}
    if nf_model is not None:
        embeddings["nf"] = {uid: flow.flow_embed(nf_model, corpus.features[uid])
                            for uid in all_ids}
    if dnf_model is not None:
        embeddings["dnf"] = {uid: dnf.dnf_embed(dnf_model, corpus.features[uid])
                             for uid in all_ids}

    svr_params = regress.SvrParams(**_merged(cfg, "svr"))
    fusion_cfg = _merged(cfg, "fusion")
    score_tables = {}
    lambdas = {}
    predictions = {}
    for name in ("ivector", "nf", "dnf"):
        if name not in embeddings:
            continue
        emb = embeddings[name]
        Xtr = np.array([emb[u] for u in train_ids])
        ytr = np.array([label_means[u] for u in train_ids])
        svr_model = cache.run(
            f"svr_{name}",
            _digest("svr", _merged(cfg, "svr"), corpus_key, seed, name,
                    _merged(cfg, name if name != "ivector" else "ivector")),
            [f"svr_{name}.psvr"],
            lambda Xtr=Xtr, ytr=ytr, name=name: _train_svr(
                Xtr, ytr, svr_params, seed, model_dir, f"svr_{name}.psvr"),
            lambda name=name: regress.load_svr(model_dir / f"svr_{name}.psvr"))
        Xall = np.array([emb[u] for u in all_ids])
        pred = dict(zip(all_ids, regress.svr_predict_batch(svr_model, Xall)))
        predictions[name] = pred

        val = assess.pcc(np.array([pred[u] for u in eval_ids]), eval_labels)
        report_rows.append(assess.ReportRow(f"{name}_svr", "eval", val))
        pcc_by_system[f"{name}_svr"] = val

    # ---- fusion ----------------------------------------------------------
    modes = fusion_cfg["modes"]
    for name in ("ivector", "nf", "dnf"):
        if name not in predictions:
            continue
        table = assess.ScoreTable(tuple(
            assess.ScoreRow(u, gop_scores[u], predictions[name][u],
                            label_means[u])
            for u in all_ids))
        if "score" in modes:
            dev_table = table.subset(dev_ids)
            lam, _curve = assess.select_lambda(
                dev_table, fusion_cfg["grid_step"], fusion_cfg["normalization"])
            stats = (assess.fusion_stats(dev_table)
                     if fusion_cfg["normalization"] == "zscore" else None)
            fcfg = assess.FusionConfig(lam, fusion_cfg["normalization"])
            fused_eval = assess.score_fuse(table.subset(eval_ids), fcfg, stats)
            val = assess.pcc(fused_eval.column("fused"), eval_labels)
            report_rows.append(assess.ReportRow(
                f"gop+{name}_score_fusion", "eval", val, lam))
            pcc_by_system[f"gop+{name}_score_fusion"] = val
            lambdas[name] = lam
            score_tables[name] = fused_eval
        if "feature" in modes:
            emb = embeddings[name]
            order = train_ids + dev_ids + eval_ids
            fused_X = assess.feature_fuse(
                np.array([emb[u] for u in order]),
                np.array([gop_scores[u] for u in order]))
            by_uid = dict(zip(order, fused_X))
            Xtr = np.array([by_uid[u] for u in train_ids])
            ytr = np.array([label_means[u] for u in train_ids])
            ff_model = regress.svr_train(Xtr, ytr, svr_params, seed)
            Xev = np.array([by_uid[u] for u in eval_ids])
            val = assess.pcc(regress.svr_predict_batch(ff_model, Xev), eval_labels)
            report_rows.append(assess.ReportRow(
                f"gop+{name}_feature_fusion", "eval", val))
            pcc_by_system[f"gop+{name}_feature_fusion"] = val

    report_path = report_dir / "report.tsv"
    report_path.write_text(assess.report_to_tsv(report_rows), encoding="utf-8")
    return PipelineResult(corpus, oracle, report_rows, report_path,
                          score_tables, lambdas, pcc_by_system)


# ---------------------------------------------------------------------------
# stage helpers


def _corpus_stage(cfg, work: Path, seed: int, force: bool):
    corpus_cfg = cfg["corpus"]
    if "synth" in corpus_cfg:
        synth_kwargs = dict(corpus_cfg["synth"])
        synth_kwargs.setdefault("seed", seed)
        try:
            synth = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in synth_kwargs.items()})
        except TypeError as exc:
            raise ConfigError(f"bad synth config: {exc}") from exc
        corpus_dir = work / "corpus"
        manifest = corpus_dir / "manifest.tsv"
        key = _digest("synth", synth_kwargs)
        stamp = corpus_dir / "synth.digest"
        corpus_obj, oracle = synth_corpus(synth)
        if force or not (stamp.exists() and stamp.read_text() == key
                         and manifest.exists()):
            corpus_dir.mkdir(parents=True, exist_ok=True)
            save_corpus(corpus_obj, corpus_dir)
            _write_oracle(corpus_dir / "oracle.tsv", oracle)
            stamp.write_text(key)
        return corpus_obj, oracle, key
    manifest = Path(corpus_cfg["manifest"])
    if not manifest.is_absolute():
        manifest = work / manifest
    if not manifest.exists():
        raise CorpusError(f"corpus manifest not found: {manifest}")
    corpus_obj = load_corpus(manifest)
    return corpus_obj, None, _file_digest(manifest)


def _write_oracle(path, oracle: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("utterance_id\trho\n")
        for uid in sorted(oracle):
            f.write(f"{uid}\t{oracle[uid]:.17g}\n")


def _train_gmm(train_frames, gmm_cfg, seed, model_dir):
    model, _trace = gmm.gmm_train(train_frames, int(gmm_cfg["components"]),
                                  int(gmm_cfg["iters"]), seed + 11)
    gmm.save_gmm(model_dir / "gmm.pgmm", model)
    return model


def _adam_from(section, seed_offset, seed) -> flow.AdamConfig:
    return flow.AdamConfig(learning_rate=float(section["learning_rate"]),
                           batch_size=int(section["batch_size"]),
                           epochs=int(section["epochs"]),
                           seed=seed + seed_offset)


def _train_nf(train_frames, nf_cfg, seed, model_dir):
    adam = _adam_from(nf_cfg, 23, seed)
    base = flow.build_flow(train_frames.shape[1], int(nf_cfg["layers"]),
                           int(nf_cfg["width"]), seed=adam.seed)
    model, _trace = flow.flow_train(base, train_frames, adam)
    flow.save_flow(model_dir / "nf.pnf1", model)
    return model


def _train_dnf(corpus, train_ids, dnf_cfg, seed, model_dir):
    adam = _adam_from(dnf_cfg, 37, seed)
    num_classes = int(dnf_cfg["classes"])
    frames = []
    classes = []
    for uid in train_ids:
        fs = corpus.features[uid]
        cls = dnf.classes_from_mean_scores([corpus.labels[uid].mean_score],
                                           num_classes)[0]
        frames.append(fs.frames)
        classes.append(np.full(fs.num_frames, cls, dtype=np.int64))
    frames = np.vstack(frames)
    classes = np.concatenate(classes)
    # guarantee every class id is populated: unseen classes are collapsed
    # onto the nearest populated one
    present = np.unique(classes)
    remap = {c: int(present[np.abs(present - c).argmin()])
             for c in range(num_classes)}
    classes = np.array([remap[int(c)] for c in classes], dtype=np.int64)
    dense = {c: i for i, c in enumerate(sorted(set(classes.tolist())))}
    classes = np.array([dense[int(c)] for c in classes], dtype=np.int64)
    model, _trace = dnf.dnf_train(frames, classes, adam,
                                  num_classes=len(dense),
                                  num_layers=int(dnf_cfg["layers"]),
                                  width=int(dnf_cfg["width"]))
    dnf.save_dnf(model_dir / "dnf.pdnf", model)
    return model


def _train_ivector(corpus, train_ids, train_frames, iv_cfg, seed, model_dir):
    # the i-vector UBM is trained separately from the marginal GMM so the
    # two systems can use different component counts
    ubm, _ = gmm.gmm_train(train_frames, int(iv_cfg["ubm_components"]),
                           int(iv_cfg["ubm_iters"]), seed + 11)
    stats = [ivector.ubm_stats(ubm, corpus.features[uid]) for uid in train_ids]
    model, _trace = ivector.tmatrix_train(ubm, stats, int(iv_cfg["dim"]),
                                          int(iv_cfg["iters"]), seed + 41)
    ivector.save_ivector_model(model_dir / "ivector.pivm", model)
    return model


def _train_svr(Xtr, ytr, params, seed, model_dir, filename):
    model = regress.svr_train(Xtr, ytr, params, seed)
    regress.save_svr(model_dir / filename, model)
    return model
