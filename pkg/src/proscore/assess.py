"""Score fusion, feature fusion and the PCC evaluation harness.

Score fusion interpolates a GOP score with the SVR prediction after
z-normalizing both on the development split; the interpolation weight is
picked by exhaustive grid search on development PCC. Feature fusion
appends the utterance GOP to the embedding before regression.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .corpus import SplitManifest


class AssessError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRow:
    utterance_id: str
    gop: float
    predicted: float
    label_mean: float
    fused: float | None = None


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        ids = [r.utterance_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise AssessError("duplicate utterance ids in score table")
        for r in self.rows:
            vals = [r.gop, r.predicted, r.label_mean]
            if r.fused is not None:
                vals.append(r.fused)
            if not np.all(np.isfinite(vals)):
                raise AssessError(f"{r.utterance_id}: non-finite score")

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.rows]
        if any(v is None for v in vals):
            raise AssessError(f"column {name!r} not populated")
        return np.array(vals, dtype=np.float64)

    def subset(self, utterance_ids) -> "ScoreTable":
        wanted = set(utterance_ids)
        found = {r.utterance_id for r in self.rows} & wanted
        missing = sorted(wanted - found)
        if missing:
            raise AssessError(f"missing utterances in score table: {missing[:5]}")
        return ScoreTable(tuple(r for r in self.rows if r.utterance_id in wanted))

    @property
    def utterance_ids(self) -> tuple:
        return tuple(r.utterance_id for r in self.rows)


@dataclass(frozen=True)
class FusionConfig:
    lambda_: float
    normalization: str = "zscore"  # fitted on the dev split, or "none"

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise AssessError(f"lambda must lie in [0,1], got {self.lambda_}")
        if self.normalization not in ("zscore", "none"):
            raise AssessError(f"unknown normalization {self.normalization!r}")


def pcc(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise AssessError(f"length mismatch: {xs.shape} vs {ys.shape}")
    if xs.shape[0] < 2:
        raise AssessError("need at least 2 points")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    sx = float(np.sqrt((xc ** 2).sum()))
    sy = float(np.sqrt((yc ** 2).sum()))
    if sx == 0.0 or sy == 0.0:
        raise AssessError("constant input vector")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def fusion_stats(dev_table: ScoreTable) -> dict:
    """Mean/std of the two fusion components on the development split."""
    out = {}
    for name in ("gop", "predicted"):
        col = dev_table.column(name)
        std = float(col.std())
        out[name] = (float(col.mean()), std if std > 0 else 1.0)
    return out


def score_fuse(table: ScoreTable, cfg: FusionConfig,
               norm_stats: dict | None = None) -> ScoreTable:
    """fused = lambda * gop + (1 - lambda) * predicted, after normalization.

    With zscore normalization both components are shifted/scaled by the
    dev-split statistics in `norm_stats`; "none" keeps the raw values.
    """
    if cfg.normalization == "zscore":
        if norm_stats is None:
            raise AssessError("zscore fusion needs dev-split normalization stats")
        gm, gs = norm_stats["gop"]
        pm, ps = norm_stats["predicted"]
    else:
        gm = pm = 0.0
        gs = ps = 1.0
    rows = []
    for r in table.rows:
        g = (r.gop - gm) / gs
        p = (r.predicted - pm) / ps
        rows.append(replace(r, fused=cfg.lambda_ * g + (1.0 - cfg.lambda_) * p))
    return ScoreTable(tuple(rows))


def select_lambda(dev_table: ScoreTable, grid_step: float = 0.02,
                  normalization: str = "zscore"):
    """Grid search for the interpolation weight maximizing dev PCC.

    Returns (best lambda, [(lambda, pcc), ...]); ties break toward the
    smaller lambda.
    """
    if grid_step <= 0:
        raise AssessError("grid_step must be positive")
    labels = dev_table.column("label_mean")
    if float(labels.std()) == 0.0:
        raise AssessError("degenerate dev labels: constant")
    stats = fusion_stats(dev_table) if normalization == "zscore" else None
    grid = np.arange(0.0, 1.0 + grid_step / 2, grid_step)
    grid = np.minimum(grid, 1.0)
    curve = []
    best_lam, best_val = None, -np.inf
    for lam in grid:
        cfg = FusionConfig(float(lam), normalization)
        fused = score_fuse(dev_table, cfg, stats).column("fused")
        val = pcc(fused, labels)
        curve.append((float(lam), val))
        if val > best_val:
            best_lam, best_val = float(lam), val
    return best_lam, curve


def feature_fuse(embeddings: np.ndarray, gop_scores) -> np.ndarray:
    """Append the utterance GOP as one standardized extra column."""
    gop_scores = np.asarray(gop_scores, dtype=np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] != gop_scores.shape[0]:
        raise AssessError(
            f"length mismatch: {embeddings.shape[0]} embeddings vs "
            f"{gop_scores.shape[0]} GOP scores")
    std = float(gop_scores.std())
    col = (gop_scores - gop_scores.mean()) / (std if std > 0 else 1.0)
    return np.hstack([embeddings, col[:, None]])


def inter_rater_pcc(ratings: np.ndarray) -> float:
    """Mean pairwise PCC over rater columns.

    Raters with constant scores are excluded with a warning; fewer than
    two usable raters is an error.
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.ndim != 2 or ratings.shape[1] < 2:
        raise AssessError("need an n x R rating matrix with R >= 2")
    usable = []
    for r in range(ratings.shape[1]):
        if float(ratings[:, r].std()) == 0.0:
            warnings.warn(f"rater {r} has constant scores; excluded")
        else:
            usable.append(r)
    if len(usable) < 2:
        raise AssessError("fewer than 2 non-constant raters")
    vals = []
    for a in range(len(usable)):
        for b in range(a + 1, len(usable)):
            vals.append(pcc(ratings[:, usable[a]], ratings[:, usable[b]]))
    return float(np.mean(vals))


def score_table_to_tsv(table: ScoreTable) -> str:
    has_fused = all(r.fused is not None for r in table.rows)
    header = "utterance_id\tgop\tpredicted\tlabel_mean"
    if has_fused:
        header += "\tfused"
    lines = [header]
    for r in table.rows:
        line = f"{r.utterance_id}\t{r.gop:.17g}\t{r.predicted:.17g}\t{r.label_mean:.17g}"
        if has_fused:
            line += f"\t{r.fused:.17g}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def read_score_table(path) -> ScoreTable:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        expected = ["utterance_id", "gop", "predicted", "label_mean"]
        if header[:4] != expected or len(header) > 5:
            raise AssessError(f"{path}: unexpected score table header {header}")
        has_fused = len(header) == 5
        rows = []
        for lineno, line in enumerate(f, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(header):
                raise AssessError(f"{path}:{lineno}: wrong column count")
            fused = float(parts[4]) if has_fused else None
            rows.append(ScoreRow(parts[0], float(parts[1]), float(parts[2]),
                                 float(parts[3]), fused))
    return ScoreTable(tuple(rows))


# ---------------------------------------------------------------------------
# report generation


@dataclass(frozen=True)
class ReportRow:
    system: str
    split: str
    pcc: float
    lambda_: float | None = None


def evaluate(table: ScoreTable, split: SplitManifest,
             system_prefix: str = "", lambda_: float | None = None,
             split_name: str = "eval") -> list:
    """PCC of each populated score column against labels on the eval split."""
    ids = {"train": split.train_ids, "dev": split.dev_ids,
           "eval": split.eval_ids}[split_name]
    sub = table.subset(ids)
    labels = sub.column("label_mean")
    rows = []
    for name in ("gop", "predicted", "fused"):
        try:
            col = sub.column(name)
        except AssessError:
            continue
        system = f"{system_prefix}{name}" if system_prefix else name
        rows.append(ReportRow(system, split_name, pcc(col, labels),
                              lambda_ if name == "fused" else None))
    return rows


def report_to_tsv(rows) -> str:
    """TSV with columns system, split, pcc, lambda (lambda may be empty)."""
    lines = ["system\tsplit\tpcc\tlambda"]
    for r in rows:
        lam = "" if r.lambda_ is None else f"{r.lambda_:.2f}"
        lines.append(f"{r.system}\t{r.split}\t{r.pcc:.6f}\t{lam}")
    return "\n".join(lines) + "\n"
