"""i-vector extractor: a low-rank mixture-of-linear-Gaussians model.

The UBM (a trained GMM) provides frame responsibilities; utterances are
summarized by zeroth/first-order Baum-Welch statistics. The total
variability loadings are trained by EM over a standard-normal latent z,
and the posterior mean of z given an utterance's statistics is its
i-vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np

from . import formats
from .corpus import FeatureSequence
from .gmm import GmmModel, read_gmm, responsibilities, write_gmm

IVECTOR_MAGIC = "PIVM"


class IVectorError(ValueError):
    pass


@dataclass(frozen=True)
class BaumWelchStats:
    utterance_id: str
    zeroth: np.ndarray          # (K,) occupancy counts N_k
    first_centered: np.ndarray  # (K, D) sum_t gamma_tk * (o_t - m_k)

    def __post_init__(self):
        z = np.asarray(self.zeroth, dtype=np.float64)
        fc = np.asarray(self.first_centered, dtype=np.float64)
        object.__setattr__(self, "zeroth", z)
        object.__setattr__(self, "first_centered", fc)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(fc))):
            raise IVectorError(f"{self.utterance_id}: non-finite statistics")
        if np.any(z < 0):
            raise IVectorError(f"{self.utterance_id}: negative occupancy")


@dataclass(frozen=True)
class IVectorModel:
    ubm: GmmModel
    loadings: np.ndarray  # (K, D, R)

    def __post_init__(self):
        T = np.asarray(self.loadings, dtype=np.float64)
        object.__setattr__(self, "loadings", T)
        K, D, R = T.shape
        if (K, D) != (self.ubm.num_components, self.ubm.dim):
            raise IVectorError("loadings do not match the UBM shape")
        if R > K * D:
            raise IVectorError(f"i-vector dim R={R} must be <= K*D={K * D}")

    @property
    def dim(self) -> int:
        return self.loadings.shape[2]


def ubm_stats(m: GmmModel, fs: FeatureSequence) -> BaumWelchStats:
    """Zeroth and centered first-order statistics under the UBM."""
    if fs.dim != m.dim:
        raise IVectorError(f"{fs.utterance_id}: dim {fs.dim} vs UBM dim {m.dim}")
    gamma = responsibilities(m, fs.frames)            # (T, K)
    zeroth = gamma.sum(axis=0)
    first = gamma.T @ fs.frames - zeroth[:, None] * m.means
    return BaumWelchStats(fs.utterance_id, zeroth, first)


def _posterior(loadings, inv_var, st: BaumWelchStats):
    """Posterior precision L and mean of z given one utterance's stats."""
    K, D, R = loadings.shape
    L = np.eye(R)
    b = np.zeros(R)
    for k in range(K):
        TS = loadings[k] * inv_var[k][:, None]        # Sigma_k^-1 T_k, (D, R)
        L += st.zeroth[k] * (loadings[k].T @ TS)
        b += TS.T @ st.first_centered[k]
    return L, b


def ivector_infer(m: IVectorModel, st: BaumWelchStats):
    """Posterior mean of z (the i-vector) and its precision matrix L."""
    inv_var = 1.0 / m.ubm.variances
    L, b = _posterior(m.loadings, inv_var, st)
    z = np.linalg.solve(L, b)
    return z, L


def tmatrix_train(ubm: GmmModel, stats: list, R: int, iters: int, seed: int):
    """EM training of the loading matrices; returns (model, objective trace).

    The trace holds the per-iteration total log-evidence of the statistics
    (up to loading-independent constants) and is non-decreasing.
    """
    if iters < 1:
        raise IVectorError("iters must be >= 1")
    K, D = ubm.num_components, ubm.dim
    rng = np.random.default_rng(seed)
    # zero loadings are a degenerate EM fixed point, so start from small noise
    loadings = 0.1 * rng.standard_normal((K, D, R))
    inv_var = 1.0 / ubm.variances

    def objective(T):
        total = 0.0
        for st in stats:
            L, b = _posterior(T, inv_var, st)
            zbar = np.linalg.solve(L, b)
            sign, logdet = np.linalg.slogdet(L)
            total += -0.5 * logdet + 0.5 * float(b @ zbar)
        return total

    trace = [objective(loadings)]
    for _ in range(iters):
        A = np.zeros((K, R, R))
        C = np.zeros((K, D, R))
        for st in stats:
            L, b = _posterior(loadings, inv_var, st)
            cov = np.linalg.inv(L)
            zbar = cov @ b
            Ezz = cov + np.outer(zbar, zbar)
            A += st.zeroth[:, None, None] * Ezz[None, :, :]
            C += st.first_centered[:, :, None] * zbar[None, None, :]
        new = np.empty_like(loadings)
        for k in range(K):
            try:
                new[k] = np.linalg.solve(A[k].T, C[k].T).T
            except np.linalg.LinAlgError as exc:
                raise IVectorError(
                    f"singular accumulator for component {k}") from exc
        loadings = new
        trace.append(objective(loadings))
    return IVectorModel(ubm, loadings), trace


# ---------------------------------------------------------------------------
# serialization (PIVM)


def write_ivector_model(f, m: IVectorModel) -> None:
    K, D, R = m.loadings.shape
    formats.write_magic(f, IVECTOR_MAGIC)
    formats.write_u32(f, K)
    formats.write_u32(f, D)
    formats.write_u32(f, R)
    formats.write_blob(f, formats.to_bytes(write_gmm, m.ubm))
    formats.write_array(f, m.loadings)
    formats.write_array(f, m.ubm.variances)


def read_ivector_model(f, path: str = "<stream>") -> IVectorModel:
    formats.read_magic(f, IVECTOR_MAGIC, path)
    K = formats.read_u32(f)
    D = formats.read_u32(f)
    R = formats.read_u32(f)
    ubm = read_gmm(BytesIO(formats.read_blob(f)), path)
    loadings = formats.read_array(f, (K, D, R))
    formats.read_array(f, (K, D))  # covariances, redundant with the UBM blob
    return IVectorModel(ubm, loadings)


def save_ivector_model(path, m: IVectorModel) -> None:
    with open(path, "wb") as f:
        write_ivector_model(f, m)


def load_ivector_model(path) -> IVectorModel:
    path = Path(path)
    with open(path, "rb") as f:
        m = read_ivector_model(f, str(path))
        formats.expect_eof(f, str(path))
    return m
