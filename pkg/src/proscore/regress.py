"""Epsilon-insensitive support vector regression trained by SMO.

The dual is solved in the 2N-variable (alpha, alpha*) box form with
maximal-violating-pair working-set selection, which is deterministic and
converges to the stated KKT tolerance. Features are standardized
internally with training-set statistics; predictions map new inputs
through the same standardization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats

SVR_MAGIC = "PSVR"
KERNEL_IDS = {"linear": 0, "rbf": 1}
KERNEL_NAMES = {v: k for k, v in KERNEL_IDS.items()}


class SvrError(ValueError):
    pass


@dataclass(frozen=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.1
    kernel: str = "rbf"
    gamma: float | str = "scale"  # "scale" resolves to 1/(d * Var(X))
    tol: float = 1e-3
    max_passes: int = 1000  # pair-update budget is max_passes * N

    def __post_init__(self):
        if self.C <= 0:
            raise SvrError("C must be positive")
        if self.epsilon < 0:
            raise SvrError("epsilon must be non-negative")
        if self.kernel not in KERNEL_IDS:
            raise SvrError(f"unknown kernel {self.kernel!r}")
        if self.gamma != "scale" and float(self.gamma) <= 0:
            raise SvrError("gamma must be positive or 'scale'")


@dataclass(frozen=True)
class SvrModel:
    kernel: str
    C: float
    epsilon: float
    gamma: float  # resolved; unused for the linear kernel
    feat_mean: np.ndarray
    feat_std: np.ndarray
    support_vectors: np.ndarray  # (n_sv, d) in standardized space
    coef: np.ndarray             # beta_i = alpha_i - alpha_i*
    bias: float
    warning: str | None = field(default=None, compare=False)
    dual_objective: float = field(default=float("nan"), compare=False)

    @property
    def dim(self) -> int:
        return self.feat_mean.shape[0]


def _standardize(X, mean, std):
    return (X - mean) / std


def _kernel_matrix(kernel, gamma, A, B):
    if kernel == "linear":
        return A @ B.T
    d2 = ((A ** 2).sum(axis=1)[:, None] + (B ** 2).sum(axis=1)[None, :]
          - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def resolve_gamma(params: SvrParams, X_std: np.ndarray) -> float:
    if params.kernel == "linear":
        return 0.0
    if params.gamma == "scale":
        var = float(X_std.var())
        return 1.0 / (X_std.shape[1] * var) if var > 0 else 1.0
    return float(params.gamma)


def svr_train(X: np.ndarray, y: np.ndarray, params: SvrParams | None = None,
              seed: int = 0) -> SvrModel:
    """Solve the epsilon-SVR dual to KKT tolerance.

    Constant targets yield a constant model (bias = mean, no support
    vectors) with a warning status instead of an error.
    """
    del seed  # pair selection is deterministic; kept for interface stability
    if params is None:
        params = SvrParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise SvrError(f"X must be N x d matching y, got {X.shape} and {y.shape}")
    if X.shape[0] < 2:
        raise SvrError("need at least 2 training points")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SvrError("non-finite training data")

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Xs = _standardize(X, mean, std)
    gamma = resolve_gamma(params, Xs)

    if float(y.var()) == 0.0:
        return SvrModel(params.kernel, params.C, params.epsilon, gamma,
                        mean, std, np.zeros((0, X.shape[1])), np.zeros(0),
                        float(y[0]), warning="constant targets", dual_objective=0.0)

    n = X.shape[0]
    K = _kernel_matrix(params.kernel, gamma, Xs, Xs)
    Kbig = np.concatenate([K, K], axis=0)   # (2n, n)
    s = np.concatenate([np.ones(n), -np.ones(n)])
    t = np.zeros(2 * n)
    # gradient of 0.5 t'Qt + p't with Q_pq = s_p s_q K and p_p = eps - s_p y
    G = params.epsilon - s * np.concatenate([y, y])
    C, tol = params.C, params.tol
    bound_eps = 1e-12

    max_iter = params.max_passes * n
    b = 0.0
    for _ in range(max_iter):
        v = -s * G
        up = ((s > 0) & (t < C - bound_eps)) | ((s < 0) & (t > bound_eps))
        low = ((s > 0) & (t > bound_eps)) | ((s < 0) & (t < C - bound_eps))
        vi = np.where(up, v, -np.inf)
        vj = np.where(low, v, np.inf)
        i = int(vi.argmax())
        j = int(vj.argmin())
        if vi[i] - vj[j] <= tol:
            b = 0.5 * (vi[i] + vj[j])
            break
        ci, cj = i % n, j % n
        eta = max(K[ci, ci] + K[cj, cj] - 2.0 * K[ci, cj], 1e-12)
        sij = s[i] * s[j]
        delta = -(G[i] - sij * G[j]) / eta
        lo_d, hi_d = -t[i], C - t[i]
        if sij > 0:
            lo_d, hi_d = max(lo_d, t[j] - C), min(hi_d, t[j])
        else:
            lo_d, hi_d = max(lo_d, -t[j]), min(hi_d, C - t[j])
        delta = min(max(delta, lo_d), hi_d)
        if delta == 0.0:
            b = 0.5 * (vi[i] + vj[j])
            break
        dt_j = -sij * delta
        t[i] += delta
        t[j] += dt_j
        G += s * (s[i] * delta) * Kbig[:, ci] + s * (s[j] * dt_j) * Kbig[:, cj]
    else:
        v = -s * G
        up = ((s > 0) & (t < C - bound_eps)) | ((s < 0) & (t > bound_eps))
        low = ((s > 0) & (t > bound_eps)) | ((s < 0) & (t < C - bound_eps))
        b = 0.5 * (np.where(up, v, -np.inf).max() + np.where(low, v, np.inf).min())

    beta = t[:n] - t[n:]
    obj = dual_objective(K, y, beta, params.epsilon)
    keep = np.abs(beta) > 1e-10
    return SvrModel(params.kernel, C, params.epsilon, gamma, mean, std,
                    Xs[keep], beta[keep], float(b), dual_objective=obj)


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray,
                   epsilon: float) -> float:
    """Dual value -0.5 b'Kb - eps*sum|b| + y'b (to be maximized)."""
    return float(-0.5 * beta @ K @ beta - epsilon * np.abs(beta).sum() + y @ beta)


def svr_predict(m: SvrModel, x: np.ndarray) -> float:
    """Point prediction sum_i beta_i K(sv_i, x) + b."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.dim,):
        raise SvrError(f"input has shape {x.shape}, expected ({m.dim},)")
    return float(svr_predict_batch(m, x[None, :])[0])


def svr_predict_batch(m: SvrModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.dim:
        raise SvrError(f"inputs must be N x {m.dim}, got {X.shape}")
    Xs = _standardize(X, m.feat_mean, m.feat_std)
    if m.support_vectors.shape[0] == 0:
        return np.full(X.shape[0], m.bias)
    Kx = _kernel_matrix(m.kernel, m.gamma, Xs, m.support_vectors)
    return Kx @ m.coef + m.bias


def kkt_residual(m: SvrModel, X: np.ndarray, y: np.ndarray) -> float:
    """Maximum epsilon-insensitive complementarity violation on (X, y).

    Only meaningful for the training set the model was fitted on; support
    vectors are matched to rows of X by their standardized coordinates.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xs = _standardize(X, m.feat_mean, m.feat_std)
    pred = svr_predict_batch(m, X)
    e = pred - y
    beta = np.zeros(X.shape[0])
    for sv, c in zip(m.support_vectors, m.coef):
        idx = int(np.argmin(((Xs - sv) ** 2).sum(axis=1)))
        beta[idx] += c
    eps, C = m.epsilon, m.C
    worst = 0.0
    for i in range(X.shape[0]):
        bi, ei = beta[i], e[i]
        if abs(bi) <= 1e-10:
            r = max(0.0, abs(ei) - eps)
        elif bi >= C - 1e-8:
            r = max(0.0, ei + eps)
        elif bi <= -C + 1e-8:
            r = max(0.0, eps - ei)
        elif bi > 0:
            r = abs(ei + eps)
        else:
            r = abs(ei - eps)
        worst = max(worst, r)
    return worst


# ---------------------------------------------------------------------------
# serialization (PSVR)


def write_svr(f, m: SvrModel) -> None:
    formats.write_magic(f, SVR_MAGIC)
    formats.write_u32(f, KERNEL_IDS[m.kernel])
    formats.write_f64(f, m.C)
    formats.write_f64(f, m.epsilon)
    formats.write_f64(f, m.gamma)
    formats.write_u32(f, m.dim)
    formats.write_array(f, m.feat_mean)
    formats.write_array(f, m.feat_std)
    formats.write_u32(f, m.support_vectors.shape[0])
    formats.write_array(f, m.support_vectors)
    formats.write_array(f, m.coef)
    formats.write_f64(f, m.bias)


def read_svr(f, path: str = "<stream>") -> SvrModel:
    formats.read_magic(f, SVR_MAGIC, path)
    kernel = KERNEL_NAMES[formats.read_u32(f)]
    C = formats.read_f64(f)
    epsilon = formats.read_f64(f)
    gamma = formats.read_f64(f)
    d = formats.read_u32(f)
    mean = formats.read_array(f, (d,))
    std = formats.read_array(f, (d,))
    n_sv = formats.read_u32(f)
    sv = formats.read_array(f, (n_sv, d))
    coef = formats.read_array(f, (n_sv,))
    bias = formats.read_f64(f)
    return SvrModel(kernel, C, epsilon, gamma, mean, std, sv, coef, bias)


def save_svr(path, m: SvrModel) -> None:
    with open(path, "wb") as f:
        write_svr(f, m)


def load_svr(path) -> SvrModel:
    path = Path(path)
    with open(path, "rb") as f:
        m = read_svr(f, str(path))
        formats.expect_eof(f, str(path))
    return m
