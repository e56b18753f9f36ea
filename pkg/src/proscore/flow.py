"""Affine-coupling normalizing flow (RealNVP-style) in plain numpy.

Each coupling layer leaves one half of the dimensions untouched and
scales/shifts the other half as a function of the first, so both the
inverse and the Jacobian log-determinant are exact. Log-densities follow
the change-of-variables formula against a standard-normal base prior;
training minimizes mean negative log-likelihood with Adam using
hand-written reverse-mode gradients.

The final linear layers of the coupling networks are zero-initialized, so
a fresh model is exactly the identity map. Scale outputs pass through
tanh times a learnable cap (init 2.0) to keep log-determinants bounded.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import formats
from .corpus import FeatureSequence

FLOW_MAGIC = "PNF1"
LOG_2PI = float(np.log(2.0 * np.pi))


class FlowError(ValueError):
    pass


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0,1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


class CouplingNet:
    """Two-hidden-layer tanh perceptron used for scale/shift prediction."""

    def __init__(self, w1, b1, w2, b2, w3, b3):
        self.w1, self.b1 = w1, b1
        self.w2, self.b2 = w2, b2
        self.w3, self.b3 = w3, b3

    @classmethod
    def create(cls, d_in: int, d_out: int, width: int, rng) -> "CouplingNet":
        w1 = rng.standard_normal((width, d_in)) / np.sqrt(max(d_in, 1))
        w2 = rng.standard_normal((width, width)) / np.sqrt(width)
        # zero final layer -> the network starts as the constant 0
        w3 = np.zeros((d_out, width))
        return cls(w1, np.zeros(width), w2, np.zeros(width), w3, np.zeros(d_out))

    def forward(self, x):
        h1 = np.tanh(x @ self.w1.T + self.b1)
        h2 = np.tanh(h1 @ self.w2.T + self.b2)
        out = h2 @ self.w3.T + self.b3
        return out, (x, h1, h2)

    def backward(self, cache, dout):
        x, h1, h2 = cache
        dw3 = dout.T @ h2
        db3 = dout.sum(axis=0)
        dh2 = (dout @ self.w3) * (1.0 - h2 ** 2)
        dw2 = dh2.T @ h1
        db2 = dh2.sum(axis=0)
        dh1 = (dh2 @ self.w2) * (1.0 - h1 ** 2)
        dw1 = dh1.T @ x
        db1 = dh1.sum(axis=0)
        dx = dh1 @ self.w1
        return dx, [dw1, db1, dw2, db2, dw3, db3]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def set_params(self, arrays):
        self.w1, self.b1, self.w2, self.b2, self.w3, self.b3 = arrays


class CouplingLayer:
    """y_A = x_A;  y_B = x_B * exp(s(x_A)) + t(x_A);  log|det| = sum s."""

    def __init__(self, mask, scale_net: CouplingNet, shift_net: CouplingNet,
                 cap: float = 2.0):
        self.mask = np.asarray(mask, dtype=bool)
        self.scale_net = scale_net
        self.shift_net = shift_net
        self.cap = np.asarray(float(cap))

    @classmethod
    def create(cls, mask, width: int, rng, cap: float = 2.0) -> "CouplingLayer":
        mask = np.asarray(mask, dtype=bool)
        d_in = int(mask.sum())
        d_out = int((~mask).sum())
        if d_in == 0 or d_out == 0:
            raise FlowError("coupling mask must split dimensions into two parts")
        return cls(mask,
                   CouplingNet.create(d_in, d_out, width, rng),
                   CouplingNet.create(d_in, d_out, width, rng),
                   cap)

    def _scale_shift(self, a):
        raw, sc_cache = self.scale_net.forward(a)
        th = np.tanh(raw)
        s = float(self.cap) * th
        t, sh_cache = self.shift_net.forward(a)
        return s, t, th, sc_cache, sh_cache

    def forward(self, x):
        a = x[:, self.mask]
        s, t, *_ = self._scale_shift(a)
        y = x.copy()
        y[:, ~self.mask] = x[:, ~self.mask] * np.exp(s) + t
        return y, s.sum(axis=1)

    def inverse(self, y):
        x, sum_s, _ = self.inverse_cached(y)
        return x, -sum_s

    def inverse_cached(self, y):
        a = y[:, self.mask]
        s, t, th, sc_cache, sh_cache = self._scale_shift(a)
        exp_neg = np.exp(-s)
        x = y.copy()
        xb = (y[:, ~self.mask] - t) * exp_neg
        x[:, ~self.mask] = xb
        cache = (th, sc_cache, sh_cache, exp_neg, xb)
        return x, s.sum(axis=1), cache

    def backward_inverse(self, cache, gx, weight):
        """Backprop through inverse_cached.

        `gx` is dLoss/d(inverse output); `weight` is the direct dLoss/ds_ij
        coefficient coming from the +sum(s) term of the NLL. Returns
        dLoss/d(inverse input) and the parameter gradients.
        """
        th, sc_cache, sh_cache, exp_neg, xb = cache
        gxb = gx[:, ~self.mask]
        gs = -gxb * xb + weight
        gt = -gxb * exp_neg
        graw = gs * float(self.cap) * (1.0 - th ** 2)
        gcap = np.asarray((gs * th).sum())
        ga_s, g_scale = self.scale_net.backward(sc_cache, graw)
        ga_t, g_shift = self.shift_net.backward(sh_cache, gt)
        gy = np.empty_like(gx)
        gy[:, ~self.mask] = gxb * exp_neg
        gy[:, self.mask] = gx[:, self.mask] + ga_s + ga_t
        return gy, g_scale + g_shift + [gcap]

    def params(self):
        return self.scale_net.params() + self.shift_net.params() + [self.cap]

    def set_params(self, arrays):
        self.scale_net.set_params(arrays[:6])
        self.shift_net.set_params(arrays[6:12])
        self.cap = arrays[12]

    @property
    def width(self) -> int:
        return self.scale_net.b1.shape[0]


class FlowModel:
    """Stack of coupling layers; forward maps latent to data space."""

    def __init__(self, layers, dim: int):
        self.layers = list(layers)
        self.dim = dim

    def forward(self, batch):
        out = batch
        logdet = np.zeros(batch.shape[0])
        for i, layer in enumerate(self.layers):
            out, ld = layer.forward(out)
            if not np.all(np.isfinite(out)):
                raise FlowError(f"non-finite activations in layer {i} (forward)")
            logdet += ld
        return out, logdet

    def inverse(self, batch):
        out = batch
        logdet = np.zeros(batch.shape[0])
        for i, layer in zip(range(len(self.layers) - 1, -1, -1),
                            reversed(self.layers)):
            out, ld = layer.inverse(out)
            if not np.all(np.isfinite(out)):
                raise FlowError(f"non-finite activations in layer {i} (inverse)")
            logdet += ld
        return out, logdet

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def set_params(self, arrays):
        per = 13
        for i, layer in enumerate(self.layers):
            layer.set_params(arrays[i * per:(i + 1) * per])

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params())


def alternating_masks(dim: int, count: int):
    """Half/half masks, swapping halves between consecutive layers."""
    if dim < 2:
        raise FlowError("a coupling flow needs at least 2 dimensions")
    half = dim // 2
    base = np.zeros(dim, dtype=bool)
    base[:half] = True
    return [base.copy() if i % 2 == 0 else ~base for i in range(count)]


def build_flow(dim: int, num_layers: int = 10, width: int = 64,
               seed: int = 0, cap: float = 2.0) -> FlowModel:
    """Identity-initialized flow with alternating half masks."""
    rng = np.random.default_rng(seed)
    layers = [CouplingLayer.create(mask, width, rng, cap)
              for mask in alternating_masks(dim, num_layers)]
    return FlowModel(layers, dim)


def flow_transform(m: FlowModel, direction: str, batch: np.ndarray):
    """Apply f (forward, latent->data) or f^-1 (inverse) to a batch.

    Returns the images and the exact per-row log|det| of the applied map
    with respect to its input.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != m.dim:
        raise FlowError(f"batch must be N x {m.dim}, got {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise FlowError("non-finite batch input")
    if direction == "forward":
        return m.forward(batch)
    if direction == "inverse":
        return m.inverse(batch)
    raise FlowError(f"unknown direction {direction!r}")


def flow_logprob(m: FlowModel, batch: np.ndarray) -> np.ndarray:
    """ln p(o) = ln N(f^-1(o); 0, I) + ln|det df^-1/do| per row."""
    z, logdet = flow_transform(m, "inverse", batch)
    base = -0.5 * (z ** 2).sum(axis=1) - 0.5 * m.dim * LOG_2PI
    return base + logdet


def flow_embed(m: FlowModel, fs: FeatureSequence) -> np.ndarray:
    """Utterance embedding: mean of the latent images of the frames."""
    if fs.num_frames < 1:
        raise FlowError(f"{fs.utterance_id}: empty feature sequence")
    z, _ = flow_transform(m, "inverse", fs.frames)
    return z.mean(axis=0)


# ---------------------------------------------------------------------------
# training


def nll_and_grads(m: FlowModel, batch: np.ndarray, prior_means=None):
    """Mean NLL of the batch, gradients for all flow params, and residuals.

    `prior_means` optionally gives a per-row Gaussian prior mean (used by
    the discriminative variant); the returned residuals z - mu let the
    caller form gradients for those means.
    """
    n = batch.shape[0]
    out = batch
    caches = []
    sum_s_total = np.zeros(n)
    for layer in reversed(m.layers):
        out, sum_s, cache = layer.inverse_cached(out)
        caches.append((layer, cache))
        sum_s_total += sum_s
    z = out
    mu = np.zeros_like(z) if prior_means is None else prior_means
    resid = z - mu
    loss = float((0.5 * (resid ** 2).sum(axis=1)
                  + 0.5 * m.dim * LOG_2PI + sum_s_total).mean())

    g = resid / n
    weight = 1.0 / n
    per_layer_grads = {}
    for layer, cache in reversed(caches):
        g, grads = layer.backward_inverse(cache, g, weight)
        per_layer_grads[id(layer)] = grads
    all_grads = []
    for layer in m.layers:
        all_grads.extend(per_layer_grads[id(layer)])
    return loss, all_grads, resid


class Adam:
    """Adam over a list of parameter arrays (updates in place)."""

    def __init__(self, params, cfg: AdamConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = cfg.beta1 * self.m[i] + (1 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1 - cfg.beta2) * g ** 2
            mhat = self.m[i] / (1 - cfg.beta1 ** self.t)
            vhat = self.v[i] / (1 - cfg.beta2 ** self.t)
            p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)


def train_core(m: FlowModel, frames: np.ndarray, cfg: AdamConfig,
               class_means=None, frame_class=None, train_means: bool = False):
    """Shared minibatch NLL training loop for NF and DNF.

    Mutates `m` (and `class_means` when trainable) in place; returns the
    per-epoch full-data mean NLL trace.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    if n < cfg.batch_size:
        raise FlowError(f"need at least batch_size={cfg.batch_size} frames, got {n}")
    params = m.params()
    if train_means:
        params = params + [class_means]
    opt = Adam(params, cfg)
    rng = np.random.default_rng(cfg.seed)

    def full_nll():
        mu = None if class_means is None else class_means[frame_class]
        loss, _, _ = nll_and_grads(m, frames, mu)
        return loss

    trace = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            batch = frames[idx]
            if class_means is None:
                mu = None
            else:
                mu = class_means[frame_class[idx]]
            loss, grads, resid = nll_and_grads(m, batch, mu)
            if not np.isfinite(loss):
                raise TrainingDivergence(epoch)
            if train_means:
                gmu = np.zeros_like(class_means)
                np.add.at(gmu, frame_class[idx], -resid / len(idx))
                grads = grads + [gmu]
            # params hold references into the model, so the step is in place
            opt.step(params, grads)
        epoch_nll = full_nll()
        if not np.isfinite(epoch_nll):
            raise TrainingDivergence(epoch)
        trace.append(epoch_nll)
    return trace


def flow_train(m: FlowModel, frames: np.ndarray, cfg: AdamConfig):
    """Maximum-likelihood training; returns (trained copy, NLL trace)."""
    trained = copy.deepcopy(m)
    trace = train_core(trained, frames, cfg)
    return trained, trace


# ---------------------------------------------------------------------------
# serialization (PNF1)


def write_flow(f, m: FlowModel) -> None:
    formats.write_magic(f, FLOW_MAGIC)
    formats.write_u32(f, m.dim)
    formats.write_u32(f, len(m.layers))
    for layer in m.layers:
        formats.write_u32(f, layer.width)
        f.write(layer.mask.astype(np.uint8).tobytes())
        formats.write_f64(f, float(layer.cap))
        for net in (layer.scale_net, layer.shift_net):
            for arr in net.params():
                formats.write_array(f, arr)


def read_flow(f, path: str = "<stream>") -> FlowModel:
    formats.read_magic(f, FLOW_MAGIC, path)
    dim = formats.read_u32(f)
    count = formats.read_u32(f)
    layers = []
    for _ in range(count):
        width = formats.read_u32(f)
        mask_raw = f.read(dim)
        if len(mask_raw) != dim:
            raise formats.FormatError(f"{path}: truncated mask")
        mask = np.frombuffer(mask_raw, dtype=np.uint8).astype(bool)
        cap = formats.read_f64(f)
        d_in = int(mask.sum())
        d_out = dim - d_in
        nets = []
        for _ in range(2):
            w1 = formats.read_array(f, (width, d_in))
            b1 = formats.read_array(f, (width,))
            w2 = formats.read_array(f, (width, width))
            b2 = formats.read_array(f, (width,))
            w3 = formats.read_array(f, (d_out, width))
            b3 = formats.read_array(f, (d_out,))
            nets.append(CouplingNet(w1, b1, w2, b2, w3, b3))
        layers.append(CouplingLayer(mask, nets[0], nets[1], cap))
    return FlowModel(layers, dim)


def save_flow(path, m: FlowModel) -> None:
    with open(path, "wb") as f:
        write_flow(f, m)


def load_flow(path) -> FlowModel:
    with open(path, "rb") as f:
        m = read_flow(f, str(path))
        formats.expect_eof(f, str(path))
    return m
