"""Conditional denoising diffusion at desk scale.

Forward process, a small fully-connected noise predictor with hand-derived
backprop, deterministic (DDIM-style) and ancestral (DDPM) reverse samplers,
and the training loop that makes the terminal-step target consistent with
basis projection. Images are flat D-vectors here; callers reshape.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .numerics import gaussian_stream, mix_seeds, splitmix64_bulk

CHECKPOINT_MAGIC = b"DGM1"


class CheckpointError(ValueError):
    """Checkpoint bytes are not a valid model file."""


@dataclass(eq=False)
class Schedule:
    """Variance schedule: betas and the derived alphas / running products."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def alpha_bar(self, t):
        # 1-based step index; t=0 is the identity point of the forward process
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def make_linear_schedule(T, beta_start, beta_end):
    """Schedule with betas linearly spaced from beta_start to beta_end inclusive."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return Schedule(betas, alphas, alpha_bars)


# Default: 100 steps ending near-isotropic (terminal alpha_bar ~ 5.6e-3 < 0.01).
def default_schedule():
    return make_linear_schedule(100, 1e-4, 0.1)


@dataclass(eq=False)
class ConditionSet:
    """Per-scene side information: segmentation labels plus a binary edge map."""

    label_map: np.ndarray
    edge_map: np.ndarray
    num_labels: int = 4

    def __post_init__(self):
        self.label_map = np.asarray(self.label_map)
        self.edge_map = np.asarray(self.edge_map)
        if self.label_map.shape != self.edge_map.shape:
            raise ValueError(
                f"label/edge shape mismatch: {self.label_map.shape} vs {self.edge_map.shape}"
            )
        if self.label_map.size == 0:
            raise ValueError("empty condition maps")
        if self.label_map.min() < 0 or self.label_map.max() >= self.num_labels:
            raise ValueError(f"labels must lie in [0, {self.num_labels})")
        vals = np.unique(self.edge_map)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("edge map must be binary")


def forward_diffuse(x0, t, eps, sched):
    """Closed-form noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps, in 32-bit."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0/eps shape mismatch: {x0.shape} vs {eps.shape}")
    if not 1 <= t <= sched.T:
        raise ValueError(f"step {t} outside [1, {sched.T}]")
    ab = sched.alpha_bar(t)
    out = np.sqrt(ab) * x0.astype(np.float64) + np.sqrt(1.0 - ab) * eps.astype(np.float64)
    return out.astype(np.float32)


@dataclass(eq=False)
class DenoiserParams:
    """Weights of the reference noise predictor.

    Layers in declaration order: w1, b1, w2, b2, w3, b3. Input is the
    concatenation of the noisy image, the label map scaled to [0, 1], the
    edge map, and a sinusoidal embedding of the step index. Stored in 32-bit;
    math runs in 64-bit.
    """

    height: int
    width: int
    num_labels: int
    hidden_dim: int
    time_dim: int
    init_seed: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    _f64: dict = field(default=None, repr=False)

    @property
    def image_dim(self):
        return self.height * self.width

    @property
    def input_dim(self):
        return 3 * self.image_dim + self.time_dim

    def tensors(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "w3": self.w3, "b3": self.b3}

    def as_f64(self):
        if self._f64 is None:
            self._f64 = {k: v.astype(np.float64) for k, v in self.tensors().items()}
        return self._f64


def init_denoiser(init_seed, height=32, width=32, num_labels=4, hidden_dim=256, time_dim=32):
    """Seeded initialization: layer k gets gaussian_stream(mix(seed, k)) / sqrt(fan_in)."""
    d = height * width
    in_dim = 3 * d + time_dim
    shapes = [("w1", (in_dim, hidden_dim)), ("b1", (hidden_dim,)),
              ("w2", (hidden_dim, hidden_dim)), ("b2", (hidden_dim,)),
              ("w3", (hidden_dim, d)), ("b3", (d,))]
    arrs = {}
    for k, (name, shape) in enumerate(shapes):
        if name.startswith("b"):
            arrs[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[0]
            g = gaussian_stream(mix_seeds(init_seed, k), int(np.prod(shape)))
            arrs[name] = (g.astype(np.float64) / np.sqrt(fan_in)).astype(np.float32).reshape(shape)
    return DenoiserParams(height, width, num_labels, hidden_dim, time_dim, init_seed, **arrs)


def time_embedding(t, dim):
    """Sinusoidal embedding of an integer step: interleaved-by-half sin/cos bank."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def assemble_input(params, x_t, t, cond):
    d = params.image_dim
    x_t = np.asarray(x_t, dtype=np.float64).reshape(d)
    labels = cond.label_map.reshape(d).astype(np.float64) / (params.num_labels - 1)
    edges = cond.edge_map.reshape(d).astype(np.float64)
    return np.concatenate([x_t, labels, edges, time_embedding(t, params.time_dim)])


def _forward(p, inp):
    a1 = inp @ p["w1"] + p["b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ p["w2"] + p["b2"]
    h2 = np.tanh(a2)
    out = h2 @ p["w3"] + p["b3"]
    return h1, h2, out


def denoiser_predict(params, x_t, t, cond):
    """Predicted noise for a noisy image at step t under the given conditions."""
    if t < 1:
        raise ValueError(f"step must be >= 1, got {t}")
    inp = assemble_input(params, x_t, t, cond)
    _, _, out = _forward(params.as_f64(), inp)
    return out


def loss_and_grads(p, inp, target):
    """MSE loss and hand-derived gradients for one sample.

    p holds 64-bit tensors keyed w1..b3; inp is the assembled input vector.
    Gradient derivation: out = tanh(tanh(inp W1 + b1) W2 + b2) W3 + b3,
    L = mean((out - target)^2); chain rule through the two tanh layers.
    """
    h1, h2, out = _forward(p, inp)
    diff = out - target
    loss = float(np.mean(diff * diff))
    d = out.shape[0]
    dout = (2.0 / d) * diff
    grads = {}
    grads["w3"] = np.outer(h2, dout)
    grads["b3"] = dout
    dh2 = p["w3"] @ dout
    da2 = dh2 * (1.0 - h2 * h2)
    grads["w2"] = np.outer(h1, da2)
    grads["b2"] = da2
    dh1 = p["w2"] @ da2
    da1 = dh1 * (1.0 - h1 * h1)
    grads["w1"] = np.outer(inp, da1)
    grads["b1"] = da1
    return loss, grads


@dataclass
class TrainConfig:
    steps: int
    train_seed: int
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_seed: int = None
    # optional step-size decay: hold lr flat for lr_hold steps, then move
    # linearly to lr_final by the last step; lr_final None keeps lr constant
    lr_hold: int = 0
    lr_final: float = None

    def __post_init__(self):
        if self.init_seed is None:
            self.init_seed = mix_seeds(self.train_seed, 0xD1FF)
        if self.lr_final is not None and not 0 <= self.lr_hold < self.steps:
            raise ValueError(f"lr_hold must lie in [0, {self.steps}), got {self.lr_hold}")

    def lr_at(self, s):
        if self.lr_final is None or s < self.lr_hold:
            return self.lr
        frac = (s - self.lr_hold) / (self.steps - self.lr_hold)
        return self.lr + frac * (self.lr_final - self.lr)


def train_diffgo(dataset, basis, sched, cfg, loss_out=None):
    """Train the noise predictor; deterministic in (dataset order, cfg).

    Each step draws one (image, conditions) pair, a uniform step t, and a
    seeded noise vector. At the terminal step the noisy latent is replaced by
    its projection onto the shared basis and the regression target becomes
    the effective noise of that projected latent, so the model learns the
    latents it will actually be fed at the receiver. Appends per-step loss
    to loss_out when given.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    image0, cond0 = dataset[0]
    h, w = image0.shape
    d = h * w
    if basis.dim != d:
        raise ValueError(f"basis dim {basis.dim} does not match image size {d}")
    params = init_denoiser(cfg.init_seed, height=h, width=w, num_labels=cond0.num_labels)
    p = {k: v.astype(np.float64) for k, v in params.tensors().items()}
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(a) for k, a in p.items()}

    T = sched.T
    pick = splitmix64_bulk(mix_seeds(cfg.train_seed, 1), cfg.steps)
    tdraw = splitmix64_bulk(mix_seeds(cfg.train_seed, 2), cfg.steps)
    sqrt_ab_T = np.sqrt(sched.alpha_bar(T))
    sqrt_1m_ab_T = np.sqrt(1.0 - sched.alpha_bar(T))

    for s in range(cfg.steps):
        image, cond = dataset[int(pick[s] % len(dataset))]
        t = 1 + int(tdraw[s] % T)
        x0 = image.reshape(d)
        eps = gaussian_stream(mix_seeds(cfg.train_seed, 3, s), d)
        x_t = forward_diffuse(x0, t, eps, sched)
        if t == T:
            w_proj = codec.project_gd(x_t, basis)
            x_t = codec.reconstruct(w_proj, basis)
            target = (x_t.astype(np.float64) - sqrt_ab_T * x0.astype(np.float64)) / sqrt_1m_ab_T
        else:
            target = eps.astype(np.float64)
        inp = assemble_input(params, x_t, t, cond)
        loss, grads = loss_and_grads(p, inp, target)
        step = s + 1
        lr = cfg.lr_at(s)
        bc1 = 1.0 - cfg.adam_beta1 ** step
        bc2 = 1.0 - cfg.adam_beta2 ** step
        for k in p:
            g = grads[k]
            m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g
            v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * (g * g)
            p[k] -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + cfg.adam_eps)
        if loss_out is not None:
            loss_out.append(loss)

    for k, arr in p.items():
        setattr(params, k, arr.astype(np.float32))
    params._f64 = None
    return params


def reverse_sample(params, x_T, cond, sched, mode="deterministic", nonce=0):
    """Run the reverse chain from a terminal latent down to a clean image.

    deterministic: noise-free update from the clamped clean-image estimate,
      x_{t-1} = sqrt(ab_{t-1}) xhat0 + sqrt(1 - ab_{t-1}) eps_hat.
    ancestral: posterior mean with variance beta_t; step noise is redrawn
      from gaussian_stream(nonce XOR t) so endpoints sharing the nonce walk
      the same chain.
    Output is the clean-image estimate after step 1, rounded to 32-bit.
    Accepts a callable in place of params to substitute a noise predictor.
    """
    if mode not in ("deterministic", "ancestral"):
        raise ValueError(f"unknown sampler mode {mode!r}")
    predict = params if callable(params) else (
        lambda x, t, c: denoiser_predict(params, x, t, c))
    x = np.asarray(x_T, dtype=np.float64).copy()
    d = x.shape[0]
    for t in range(sched.T, 0, -1):
        eps_hat = predict(x, t, cond)
        ab_t = sched.alpha_bar(t)
        if mode == "deterministic":
            xhat0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
            np.clip(xhat0, -1.0, 1.0, out=xhat0)
            if t == 1:
                x = xhat0
            else:
                ab_prev = sched.alpha_bar(t - 1)
                x = np.sqrt(ab_prev) * xhat0 + np.sqrt(1.0 - ab_prev) * eps_hat
        else:
            beta_t = float(sched.betas[t - 1])
            alpha_t = float(sched.alphas[t - 1])
            if t == 1:
                x = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
                np.clip(x, -1.0, 1.0, out=x)
            else:
                mean = (x - beta_t / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha_t)
                z = gaussian_stream((nonce ^ t) & 0xFFFFFFFFFFFFFFFF, d).astype(np.float64)
                x = mean + np.sqrt(beta_t) * z
    return x.astype(np.float32)


_HEADER = struct.Struct("<4sHHBHHQ")


def save_checkpoint(params, path):
    """Serialize params: magic, dims header, 32-bit weights in order, CRC32."""
    blob = bytearray()
    blob += _HEADER.pack(CHECKPOINT_MAGIC, params.height, params.width,
                         params.num_labels, params.hidden_dim, params.time_dim,
                         params.init_seed & 0xFFFFFFFFFFFFFFFF)
    for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
        blob += getattr(params, name).astype("<f4").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size + 4:
        raise CheckpointError("checkpoint truncated")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError("checkpoint CRC mismatch")
    magic, h, w, num_labels, hidden, time_dim, init_seed = _HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    d = h * w
    in_dim = 3 * d + time_dim
    shapes = [("w1", (in_dim, hidden)), ("b1", (hidden,)),
              ("w2", (hidden, hidden)), ("b2", (hidden,)),
              ("w3", (hidden, d)), ("b3", (d,))]
    need = sum(int(np.prod(s)) for _, s in shapes) * 4
    body = blob[_HEADER.size:-4]
    if len(body) != need:
        raise CheckpointError(f"parameter block is {len(body)} bytes, expected {need}")
    arrs = {}
    off = 0
    for name, shape in shapes:
        count = int(np.prod(shape))
        arrs[name] = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        off += count * 4
    return DenoiserParams(h, w, num_labels, hidden, time_dim, init_seed, **arrs)
