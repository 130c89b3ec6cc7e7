"""Small time-conditioned dense network with hand-written backprop.

The network maps a length-L sequence of V-dimensional probability rows plus a
sinusoidal embedding of t to L*V output logits. Three tanh hidden layers by
default; the final layer is zero-initialized so an untrained model predicts
the uniform distribution at every position. Gradients are exact reverse-mode
and are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

CHECKPOINT_MAGIC = b"SFLOWCK1"

DEFAULT_HIDDEN = (256, 256, 256)
N_TIME_FREQS = 8


class StaleCacheError(RuntimeError):
    """Raised when backward() receives a cache from an outdated forward()."""


@dataclass
class Denoiser:
    seq_len: int
    vocab: int
    hidden: tuple
    n_freq: int
    weights: list  # weights[i]: (fan_out, fan_in)
    biases: list  # biases[i]: (fan_out,)
    version: int = 0

    @property
    def layer_dims(self):
        in_dim = self.seq_len * self.vocab + 2 * self.n_freq
        return [in_dim, *self.hidden, self.seq_len * self.vocab]

    def param_items(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"W{i}", w
            yield f"b{i}", b

    def copy(self) -> "Denoiser":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_denoiser(
    seq_len: int,
    vocab: int,
    rng: np.random.Generator,
    hidden: tuple = DEFAULT_HIDDEN,
    n_freq: int = N_TIME_FREQS,
) -> Denoiser:
    """Fan-in-scaled uniform init; final layer zeroed (uniform first prediction)."""
    in_dim = seq_len * vocab + 2 * n_freq
    dims = [in_dim, *hidden, seq_len * vocab]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            w = np.zeros((fan_out, fan_in))
        else:
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return Denoiser(seq_len, vocab, tuple(hidden), n_freq, weights, biases)


def time_features(t, n_freq: int = N_TIME_FREQS) -> np.ndarray:
    """Sinusoidal embedding of scalar time; frequencies pi * 2^j."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = np.pi * (2.0 ** np.arange(n_freq))
    phases = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phases), np.cos(phases)], axis=-1)


def _flatten_input(params: Denoiser, x: np.ndarray, t) -> tuple:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[1:] != (params.seq_len, params.vocab):
        raise ValueError(
            f"state shape {x.shape[1:]} does not match configured "
            f"(L, V) = ({params.seq_len}, {params.vocab})"
        )
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (x.shape[0],))
    # probability rows have ~1/V scale; center to O(1) features so the first
    # layer resolves the small early-time tilts that carry the signal
    feats = x.reshape(x.shape[0], -1) * params.vocab - 1.0
    z = np.concatenate([feats, time_features(t, params.n_freq)], axis=-1)
    return z, squeeze


def forward(params: Denoiser, x: np.ndarray, t, return_cache: bool = False):
    """Run the network on states x of shape (L, V) or (N, L, V).

    Returns (logits, probs) shaped like the input batch, probs being the
    row-wise softmax of the logits. With return_cache=True a third element
    holds the activations needed by backward().
    """
    z, squeeze = _flatten_input(params, x, t)
    acts = [z]
    h = z
    n_layers = len(params.weights)
    for i in range(n_layers):
        pre = h @ params.weights[i].T + params.biases[i]
        h = np.tanh(pre) if i < n_layers - 1 else pre
        acts.append(h)
    n = z.shape[0]
    logits = h.reshape(n, params.seq_len, params.vocab)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    if squeeze:
        logits, probs = logits[0], probs[0]
    if not return_cache:
        return logits, probs
    cache = {"acts": acts, "version": params.version, "squeeze": squeeze}
    return logits, probs, cache


def backward(params: Denoiser, cache: dict, dlogits: np.ndarray) -> dict:
    """Exact gradients of a scalar loss given dloss/dlogits from the paired
    forward call. Raises StaleCacheError if the parameters have stepped since."""
    if cache["version"] != params.version:
        raise StaleCacheError(
            "cache was produced by forward() on a different parameter version"
        )
    acts = cache["acts"]
    d = np.asarray(dlogits, dtype=float)
    if cache["squeeze"]:
        d = d[None]
    d = d.reshape(acts[0].shape[0], -1)
    grads = {}
    for i in reversed(range(len(params.weights))):
        grads[f"W{i}"] = d.T @ acts[i]
        grads[f"b{i}"] = d.sum(axis=0)
        if i > 0:
            d = (d @ params.weights[i]) * (1.0 - acts[i] ** 2)
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Denoiser, grads: dict, opt: AdamState) -> Denoiser:
    """Bias-corrected adaptive-moment update.

    Mutates the parameter arrays and optimizer state in place and returns the
    same params object with its version bumped; inference should hold a
    copy() snapshot rather than live training parameters.
    """
    opt.step += 1
    lr, b1, b2 = opt.lr, opt.beta1, opt.beta2
    # p -= lr * (m/c1) / (sqrt(v/c2) + eps)  ==  p -= a * m / (sqrt(v) + d)
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    a = lr * np.sqrt(c2) / c1
    d = opt.eps * np.sqrt(c2)
    bad = None
    for name, value in params.param_items():
        g = grads[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if name not in opt.m:
            opt.m[name] = np.zeros_like(value)
            opt.v[name] = np.zeros_like(value)
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        step = np.sqrt(v)
        step += d
        np.divide(m, step, out=step)
        value -= a * step
        if not np.isfinite(value.sum()):
            bad = name
    if bad is not None:
        raise FloatingPointError(f"non-finite parameter {bad} after update")
    params.version += 1
    return params


def nll_loss_and_grad(logits: np.ndarray, targets: np.ndarray) -> tuple:
    """Mean over batch and positions of -log p(true token), with the exact
    softmax cross-entropy gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim == 2:
        logits = logits[None]
    targets = np.atleast_2d(targets)
    n, seq_len, vocab = logits.shape
    shifted = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + logits.max(axis=-1)
    rows = np.arange(n)[:, None], np.arange(seq_len)[None, :]
    true_logit = logits[rows[0], rows[1], targets]
    loss = float(np.mean(lse - true_logit))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
    dlogits = probs.copy()
    dlogits[rows[0], rows[1], targets] -= 1.0
    dlogits /= n * seq_len
    return loss, dlogits


def grad_check(
    params: Denoiser,
    probe: np.ndarray,
    targets: np.ndarray,
    t,
    rng: np.random.Generator,
    n_coords: int = 24,
    h: float = 1e-5,
    grad_transform=None,
) -> dict:
    """Compare analytic gradients to central finite differences of the NLL loss.

    Probes up to n_coords random coordinates per parameter array and returns
    per-array max relative error plus the overall max under key "max".
    grad_transform, if given, maps the analytic gradient dict before comparison
    (used by the corruption-detection test).
    """

    def loss_at(p: Denoiser) -> float:
        logits, _ = forward(p, probe, t)
        loss, _ = nll_loss_and_grad(logits, targets)
        return loss

    logits, _, cache = forward(params, probe, t, return_cache=True)
    _, dlogits = nll_loss_and_grad(logits, targets)
    grads = backward(params, cache, dlogits)
    if grad_transform is not None:
        grads = grad_transform(grads)

    errors = {}
    work = params.copy()
    name_to_array = dict(work.param_items())
    for name, arr in name_to_array.items():
        flat = arr.reshape(-1)
        n_pick = min(n_coords, flat.size)
        idx = rng.choice(flat.size, size=n_pick, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at(work)
            flat[i] = orig - h
            down = loss_at(work)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            an = grads[name].reshape(-1)[i]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, rel)
        errors[name] = worst
    errors["max"] = max(v for k, v in errors.items() if k != "max")
    return errors


def save_checkpoint(path, params: Denoiser, meta: dict | None = None) -> None:
    """Self-describing container: magic, JSON header with shapes, then raw
    little-endian float64 array payloads in header order."""
    arrays = [(name, arr) for name, arr in params.param_items()]
    header = {
        "kind": "denoiser",
        "format_version": 1,
        "seq_len": params.seq_len,
        "vocab": params.vocab,
        "hidden": list(params.hidden),
        "n_freq": params.n_freq,
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Read a checkpoint written by save_checkpoint; returns (params, meta)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape))
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    n_layers = len(header["hidden"]) + 1
    params = Denoiser(
        seq_len=header["seq_len"],
        vocab=header["vocab"],
        hidden=tuple(header["hidden"]),
        n_freq=header["n_freq"],
        weights=[arrays[f"W{i}"] for i in range(n_layers)],
        biases=[arrays[f"b{i}"] for i in range(n_layers)],
    )
    return params, header["meta"]
