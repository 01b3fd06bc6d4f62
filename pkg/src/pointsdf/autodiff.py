"""Reverse-mode building blocks for the fixed decoder topologies.

Deliberately small: batched affine+ReLU stacks with explicit tapes, a
positional encoding, the Adam update, a cosine learning-rate schedule, and a
finite-difference gradient checker.  All math is float64 so central
differences are a trustworthy oracle; checkpoints downcast to float32 at
serialization time only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


# -- parameters --------------------------------------------------------------


class ParameterStore:
    """Named float64 arrays plus per-parameter Adam state."""

    def __init__(self):
        self.params: dict[str, Array] = {}
        self.adam_m: dict[str, Array] = {}
        self.adam_v: dict[str, Array] = {}
        self.adam_t: dict[str, int] = {}

    def add(self, name: str, value: Array) -> None:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        v = np.asarray(value, dtype=np.float64)
        self.params[name] = v
        self.adam_m[name] = np.zeros_like(v)
        self.adam_v[name] = np.zeros_like(v)
        self.adam_t[name] = 0

    def __getitem__(self, name: str) -> Array:
        return self.params[name]

    def __setitem__(self, name: str, value: Array) -> None:
        if name not in self.params:
            raise KeyError(f"unknown parameter {name!r}; use add()")
        self.params[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str | None = None) -> list[str]:
        return [n for n in self.params if prefix is None or n.startswith(prefix)]

    def check_finite(self) -> None:
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite values in parameter {name!r}")


def adam_step(
    store: ParameterStore,
    gradients: dict[str, Array],
    lr: float | dict[str, float],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update in place; only named gradients are applied."""
    for name, g in gradients.items():
        if name not in store.params:
            raise KeyError(f"unknown parameter {name!r}")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        step_lr = lr[name] if isinstance(lr, dict) else lr
        store.adam_t[name] += 1
        t = store.adam_t[name]
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        store.params[name] -= step_lr * m_hat / (np.sqrt(v_hat) + eps)


def cosine_lr(t: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from lr_start (t=0) to lr_end (t=total)."""
    if not 0 <= t <= total:
        raise ValueError("step outside schedule range")
    if total == 0:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + np.cos(np.pi * t / total))


# -- positional encoding -----------------------------------------------------


def positional_encoding(x: Array, n_freqs: int) -> Array:
    """[..., 3] -> [..., 3 + 6*n_freqs]: raw coords then (sin, cos) pairs at
    frequencies 2^l * pi, l = 0..n_freqs-1."""
    x = np.asarray(x, dtype=np.float64)
    if n_freqs == 0:
        return x.copy()
    parts = [x]
    for l in range(n_freqs):
        ang = (2.0**l * np.pi) * x
        parts.append(np.sin(ang))
        parts.append(np.cos(ang))
    return np.concatenate(parts, axis=-1)


def posenc_dim(n_freqs: int) -> int:
    return 3 + 6 * n_freqs


# -- MLP ---------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Affine+ReLU stack.  widths[0] is the (already encoded) input width;
    hidden layers use ReLU, the output is linear or sigmoid-bounded."""

    widths: tuple[int, ...]
    out_activation: str = "none"  # none | sigmoid
    pe_freqs: int = 0  # encoding applied by the caller to the spatial slice

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("need at least one layer with positive widths")
        if self.out_activation not in ("none", "sigmoid"):
            raise ValueError(f"unknown output activation {self.out_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def mlp_init(spec: MlpSpec, rng: np.random.Generator, prefix: str, store: ParameterStore) -> None:
    """He-style init: W ~ N(0, 2/fan_in) on hidden layers, N(0, 1/fan_in) on
    the output layer; zero biases."""
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        gain = 2.0 if i < spec.n_layers - 1 else 1.0
        w = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        store.add(f"{prefix}/W{i}", w)
        store.add(f"{prefix}/b{i}", np.zeros(fan_out))


@dataclass
class MlpTape:
    inputs: Array
    hidden: list[Array] = field(default_factory=list)  # post-ReLU activations
    output: Array | None = None


def mlp_forward(spec: MlpSpec, params, prefix: str, x: Array) -> tuple[Array, MlpTape]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.widths[0]:
        raise ValueError(f"input width {x.shape[-1]} != spec width {spec.widths[0]}")
    tape = MlpTape(inputs=x)
    h = x
    for i in range(spec.n_layers):
        h = h @ params[f"{prefix}/W{i}"] + params[f"{prefix}/b{i}"]
        if i < spec.n_layers - 1:
            h = np.maximum(h, 0.0)
            tape.hidden.append(h)
    if spec.out_activation == "sigmoid":
        h = 1.0 / (1.0 + np.exp(-h))
    tape.output = h
    return h, tape


def mlp_backward(
    spec: MlpSpec,
    params,
    prefix: str,
    tape: MlpTape,
    dout: Array,
    want_param_grads: bool = True,
) -> tuple[dict[str, Array], Array]:
    """Exact reverse pass.  Returns (parameter gradients, input gradient);
    parameter gradients are skipped when not wanted (frozen decoders)."""
    grads: dict[str, Array] = {}
    g = np.asarray(dout, dtype=np.float64)
    if spec.out_activation == "sigmoid":
        y = tape.output
        g = g * y * (1.0 - y)
    for i in reversed(range(spec.n_layers)):
        inp = tape.inputs if i == 0 else tape.hidden[i - 1]
        if want_param_grads:
            grads[f"{prefix}/W{i}"] = inp.reshape(-1, inp.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"{prefix}/b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        g = g @ params[f"{prefix}/W{i}"].T
        if i > 0:
            g = g * (tape.hidden[i - 1] > 0.0)
    return grads, g


# -- finite differences ------------------------------------------------------


def _rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b), 1e-8)
    return abs(a - b) / denom


def central_difference(f, x: Array, h: float) -> Array:
    """Gradient of scalar f at x via central differences, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def gradient_check(
    spec: MlpSpec,
    params,
    prefix: str,
    x: Array,
    h: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between reverse-mode and central differences over
    every parameter entry and every input entry, for a random scalar loss
    (fixed projection of the output)."""
    rng = rng or np.random.default_rng(0)
    y, _ = mlp_forward(spec, params, prefix, x)
    proj = rng.normal(size=y.shape)

    def loss_with(name: str | None, arr: Array) -> float:
        if name is None:
            out, _ = mlp_forward(spec, params, prefix, arr)
        else:
            saved = params[name]
            try:
                params[name] = arr
                out, _ = mlp_forward(spec, params, prefix, x)
            finally:
                params[name] = saved
        return float((out * proj).sum())

    _, tape = mlp_forward(spec, params, prefix, x)
    grads, dx = mlp_backward(spec, params, prefix, tape, proj)

    worst = 0.0
    for i in range(spec.n_layers):
        for kind in ("W", "b"):
            name = f"{prefix}/{kind}{i}"
            num = central_difference(lambda a, n=name: loss_with(n, a), params[name].copy(), h)
            worst = max(worst, float(np.max(np.abs(num - grads[name]) / np.maximum(np.maximum(np.abs(num), np.abs(grads[name])), 1e-8))))
    num_dx = central_difference(lambda a: loss_with(None, a), x.copy(), h)
    worst = max(worst, float(np.max(np.abs(num_dx - dx) / np.maximum(np.maximum(np.abs(num_dx), np.abs(dx)), 1e-8))))
    return worst
