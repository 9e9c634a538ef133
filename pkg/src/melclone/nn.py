"""Differentiable building blocks: conv, instance norm, AdaIN, attention.

Layers hold named parameters (seeded uniform fan-in init) and operate on
(B, C, T) tensors.  Reductions that feed normalization statistics, attention
weights, or losses are mask-aware so padded frames never leak into real
ones.  Every op's gradient is covered by :func:`finite_diff_check`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

IN_EPS = 1e-5


class Module:
    """Base for parameterized blocks; tracks params/submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, mod in self._modules.items():
            out.update(mod.named_parameters(f"{prefix}{name}."))
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, mod in enumerate(self._items):
            setattr(self, str(i), mod)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(1.0 / max(fan_in, 1)))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Module):
    """Same-padded 1-D convolution over time, odd kernel."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 dtype=np.float64):
        super().__init__()
        if kernel % 2 != 1:
            raise ShapeError(f"kernel must be odd, got {kernel}")
        self.kernel = kernel
        fan_in = c_in * kernel
        self.weight = Tensor(_uniform(rng, (c_out, c_in, kernel), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(_uniform(rng, (c_out,), fan_in, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias)


class Linear(Module):
    """Channel-wise affine map applied along the channel axis of (B, C, T)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64,
                 bias_fill: float | None = None):
        super().__init__()
        self.weight = Tensor(_uniform(rng, (d_out, d_in), d_in, dtype), requires_grad=True)
        if bias_fill is None:
            bias = _uniform(rng, (d_out,), d_in, dtype)
        else:
            bias = np.full(d_out, bias_fill, dtype=dtype)
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:  # (N, d_in) row-major
            return ad.matmul(x, ad.transpose(self.weight, (1, 0))) + ad.reshape(self.bias, (1, -1))
        return ad.matmul(self.weight, x) + ad.reshape(self.bias, (1, -1, 1))


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.weight = Tensor(_uniform(rng, (n, dim), dim, dtype), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ad.embedding(self.weight, ids)


@dataclass
class ChannelStats:
    """Per-channel (mean, std) over unpadded time, one pair per batch item.

    Both tensors have shape (B, C, 1); ``std`` already includes the IN_EPS
    stabilizer, so it is strictly positive.
    """

    mean: Tensor
    std: Tensor

    @property
    def channels(self) -> int:
        return self.mean.shape[1]

    def detach(self) -> "ChannelStats":
        return ChannelStats(self.mean.detach(), self.std.detach())

    @classmethod
    def identity(cls, batch: int, channels: int, dtype=np.float64) -> "ChannelStats":
        return cls(
            Tensor(np.zeros((batch, channels, 1), dtype=dtype)),
            Tensor(np.ones((batch, channels, 1), dtype=dtype)),
        )


def _check_btc(x: Tensor, mask: np.ndarray | None):
    if x.ndim != 3:
        raise ShapeError(f"expected (B, C, T) tensor, got shape {x.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (x.shape[0], 1, x.shape[2]):
            raise ShapeError(f"mask shape {mask.shape} does not match input {x.shape}")
    return mask


def instance_norm(x: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, ChannelStats]:
    """Normalize each channel over time to zero mean, unit variance.

    Returns ``(y, stats)`` where ``stats.std = sqrt(var + IN_EPS)``.  With a
    (B, 1, T) mask, statistics cover unpadded frames only and padded frames
    of ``y`` are zeroed.
    """
    mask = _check_btc(x, mask)
    if mask is None:
        count = float(x.shape[2])
        mean = ad.mul(ad.tsum(x, axis=2, keepdims=True), 1.0 / count)
        diff = x - mean
        var = ad.mul(ad.tsum(ad.square(diff), axis=2, keepdims=True), 1.0 / count)
        std = ad.sqrt(var + IN_EPS)
        return ad.div(diff, std), ChannelStats(mean, std)

    m = Tensor(mask.astype(x.dtype))
    counts = mask.sum(axis=2, keepdims=True).astype(x.dtype)  # (B,1,1)
    inv = Tensor(1.0 / np.maximum(counts, 1.0))
    mean = ad.mul(ad.tsum(ad.mul(x, m), axis=2, keepdims=True), inv)
    diff = ad.mul(x - mean, m)
    var = ad.mul(ad.tsum(ad.square(diff), axis=2, keepdims=True), inv)
    std = ad.sqrt(var + IN_EPS)
    return ad.mul(ad.div(diff, std), m), ChannelStats(mean, std)


def adain(x: Tensor, ref: ChannelStats, mask: np.ndarray | None = None) -> Tensor:
    """Instance-normalize ``x``, then rescale and shift with ``ref`` stats."""
    if ref.channels != x.shape[1]:
        raise ShapeError(
            f"reference stats have {ref.channels} channels, input has {x.shape[1]}"
        )
    y, _ = instance_norm(x, mask)
    out = ad.mul(y, ref.std) + ref.mean
    if mask is not None:
        out = ad.mul(out, Tensor(np.asarray(mask).astype(x.dtype)))
    return out


class SelfAttention(Module):
    """Single-head scaled dot-product self-attention with padding masks."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.dim = dim
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype)

    def attention_weights(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        mask = _check_btc(x, mask)
        q, k = self.q(x), self.k(x)
        scores = ad.mul(
            ad.matmul(ad.transpose(q, (0, 2, 1)), k), 1.0 / float(np.sqrt(self.dim))
        )  # (B, Tq, Tk)
        return ad.masked_softmax(scores, mask, axis=2)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        weights = self.attention_weights(x, mask)
        v = self.v(x)
        mixed = ad.transpose(ad.matmul(weights, ad.transpose(v, (0, 2, 1))), (0, 2, 1))
        out = self.out(mixed)
        if mask is not None:
            out = ad.mul(out, Tensor(np.asarray(mask).astype(x.dtype)))
        return out


class ResCnn1d(Module):
    """Residual block: x + conv(relu(conv(x))), channel-preserving."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv1d(dim, dim, kernel, rng, dtype)
        self.conv2 = Conv1d(dim, dim, kernel, rng, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        mask = _check_btc(x, mask)
        h = ad.relu(self.conv1(x))
        if mask is not None:
            m = Tensor(mask.astype(x.dtype))
            h = ad.mul(h, m)
        y = x + self.conv2(h)
        if mask is not None:
            y = ad.mul(y, m)
        return y


def rescnn_block(x: Tensor, block: ResCnn1d, mask: np.ndarray | None = None) -> Tensor:
    return block(x, mask)


def _eval_logged(fn) -> tuple[float, list]:
    ad.sign_log = []
    try:
        value = fn().item()
    finally:
        signs = ad.sign_log
        ad.sign_log = None
    return value, signs


def finite_diff_check(fn, wrt: dict[str, Tensor], h: float = 1e-5,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of a scalar-valued ``fn`` to central differences.

    ``fn()`` must rebuild its graph from the current values of the tensors in
    ``wrt`` and return a scalar Tensor.  Returns the max over all checked
    coordinates of ``|analytic - numeric| / max(1, |numeric|)``.  Non-finite
    intermediates raise :class:`NonFiniteError` naming the offending op.
    ``max_coords`` limits the coordinates sampled per tensor (for big layers).

    Coordinates whose ±h perturbation flips a relu or abs sign pattern are
    skipped: the two-sided difference straddles a kink there and does not
    estimate the gradient.  At least one coordinate must survive per tensor.
    """
    prev_check = ad.check_finite
    ad.check_finite = True
    try:
        for p in wrt.values():
            p.grad = None
        out = fn()
        if out.data.size != 1:
            raise ShapeError("finite_diff_check needs a scalar-valued function")
        out.backward()
        analytic = {
            name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for name, p in wrt.items()
        }

        worst = 0.0
        for name, p in wrt.items():
            flat = p.data.reshape(-1)
            n = flat.size
            if max_coords is not None and n > max_coords:
                if rng is None:
                    rng = np.random.default_rng(0)
                coords = rng.choice(n, size=max_coords, replace=False)
            else:
                coords = range(n)
            ga = analytic[name].reshape(-1)
            checked = 0
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                f_plus, signs_plus = _eval_logged(fn)
                flat[i] = orig - h
                f_minus, signs_minus = _eval_logged(fn)
                flat[i] = orig
                if signs_plus != signs_minus:
                    continue
                checked += 1
                numeric = (f_plus - f_minus) / (2.0 * h)
                err = abs(ga[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
            if checked == 0:
                raise ShapeError(
                    f"every sampled coordinate of {name!r} crossed a relu/abs kink"
                )
        return worst
    finally:
        ad.check_finite = prev_check
