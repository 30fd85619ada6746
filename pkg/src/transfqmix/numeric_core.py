"""Dense matrix kernels, parameter storage and optimizers.

Tensors are ordinary ``torch`` tensors. Kernels accept any number of leading
batch dimensions and operate on the trailing two (rows, cols), so a batch of
observation matrices is handled in one call. Reverse-mode gradients come from
torch autograd; ``finite_diff_gradient`` is the independent oracle used by the
test-suite to check them.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping

import torch
from torch import nn

LN_EPS = 1e-5


class ConfigurationError(ValueError):
    """Raised when shapes or widths of inputs and parameters disagree."""


class UsageError(RuntimeError):
    """Raised when an API is called in the wrong order or state."""


class NumericalError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


def linear(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """Return ``x @ w`` (+ ``b`` broadcast over rows)."""
    if x.shape[-1] != w.shape[0]:
        raise ConfigurationError(
            f"linear: inner dimensions disagree ({tuple(x.shape)} @ {tuple(w.shape)})"
        )
    y = x @ w
    if b is not None:
        y = y + b.reshape(-1)
    return y


def softmax_rows(x: torch.Tensor) -> torch.Tensor:
    # row-max subtraction keeps exp() in range for large scores
    z = x - x.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def layer_norm_rows(x: torch.Tensor, gain: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != gain.numel():
        raise ConfigurationError(f"layer_norm_rows: width {x.shape[-1]} != gain width {gain.numel()}")
    mean = x.mean(dim=-1, keepdim=True)
    centred = x - mean
    var = (centred * centred).mean(dim=-1, keepdim=True)
    return centred / torch.sqrt(var + LN_EPS) * gain.reshape(-1) + shift.reshape(-1)


def uniform_init(shape: tuple[int, ...], fan_in: int, generator: torch.Generator | None = None) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return (torch.rand(shape, generator=generator) * 2.0 - 1.0) * bound


class Linear(nn.Module):
    """Affine map storing its weight as ``in x out`` so that ``y = x W + b``."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(uniform_init((d_in, d_out), d_in))
        self.bias = nn.Parameter(uniform_init((1, d_out), d_in)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(1, width))
        self.shift = nn.Parameter(torch.zeros(1, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm_rows(x, self.gain, self.shift)


class ParamStore(Mapping[str, nn.Parameter]):
    """Named parameters of one or more modules, iterated in sorted name order.

    The store holds references to the live ``nn.Parameter`` objects, so
    optimizer updates are immediately visible to the owning modules.
    """

    def __init__(self, modules: Mapping[str, nn.Module]):
        entries: dict[str, nn.Parameter] = {}
        for prefix, module in modules.items():
            for name, p in module.named_parameters():
                entries[f"{prefix}.{name}"] = p
        self._entries = OrderedDict(sorted(entries.items()))

    def __getitem__(self, name: str) -> nn.Parameter:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(p.numel() for p in self._entries.values())

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.grad = None

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {k: p.detach().clone() for k, p in self._entries.items()}

    def load(self, values: Mapping[str, torch.Tensor]) -> None:
        missing = set(self._entries) - set(values)
        extra = set(values) - set(self._entries)
        if missing or extra:
            raise ConfigurationError(
                f"parameter names differ: missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        with torch.no_grad():
            for k, p in self._entries.items():
                v = values[k]
                if tuple(v.shape) != tuple(p.shape):
                    raise ConfigurationError(f"shape mismatch for {k}: {tuple(v.shape)} vs {tuple(p.shape)}")
                p.copy_(v.to(p.dtype))

    def copy_from(self, other: "ParamStore") -> None:
        self.load({k: v.detach() for k, v in other.items()})


def backprop(loss: torch.Tensor) -> None:
    """Write d(loss)/d(param) into every parameter's ``.grad``.

    The graph is freed afterwards; calling again on the same loss is an error.
    """
    if loss.numel() != 1:
        raise UsageError("backprop expects a scalar loss")
    if not loss.requires_grad:
        raise UsageError("backprop called on a value with no recorded forward pass")
    if getattr(loss, "_backprop_done", False):
        raise UsageError("backprop called twice for the same forward pass")
    loss.backward()
    loss._backprop_done = True  # type: ignore[attr-defined]


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.99  # RMSProp smoothing
    clip_norm: float = 10.0
    step: int = 0
    moments: dict[str, list[torch.Tensor]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop"):
            raise ConfigurationError(f"unknown optimizer kind {self.kind!r}")


def make_optimizer(kind: str, lr: float, clip_norm: float = 10.0) -> OptimizerState:
    if kind == "adam":
        return OptimizerState(kind="adam", lr=lr, eps=1e-8, clip_norm=clip_norm)
    if kind == "rmsprop":
        return OptimizerState(kind="rmsprop", lr=lr, eps=1e-5, decay=0.99, clip_norm=clip_norm)
    raise ConfigurationError(f"unknown optimizer kind {kind!r}")


def clip_grad_norm(grads: Iterable[torch.Tensor], max_norm: float) -> float:
    grads = list(grads)
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g.mul_(scale)
    return total


@torch.no_grad()
def optimizer_step(params: ParamStore, state: OptimizerState) -> float:
    """Clip the global gradient norm, apply one Adam/RMSProp update, clear grads.

    Returns the pre-clipping gradient norm.
    """
    named = [(k, p) for k, p in params.items() if p.grad is not None]
    for k, p in named:
        if not torch.isfinite(p.grad).all():
            raise NumericalError(f"non-finite gradient in parameter {k!r}")
    norm = clip_grad_norm([p.grad for _, p in named], state.clip_norm)
    state.step += 1
    t = state.step
    for k, p in named:
        g = p.grad
        if k not in state.moments:
            state.moments[k] = [torch.zeros_like(p), torch.zeros_like(p)]
        m, v = state.moments[k]
        if state.kind == "adam":
            m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
            m_hat = m / (1 - state.beta1**t)
            v_hat = v / (1 - state.beta2**t)
            p.sub_(state.lr * m_hat / (v_hat.sqrt() + state.eps))
        else:
            v.mul_(state.decay).addcmul_(g, g, value=1 - state.decay)
            p.sub_(state.lr * g / (v.sqrt() + state.eps))
    params.zero_grad()
    return norm


def finite_diff_gradient(
    f: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    h: float = 1e-6,
    entries: Mapping[str, Iterable[int]] | None = None,
) -> dict[str, torch.Tensor]:
    """Central-difference estimate of df/dp for every (or selected) scalar entry.

    ``f`` is re-evaluated after in-place perturbation of each entry, so it must
    read the parameters it closes over. ``entries`` optionally restricts the
    estimate to given flat indices per parameter; other entries are NaN.
    """
    out: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            est = torch.full_like(flat, float("nan"), dtype=torch.float64)
            idx = range(flat.numel()) if entries is None else entries.get(name, ())
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(f())
                flat[i] = orig - h
                down = float(f())
                flat[i] = orig
                est[i] = (up - down) / (2 * h)
            out[name] = est.view(p.shape)
    return out
