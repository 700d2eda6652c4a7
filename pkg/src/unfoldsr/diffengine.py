"""Minimal reverse-mode differentiation over a closed op set.

The engine records a tape of ``Tensor`` nodes as the forward pass runs and
replays it in reverse topological order.  The op set is exactly what the
models need: dense matrix multiply, zero-padded 2-D convolution, the two
proximal activations, elementwise addition/scaling, reshape, and a
sum-of-squares loss.  There is no graph compiler and no higher-order
differentiation; the point is an auditable engine whose activation
derivatives are shared with :mod:`unfoldsr.proximal`.

Also here: the ADAM optimizer (with nonnegativity clamps for threshold
parameters) and a central-finite-difference gradient checker.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import proximal
from .errors import DimensionMismatchError, InvalidParameterError, NumericFailureError
from .imageops import _im2col_same, conv2d_same

__all__ = [
    "Tensor",
    "ParamStore",
    "AdamState",
    "GradCheckReport",
    "no_grad",
    "constant",
    "matmul",
    "add",
    "scale",
    "reshape",
    "conv2d",
    "soft_thresh",
    "lesita_act",
    "sse_loss",
    "backward",
    "forward_backward",
    "adam_step",
    "grad_check",
    "margin_tracking",
]

_grad_enabled = True
_margin_sink: list | None = None


@contextmanager
def no_grad():
    """Run forward passes without recording the tape (inference / FD probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def margin_tracking():
    """Collect each activation's distance to its nearest branch boundary.

    Yields a list that receives one float per activation op executed inside
    the block; ``min`` of it is the kink margin of the whole forward pass.
    """
    global _margin_sink
    prev = _margin_sink
    _margin_sink = sink = []
    try:
        yield sink
    finally:
        _margin_sink = prev


class Tensor:
    """A value node on the tape; ``grad`` accumulates during backward."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name="", parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value, name="const"):
    return Tensor(value, requires_grad=False, name=name)


def _node(value, parents, backward, name):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, name=name, parents=parents, backward=backward)
    return Tensor(value, requires_grad=False, name=name)


def _accumulate(tensor, contribution, owned=False):
    """Add a gradient contribution; with ``owned=True`` the array may be
    adopted as the buffer on first touch (callers pass freshly allocated
    arrays only)."""
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = contribution if owned else np.array(contribution)
    else:
        tensor.grad += contribution


def matmul(a: Tensor, b: Tensor, name="matmul") -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionMismatchError(f"matmul shapes {a.value.shape} @ {b.value.shape}")
    out_value = a.value @ b.value

    def backward_fn(out):
        g = out.grad
        _accumulate(a, g @ b.value.T, owned=True)
        _accumulate(b, a.value.T @ g, owned=True)

    return _node(out_value, (a, b), backward_fn, name)


def _unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` (inverse of NumPy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor, name="add") -> Tensor:
    try:
        out_value = a.value + b.value
    except ValueError:
        raise DimensionMismatchError(f"add shapes {a.value.shape} + {b.value.shape}") from None

    def backward_fn(out):
        _accumulate(a, _unbroadcast(out.grad, a.value.shape))
        _accumulate(b, _unbroadcast(out.grad, b.value.shape))

    return _node(out_value, (a, b), backward_fn, name)


def scale(a: Tensor, c: float, name="scale") -> Tensor:
    c = float(c)
    out_value = a.value * c

    def backward_fn(out):
        _accumulate(a, out.grad * c, owned=True)

    return _node(out_value, (a,), backward_fn, name)


def reshape(a: Tensor, shape, name="reshape") -> Tensor:
    out_value = a.value.reshape(shape)

    def backward_fn(out):
        _accumulate(a, out.grad.reshape(a.value.shape))

    return _node(out_value, (a,), backward_fn, name)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, name="conv2d") -> Tensor:
    """Zero-padded same-size cross-correlation; see imageops.conv2d_same."""
    c_out, c_in, kh, kw = w.value.shape
    if x.value.ndim != 3 or x.value.shape[0] != c_in:
        raise DimensionMismatchError(f"conv2d input {x.value.shape} vs weights {w.value.shape}")
    _, h, wid = x.value.shape
    cols = _im2col_same(x.value, kh, kw)
    out_value = (w.value.reshape(c_out, -1) @ cols).reshape(c_out, h, wid)
    if b is not None:
        if b.value.shape != (c_out,):
            raise DimensionMismatchError(f"conv2d bias {b.value.shape} != ({c_out},)")
        out_value = out_value + b.value[:, None, None]

    def backward_fn(out):
        g = out.grad.reshape(c_out, -1)
        _accumulate(w, (g @ cols.T).reshape(w.value.shape), owned=True)
        if b is not None:
            _accumulate(b, out.grad.sum(axis=(1, 2)), owned=True)
        if x.requires_grad:
            # Gradient w.r.t. the input is the same-padded correlation with
            # the spatially flipped, channel-transposed kernel.
            w_flip = w.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            _accumulate(x, conv2d_same(out.grad, w_flip), owned=True)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out_value, parents, backward_fn, name)


def _record_margin(margin):
    if _margin_sink is not None:
        _margin_sink.append(margin)


def soft_thresh(x: Tensor, gamma: Tensor, name="soft_thresh") -> Tensor:
    """Soft-thresholding activation with a learnable scalar threshold."""
    g = float(gamma.value)
    out_value = proximal.soft_threshold(x.value, g)
    if _margin_sink is not None:
        _record_margin(proximal.soft_threshold_margin(x.value, g))

    def backward_fn(out):
        d_du, d_dgamma = proximal.soft_threshold_grad(x.value, g)
        _accumulate(x, out.grad * d_du, owned=True)
        _accumulate(gamma, np.asarray(np.sum(out.grad * d_dgamma), dtype=gamma.value.dtype).reshape(gamma.value.shape),
                    owned=True)

    return _node(out_value, (x, gamma), backward_fn, name)


def lesita_act(x: Tensor, side: Tensor, mu: Tensor, name="lesita") -> Tensor:
    """Side-information proximal activation; gradients flow into ``side`` too."""
    if x.value.shape != side.value.shape:
        raise DimensionMismatchError(f"lesita shapes {x.value.shape} vs side {side.value.shape}")
    m = float(mu.value)
    # The branch codes fix both the value and the derivatives; compute once.
    branches = proximal._lesita_branches(x.value, side.value, m)
    out_value = proximal.lesita_prox(x.value, side.value, m, branches=branches)
    if _margin_sink is not None:
        _record_margin(proximal.lesita_prox_margin(x.value, side.value, m))

    def backward_fn(out):
        d_du, d_dside, d_dmu = proximal.lesita_prox_grads(x.value, side.value, m, branches=branches)
        _accumulate(x, out.grad * d_du, owned=True)
        _accumulate(side, out.grad * d_dside, owned=True)
        _accumulate(mu, np.asarray(np.sum(out.grad * d_dmu), dtype=mu.value.dtype).reshape(mu.value.shape),
                    owned=True)

    return _node(out_value, (x, side, mu), backward_fn, name)


def sse_loss(pred: Tensor, target, name="sse") -> Tensor:
    """Sum of squared errors against a constant target (float64 accumulate)."""
    target = np.asarray(target)
    if pred.value.shape != target.shape:
        raise DimensionMismatchError(f"loss shapes {pred.value.shape} vs {target.shape}")
    diff = pred.value - target
    out_value = np.asarray(np.sum(diff.astype(np.float64) ** 2))

    def backward_fn(out):
        _accumulate(pred, (2.0 * float(out.grad)) * diff, owned=True)

    return _node(out_value, (pred,), backward_fn, name)


def backward(root: Tensor) -> None:
    """Reverse-topological sweep seeding d(root)/d(root) = 1."""
    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node)


class ParamStore:
    """Ordered name -> parameter tensor map with persistent gradient buffers."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.grads_ready = False

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise InvalidParameterError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        tensor.grad = np.zeros_like(tensor.value)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad[...] = 0
        self.grads_ready = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.value.copy() for name, tensor in self._params.items()}


def _first_nonfinite(root: Tensor) -> str | None:
    stack, seen = [root], set()
    found = None
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not np.all(np.isfinite(node.value)):
            found = node  # keep walking: deepest offender is most informative
        stack.extend(node._parents)
    return found.name if found is not None else None


def forward_backward(forward_fn, params: ParamStore, inputs, target, zero_grad: bool = True) -> float:
    """Build the graph with ``forward_fn(params, *inputs)``, apply the SSE
    loss against ``target``, run backward, and return the loss value.

    With ``zero_grad=False`` gradients accumulate across calls (used for
    summing a batch in a deterministic order).
    """
    if zero_grad:
        params.zero_grad()
    out = forward_fn(params, *inputs)
    loss = sse_loss(out, target)
    if not np.isfinite(loss.value):
        bad = _first_nonfinite(loss)
        raise NumericFailureError(f"non-finite value in tensor {bad!r}", tensor_name=bad)
    backward(loss)
    params.grads_ready = True
    return float(loss.value)


def forward_loss(forward_fn, params: ParamStore, inputs, target) -> float:
    """Loss only, no tape: used by the finite-difference probes."""
    with no_grad():
        out = forward_fn(params, *inputs)
        return float(sse_loss(out, target).value)


class AdamState:
    """Moment buffers and hyperparameters for bias-corrected ADAM.

    ``nonneg`` names parameters clamped to >= 0 after every step (the
    scalar thresholds of the proximal activations).
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8, nonneg=()):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.nonneg = frozenset(nonneg)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected ADAM update over every parameter in the store."""
    if not params.grads_ready:
        raise InvalidParameterError("gradients not populated; run forward_backward first")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        if name in state.nonneg:
            np.maximum(p.value, 0.0, out=p.value)
        if not np.all(np.isfinite(p.value)):
            raise NumericFailureError(f"non-finite parameter {name!r} after ADAM step", tensor_name=name)


@dataclass
class GradCheckReport:
    """Per-tensor max relative error between analytic and central-difference
    gradients, with error = |a - n| / max(|a|, |n|, 1e-8)."""

    per_tensor: dict[str, float] = field(default_factory=dict)
    threshold: float = 1e-4
    passed: bool = True

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)


def grad_check(forward_fn, params: ParamStore, inputs, target, step: float = 1e-5,
               entries_per_tensor: int = 8, seed: int = 0, threshold: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Checks every parameter tensor at up to ``entries_per_tensor`` seeded
    entry positions (all entries for small tensors).  Callers are expected
    to present inputs away from activation kinks; see
    :func:`margin_tracking` for measuring that.
    """
    forward_backward(forward_fn, params, inputs, target)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(threshold=threshold)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        size = flat.shape[0]
        if size <= entries_per_tensor:
            indices = np.arange(size)
        else:
            indices = np.sort(rng.choice(size, size=entries_per_tensor, replace=False))
        worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = forward_loss(forward_fn, params, inputs, target)
            flat[i] = orig - step
            f_minus = forward_loss(forward_fn, params, inputs, target)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        report.per_tensor[name] = worst
    report.passed = all(err <= threshold for err in report.per_tensor.values())
    return report
