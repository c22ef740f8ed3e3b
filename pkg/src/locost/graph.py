"""Minimal reverse-mode autodiff over numpy arrays, plus a finite-difference checker."""

import contextlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float array that may take part in a recorded computation.

    Leaf tensors created with ``requires_grad=True`` accumulate ``.grad`` when a
    downstream scalar calls ``backward``. Interior nodes keep a closure mapping
    the upstream gradient to one gradient per parent; the tape is dropped once
    ``backward`` has consumed it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from .nn import add

        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from .nn import mul

        return mul(self, other)

    __rmul__ = __mul__

    def backward(self, grad=None):
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data, parents, backward):
    """Wrap an op result; attach ``backward`` only if some parent needs a gradient."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


class ParameterStore:
    """Named trainable tensors, in registration order."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_values(self):
        return sum(t.size for t in self._params.values())

    def state(self):
        return OrderedDict((k, t.data) for k, t in self._params.items())

    def load_state(self, arrays):
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            value = np.asarray(arrays[name])
            if value.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} != {t.shape}")
            t.data = value.astype(t.data.dtype, copy=True)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def rel_error(a, b):
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def grad_check(f, params, eps=1e-5, tol=1e-6, max_components=200, seed=0, stencil=2):
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``stencil`` is 2 (the usual two-point rule) or 4 (fourth-order five-point
    rule, useful when the loss is strongly curved). Tensors larger than
    ``max_components`` are checked on a seeded random subset.
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    if isinstance(params, ParameterStore):
        named = list(params.items())
    elif isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(getattr(t, "name", None) or str(i), t) for i, t in enumerate(params)]
    for _, t in named:
        t.grad = None
    f().backward()
    rng = np.random.default_rng(seed)
    worst, checked, per_param = 0.0, 0, {}
    for name, t in named:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        if t.size > max_components:
            idx = np.sort(rng.choice(t.size, size=max_components, replace=False))
        else:
            idx = np.arange(t.size)
        flat = t.data.reshape(-1)
        errs = []
        for i in idx:
            orig = flat[i]

            def at(step):
                flat[i] = orig + step
                return f().item()

            with no_grad():
                if stencil == 2:
                    fd = (at(eps) - at(-eps)) / (2 * eps)
                else:
                    fd = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps)
            flat[i] = orig
            errs.append(rel_error(analytic.reshape(-1)[i], fd))
        per_param[name] = float(max(errs)) if errs else 0.0
        worst = max(worst, per_param[name])
        checked += len(idx)
    return GradCheckReport(max_rel_error=float(worst), tol=tol, checked=checked, per_param=per_param)
