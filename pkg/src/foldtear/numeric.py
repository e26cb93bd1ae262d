"""Dense-tensor math with reverse-mode differentiation and Adam.

Arrays are plain numpy; every differentiable op builds a node graph on the
fly (define-by-run tape).  float32 is the training default, float64 is used
for gradient checks and oracles.  Single-threaded evaluation is bitwise
deterministic.
"""

from __future__ import annotations

import json
import zipfile
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class NonFiniteGradient(FloatingPointError):
    """Raised by the optimizer when a parameter gradient is not finite."""


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff.

    ``_parents`` and ``_backward`` record how the tensor was produced;
    tensors created directly (leaves) have neither.  ``grad`` is allocated
    lazily by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def __float__(self) -> float:
        if self.data.ndim != 0:
            raise ShapeError(f"only scalar tensors convert to float, "
                             f"got shape {self.data.shape}")
        return float(self.data)

    # convenience operators; all defer to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, s):
        return scale(self, s)

    def __rmul__(self, s):
        return scale(self, s)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, params: Iterable["Tensor"] = ()) -> None:
        backward(self, params=params)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Create a graph node; skips recording when no parent needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def make_op(data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Public hook for fused ops defined outside this module.

    ``backward_fn(grad_out)`` must accumulate into ``parent.grad`` (already
    allocated and zeroed) for every parent with ``requires_grad``.
    """
    return _node(np.asarray(data), parents, backward_fn)


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return _node(out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a bias vector (f,) against (n, f)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def bwd(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def bwd(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g.sum(axis=0)
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    return _node(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad -= g

    return _node(a.data - b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a.grad += s * g

    return _node(a.data * s, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)

    def bwd(g):
        if a.requires_grad:
            a.grad += g * (a.data > 0)

    return _node(out, (a,), bwd)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the last axis."""
    ts = [as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1 or any(t.data.ndim != 2 for t in ts):
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    widths = [t.shape[1] for t in ts]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += g[:, lo:hi]

    return _node(np.concatenate([t.data for t in ts], axis=1), ts, bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] invalid for shape {a.shape}")

    def bwd(g):
        if a.requires_grad:
            a.grad[start:stop] += g

    return _node(a.data[start:stop].copy(), (a,), bwd)


def repeat_interleave_rows(a: Tensor, reps: int) -> Tensor:
    """Repeat each row ``reps`` times: (b, f) -> (b*reps, f)."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"repeat_interleave_rows: need 2-D input, got {a.shape}")
    b, f = a.shape

    def bwd(g):
        if a.requires_grad:
            a.grad += g.reshape(b, reps, f).sum(axis=1)

    return _node(np.repeat(a.data, reps, axis=0), (a,), bwd)


def max_over_segments(a: Tensor, num_segments: int) -> Tensor:
    """Per-feature max over equal-length row segments: (b*n, f) -> (b, f).

    The argmax per (segment, feature) is recorded at forward time; ties go
    to the first index so the backward pass is deterministic.
    """
    a = as_tensor(a)
    if a.data.ndim != 2 or a.shape[0] % num_segments != 0:
        raise ShapeError(
            f"max_over_segments: {a.shape} does not split into {num_segments} segments")
    n = a.shape[0] // num_segments
    f = a.shape[1]
    view = a.data.reshape(num_segments, n, f)
    arg = view.argmax(axis=1)  # first max wins
    out = np.take_along_axis(view, arg[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        if a.requires_grad:
            gv = a.grad.reshape(num_segments, n, f)
            np.add.at(gv, (np.arange(num_segments)[:, None], arg,
                           np.arange(f)[None, :]), g)

    t = _node(out, (a,), bwd)
    t.name = "max_over_segments"
    return t


def max_over_rows(a: Tensor) -> Tensor:
    """Max over the point axis of an (n, f) tensor, keeping a (1, f) row."""
    return max_over_segments(a, 1)


def mean_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    inv = 1.0 / a.data.size

    def bwd(g):
        if a.requires_grad:
            a.grad += g * inv

    return _node(np.asarray(a.data.mean(), dtype=a.dtype), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.grad += g

    return _node(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bwd)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children order over the recorded graph (iterative)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Gradients are reset at entry, so calling twice on the same graph gives
    identical results.  Tensors listed in ``params`` that do not appear in
    the graph receive an exact-zero gradient.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    on_tape = {id(t) for t in order}
    # np.zeros gets lazily-zeroed pages; cheaper than zeros_like's memset
    for t in order:
        if t.requires_grad:
            t.grad = np.zeros(t.data.shape, t.data.dtype)
    for p in params:
        if p.requires_grad and id(p) not in on_tape:
            p.grad = np.zeros(p.data.shape, p.data.dtype)
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for t in reversed(order):
        if t._backward is not None:
            t._backward(t.grad)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        """One update from the gradients currently stored on the params."""
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.params:
            self.m[k] = np.array(state["m"][k])
            self.v[k] = np.array(state["v"][k])


# ---------------------------------------------------------------------------
# initialization and gradient checking
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Uniform in +-sqrt(6/(fan_in+fan_out)), the reproducible default init."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def finite_difference_check(params: dict[str, Tensor],
                            forward: Callable[[], Tensor],
                            h: float = 1e-6,
                            max_entries_per_param: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central finite differences.

    ``forward`` must rebuild the loss from the live ``params`` each call.
    Returns the max relative error over the checked entries; entries are
    subsampled per parameter when ``max_entries_per_param`` is set.
    """
    loss = forward()
    backward(loss, params=params.values())
    analytic = {k: p.grad.copy() for k, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = float(forward().data)
            flat[i] = orig - h
            down = float(forward().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            an = float(analytic[name].reshape(-1)[i])
            denom = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: dict[str, Tensor],
                    adam_state: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write a versioned npz bundle of named tensors plus optimizer state.

    Layout: ``meta.json`` (version, caller metadata), ``param/<name>``, and
    when optimizer state is present ``adam/m/<name>``, ``adam/v/<name>``
    plus scalars inside the metadata.  See README for the format contract.
    """
    arrays = {f"param/{k}": p.data for k, p in params.items()}
    full_meta = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    if adam_state is not None:
        arrays.update({f"adam/m/{k}": v for k, v in adam_state["m"].items()})
        arrays.update({f"adam/v/{k}": v for k, v in adam_state["v"].items()})
        full_meta["adam"] = {k: adam_state[k]
                             for k in ("step", "lr", "beta1", "beta2", "eps")}
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(full_meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None, dict]:
    """Read a checkpoint; returns (params, adam_state or None, meta)."""
    try:
        bundle = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    raw = bundle["__meta__"].tobytes().decode()
    full_meta = json.loads(raw)
    if full_meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint {path}: unsupported version {full_meta.get('version')!r}")
    params = {k[len("param/"):]: bundle[k] for k in bundle.files
              if k.startswith("param/")}
    adam_state = None
    if "adam" in full_meta:
        adam_state = dict(full_meta["adam"])
        adam_state["m"] = {k[len("adam/m/"):]: bundle[k] for k in bundle.files
                           if k.startswith("adam/m/")}
        adam_state["v"] = {k[len("adam/v/"):]: bundle[k] for k in bundle.files
                           if k.startswith("adam/v/")}
    return params, adam_state, full_meta["meta"]
