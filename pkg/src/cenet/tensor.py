"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every tensor is a contiguous NCHW array of 32-bit floats (64-bit for
verification runs). Operators record themselves onto the active tape;
``backward`` replays the tape in reverse and accumulates gradients into
every tensor it reaches. A tape lives for exactly one forward/backward
pass and is confined to the thread that created it.
"""

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """A tensor shape violates an operator's contract."""


class ContractError(RuntimeError):
    """An operator was used outside its stated contract."""


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------

class Tensor:
    """A dense (N, C, H, W) array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "tape_node")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise DimensionError(f"tensors are 4-D (N, C, H, W), got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.tape_node = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


class Parameter(Tensor):
    """A named trainable tensor; the name keys optimizer and checkpoint state."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class _TapeNode:
    __slots__ = ("tape", "op_name", "inputs", "output", "backward_fn")

    def __init__(self, tape, op_name, inputs, output, backward_fn):
        self.tape = tape
        self.op_name = op_name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one forward pass.

    Recording order is the topological order; ``backward`` walks the node
    list in exact reverse. A tape is single-use: once consumed it cannot
    be replayed.
    """

    def __init__(self):
        self.nodes: list[_TapeNode] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _state().tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _state().tape_stack
        if not stack or stack[-1] is not self:
            raise ContractError("tape context exited out of order")
        stack.pop()
        return False


_LOCAL = threading.local()


def _state():
    if not hasattr(_LOCAL, "tape_stack"):
        _LOCAL.tape_stack = []
        _LOCAL.census_stack = []
    return _LOCAL


def _active_tape():
    stack = _state().tape_stack
    return stack[-1] if stack else None


@contextmanager
def op_census():
    """Collect per-operation invocation counts for the enclosed code."""
    counts: dict[str, int] = {}
    _state().census_stack.append(counts)
    try:
        yield counts
    finally:
        _state().census_stack.pop()


# Name of an op whose backward rule is deliberately corrupted; lets the
# gradient checker prove it actually detects wrong analytic gradients.
_FAULT_TARGET: str | None = None


def set_backward_fault(op_name: str | None):
    global _FAULT_TARGET
    _FAULT_TARGET = op_name


def _emit(op_name, out_data, inputs, backward_fn) -> Tensor:
    """Wrap an op result in a Tensor and record it on the active tape."""
    if not np.isfinite(out_data).all():
        raise ContractError(f"{op_name} produced non-finite values")
    out = Tensor(out_data)
    for counts in _state().census_stack:
        counts[op_name] = counts.get(op_name, 0) + 1
    tape = _active_tape()
    if tape is not None:
        if _FAULT_TARGET == op_name:
            inner = backward_fn

            def backward_fn(up):
                grads = list(inner(up))
                for i, g in enumerate(grads):
                    if g is not None:
                        grads[i] = g * 1.02
                        break
                return tuple(grads)

        node = _TapeNode(tape, op_name, inputs, out, backward_fn)
        tape.nodes.append(node)
        out.tape_node = node
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray):
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def backward(loss: Tensor):
    """Accumulate d(loss)/d(tensor) into every tensor on the loss's tape.

    The seed gradient is 1. Tensors feeding multiple consumers receive the
    sum over all paths. The tape is consumed: a second call is an error.
    """
    node = loss.tape_node
    if node is None:
        raise ContractError("backward() requires a loss recorded on an active tape")
    if loss.data.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    tape = node.tape
    if tape.consumed:
        raise ContractError("tape already consumed; build a new tape for another backward pass")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        upstream = node.output.grad
        if upstream is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward_fn(upstream)):
            if grad is not None:
                _accumulate(tensor, grad)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _conv_cols(padded: np.ndarray, k: int, stride: int) -> np.ndarray:
    """im2col: (N, Cin, Hp, Wp) -> (Cin*k*k, N*Ho*Wo) patch matrix.

    The channel-major layout keeps conv outputs NCHW-contiguous for the
    common batch-of-one case, avoiding a transpose on every call.
    """
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]          # (N, Cin, Ho, Wo, k, k)
    n, cin, ho, wo = windows.shape[:4]
    cols = np.ascontiguousarray(windows.transpose(1, 4, 5, 0, 2, 3))
    return cols.reshape(cin * k * k, n * ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` is (Cout, Cin, k, k) with odd k; ``bias`` is (1, Cout, 1, 1).
    Output extents follow floor((H + 2p - k) / stride) + 1. The backward
    rule yields gradients for the input, the weight, and the bias.
    """
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernels are square, got {kh}x{kw}")
    k = kh
    if k % 2 == 0:
        raise DimensionError(f"conv2d kernel size must be odd, got {k}")
    if wcin != cin:
        raise DimensionError(f"conv2d input has {cin} channels but weight expects {wcin}")
    if bias.shape != (1, cout, 1, 1):
        raise DimensionError(f"conv2d bias must have shape (1, {cout}, 1, 1), got {bias.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise DimensionError(f"conv2d padding must be non-negative, got {padding}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(
            f"conv2d kernel {k} exceeds padded input extents "
            f"({h + 2 * padding}x{w + 2 * padding})")

    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    wmat = weight.data.reshape(cout, cin * k * k)

    if k == 1 and stride == 1 and padding == 0:
        # 1x1 convolutions are plain channel mixes; skip im2col entirely.
        x_mat = (x.data.reshape(cin, h * w) if n == 1
                 else np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(cin, n * h * w))

        def backward_1x1(up):
            up_mat = (up.reshape(cout, h * w) if n == 1
                      else np.ascontiguousarray(up.transpose(1, 0, 2, 3)).reshape(cout, n * h * w))
            d_bias = up_mat.sum(axis=1).reshape(1, cout, 1, 1)
            d_weight = (up_mat @ x_mat.T).reshape(cout, cin, 1, 1)
            d_x_mat = wmat.T @ up_mat
            if n == 1:
                d_x = d_x_mat.reshape(1, cin, h, w)
            else:
                d_x = d_x_mat.reshape(cin, n, h, w).transpose(1, 0, 2, 3)
            return d_x, d_weight, d_bias

        out_mat = wmat @ x_mat + bias.data.reshape(cout, 1)
        out = (out_mat.reshape(1, cout, h, w) if n == 1
               else out_mat.reshape(cout, n, h, w).transpose(1, 0, 2, 3))
        return _emit("conv2d", out, (x, weight, bias), backward_1x1)

    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    cols = _conv_cols(padded, k, stride)
    out_mat = wmat @ cols
    out_mat += bias.data.reshape(cout, 1)
    if n == 1:
        out = out_mat.reshape(1, cout, ho, wo)
    else:
        out = out_mat.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)

    def backward_fn(up):
        if n == 1:
            up_mat = up.reshape(cout, ho * wo)
        else:
            up_mat = np.ascontiguousarray(up.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        d_bias = up_mat.sum(axis=1).reshape(1, cout, 1, 1)
        d_weight = (up_mat @ cols.T).reshape(cout, cin, k, k)
        d_cols = (wmat.T @ up_mat).reshape(cin, k, k, n, ho, wo)
        d_pad = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=up.dtype)
        for i in range(k):
            for j in range(k):
                d_pad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    d_cols[:, i, j].transpose(1, 0, 2, 3)
        if padding:
            d_x = d_pad[:, :, padding:padding + h, padding:padding + w]
        else:
            d_x = d_pad
        return d_x, d_weight, d_bias

    return _emit("conv2d", out, (x, weight, bias), backward_fn)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2.

    The backward rule routes each window's upstream gradient to the first
    maximal element in row-major window order, so gradient mass is
    deposited exactly once per window.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d requires even spatial extents, got {h}x{w}")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(n, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward_fn(up):
        d_flat = np.zeros_like(flat)
        np.put_along_axis(d_flat, arg[..., None], up[..., None], axis=-1)
        d_x = d_flat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (d_x.reshape(n, c, h, w),)

    return _emit("maxpool2d", out, (x,), backward_fn)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every element into a 2x2 block; backward sums the block."""
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward_fn(up):
        return (up.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _emit("upsample_nearest2x", out, (x,), backward_fn)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis, in argument order."""
    if not tensors:
        raise DimensionError("concat_channels needs at least one input")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise DimensionError(
                f"concat_channels inputs disagree on batch/spatial extents: "
                f"{tensors[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward_fn(up):
        return tuple(np.ascontiguousarray(g) for g in np.split(up, splits, axis=1))

    return _emit("concat_channels", out, tensors, backward_fn)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with a learnable per-channel negative slope."""
    n, c, h, w = x.shape
    if slope.shape != (1, c, 1, 1):
        raise DimensionError(f"prelu slope must have shape (1, {c}, 1, 1), got {slope.shape}")
    neg = x.data < 0
    out = np.where(neg, slope.data * x.data, x.data)

    def backward_fn(up):
        d_x = np.where(neg, slope.data, x.dtype.type(1)) * up
        d_slope = np.where(neg, x.data * up, 0).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        return d_x, d_slope

    return _emit("prelu", out, (x, slope), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax over the last axis, with per-row max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(up):
        dot = (up * out).sum(axis=-1, keepdims=True)
        return (out * (up - dot),)

    return _emit("softmax_rows", out, (x,), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes; leading axes must match."""
    if a.shape[:2] != b.shape[:2]:
        raise DimensionError(f"matmul leading axes disagree: {a.shape} vs {b.shape}")
    if a.shape[3] != b.shape[2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def backward_fn(up):
        d_a = up @ b.data.transpose(0, 1, 3, 2)
        d_b = a.data.transpose(0, 1, 3, 2) @ up
        return d_a, d_b

    return _emit("matmul", out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of identically shaped tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"add requires identical shapes, got {a.shape} and {b.shape}")
    out = a.data + b.data

    def backward_fn(up):
        return up, up

    return _emit("add", out, (a, b), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply every element by a constant."""
    f = x.dtype.type(factor)
    out = x.data * f

    def backward_fn(up):
        return (up * f,)

    return _emit("scale", out, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    """View the same elements under a new 4-D shape."""
    if len(shape) != 4:
        raise DimensionError(f"reshape target must be 4-D, got {shape}")
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape cannot map {x.shape} onto {tuple(shape)}")
    out = x.data.reshape(shape)

    def backward_fn(up):
        return (up.reshape(x.shape),)

    return _emit("reshape", out, (x,), backward_fn)


def permute(x: Tensor, axes: tuple[int, int, int, int]) -> Tensor:
    """Reorder the four axes by the given bijection."""
    if sorted(axes) != [0, 1, 2, 3]:
        raise DimensionError(f"permute axes must be a bijection of (0, 1, 2, 3), got {axes}")
    out = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward_fn(up):
        return (np.ascontiguousarray(up.transpose(inverse)),)

    return _emit("permute", out, (x,), backward_fn)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; the target is a constant.

    The subgradient at an exact zero difference is 0.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = np.abs(diff).mean().reshape(1, 1, 1, 1)

    def backward_fn(up):
        g = np.sign(diff) * (up.reshape(()) / pred.size)
        return g, None

    return _emit("l1_loss", out, (pred, target), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a (1, 1, 1, 1) tensor."""
    out = x.data.sum().reshape(1, 1, 1, 1)

    def backward_fn(up):
        return (np.full_like(x.data, up.reshape(())),)

    return _emit("tensor_sum", out, (x,), backward_fn)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Dot product with a constant weight array, as a scalar tensor."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise DimensionError(f"weighted_sum weights must match {x.shape}, got {w.shape}")
    out = (x.data * w).sum().reshape(1, 1, 1, 1)

    def backward_fn(up):
        return (w * up.reshape(()),)

    return _emit("weighted_sum", out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradcheckResult:
    """Outcome of one analytic-vs-numeric gradient comparison."""

    name: str
    tolerance: float
    per_input: list[float] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_input) if self.per_input else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradcheck(forward_fn, inputs, h: float = 1e-5, tol: float = 1e-4,
              rng=None, max_coords: int | None = None, name: str = "op") -> GradcheckResult:
    """Compare analytic gradients against central finite differences.

    ``forward_fn()`` recomputes the output from the current contents of
    ``inputs``, which must be float64 tensors; differences are taken in
    64-bit arithmetic with step ``h``. The output is scalarized by a fixed
    random weighting so the full Jacobian is exercised. With
    ``max_coords`` set, only a deterministic random subset of each
    input's coordinates is probed (needed to keep whole-network checks
    fast). Failure is a report outcome, not an exception.
    """
    if h <= 0:
        raise ContractError("gradcheck step h must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("gradcheck inputs must be float64 tensors")
        t.grad = None

    with Tape():
        out = forward_fn()
        probe = rng.standard_normal(out.shape)
        loss = weighted_sum(out, probe)
        backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def scalar_eval() -> float:
        return float((forward_fn().data * probe).sum())

    result = GradcheckResult(name=name, tolerance=tol)
    scale_floor = max(max(np.abs(a).max() for a in analytic), 1e-6)
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = scalar_eval()
            flat[c] = orig - h
            f_minus = scalar_eval()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            ana = a.reshape(-1)[c]
            denom = max(abs(ana), abs(numeric), 1e-3 * scale_floor, 1e-12)
            worst = max(worst, abs(ana - numeric) / denom)
        result.per_input.append(worst)
    return result
