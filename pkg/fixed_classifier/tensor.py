"""
Tensor Module

Minimal dense tensor engine with reverse-mode automatic differentiation.

All values are double precision. Every operation records the tensors it was
computed from, a rule that recomputes its value from those inputs, and a rule
that pushes gradients back to them. A ``Graph`` orders these nodes
topologically, runs the backward pass, and can replay the forward pass after a
leaf has been perturbed, which is what the finite-difference checker uses.

The operation set covers small MLP and CNN classifiers:
    matmul, add (broadcasting), mul, scale, relu, transpose, reshape, flatten,
    conv2d (3x3, zero padding 1, stride 1 or 2), global_avg_pool,
    l2_normalize, sum_all, softmax_cross_entropy
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, DimensionError, LabelRangeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence, np.ndarray]

DEFAULT_EPS = 1e-12
FD_STEP = 1e-5
GRAD_FLOOR = 1e-6      # below this gradient magnitude the check is absolute
GRAD_ABS_TOL = 1e-8


class Tensor:
    """
    Dense n-dimensional array of float64 values that can take part in a
    recorded computation graph.

    Args:
        data: Initial values (copied and converted to float64)
        requires_grad: Whether gradients should be accumulated for this tensor
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: Tuple["Tensor", ...] = ()
        self._op = "leaf"
        self._forward: Optional[Callable[[], np.ndarray]] = None
        self._backward: Callable[[], None] = lambda: None

    @classmethod
    def _node(cls, forward: Callable[[], np.ndarray], parents: Tuple["Tensor", ...], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(forward(), dtype=np.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = np.zeros_like(out.data) if out.requires_grad else None
        out._parents = parents
        out._op = op
        out._forward = forward
        out._backward = lambda: None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self):
        """Reset the gradient accumulator (no-op for non-trainable tensors)."""
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        """Return a non-trainable leaf holding a copy of the values."""
        return Tensor(self.data.copy())

    def backward(self) -> "Graph":
        """
        Run reverse-mode differentiation from this scalar tensor.

        Returns:
            The Graph that was traversed
        """
        graph = Graph(self)
        graph.backward()
        return graph

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"


def _accumulate(target: Tensor, contribution: np.ndarray):
    if target.requires_grad:
        target.grad += contribution


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ========== Graph ==========

@dataclass
class GraphNode:
    """One recorded operation: tag, positions of its inputs, and its output."""
    op: str
    inputs: Tuple[int, ...]
    output: Tensor


class Graph:
    """
    Topologically ordered view of the computation that produced ``output``.

    Every node's inputs precede it in ``nodes``; the backward pass visits each
    node exactly once, in reverse order.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[GraphNode] = []
        index: Dict[int, int] = {}

        # Iterative post-order DFS; deep encoders would hit the recursion limit otherwise
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if id(tensor) in index:
                continue
            if expanded:
                inputs = tuple(index[id(p)] for p in tensor._parents)
                index[id(tensor)] = len(self.nodes)
                self.nodes.append(GraphNode(op=tensor._op, inputs=inputs, output=tensor))
                continue
            stack.append((tensor, True))
            for parent in reversed(tensor._parents):
                if id(parent) not in index:
                    stack.append((parent, False))

    def leaves(self) -> List[Tensor]:
        return [node.output for node in self.nodes if node.output.is_leaf]

    def parameters(self) -> List[Tensor]:
        """Leaf tensors that accumulate gradients."""
        return [t for t in self.leaves() if t.requires_grad]

    def recompute(self):
        """Replay every forward rule from the current leaf values."""
        for node in self.nodes:
            if node.output._forward is not None:
                node.output.data = np.asarray(node.output._forward(), dtype=np.float64)

    def backward(self):
        if self.output.data.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {self.output.shape}")
        if not self.output.requires_grad:
            return
        for node in self.nodes:
            tensor = node.output
            if not tensor.is_leaf and tensor.requires_grad:
                tensor.grad = np.zeros_like(tensor.data)
        self.output.grad = np.ones_like(self.output.data)
        for node in reversed(self.nodes):
            if node.output.requires_grad:
                node.output._backward()


# ========== Operations ==========

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a (p x q) and b (q x r).

    Raises:
        DimensionError: If the operands are not 2-D or inner extents differ
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    out = Tensor._node(lambda: a.data @ b.data, (a, b), "matmul")

    def backward():
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (used for bias terms)."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")

    out = Tensor._node(lambda: a.data + b.data, (a, b), "add")

    def backward():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")

    out = Tensor._node(lambda: a.data * b.data, (a, b), "mul")

    def backward():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

    out._backward = backward
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    factor = float(factor)
    out = Tensor._node(lambda: x.data * factor, (x,), "scale")

    def backward():
        _accumulate(x, out.grad * factor)

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    """Rectified linear unit; the gradient at exactly 0 is 0."""
    out = Tensor._node(lambda: np.maximum(x.data, 0.0), (x,), "relu")

    def backward():
        _accumulate(x, np.where(x.data > 0.0, out.grad, 0.0))

    out._backward = backward
    return out


def transpose(x: Tensor) -> Tensor:
    """Transpose of a 2-D tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {x.shape}")

    out = Tensor._node(lambda: x.data.T, (x,), "transpose")

    def backward():
        _accumulate(x, out.grad.T)

    out._backward = backward
    return out


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        np.empty(x.shape).reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")

    out = Tensor._node(lambda: x.data.reshape(shape), (x,), "reshape")

    def backward():
        _accumulate(x, out.grad.reshape(x.shape))

    out._backward = backward
    return out


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:], dtype=np.int64))))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out = Tensor._node(lambda: np.asarray(x.data.sum()), (x,), "sum_all")

    def backward():
        _accumulate(x, np.broadcast_to(out.grad, x.shape).copy())

    out._backward = backward
    return out


def _conv_columns(xp: np.ndarray, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Gather the nine shifted views of a padded batch: (n, c, 3, 3, out_h, out_w)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, 3, 3, out_h, out_w), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + stride * (out_h - 1) + 1:stride,
                                  j:j + stride * (out_w - 1) + 1:stride]
    return cols


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """
    3x3 cross-correlation (no kernel flip) with zero padding of 1.

    Args:
        x: Input batch, shape (n, c, h, w)
        kernel: Filters, shape (o, c, 3, 3)
        stride: 1 or 2; output spatial extent is ceil(h / stride)

    Returns:
        Tensor of shape (n, o, ceil(h/stride), ceil(w/stride))
    """
    if stride not in (1, 2):
        raise ContractError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or kernel.data.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects (n,c,h,w) input and (o,c,3,3) kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")

    n, c, h, w = x.shape
    out_h = -(-h // stride)
    out_w = -(-w // stride)

    def forward():
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = _conv_columns(xp, stride, out_h, out_w)
        return np.einsum("ncijhw,ocij->nohw", cols, kernel.data)

    out = Tensor._node(forward, (x, kernel), "conv2d")

    def backward():
        g = out.grad
        if kernel.requires_grad:
            xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
            cols = _conv_columns(xp, stride, out_h, out_w)
            kernel.grad += np.einsum("nohw,ncijhw->ocij", g, cols)
        if x.requires_grad:
            dcols = np.einsum("nohw,ocij->ncijhw", g, kernel.data)
            dxp = np.zeros((n, c, h + 2, w + 2), dtype=np.float64)
            for i in range(3):
                for j in range(3):
                    dxp[:, :, i:i + stride * (out_h - 1) + 1:stride,
                        j:j + stride * (out_w - 1) + 1:stride] += dcols[:, :, i, j]
            x.grad += dxp[:, :, 1:-1, 1:-1]

    out._backward = backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (n, c, h, w) -> (n, c)."""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects (n,c,h,w), got {x.shape}")
    area = x.shape[2] * x.shape[3]

    out = Tensor._node(lambda: x.data.mean(axis=(2, 3)), (x,), "global_avg_pool")

    def backward():
        _accumulate(x, np.broadcast_to(out.grad[:, :, None, None] / area, x.shape).copy())

    out._backward = backward
    return out


def l2_normalize(v: Tensor, axis: int = -1, eps: float = DEFAULT_EPS) -> Tensor:
    """
    Divide every slice along ``axis`` by max(||slice||_2, eps).

    Slices whose norm does not exceed eps (in particular zero vectors) map to
    zero with zero gradient.
    """
    if eps < 0:
        raise ContractError(f"eps must be non-negative, got {eps}")

    def norms():
        return np.sqrt(np.sum(v.data * v.data, axis=axis, keepdims=True))

    out = Tensor._node(lambda: v.data / np.maximum(norms(), eps), (v,), "l2_normalize")

    def backward():
        norm = norms()
        denom = np.maximum(norm, eps)
        y = v.data / denom
        g = out.grad
        dx = (g - y * np.sum(g * y, axis=axis, keepdims=True)) / denom
        _accumulate(v, np.where(norm > eps, dx, 0.0))

    out._backward = backward
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax; rows sum to 1 for any finite logits."""
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Union[Sequence[int], np.ndarray]) -> Tensor:
    """
    Mean cross-entropy of softmax(logits) against integer labels.

    Args:
        logits: Tensor of shape (n, m)
        labels: n integers in [0, m)

    Returns:
        Scalar tensor; its gradient w.r.t. logits is (softmax - one_hot) / n

    Raises:
        LabelRangeError: If a label is outside [0, m)
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects (n, m) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, m = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} rows of logits")
    if np.any(labels < 0) or np.any(labels >= m):
        raise LabelRangeError(f"labels must lie in [0, {m}), got range [{labels.min()}, {labels.max()}]")
    rows = np.arange(n)

    out = Tensor._node(lambda: np.asarray(-log_softmax(logits.data)[rows, labels].mean()),
                       (logits,), "softmax_cross_entropy")

    def backward():
        grad = softmax(logits.data)
        grad[rows, labels] -= 1.0
        _accumulate(logits, grad * (out.grad / n))

    out._backward = backward
    return out


# ========== Gradient checking ==========

def numerical_gradient(graph: Graph, leaf: Tensor, step: float = FD_STEP) -> np.ndarray:
    """
    Central finite-difference gradient of the graph output w.r.t. ``leaf``.

    The leaf is restored and the graph replayed before returning.
    """
    if graph.output.data.size != 1:
        raise ContractError(f"gradient checking needs a scalar output, got shape {graph.output.shape}")
    estimate = np.zeros_like(leaf.data)
    for idx in np.ndindex(leaf.data.shape):
        original = leaf.data[idx]
        leaf.data[idx] = original + step
        graph.recompute()
        f_plus = float(graph.output.data)
        leaf.data[idx] = original - step
        graph.recompute()
        f_minus = float(graph.output.data)
        leaf.data[idx] = original
        estimate[idx] = (f_plus - f_minus) / (2.0 * step)
    graph.recompute()
    return estimate


def gradients_agree(analytic: ArrayLike, numeric: ArrayLike, tol: float = 1e-5) -> bool:
    """
    Compare one leaf's analytic and finite-difference gradients.

    The reference magnitude is the largest entry of either gradient. At or
    above GRAD_FLOOR the largest entry difference must stay below
    tol * reference; below it, below GRAD_ABS_TOL.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return True
    difference = float(np.max(np.abs(analytic - numeric)))
    reference = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    if reference < GRAD_FLOOR:
        return difference < GRAD_ABS_TOL
    return difference < tol * reference


def grad_check(graph: Graph, tol: float = 1e-5, step: float = FD_STEP) -> bool:
    """
    Compare reverse-mode gradients with central finite differences.

    Args:
        graph: Graph whose output is a scalar
        tol: Relative tolerance
        step: Finite-difference step

    Returns:
        True iff every trainable leaf gradient agrees

    Raises:
        ContractError: If the graph output is not a scalar
    """
    if graph.output.data.size != 1:
        raise ContractError(f"gradient checking needs a scalar output, got shape {graph.output.shape}")
    params = graph.parameters()
    for p in params:
        p.zero_grad()
    graph.backward()
    analytic = [p.grad.copy() for p in params]

    for position, (p, a) in enumerate(zip(params, analytic)):
        numeric = numerical_gradient(graph, p, step)
        if not gradients_agree(a, numeric, tol):
            worst = float(np.max(np.abs(a - numeric)))
            logger.debug("gradient mismatch on leaf %d (shape %s): max abs diff %.3e",
                         position, p.shape, worst)
            return False
    return True
