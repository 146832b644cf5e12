"""Reverse-mode automatic differentiation over dense numpy tensors.

A :class:`Graph` is built fresh for every batch: creating an operation node
computes its value immediately (eager forward), and :meth:`Graph.backward`
runs one reverse sweep in creation order, which is a valid topological order
by construction.  Graphs are single-threaded and discarded after use;
parameter arrays live outside the graph and are attached per batch, so the
set of parameters a batch touches is exactly the set registered on its
graph.

Float dtype is fixed per graph: float32 for training and decoding, float64
for gradient verification.  The elementwise / softmax / attention inner
loops are delegated to :mod:`tasknmt.kernels`, which is either the compiled
extension or the numpy fallback; matrix products go straight to BLAS.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible with the operation."""


class GraphError(RuntimeError):
    """Graph-level contract violation (non-scalar loss, dtype mix, ...)."""


class Node:
    """One value in the computation graph.

    ``idx`` is the creation index and doubles as the topological order;
    inputs always have a smaller ``idx``.  ``grad`` is populated by
    :meth:`Graph.backward` and has the same shape as ``value``.
    """

    __slots__ = ("graph", "idx", "kind", "inputs", "value", "grad", "cache",
                 "needs_grad", "name")

    def __init__(self, graph, idx, kind, inputs, value, cache, needs_grad,
                 name=None):
        self.graph = graph
        self.idx = idx
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.grad = None
        self.cache = cache
        self.needs_grad = needs_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.idx}, {self.kind}, shape={self.value.shape})"


class Graph:
    """A dynamically built, single-use computation graph."""

    def __init__(self, dtype=np.float32, check_finite=False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes = []
        self.params = {}
        # op-private per-graph cache (e.g. stacked GRU weight blocks);
        # safe because parameter values never change within one graph
        self.cache = {}

    def _add(self, kind, inputs, value, cache=None, needs_grad=None,
             name=None):
        if value.dtype != self.dtype:
            raise GraphError(
                f"op {kind} produced dtype {value.dtype}, graph is "
                f"{self.dtype}")
        if self.check_finite and not np.all(np.isfinite(value)):
            raise GraphError(f"non-finite value out of op {kind}")
        if needs_grad is None:
            needs_grad = any(n.needs_grad for n in inputs)
        node = Node(self, len(self.nodes), kind, inputs, value, cache,
                    needs_grad, name)
        self.nodes.append(node)
        return node

    def input(self, array):
        """Leaf holding a constant; no gradient flows into it."""
        array = np.asarray(array, dtype=self.dtype)
        return self._add("input", (), array, needs_grad=False)

    def param(self, name, array):
        """Leaf registered as a trainable parameter.

        The array is attached by reference (no copy) and must already have
        the graph dtype, so that training updates between batches are seen
        by the next graph.
        """
        if name in self.params:
            raise GraphError(f"parameter {name!r} registered twice")
        array = np.asarray(array)
        if array.dtype != self.dtype:
            raise GraphError(
                f"parameter {name!r} has dtype {array.dtype}, graph is "
                f"{self.dtype}")
        node = self._add("param", (), array, needs_grad=True, name=name)
        self.params[name] = node
        return node

    def backward(self, loss):
        """Populate gradients of everything ``loss`` depends on."""
        if loss.graph is not self:
            raise GraphError("loss node belongs to a different graph")
        if loss.value.shape != ():
            raise GraphError(
                f"backward needs a scalar loss, got shape {loss.value.shape}")
        loss.grad = np.ones((), dtype=self.dtype)
        for idx in range(loss.idx, -1, -1):
            node = self.nodes[idx]
            if node.grad is None:
                continue
            rule = _BACKWARD.get(node.kind)
            if rule is not None:
                rule(node)

    def gradients(self):
        """name -> gradient array for every parameter the loss touched."""
        return {name: n.grad for name, n in self.params.items()
                if n.grad is not None}


def _acc(node, delta, own):
    """Accumulate ``delta`` into ``node.grad``.

    ``own=True`` donates the buffer (caller promises no other grad slot
    aliases it); ``own=False`` copies on first assignment.
    """
    if not node.needs_grad:
        return
    if node.grad is None:
        node.grad = delta if own else delta.copy()
    else:
        node.grad += delta


def _ensure_grad(node):
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    return node.grad


def _same_graph(*nodes):
    g = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not g:
            raise GraphError("operands belong to different graphs")
    return g


# ---------------------------------------------------------------------------
# operations


def matmul(a, b):
    g = _same_graph(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or \
            a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul shapes {a.value.shape} x {b.value.shape} do not chain")
    return g._add("matmul", (a, b), a.value @ b.value)


def _matmul_bw(node):
    a, b = node.inputs
    g = node.grad
    _acc(a, g @ b.value.T, own=True)
    _acc(b, a.value.T @ g, own=True)


def _binary(kind, a, b):
    g = _same_graph(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(
            f"{kind} operands have shapes {a.value.shape} vs "
            f"{b.value.shape}")
    return g


def add(a, b):
    g = _binary("add", a, b)
    return g._add("add", (a, b), a.value + b.value)


def _add_bw(node):
    a, b = node.inputs
    _acc(a, node.grad, own=True)
    _acc(b, node.grad, own=False)


def sub(a, b):
    g = _binary("sub", a, b)
    return g._add("sub", (a, b), a.value - b.value)


def _sub_bw(node):
    a, b = node.inputs
    _acc(a, node.grad, own=True)
    _acc(b, -node.grad, own=True)


def mul(a, b):
    g = _binary("mul", a, b)
    return g._add("mul", (a, b), a.value * b.value)


def _mul_bw(node):
    a, b = node.inputs
    _acc(a, node.grad * b.value, own=True)
    _acc(b, node.grad * a.value, own=True)


def one_minus(a):
    return a.graph._add("one_minus", (a,), 1.0 - a.value)


def _one_minus_bw(node):
    _acc(node.inputs[0], -node.grad, own=True)


def scale(a, c):
    return a.graph._add("scale", (a,), a.value * a.graph.dtype.type(c),
                        cache=float(c))


def _scale_bw(node):
    _acc(node.inputs[0], node.grad * node.graph.dtype.type(node.cache),
         own=True)


def tanh(a):
    return a.graph._add("tanh", (a,), kernels.tanh(a.value))


def _tanh_bw(node):
    _acc(node.inputs[0], kernels.tanh_grad(node.value, node.grad), own=True)


def sigmoid(a):
    return a.graph._add("sigmoid", (a,), kernels.sigmoid(a.value))


def _sigmoid_bw(node):
    _acc(node.inputs[0], kernels.sigmoid_grad(node.value, node.grad),
         own=True)


def gru_blend(z, h, cand):
    g = _same_graph(z, h, cand)
    if not (z.value.shape == h.value.shape == cand.value.shape):
        raise ShapeError(
            f"gru_blend operands have shapes {z.value.shape}, "
            f"{h.value.shape}, {cand.value.shape}")
    return g._add("gru_blend", (z, h, cand),
                  kernels.gru_blend(z.value, h.value, cand.value))


def _gru_blend_bw(node):
    z, h, cand = node.inputs
    dz, dh, dcand = kernels.gru_blend_grad(z.value, h.value, cand.value,
                                           node.grad)
    _acc(z, dz, own=True)
    _acc(h, dh, own=True)
    _acc(cand, dcand, own=True)


def gru_cell(x, h_prev, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h):
    """A full GRU transition as one node.

    Semantically identical to composing affine/sigmoid/mul/tanh/gru_blend,
    but the whole cell costs one node and its backward runs as a handful
    of fused kernel passes plus BLAS products.  The gate math is
    z = sigm(W_z x + U_z h + b_z), r = sigm(W_r x + U_r h + b_r),
    c = tanh(W_h x + U_h (r o h) + b_h), out = (1 - z) h + z c.
    """
    inputs = (x, h_prev, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h)
    g = _same_graph(*inputs)
    d = u_z.value.shape[0]
    if x.value.ndim != 2 or h_prev.value.shape != (d, x.value.shape[1]):
        raise ShapeError(
            f"gru_cell got x {x.value.shape}, h {h_prev.value.shape} for "
            f"state size {d}")
    xv, hv = x.value, h_prev.value
    # the three input projections (and two state projections) run as one
    # stacked product each; the stacked blocks are cached on the graph so
    # every step of a sequence reuses them
    key_w = ("gru_w", w_z.idx, w_r.idx, w_h.idx)
    w3 = g.cache.get(key_w)
    if w3 is None:
        w3 = g.cache[key_w] = np.concatenate(
            [w_z.value, w_r.value, w_h.value], axis=0)
    key_u = ("gru_u", u_z.idx, u_r.idx)
    u2 = g.cache.get(key_u)
    if u2 is None:
        u2 = g.cache[key_u] = np.concatenate([u_z.value, u_r.value],
                                             axis=0)
    a3 = w3 @ xv
    a3[:2 * d] += u2 @ hv
    az = a3[:d]
    az += b_z.value[:, None]
    ar = a3[d:2 * d]
    ar += b_r.value[:, None]
    z, r, rh = kernels.gru_gates_fwd(az, ar, hv)
    ac = a3[2 * d:]
    ac += u_h.value @ rh
    ac += b_h.value[:, None]
    c, out = kernels.gru_out_fwd(ac, z, hv)
    return g._add("gru_cell", inputs, out,
                  cache=(z, r, rh, c, key_w, key_u))


def _gru_cell_bw(node):
    x, h, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h = node.inputs
    z, r, rh, c, key_w, key_u = node.cache
    d = z.shape[0]
    g = node.grad
    dz, dac, dh = kernels.gru_out_bwd(g, z, c, h.value)
    drh = u_h.value.T @ dac
    daz, dar, dh2 = kernels.gru_gates_bwd(drh, dz, z, r, h.value)
    dh += dh2
    stack = np.concatenate([daz, dar, dac], axis=0)
    w3 = node.graph.cache[key_w]
    u2 = node.graph.cache[key_u]
    dh += u2.T @ stack[:2 * d]
    _acc(x, w3.T @ stack, own=True)
    _acc(h, dh, own=True)
    dw3 = stack @ x.value.T
    _acc(w_z, dw3[:d], own=True)
    _acc(w_r, dw3[d:2 * d], own=True)
    _acc(w_h, dw3[2 * d:], own=True)
    du2 = stack[:2 * d] @ h.value.T
    _acc(u_z, du2[:d], own=True)
    _acc(u_r, du2[d:], own=True)
    _acc(u_h, dac @ rh.T, own=True)
    db3 = stack.sum(axis=1)
    _acc(b_z, db3[:d], own=True)
    _acc(b_r, db3[d:2 * d], own=True)
    _acc(b_h, db3[2 * d:], own=True)


def affine(bias, *terms):
    """sum_i W_i @ x_i + bias broadcast over columns.

    bias: (d,), each term (W: (d, k_i), x: (k_i, B)).  One node for the
    whole affine map keeps per-batch graphs small.
    """
    nodes = [bias]
    for w, x in terms:
        nodes.extend((w, x))
    g = _same_graph(*nodes)
    if bias.value.ndim != 1 or not terms:
        raise ShapeError("affine needs a 1-D bias and at least one term")
    d = bias.value.shape[0]
    cols = terms[0][1].value.shape[1]
    for w, x in terms:
        if w.value.ndim != 2 or x.value.ndim != 2 or \
                w.value.shape != (d, x.value.shape[0]) or \
                x.value.shape[1] != cols:
            raise ShapeError(
                f"affine term {w.value.shape} @ {x.value.shape} does not "
                f"produce ({d}, {cols})")
    w0, x0 = terms[0]
    out = w0.value @ x0.value
    for w, x in terms[1:]:
        out += w.value @ x.value
    out += bias.value[:, None]
    return g._add("affine", tuple(nodes), out)


def _affine_bw(node):
    g = node.grad
    bias = node.inputs[0]
    _acc(bias, g.sum(axis=1), own=True)
    rest = node.inputs[1:]
    for i in range(0, len(rest), 2):
        w, x = rest[i], rest[i + 1]
        _acc(w, g @ x.value.T, own=True)
        _acc(x, w.value.T @ g, own=True)


def softmax(a):
    """Softmax of a 1-D logits vector, max-shifted for stability."""
    if a.value.ndim != 1 or a.value.shape[0] < 1:
        raise ShapeError(f"softmax needs a non-empty vector, got shape "
                         f"{a.value.shape}")
    y = kernels.softmax_columns(a.value.reshape(-1, 1))[:, 0]
    return a.graph._add("softmax", (a,), np.ascontiguousarray(y))


def _softmax_bw(node):
    y = node.value.reshape(-1, 1)
    g = node.grad.reshape(-1, 1)
    dx = kernels.softmax_columns_grad(np.ascontiguousarray(y),
                                      np.ascontiguousarray(g))
    _acc(node.inputs[0], dx[:, 0], own=False)


def softmax_columns(a):
    """Independent softmax down each column of a 2-D array."""
    if a.value.ndim != 2 or a.value.shape[0] < 1:
        raise ShapeError(f"softmax_columns needs a 2-D array, got shape "
                         f"{a.value.shape}")
    return a.graph._add("softmax_columns", (a,),
                        kernels.softmax_columns(a.value))


def _softmax_columns_bw(node):
    dx = kernels.softmax_columns_grad(node.value, node.grad)
    _acc(node.inputs[0], dx, own=True)


def cross_entropy(logits, target):
    """-log softmax(logits)[target] for a single 1-D logits vector."""
    if logits.value.ndim != 1:
        raise ShapeError(f"cross_entropy needs 1-D logits, got shape "
                         f"{logits.value.shape}")
    v = logits.value.shape[0]
    if not 0 <= target < v:
        raise IndexError(f"cross_entropy target {target} out of range "
                         f"[0, {v})")
    targets = np.array([target], dtype=np.int64)
    mask = np.ones(1, dtype=logits.value.dtype)
    loss, probs = kernels.softmax_xent_columns(
        np.ascontiguousarray(logits.value.reshape(-1, 1)), targets, mask)
    return logits.graph._add("cross_entropy", (logits,),
                             loss.reshape(()), cache=(probs, targets, mask))


def _cross_entropy_bw(node):
    probs, targets, mask = node.cache
    d = kernels.softmax_xent_columns_grad(probs, targets, mask,
                                          float(node.grad))
    _acc(node.inputs[0], d[:, 0], own=False)


def masked_cross_entropy(logits, targets, mask):
    """Masked NLL summed over the columns of a (V, B) logits matrix.

    ``targets`` and ``mask`` are plain arrays (not differentiated); masked
    columns contribute exactly zero.
    """
    if logits.value.ndim != 2:
        raise ShapeError(f"masked_cross_entropy needs (V, B) logits, got "
                         f"shape {logits.value.shape}")
    v, cols = logits.value.shape
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    mask = np.ascontiguousarray(mask, dtype=logits.value.dtype)
    if targets.shape != (cols,) or mask.shape != (cols,):
        raise ShapeError(
            f"targets/mask shapes {targets.shape}/{mask.shape} do not "
            f"match {cols} columns")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id out of range [0, {v})")
    loss, probs = kernels.softmax_xent_columns(logits.value, targets, mask)
    return logits.graph._add("masked_cross_entropy", (logits,),
                             loss.reshape(()), cache=(probs, targets, mask))


def _masked_cross_entropy_bw(node):
    probs, targets, mask = node.cache
    d = kernels.softmax_xent_columns_grad(probs, targets, mask,
                                          float(node.grad))
    _acc(node.inputs[0], d, own=True)


def lookup(table, index):
    """Row ``index`` of a (V, d) embedding table as a 1-D vector."""
    v = table.value.shape[0]
    if not 0 <= index < v:
        raise IndexError(f"lookup id {index} out of range [0, {v})")
    return table.graph._add("lookup", (table,), table.value[index].copy(),
                            cache=int(index))


def _lookup_bw(node):
    table = node.inputs[0]
    if not table.needs_grad:
        return
    grad = _ensure_grad(table)
    ids = np.array([node.cache], dtype=np.int64)
    kernels.embedding_scatter_add(grad, ids,
                                  np.ascontiguousarray(
                                      node.grad.reshape(-1, 1)))


def lookup_columns(table, ids):
    """Gather rows ``ids`` of a (V, d) table into a (d, B) matrix."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    v = table.value.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"lookup id out of range [0, {v})")
    value = np.ascontiguousarray(table.value[ids].T)
    return table.graph._add("lookup_columns", (table,), value, cache=ids)


def _lookup_columns_bw(node):
    table = node.inputs[0]
    if not table.needs_grad:
        return
    grad = _ensure_grad(table)
    kernels.embedding_scatter_add(grad, node.cache, node.grad)


def concat_rows(*parts):
    """Stack (r_i, B) blocks vertically into a (sum r_i, B) matrix."""
    g = _same_graph(*parts)
    cols = parts[0].value.shape[1]
    for p in parts:
        if p.value.ndim != 2 or p.value.shape[1] != cols:
            raise ShapeError("concat_rows needs 2-D blocks with equal "
                             "column counts")
    sizes = tuple(p.value.shape[0] for p in parts)
    return g._add("concat_rows", parts,
                  np.concatenate([p.value for p in parts], axis=0),
                  cache=sizes)


def _concat_rows_bw(node):
    offset = 0
    for part, rows in zip(node.inputs, node.cache):
        _acc(part, node.grad[offset:offset + rows], own=False)
        offset += rows


def stack_states(parts):
    """Stack l state matrices (H, B) into one (l, H, B) block."""
    parts = tuple(parts)
    g = _same_graph(*parts)
    shape = parts[0].value.shape
    for p in parts:
        if p.value.shape != shape:
            raise ShapeError("stack_states needs equally shaped states")
    return g._add("stack_states", parts,
                  np.stack([p.value for p in parts], axis=0))


def _stack_states_bw(node):
    for i, part in enumerate(node.inputs):
        _acc(part, node.grad[i], own=False)


def project_states(w, states):
    """Apply one projection to every stacked state: (d,H) x (l,H,B)."""
    g = _same_graph(w, states)
    if w.value.ndim != 2 or states.value.ndim != 3 or \
            w.value.shape[1] != states.value.shape[1]:
        raise ShapeError(
            f"project_states shapes {w.value.shape} x {states.value.shape}")
    # equivalent to einsum("dh,lhb->ldb") but routed through BLAS
    value = np.tensordot(w.value, states.value, axes=(1, 1)).swapaxes(0, 1)
    return g._add("project_states", (w, states),
                  np.ascontiguousarray(value))


def _project_states_bw(node):
    w, states = node.inputs
    g = node.grad
    l, d, b = g.shape
    h = states.value.shape[1]
    g_flat = np.ascontiguousarray(g.swapaxes(0, 1)).reshape(d, l * b)
    s_flat = np.ascontiguousarray(
        states.value.swapaxes(0, 1)).reshape(h, l * b)
    _acc(w, g_flat @ s_flat.T, own=True)
    ds = (w.value.T @ g_flat).reshape(h, l, b).swapaxes(0, 1)
    _acc(states, np.ascontiguousarray(ds), own=True)


def attention_energy(base, proj, v):
    """Additive attention energies over all source positions.

    base: (d, B) query-side activation, proj: (l, d, B) position-wise
    projections, v: (d,) scoring vector -> (l, B) energies.
    """
    g = _same_graph(base, proj, v)
    if proj.value.ndim != 3 or base.value.shape != proj.value.shape[1:] or \
            v.value.shape != (proj.value.shape[1],):
        raise ShapeError(
            f"attention_energy shapes base={base.value.shape} "
            f"proj={proj.value.shape} v={v.value.shape}")
    e, t = kernels.attention_energy(base.value, proj.value, v.value)
    return g._add("attention_energy", (base, proj, v), e, cache=t)


def _attention_energy_bw(node):
    base, proj, v = node.inputs
    dbase, dproj, dv = kernels.attention_energy_grad(node.cache,
                                                     v.value, node.grad)
    _acc(base, dbase, own=True)
    _acc(proj, dproj, own=True)
    _acc(v, dv, own=True)


def context_combine(alpha, states):
    """Attention-weighted sum of stacked states: (l,B) x (l,H,B) -> (H,B)."""
    g = _same_graph(alpha, states)
    if alpha.value.ndim != 2 or states.value.ndim != 3 or \
            alpha.value.shape[0] != states.value.shape[0] or \
            alpha.value.shape[1] != states.value.shape[2]:
        raise ShapeError(
            f"context_combine shapes {alpha.value.shape} x "
            f"{states.value.shape}")
    return g._add("context_combine", (alpha, states),
                  kernels.context_combine(alpha.value, states.value))


def _context_combine_bw(node):
    alpha, states = node.inputs
    dalpha, dstates = kernels.context_combine_grad(alpha.value, states.value,
                                                   node.grad)
    _acc(alpha, dalpha, own=True)
    _acc(states, dstates, own=True)


def add_n(nodes):
    """Sum of equally shaped nodes (used to total per-step losses)."""
    nodes = tuple(nodes)
    g = _same_graph(*nodes)
    shape = nodes[0].value.shape
    for n in nodes:
        if n.value.shape != shape:
            raise ShapeError("add_n needs equally shaped operands")
    total = nodes[0].value.copy()
    for n in nodes[1:]:
        total += n.value
    return g._add("add_n", nodes, total)


def _add_n_bw(node):
    for inp in node.inputs:
        _acc(inp, node.grad, own=False)


def sum_all(a):
    """Sum of all elements as a scalar node."""
    return a.graph._add("sum_all", (a,),
                        np.asarray(a.value.sum(), dtype=a.graph.dtype))


def _sum_all_bw(node):
    x = node.inputs[0]
    _acc(x, np.full(x.value.shape, float(node.grad), dtype=x.value.dtype),
         own=True)


_BACKWARD = {
    "matmul": _matmul_bw,
    "add": _add_bw,
    "sub": _sub_bw,
    "mul": _mul_bw,
    "one_minus": _one_minus_bw,
    "scale": _scale_bw,
    "tanh": _tanh_bw,
    "sigmoid": _sigmoid_bw,
    "gru_blend": _gru_blend_bw,
    "gru_cell": _gru_cell_bw,
    "affine": _affine_bw,
    "softmax": _softmax_bw,
    "softmax_columns": _softmax_columns_bw,
    "cross_entropy": _cross_entropy_bw,
    "masked_cross_entropy": _masked_cross_entropy_bw,
    "lookup": _lookup_bw,
    "lookup_columns": _lookup_columns_bw,
    "concat_rows": _concat_rows_bw,
    "stack_states": _stack_states_bw,
    "project_states": _project_states_bw,
    "attention_energy": _attention_energy_bw,
    "context_combine": _context_combine_bw,
    "add_n": _add_n_bw,
    "sum_all": _sum_all_bw,
}


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradientCheckReport:
    """Outcome of a finite-difference sweep over parameter coordinates."""

    passed: bool
    tol: float
    eps: float
    n_checked: int
    worst_name: str = ""
    worst_index: tuple = ()
    worst_rel_err: float = 0.0
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0
    failures: list = field(default_factory=list)

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        return (f"gradient check {state}: {self.n_checked} coordinates, "
                f"worst {self.worst_name}{list(self.worst_index)} "
                f"rel_err={self.worst_rel_err:.3g} "
                f"(analytic={self.worst_analytic:.6g}, "
                f"numeric={self.worst_numeric:.6g}, tol={self.tol:g})")


def gradient_check(build_loss, params, eps=1e-5, tol=1e-5, sample=None,
                   seed=0):
    """Compare analytic gradients against central finite differences.

    ``build_loss(graph, nodes)`` must deterministically rebuild the scalar
    loss from the parameter nodes; ``params`` maps names to float64 arrays.
    Checks every coordinate, or a random sample of at least 200 when
    ``sample`` is given.  Relative error uses max(1, |analytic|) as the
    denominator.
    """
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise GraphError(
                f"gradient_check needs float64 parameters, {name!r} is "
                f"{arr.dtype}")

    graph = Graph(dtype=np.float64)
    nodes = {name: graph.param(name, arr) for name, arr in params.items()}
    loss = build_loss(graph, nodes)
    graph.backward(loss)
    analytic = {
        name: (nodes[name].grad if nodes[name].grad is not None
               else np.zeros_like(arr))
        for name, arr in params.items()
    }

    def eval_loss(perturbed):
        g2 = Graph(dtype=np.float64)
        n2 = {name: g2.param(name, arr) for name, arr in perturbed.items()}
        return float(build_loss(g2, n2).value)

    coords = [(name, idx) for name, arr in sorted(params.items())
              for idx in range(arr.size)]
    if sample is not None and len(coords) > sample:
        rng = np.random.default_rng(seed)
        take = max(int(sample), 200)
        picked = rng.choice(len(coords), size=min(take, len(coords)),
                            replace=False)
        coords = [coords[i] for i in sorted(picked)]

    report = GradientCheckReport(passed=True, tol=tol, eps=eps,
                                 n_checked=len(coords))
    for name, idx in coords:
        perturbed = dict(params)
        arr = params[name].copy()
        flat = arr.reshape(-1)
        flat[idx] += eps
        perturbed[name] = arr
        up = eval_loss(perturbed)
        flat[idx] -= 2 * eps
        down = eval_loss(perturbed)
        numeric = (up - down) / (2 * eps)
        a = float(analytic[name].reshape(-1)[idx])
        rel = abs(a - numeric) / max(1.0, abs(a))
        if rel > report.worst_rel_err:
            report.worst_rel_err = rel
            report.worst_name = name
            report.worst_index = np.unravel_index(idx, params[name].shape)
            report.worst_analytic = a
            report.worst_numeric = numeric
        if rel > tol:
            report.passed = False
            if len(report.failures) < 16:
                report.failures.append((name, idx, a, numeric, rel))
    return report
