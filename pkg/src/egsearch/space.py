"""Binary-coded DAG cells over a fixed menu of candidate operations.

A cell is a DAG on nodes 0..n-1 (node 0 is the input); every ordered edge
(i, j) with i < j carries a K-bit code saying which candidate ops act on
that edge.  Codes and concrete networks are in bijection: bit (i, j, k) is
set exactly when op k is used on edge (i, j).

The candidate set is desk-scale: a hard zero, a skip connection, and three
learnable linear transforms with different nonlinearities.  Their relative
compute costs feed the static efficiency credits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .ensemble import BinaryCodeSample
from .gumbel import check_simplex

__all__ = [
    "OpKind",
    "OP_SET",
    "ArchitectureCode",
    "NetworkPlan",
    "EdgeProbabilities",
    "Cell",
    "edge_list",
    "num_edges",
    "encode",
    "decode",
    "apply_op",
    "edge_forward",
    "cell_forward",
    "mix_probabilities",
    "efficiency_credits",
    "make_cell",
    "export_architecture",
    "parse_architecture",
    "export_dot",
]


@dataclass(frozen=True)
class OpKind:
    name: str
    cost: float  # relative compute credit, feeds the efficiency prior


OP_SET = (
    OpKind("zero", 0.0),
    OpKind("identity", 0.1),
    OpKind("linear_relu", 1.0),
    OpKind("linear_tanh", 1.0),
    OpKind("linear_sigmoid", 1.0),
)


def edge_list(n: int) -> list:
    """All ordered edges (i, j), i < j, in lexicographic order."""
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def num_edges(n: int) -> int:
    return n * (n - 1) // 2


@dataclass(eq=False)
class ArchitectureCode:
    """Binary op-selection bits for every edge of an n-node cell.

    bits has shape (num_edges, K), rows following edge_list order.
    """

    n: int
    K: int
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        expected = (num_edges(self.n), self.K)
        if self.bits.shape != expected:
            raise ValueError(f"bits shape {self.bits.shape} != {expected}")
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("bits must be 0/1")

    def __eq__(self, other):
        return (
            isinstance(other, ArchitectureCode)
            and self.n == other.n
            and self.K == other.K
            and np.array_equal(self.bits, other.bits)
        )

    def bit_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class NetworkPlan:
    """Explicit edge-op assignment: which ops act on which edges.

    edge_ops maps (i, j) to a sorted tuple of op indices; edges carrying
    no op are omitted.  This is the decoded, forward-executable view of an
    ArchitectureCode.
    """

    n: int
    K: int
    edge_ops: tuple  # sorted tuple of ((i, j), (k, ...)) pairs


def _normalize_assignment(n, K, edge_ops):
    valid = set(edge_list(n))
    items = []
    for (i, j), ks in sorted(dict(edge_ops).items()):
        if (i, j) not in valid:
            raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
        ks = tuple(sorted(set(int(k) for k in ks)))
        if not ks:
            continue
        if ks[0] < 0 or ks[-1] >= K:
            raise ValueError(f"op index out of range on edge ({i}, {j}): {ks}")
        items.append(((i, j), ks))
    return tuple(items)


def encode(plan) -> ArchitectureCode:
    """Set bit (i, j, k) for every op k the plan assigns to edge (i, j)."""
    if isinstance(plan, NetworkPlan):
        n, K, edge_ops = plan.n, plan.K, dict(plan.edge_ops)
    else:
        n, K, edge_ops = plan["n"], plan["K"], plan["edge_ops"]
    items = _normalize_assignment(n, K, edge_ops)
    bits = np.zeros((num_edges(n), K), dtype=np.uint8)
    row = {e: r for r, e in enumerate(edge_list(n))}
    for (i, j), ks in items:
        for k in ks:
            bits[row[(i, j)], k] = 1
    return ArchitectureCode(n=n, K=K, bits=bits)


def decode(code: ArchitectureCode, ops=OP_SET) -> NetworkPlan:
    """Invert encode: list the ops each edge applies."""
    if code.K != len(ops):
        raise ValueError(f"code has K={code.K} but op set has {len(ops)} entries")
    edge_ops = []
    for row, e in enumerate(edge_list(code.n)):
        ks = tuple(int(k) for k in np.flatnonzero(code.bits[row]))
        if ks:
            edge_ops.append((e, ks))
    return NetworkPlan(n=code.n, K=code.K, edge_ops=tuple(edge_ops))


# ---------------------------------------------------------------------------
# forward evaluation


def apply_op(kind: OpKind, x: ad.Tensor, params: dict) -> ad.Tensor:
    if kind.name == "zero":
        return ad.Tensor(np.zeros_like(x.data))
    if kind.name == "identity":
        return x
    if kind.name.startswith("linear_"):
        z = ad.add(ad.matmul(x, params["W"]), params["b"])
        act = kind.name.split("_", 1)[1]
        if act == "relu":
            return ad.relu(z)
        if act == "tanh":
            return ad.tanh(z)
        if act == "sigmoid":
            return ad.sigmoid(z)
    raise ValueError(f"unknown op kind {kind.name!r}")


def edge_forward(x: ad.Tensor, code, ops=OP_SET, params=None) -> ad.Tensor:
    """Weighted sum of op outputs along one edge.

    `code` is a K-vector of op weights: the straight-through hard tensor
    of a sampled BinaryCodeSample during search, or a constant 0/1 tensor
    for a fixed network.  Constant zero weights skip their op entirely.
    """
    if isinstance(code, BinaryCodeSample):
        code = code.hard
    code = ad.as_tensor(code)
    if code.data.shape != (len(ops),):
        raise ad.ShapeMismatchError("edge-forward", (code.data.shape, (len(ops),)))
    params = params if params is not None else [{} for _ in ops]
    on_tape = code.node is not None or code.requires_grad
    total = None
    for k, kind in enumerate(ops):
        if not on_tape and code.data[k] == 0.0:
            continue
        term = ad.multiply(ad.pick(code, k), apply_op(kind, x, params[k]))
        total = term if total is None else ad.add(total, term)
    if total is None:
        total = ad.Tensor(np.zeros_like(x.data))
    return total


def mix_probabilities(h, l, lam: float):
    """Convex mix of effectiveness and efficiency credits, kept on the tape."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing weight must be in [0, 1], got {lam}")
    h = ad.as_tensor(h)
    l = ad.as_tensor(l)
    check_simplex(h.data, "h")
    check_simplex(l.data, "l")
    return ad.add(ad.scale(h, lam), ad.scale(l, 1.0 - lam))


def efficiency_credits(ops=OP_SET) -> np.ndarray:
    """Static efficiency prior: softmax of negated op costs."""
    costs = np.array([op.cost for op in ops], dtype=np.float64)
    e = np.exp(-costs + costs.min())
    return e / e.sum()


@dataclass
class EdgeProbabilities:
    """Per-edge categorical parameters behind the sampling distribution.

    h (effectiveness) is the softmax of the trainable logits; l
    (efficiency) is a static prior from op costs; the sampling vector is
    their lam-weighted convex mix.
    """

    logits: ad.Tensor
    l: np.ndarray
    lam: float

    def h(self) -> ad.Tensor:
        return ad.softmax(self.logits)

    def probabilities(self) -> ad.Tensor:
        return mix_probabilities(self.h(), ad.Tensor(self.l), self.lam)


@dataclass
class Cell:
    """An n-node DAG cell: per-edge distributions plus per-edge op weights."""

    n: int
    ops: tuple
    dim: int
    edges: dict  # (i, j) -> EdgeProbabilities
    params: dict  # (i, j) -> list of per-op parameter dicts
    input_arity: int = 1
    output_rule: str = "sum"

    def edge_logits(self) -> list:
        return [self.edges[e].logits for e in edge_list(self.n)]

    def weight_tensors(self) -> list:
        out = []
        for e in edge_list(self.n):
            for p in self.params[e]:
                out.extend(p.values())
        return out


def make_cell(n, ops=OP_SET, dim=8, lam=0.5, init_rng=None, output_rule="sum") -> Cell:
    """Build a cell with uniform logits and small random linear weights."""
    if output_rule not in ("sum", "concat"):
        raise ValueError(f"output_rule must be sum or concat, got {output_rule!r}")
    init_rng = init_rng if init_rng is not None else np.random.default_rng(0)
    l = efficiency_credits(ops)
    edges, params = {}, {}
    for e in edge_list(n):
        edges[e] = EdgeProbabilities(
            logits=ad.Tensor(np.zeros(len(ops)), requires_grad=True), l=l, lam=lam
        )
        per_op = []
        for op in ops:
            if op.name.startswith("linear_"):
                per_op.append(
                    {
                        "W": ad.Tensor(
                            init_rng.normal(0.0, 1.0, (dim, dim)) / np.sqrt(dim),
                            requires_grad=True,
                        ),
                        "b": ad.Tensor(np.zeros(dim), requires_grad=True),
                    }
                )
            else:
                per_op.append({})
        params[e] = per_op
    return Cell(
        n=n, ops=tuple(ops), dim=dim, edges=edges, params=params,
        output_rule=output_rule,
    )


def cell_forward(cell: Cell, x_in: ad.Tensor, samples: dict) -> ad.Tensor:
    """Evaluate the cell: node j sums edge contributions from all i < j.

    `samples` maps every edge to its code (BinaryCodeSample or weight
    tensor).  The output aggregates the non-input nodes by the cell's
    output rule.
    """
    for e in edge_list(cell.n):
        if e not in samples:
            raise ValueError(f"missing sample for edge {e}")
    nodes = [x_in]
    for j in range(1, cell.n):
        acc = None
        for i in range(j):
            term = edge_forward(
                nodes[i], samples[(i, j)], cell.ops, cell.params[(i, j)]
            )
            acc = term if acc is None else ad.add(acc, term)
        nodes.append(acc)
    intermediates = nodes[1:]
    if len(intermediates) == 1:
        return intermediates[0]
    if cell.output_rule == "concat":
        return ad.concat(intermediates, axis=-1)
    out = intermediates[0]
    for t in intermediates[1:]:
        out = ad.add(out, t)
    return out


# ---------------------------------------------------------------------------
# exports


def export_architecture(code: ArchitectureCode, ops=OP_SET) -> str:
    """Structured text export: dims, op names, and the bit array."""
    doc = {
        "n": code.n,
        "K": code.K,
        "ops": [op.name for op in ops[: code.K]],
        "edges": [
            {"from": i, "to": j, "bits": [int(b) for b in code.bits[r]]}
            for r, (i, j) in enumerate(edge_list(code.n))
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_architecture(text: str) -> ArchitectureCode:
    doc = json.loads(text)
    n, k = int(doc["n"]), int(doc["K"])
    bits = np.zeros((num_edges(n), k), dtype=np.uint8)
    row = {e: r for r, e in enumerate(edge_list(n))}
    for entry in doc["edges"]:
        bits[row[(int(entry["from"]), int(entry["to"]))]] = entry["bits"]
    return ArchitectureCode(n=n, K=k, bits=bits)


def export_dot(code: ArchitectureCode, ops=OP_SET) -> str:
    """Graph-description text: one digraph with op labels per active edge."""
    lines = ["digraph cell {", "  rankdir=LR;"]
    for v in range(code.n):
        label = "in" if v == 0 else f"x{v}"
        lines.append(f'  n{v} [label="{label}"];')
    for r, (i, j) in enumerate(edge_list(code.n)):
        names = [ops[k].name for k in np.flatnonzero(code.bits[r])]
        if names:
            lines.append(f'  n{i} -> n{j} [label="{"+".join(names)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
