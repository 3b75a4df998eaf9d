"""Exact optimal transport between finite distributions.

The solver is the transportation simplex: a northwest-corner start, duals
read off the basis tree, Bland's rule for entering and leaving cells.  The
result is only returned after an explicit certificate check (primal
feasibility, dual feasibility, complementary slackness, zero duality gap).

On top of it sit the checks that the latent-coupling formulation of OT with
a deterministic decoder has the same value as OT against the decoded
distribution, and the variance decomposition for random decoders.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError, NumericError

CERT_TOL = 1e-9


@dataclass
class DiscreteDistribution:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.weights):
            raise ConfigError(f"{len(self.points)} atoms but {len(self.weights)} weights")
        if np.any(self.weights <= 0):
            raise ConfigError("atom weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights sum to {float(self.weights.sum())!r}, not 1")

    @classmethod
    def uniform(cls, points) -> "DiscreteDistribution":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(points, np.full(len(points), 1.0 / len(points)))

    def __len__(self):
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def merged(self) -> "DiscreteDistribution":
        """Collapse exactly coinciding atoms, summing their weights."""
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        weights = np.zeros(len(uniq))
        np.add.at(weights, inverse.reshape(-1), self.weights)
        return DiscreteDistribution(uniq, weights)


@dataclass
class CouplingPlan:
    matrix: np.ndarray
    row_duals: np.ndarray
    col_duals: np.ndarray


@dataclass
class DeterministicDecoderTable:
    """Image G(z_j) for each prior atom z_j, in prior order."""

    images: np.ndarray

    def __post_init__(self):
        self.images = np.atleast_2d(np.asarray(self.images, dtype=np.float64))

    def __call__(self, prior: DiscreteDistribution) -> np.ndarray:
        if len(self.images) != len(prior):
            raise ConfigError(f"decoder table has {len(self.images)} entries for {len(prior)} prior atoms")
        return self.images


def squared_euclidean(x, y) -> float:
    d = np.asarray(x) - np.asarray(y)
    return float(d @ d)


def cost_matrix(xs, ys, cost: Callable | None = None) -> np.ndarray:
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    if cost is None or cost is squared_euclidean:
        diff = xs[:, None, :] - ys[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    return np.array([[cost(x, y) for y in ys] for x in xs], dtype=np.float64)


# --- transportation simplex -------------------------------------------------------

def _northwest_corner(a, b):
    m, n = len(a), len(b)
    a, b = a.copy(), b.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        # move down when the row is used up (or, on a tie, unless at the last row)
        if j == n - 1 or (i < m - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1
    return flow, basis


def _duals(cost, basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if np.isnan(pot[nb]):
                # u_i + v_j = c_ij on basic cells
                i, j = (node, nb - m) if node < m else (nb, node - m)
                pot[nb] = cost[i, j] - pot[node]
                queue.append(nb)
    return pot[:m], pot[m:]


def _tree_path(basis, m, start, goal):
    """Node path between two nodes of the basis tree (rows 0..m-1, cols m..)."""
    adj: dict[int, list[int]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append(m + j)
        adj.setdefault(m + j, []).append(i)
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj.get(node, ()):
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def transport_simplex(cost: np.ndarray, a: np.ndarray, b: np.ndarray, max_iter: int = 100_000):
    """Minimise <cost, flow> subject to row sums a, column sums b."""
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    flow, basis = _northwest_corner(np.asarray(a, float), np.asarray(b, float))
    scale = max(1.0, float(np.abs(cost).max()))
    tol = 1e-12 * scale

    for _ in range(max_iter):
        u, v = _duals(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        candidates = np.flatnonzero(reduced.reshape(-1) < -tol)
        if candidates.size == 0:
            return flow, u, v
        ei, ej = divmod(int(candidates[0]), n)  # Bland: lowest index enters

        # cycle: entering cell, then alternate along the tree path col ej -> row ei
        path = _tree_path(basis, m, m + ej, ei)
        cells = [(ei, ej)]
        for p, q in zip(path[:-1], path[1:]):
            cells.append((q, p - m) if p >= m else (p, q - m))
        minus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] == theta), key=lambda c: c[0] * n + c[1])
        for k, c in enumerate(cells):
            flow[c] += theta if k % 2 == 0 else -theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
    raise NumericError(f"transportation simplex did not converge in {max_iter} pivots")


def certify(cost, flow, a, b, u, v, tol: float = CERT_TOL) -> None:
    """Raise unless (flow, u, v) is a primal/dual optimal pair within ``tol``."""
    scale = max(1.0, float(np.abs(cost).max()))
    if np.any(flow < -1e-12):
        raise NumericError(f"negative flow {flow.min()!r}")
    if np.max(np.abs(flow.sum(axis=1) - a)) > tol or np.max(np.abs(flow.sum(axis=0) - b)) > tol:
        raise NumericError("coupling marginals violated")
    reduced = cost - u[:, None] - v[None, :]
    if reduced.min() < -tol * scale:
        raise NumericError(f"dual infeasible: reduced cost {reduced.min()!r}")
    if np.max(np.abs(flow * reduced)) > tol * scale:
        raise NumericError("complementary slackness violated")
    primal = float(np.sum(flow * cost))
    dual = float(a @ u + b @ v)
    if abs(primal - dual) > tol * scale:
        raise NumericError(f"duality gap {abs(primal - dual)!r}")


def exact_ot_matrix(cost: np.ndarray, a, b) -> tuple[float, CouplingPlan]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    flow, u, v = transport_simplex(cost, a, b)
    flow = np.where(flow < 0, 0.0, flow)
    certify(cost, flow, a, b, u, v)
    return float(np.sum(flow * cost)), CouplingPlan(flow, u, v)


def exact_ot(source: DiscreteDistribution, target: DiscreteDistribution,
             cost: Callable | None = None) -> tuple[float, CouplingPlan]:
    """Exact Kantorovich cost; ``cost=None`` means squared Euclidean."""
    return exact_ot_matrix(cost_matrix(source.points, target.points, cost), source.weights, target.weights)


# --- decoder checks ------------------------------------------------------------------

def pushforward(prior: DiscreteDistribution, decoder: DeterministicDecoderTable) -> DiscreteDistribution:
    """Decoded atoms carrying the prior weights; coinciding images stay separate."""
    return DiscreteDistribution(decoder(prior).copy(), prior.weights.copy())


@dataclass
class Theorem1Result:
    lhs: float
    rhs: float
    gap: float


def verify_theorem1(data: DiscreteDistribution, prior: DiscreteDistribution,
                    decoder: DeterministicDecoderTable, cost: Callable | None = None) -> Theorem1Result:
    """Compare OT(data, decoded prior) with OT over (data, latent) couplings.

    The left side runs on the decoded distribution with coinciding atoms merged,
    so a non-injective decoder is genuinely tested as a different measure.
    """
    images = decoder(prior)
    lhs, _ = exact_ot(data, pushforward(prior, decoder).merged(), cost)
    rhs, _ = exact_ot_matrix(cost_matrix(data.points, images, cost), data.weights, prior.weights)
    return Theorem1Result(lhs, rhs, abs(lhs - rhs))


def two_point_mixture(mean: np.ndarray, variances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Atoms mean +/- sigma per coordinate (all sign patterns), equal weights.

    Realises mean ``mean`` and per-coordinate variance ``variances`` exactly.
    """
    sigma = np.sqrt(variances)
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=len(mean))))
    return mean + signs * sigma, np.full(len(signs), 1.0 / len(signs))


@dataclass
class Corollary1Result:
    wc_dagger: float
    decomposition: float
    gap: float
    wc: float  # plain OT to the mixture distribution; never exceeds wc_dagger


def verify_corollary1(data: DiscreteDistribution, prior: DiscreteDistribution,
                      decoder_mean: DeterministicDecoderTable, variances) -> Corollary1Result:
    """Random decoder = two-point mixtures around G(z) with given variances.

    ``wc_dagger`` solves the coupling LP over (data, latent) with the cost
    E_{Y|z} |x - Y|^2 averaged over mixture atoms; ``decomposition`` is
    sum(variances) + OT with cost |x - G(z)|^2.
    """
    variances = np.asarray(variances, dtype=np.float64).reshape(-1)
    if np.any(variances < 0):
        raise ConfigError("variances must be >= 0")
    means = decoder_mean(prior)
    if means.shape[1] != len(variances) or data.dim != len(variances):
        raise ConfigError(f"variance count {len(variances)} does not match data dim {data.dim}")

    m, k = len(data), len(prior)
    averaged = np.empty((m, k))
    atoms, atom_w = [], []
    for j in range(k):
        pts, w = two_point_mixture(means[j], variances)
        averaged[:, j] = cost_matrix(data.points, pts) @ w
        atoms.append(pts)
        atom_w.append(w * prior.weights[j])
    wc_dagger, _ = exact_ot_matrix(averaged, data.weights, prior.weights)
    base, _ = exact_ot_matrix(cost_matrix(data.points, means), data.weights, prior.weights)
    decomposition = float(variances.sum()) + base

    mixture_w = np.concatenate(atom_w)
    wc, _ = exact_ot_matrix(cost_matrix(data.points, np.vstack(atoms)), data.weights, mixture_w / mixture_w.sum())
    return Corollary1Result(wc_dagger, decomposition, abs(wc_dagger - decomposition), wc)


# --- instances ----------------------------------------------------------------------

@dataclass
class Instance:
    data: DiscreteDistribution
    prior: DiscreteDistribution
    decoder: DeterministicDecoderTable
    variances: np.ndarray | None = None


def random_instance(rng: np.random.Generator, max_atoms: int = 8, max_dim: int = 3,
                    with_variances: bool = False, max_variance: float = 2.0) -> Instance:
    """Random weights, atoms and decoder; decoders are non-injective half the time."""
    m = int(rng.integers(1, max_atoms + 1))
    k = int(rng.integers(1, max_atoms + 1))
    d = int(rng.integers(1, max_dim + 1))
    d_z = int(rng.integers(1, max_dim + 1))
    data = DiscreteDistribution(rng.normal(size=(m, d)), _random_weights(rng, m))
    prior = DiscreteDistribution(rng.normal(size=(k, d_z)), _random_weights(rng, k))
    images = rng.normal(size=(k, d))
    if k > 1 and rng.random() < 0.5:
        images[int(rng.integers(1, k))] = images[0]
    variances = rng.uniform(0, max_variance, size=d) if with_variances else None
    return Instance(data, prior, DeterministicDecoderTable(images), variances)


def _random_weights(rng, n):
    w = rng.uniform(0.1, 1.0, size=n)
    w /= w.sum()
    # force an exact unit sum so the invariant holds to the last bit
    w[-1] = 1.0 - w[:-1].sum()
    return w


def _fmt(x: float) -> str:
    return repr(float(x))


def format_instance(inst: Instance) -> str:
    """Plain-text instance: header ``m m' d [d_z]``, then atom lines
    ``coords... weight`` for data and prior, one decoder line per prior atom,
    and an optional ``variances v1 ... vd`` line."""
    m, k = len(inst.data), len(inst.prior)
    lines = [f"{m} {k} {inst.data.dim} {inst.prior.dim}"]
    for dist in (inst.data, inst.prior):
        for p, w in zip(dist.points, dist.weights):
            lines.append(" ".join(_fmt(c) for c in p) + " " + _fmt(w))
    for row in inst.decoder.images:
        lines.append(" ".join(_fmt(c) for c in row))
    if inst.variances is not None:
        lines.append("variances " + " ".join(_fmt(v) for v in inst.variances))
    return "\n".join(lines) + "\n"


class InstanceParseError(DataError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _atoms(take, count, dim, what) -> DiscreteDistribution:
    rows = [take(dim + 1, f"{what} atom {i}") for i in range(count)]
    try:
        return DiscreteDistribution([r[:-1] for _, r in rows], [r[-1] for _, r in rows])
    except ConfigError as exc:
        # blame the last line of the offending block
        raise InstanceParseError(f"{what} atoms: {exc}", rows[-1][0]) from None


def parse_instances(text: str) -> list[Instance]:
    """Parse one or more instances; ``#`` starts a comment."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    instances = []
    pos = 0

    def take(expected_len, what):
        nonlocal pos
        if pos >= len(rows):
            last = rows[-1][0] if rows else 0
            raise InstanceParseError(f"unexpected end of file while reading {what}", last + 1)
        lineno, toks = rows[pos]
        if len(toks) != expected_len:
            raise InstanceParseError(f"{what}: expected {expected_len} fields, got {len(toks)}", lineno)
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise InstanceParseError(f"{what}: non-numeric field", lineno) from None
        pos += 1
        return lineno, vals

    while pos < len(rows):
        lineno, toks = rows[pos]
        if len(toks) not in (3, 4) or not all(t.isdigit() for t in toks):
            raise InstanceParseError("expected header 'm m' d [d_z]'", lineno)
        m, k, d = (int(t) for t in toks[:3])
        d_z = int(toks[3]) if len(toks) == 4 else d
        if min(m, k, d, d_z) < 1:
            raise InstanceParseError("header sizes must be >= 1", lineno)
        pos += 1
        dist_x = _atoms(take, m, d, "data")
        dist_z = _atoms(take, k, d_z, "prior")
        table = [take(d, f"decoder entry {j}")[1] for j in range(k)]
        variances = None
        if pos < len(rows) and rows[pos][1][0] == "variances":
            vline, vtoks = rows[pos]
            if len(vtoks) != d + 1:
                raise InstanceParseError(f"variances: expected {d} values", vline)
            try:
                variances = np.array([float(t) for t in vtoks[1:]])
            except ValueError:
                raise InstanceParseError("variances: non-numeric field", vline) from None
            pos += 1
        instances.append(Instance(dist_x, dist_z, DeterministicDecoderTable(table), variances))
    return instances
