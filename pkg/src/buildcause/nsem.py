"""Continuous structure learner: weighted adjacency fit with a smooth
acyclicity penalty.

The model reconstructs each standardized column as a linear blend of the
others, X ~ XW with zero diagonal, trained by minibatch gradient descent on a
weighted squared error plus L1/L2 shrinkage and gamma * h(W), where
h(W) = trace(exp(W o W)) - n vanishes exactly when the support of W is
acyclic. gamma follows an escalating schedule so early epochs fit freely and
late epochs are forced onto DAG support. Edges are read off the trained
matrix with an adaptive largest-gap threshold.

An optional per-variable tanh head (one hidden layer, trained at the
secondary rate) can absorb nonlinear residue so the linear weights keep the
structural signal; it is off by default and never contributes edges itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .graph import (
    DirectedGraph,
    StructuralConstraints,
    Variable,
    apply_constraints,
    find_cycle,
)


class NonFinite(RuntimeError):
    """Training diverged to NaN or Inf (learning rate or data pathology)."""


@dataclass(frozen=True)
class NsemConfig:
    lambda1: float = 0.1
    lambda2: float = 0.01
    gamma: float = 0.1  # initial DAG-penalty coefficient, x10 every 50 epochs
    lr_primary: float = 0.01
    lr_secondary: float = 0.005
    epochs: int = 200
    batch_size: int = 32
    restarts: int = 3
    seed: int = 0
    nonlinear_head: bool = False
    head_units: int = 4

    def __post_init__(self) -> None:
        positive = (
            self.lambda1,
            self.lambda2,
            self.gamma,
            self.lr_primary,
            self.lr_secondary,
        )
        if any(v <= 0 for v in positive):
            raise ValueError("rates and penalty coefficients must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.restarts < 1:
            raise ValueError("epochs, batch_size, restarts must be >= 1")
        if self.head_units < 1:
            raise ValueError("head_units must be >= 1")

    def gamma_at(self, epoch: int) -> float:
        return self.gamma * 10.0 ** (epoch // 50)


def dag_penalty(w: np.ndarray) -> float:
    """h(W) = trace(exp(W o W)) - n; zero exactly on acyclic support."""
    a = w * w
    return float(np.trace(expm(a)) - a.shape[0])


def dag_penalty_grad(w: np.ndarray) -> np.ndarray:
    return 2.0 * expm(w * w).T * w


def standardize(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Zero weighted mean, unit weighted variance per column; constant
    columns are left centered."""
    mu = weights @ values / weights.sum()
    xc = values - mu
    var = weights @ (xc**2) / weights.sum()
    sd = np.sqrt(var)
    sd[sd == 0] = 1.0
    return xc / sd


def nsem_loss(
    w: np.ndarray,
    values: np.ndarray,
    weights: np.ndarray,
    cfg: NsemConfig,
    gamma: float | None = None,
) -> float:
    """Weighted reconstruction error plus shrinkage and acyclicity terms."""
    gamma = cfg.gamma if gamma is None else gamma
    resid = values - values @ w
    recon = float(weights @ (resid**2).sum(axis=1) / weights.sum())
    return (
        recon
        + cfg.lambda1 * float(np.abs(w).sum())
        + cfg.lambda2 * float((w**2).sum())
        + gamma * dag_penalty(w)
    )


def nsem_loss_grad(
    w: np.ndarray,
    values: np.ndarray,
    weights: np.ndarray,
    cfg: NsemConfig,
    gamma: float | None = None,
) -> np.ndarray:
    gamma = cfg.gamma if gamma is None else gamma
    resid = values - values @ w
    grad = -2.0 / weights.sum() * (values.T * weights) @ resid
    grad += cfg.lambda1 * np.sign(w) + 2.0 * cfg.lambda2 * w
    grad += gamma * dag_penalty_grad(w)
    np.fill_diagonal(grad, 0.0)
    return grad


@dataclass
class TrainResult:
    weights: np.ndarray
    losses: tuple[float, ...]  # final full-data loss per restart, common gamma
    best_restart: int


class _TanhHead:
    """Per-target one-hidden-layer correction; self-input rows stay masked.

    Units use tanh(u) - u, which has no linear term at the origin, so the
    head can only model curvature and the linear signal stays in W.
    """

    def __init__(self, n: int, units: int, rng: np.random.Generator):
        self.a = rng.uniform(-0.1, 0.1, (n, n, units))
        self.b = rng.uniform(-0.1, 0.1, (n, units))
        for j in range(n):
            self.a[j, j, :] = 0.0

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], self.a.shape[0]))
        for j in range(self.a.shape[0]):
            z = x @ self.a[j]
            out[:, j] = (np.tanh(z) - z) @ self.b[j]
        return out

    def update(self, x: np.ndarray, wts: np.ndarray, resid: np.ndarray, lr: float) -> None:
        scale = -2.0 / wts.sum()
        for j in range(self.a.shape[0]):
            z = x @ self.a[j]
            t = np.tanh(z)
            rj = wts * resid[:, j]
            gb = scale * (rj @ (t - z))
            ga = scale * (x.T * rj) @ (-(t**2) * self.b[j])
            ga[j, :] = 0.0
            self.a[j] -= lr * ga
            self.b[j] -= lr * gb


def _train_once(
    x: np.ndarray,
    wts: np.ndarray,
    cfg: NsemConfig,
    restart: int,
    keep: np.ndarray,
) -> tuple[np.ndarray, float]:
    n_rows, n = x.shape
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, restart)))
    w = rng.uniform(-0.1, 0.1, (n, n)) * keep
    head = _TanhHead(n, cfg.head_units, rng) if cfg.nonlinear_head else None

    with np.errstate(all="ignore"):  # divergence is caught explicitly below
        for epoch in range(cfg.epochs):
            gamma = cfg.gamma_at(epoch)
            order = rng.permutation(n_rows)
            for lo in range(0, n_rows, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                xb, wb = x[idx], wts[idx]
                pred = xb @ w
                if head is not None:
                    pred = pred + head.predict(xb)
                resid = xb - pred
                grad = -2.0 / wb.sum() * (xb.T * wb) @ resid
                grad += cfg.lambda1 * np.sign(w) + 2.0 * cfg.lambda2 * w
                grad += gamma * dag_penalty_grad(w)
                grad *= keep
                w -= cfg.lr_primary * grad
                if head is not None:
                    head.update(xb, wb, resid, cfg.lr_secondary)
            if not np.isfinite(w).all():
                raise NonFinite(f"adjacency diverged at epoch {epoch}")

    final = nsem_loss(w, x, wts, cfg, cfg.gamma_at(cfg.epochs - 1))
    if not np.isfinite(final):
        raise NonFinite("final loss is not finite")
    return w, final


def forbidden_entry_mask(
    variables: Sequence[Variable], constraints: StructuralConstraints | None
) -> np.ndarray:
    """Boolean matrix of entries the constraints rule out (plus the diagonal),
    usable as structural zeros during training."""
    n = len(variables)
    mask = np.eye(n, dtype=bool)
    if constraints is None:
        return mask
    if constraints.forbid_output_sources:
        for i, v in enumerate(variables):
            if not v.intervenable:
                mask[i, :] = True
    for a, b in constraints.forbidden_edges:
        mask[a, b] = True
    for a, b in constraints.required_orientations:
        mask[b, a] = True  # the reversed direction can never survive
    return mask


def train(
    values: np.ndarray,
    weights: np.ndarray | None = None,
    cfg: NsemConfig | None = None,
    forbidden_mask: np.ndarray | None = None,
) -> TrainResult:
    """Fit the adjacency matrix; best of cfg.restarts runs by final loss,
    ties resolved toward the lowest restart index.

    forbidden_mask marks entries held at zero throughout training (structural
    zeros); the diagonal is always held regardless.
    """
    cfg = cfg or NsemConfig()
    values = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.ones(values.shape[0])
    weights = np.asarray(weights, dtype=float)
    if values.shape[0] < cfg.batch_size:
        raise ValueError(
            f"need at least batch_size={cfg.batch_size} rows, got {values.shape[0]}"
        )
    n = values.shape[1]
    blocked = np.eye(n, dtype=bool)
    if forbidden_mask is not None:
        blocked |= np.asarray(forbidden_mask, dtype=bool)
    keep = (~blocked).astype(float)
    x = standardize(values, weights)

    results = [_train_once(x, weights, cfg, r, keep) for r in range(cfg.restarts)]
    losses = tuple(loss for _, loss in results)
    best = min(range(cfg.restarts), key=lambda r: (losses[r], r))
    return TrainResult(results[best][0], losses, best)


def adaptive_threshold(w: np.ndarray) -> float:
    """Midpoint of the largest gap in the sorted off-diagonal magnitudes
    (a zero sentinel closes the list); 0.1 when too few distinct values."""
    mask = ~np.eye(w.shape[0], dtype=bool)
    mags = np.abs(w[mask])
    distinct = np.unique(mags[mags > 1e-12])
    if distinct.size < 3:
        return 0.1
    desc = np.concatenate([np.sort(distinct)[::-1], [0.0]])
    gaps = desc[:-1] - desc[1:]
    k = int(np.argmax(gaps))
    return float((desc[k] + desc[k + 1]) / 2.0)


def threshold_edges(
    w: np.ndarray,
    variables: Sequence[Variable],
    constraints: StructuralConstraints | None = None,
) -> DirectedGraph:
    """Read a graph off the trained matrix and make it legal: adaptive cut,
    domain constraints, then cycle repair dropping the weakest edge."""
    variables = tuple(variables)
    n = len(variables)
    if w.shape != (n, n):
        raise ValueError(f"weight matrix shape {w.shape} does not match {n} variables")
    tau = adaptive_threshold(w)
    edges = {
        (i, j)
        for i in range(n)
        for j in range(n)
        if i != j and abs(w[i, j]) > tau
    }
    graph = DirectedGraph(variables, frozenset(edges))
    if constraints is not None:
        graph = apply_constraints(graph, constraints)
    kept = set(graph.edges)
    while True:
        cycle = find_cycle(n, kept)
        if cycle is None:
            break
        weakest = min(cycle, key=lambda e: (abs(w[e[0], e[1]]), e))
        kept.discard(weakest)
    return graph.replace_edges(frozenset(kept))


def nsem_discover(
    values: np.ndarray,
    weights: np.ndarray | None,
    variables: Sequence[Variable],
    constraints: StructuralConstraints | None = None,
    cfg: NsemConfig | None = None,
) -> tuple[DirectedGraph, TrainResult]:
    mask = forbidden_entry_mask(variables, constraints)
    result = train(values, weights, cfg, forbidden_mask=mask)
    return threshold_edges(result.weights, variables, constraints), result


def write_weights_csv(
    w: np.ndarray, names: Sequence[str], path: str
) -> None:
    """Dump the trained matrix for inspection, row = source, column = target."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", *names])
        for name, row in zip(names, w):
            writer.writerow([name, *(repr(float(v)) for v in row)])
