"""Incremental conditional moments of both hypotheses along a sampling path.

Observing one node is a rank-one update of the conditional covariance, and
only the block of the model that contains the node changes. Blocks follow
each model's own covariance sparsity, so an independence model never costs
more than scalar bookkeeping.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError, SingularityError
from .gmrf import LOG_2PI, HypothesisPair
from .measures import MIN_VARIANCE, gaussian_kl, univariate_kl


class _ModelBlocks:
    __slots__ = ("block_of", "local", "nodes", "cov", "edge_ids", "edge_la", "edge_lb", "edge_cov")

    def __init__(self, model, edges: np.ndarray):
        n = model.node_count
        self.block_of = np.empty(n, dtype=np.int64)
        self.local = np.empty(n, dtype=np.int64)
        self.nodes = []
        self.cov = []
        for b, nodes in enumerate(model.blocks):
            self.block_of[nodes] = b
            self.local[nodes] = np.arange(len(nodes))
            self.nodes.append(nodes)
            self.cov.append(model.covariance[np.ix_(nodes, nodes)].copy())
        ne = edges.shape[0]
        self.edge_cov = np.zeros(ne)
        self.edge_ids, self.edge_la, self.edge_lb = {}, {}, {}
        if ne:
            bi, bj = self.block_of[edges[:, 0]], self.block_of[edges[:, 1]]
            same = np.flatnonzero(bi == bj)
            for b in np.unique(bi[same]):
                ids = same[bi[same] == b]
                self.edge_ids[b] = ids
                self.edge_la[b] = self.local[edges[ids, 0]]
                self.edge_lb[b] = self.local[edges[ids, 1]]
                self.edge_cov[ids] = self.cov[b][self.edge_la[b], self.edge_lb[b]]


class ConditionalTracker:
    """Conditional means, variances and union-edge covariances under ``f0`` and ``f1``.

    Arrays are indexed ``[model, node]`` / ``[model, edge]``; entries for
    observed nodes are meaningless and masked by callers via ``observed``.
    """

    def __init__(self, pair: HypothesisPair):
        self.pair = pair
        n = pair.node_count
        g = pair.union_graph
        self.edges = np.array(g.sorted_edges, dtype=np.int64).reshape(-1, 2)
        self.mean = np.stack([pair.f0.mean, pair.f1.mean]).astype(float)
        self.var = np.stack([np.diag(pair.f0.covariance), np.diag(pair.f1.covariance)]).astype(float)
        self.observed = np.zeros(n, dtype=bool)
        self._models = (_ModelBlocks(pair.f0, self.edges), _ModelBlocks(pair.f1, self.edges))
        self.edge_cov = np.stack([m.edge_cov for m in self._models])

        # Padded neighbor table over directed edges: slot[i, k] indexes the
        # k-th directed edge leaving i (-1 when absent).
        ne = self.edges.shape[0]
        self._src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        self._dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        self._dir_edge = np.concatenate([np.arange(ne), np.arange(ne)])
        deg = np.bincount(self._src, minlength=n) if ne else np.zeros(n, dtype=np.int64)
        width = int(deg.max()) if n else 0
        self._slot = np.full((n, max(width, 1)), -1, dtype=np.int64)
        if ne:
            order = np.argsort(self._src, kind="stable")
            starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
            pos = np.arange(2 * ne) - np.repeat(starts, deg)
            self._slot[self._src[order], pos] = order
        self._has_edges = ne > 0

    @property
    def node_count(self) -> int:
        return self.observed.shape[0]

    def log_densities(self, node: int, value: float) -> tuple[float, float]:
        """``(ln f0(value | F), ln f1(value | F))`` for an unobserved node."""
        out = []
        for m in (0, 1):
            v = self.var[m, node]
            if v < MIN_VARIANCE:
                raise SingularityError(f"conditional variance of node {node} is {v}")
            r = value - self.mean[m, node]
            out.append(-0.5 * (LOG_2PI + math.log(v) + r * r / v))
        return out[0], out[1]

    def log_ratio(self, node: int, value: float) -> float:
        l0, l1 = self.log_densities(node, value)
        return l1 - l0

    def condition(self, node: int, value: float) -> None:
        """Fold the observation ``X_node = value`` into both models."""
        node = int(node)
        if self.observed[node]:
            raise InvalidInputError(f"node {node} is already observed")
        for m, blocks in enumerate(self._models):
            b = blocks.block_of[node]
            nodes = blocks.nodes[b]
            if nodes.shape[0] == 1:
                continue
            cov = blocks.cov[b]
            loc = blocks.local[node]
            col = cov[:, loc].copy()
            piv = col[loc]
            if piv < MIN_VARIANCE:
                raise SingularityError(f"conditional variance of node {node} is {piv}")
            gain = col / piv
            self.mean[m, nodes] += gain * (value - self.mean[m, node])
            cov -= np.outer(gain, col)
            self.var[m, nodes] = np.diagonal(cov)
            ids = blocks.edge_ids.get(b)
            if ids is not None:
                self.edge_cov[m, ids] = cov[blocks.edge_la[b], blocks.edge_lb[b]]
        self.mean[:, node] = value
        self.var[:, node] = 0.0
        self.observed[node] = True

    # ------------------------------------------------------------------
    # Measures
    # ------------------------------------------------------------------

    def _check_variances(self, nodes: np.ndarray) -> None:
        if nodes.size and self.var[:, nodes].min() < MIN_VARIANCE:
            raise SingularityError("conditional variance below 1e-12")

    def single_node_kl(self, ell: int) -> np.ndarray:
        """Immediate information of every node; ``-inf`` on observed nodes."""
        out = np.full(self.node_count, -np.inf)
        free = np.flatnonzero(~self.observed)
        self._check_variances(free)
        o = 1 - ell
        out[free] = univariate_kl(self.mean[ell, free], self.var[ell, free],
                                  self.mean[o, free], self.var[o, free])
        return out

    def edge_future_terms(self, ell: int) -> np.ndarray:
        """Per directed edge ``i -> j``: expected KL of ``X_j`` given ``X_i`` under ``f_ell``.

        Zero where either endpoint is observed.
        """
        src, dst, e = self._src, self._dst, self._dir_edge
        live = ~(self.observed[src] | self.observed[dst])
        out = np.zeros(src.shape[0])
        if not live.any():
            return out
        s, d, e = src[live], dst[live], e[live]
        o = 1 - ell
        coef = []
        for m in (ell, o):
            vi = self.var[m, s]
            c = self.edge_cov[m, e]
            b = c / vi
            a = self.mean[m, d] - b * self.mean[m, s]
            w = self.var[m, d] - b * c
            coef.append((a, b, w))
        (a_p, b_p, w_p), (a_q, b_q, w_q) = coef
        if min(w_p.min(), w_q.min()) < MIN_VARIANCE:
            raise SingularityError("conditional variance below 1e-12")
        db = b_p - b_q
        mu = self.mean[ell, s]
        second = (a_p - a_q + db * mu) ** 2 + db * db * self.var[ell, s]
        out[live] = 0.5 * (np.log(w_q / w_p) + (w_p + second) / w_q - 1.0)
        return out

    def neighborhood_scores(self, ell: int) -> np.ndarray:
        """Best average information over subsets of each node's unobserved neighborhood.

        For a node with immediate term ``k`` and neighbor terms ``g``, the
        best subset of any fixed size takes the largest ``g``; scanning the
        sorted prefix averages therefore covers every subset of ``L_t^i``.
        """
        head = self.single_node_kl(ell)
        if not self._has_edges:
            return head
        g = self.edge_future_terms(ell)
        table = np.where(self._slot >= 0, g[np.maximum(self._slot, 0)], 0.0)
        table = -np.sort(-table, axis=1)
        sizes = np.arange(2, table.shape[1] + 2)
        avgs = (head[:, None] + np.cumsum(table, axis=1)) / sizes
        best = np.maximum(head, avgs.max(axis=1))
        best[self.observed] = -np.inf
        return best

    def joint_conditional(self, m: int, nodes) -> tuple[np.ndarray, np.ndarray]:
        """Conditional mean and covariance of ``X_nodes`` under model ``m``."""
        idx = np.asarray(nodes, dtype=np.int64)
        if self.observed[idx].any():
            raise InvalidInputError("joint_conditional over observed nodes")
        blocks = self._models[m]
        cov = np.zeros((idx.size, idx.size))
        bids = blocks.block_of[idx]
        for b in np.unique(bids):
            sel = np.flatnonzero(bids == b)
            loc = blocks.local[idx[sel]]
            cov[np.ix_(sel, sel)] = blocks.cov[b][np.ix_(loc, loc)]
        return self.mean[m, idx].copy(), cov

    def subset_kl(self, ell: int, nodes) -> float:
        p_mean, p_cov = self.joint_conditional(ell, nodes)
        q_mean, q_cov = self.joint_conditional(1 - ell, nodes)
        return gaussian_kl(p_mean, p_cov, q_mean, q_cov)
