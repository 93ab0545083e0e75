"""Per-class generative Gaussian mixtures over source embeddings.

One diagonal-covariance GMM per class, fitted online with a momentum
Sinkhorn-EM: the E-step solves a balanced soft assignment (rows sum to 1,
columns to N/M) so no component starves, and the M-step blends fresh batch
estimates into the running parameters. Each update pools the live batch
with a per-class FIFO memory of past embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NotReady
from .numerics import diag_gaussian_logpdf_batch, log_sum_exp

RESP_EPS = 1e-8  # below this total responsibility a component's batch estimate is unusable


@dataclass
class ClassGmm:
    """Mixture parameters for one class: weights (M,), means (M,D), vars (M,D)."""

    class_id: int
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def check(self) -> None:
        if abs(float(self.weights.sum()) - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ContractViolation(f"class {self.class_id}: mixture weights must form a distribution")


class FifoBuffer:
    """Bounded per-class store of feature vectors with strict FIFO eviction.

    Preallocated ring buffers: push and contents stay cheap at training
    rates.
    """

    def __init__(self, n_classes: int, dim: int, capacity: int):
        self.n_classes = n_classes
        self.dim = dim
        self.capacity = capacity
        self._buf = [np.empty((capacity, dim)) for _ in range(n_classes)]
        self._head = np.zeros(n_classes, dtype=np.int64)  # index of the oldest row
        self._size = np.zeros(n_classes, dtype=np.int64)

    def push(self, features: np.ndarray, labels: np.ndarray, per_call_cap: int | None = None) -> None:
        """Append features per class (at most per_call_cap per class), evict oldest."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        labels = np.asarray(labels)
        if features.shape[0] != labels.shape[0]:
            raise ContractViolation("features and labels length mismatch")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ContractViolation(f"label out of range [0, {self.n_classes})")
        for c in np.unique(labels):
            rows = features[labels == c]
            if per_call_cap is not None:
                rows = rows[:per_call_cap]
            self._append(int(c), rows)

    def _append(self, c: int, rows: np.ndarray) -> None:
        cap = self.capacity
        if rows.shape[0] == 0 or cap == 0:
            return
        if rows.shape[0] >= cap:
            self._buf[c][:] = rows[-cap:]
            self._head[c], self._size[c] = 0, cap
            return
        buf, head, size = self._buf[c], int(self._head[c]), int(self._size[c])
        write = (head + size) % cap
        first = min(rows.shape[0], cap - write)
        buf[write : write + first] = rows[:first]
        if first < rows.shape[0]:
            buf[: rows.shape[0] - first] = rows[first:]
        overflow = max(0, size + rows.shape[0] - cap)
        self._head[c] = (head + overflow) % cap
        self._size[c] = min(cap, size + rows.shape[0])

    def size(self, c: int) -> int:
        return int(self._size[c])

    def contents(self, c: int) -> np.ndarray:
        """Stored vectors for class c in insertion order, shape (n, dim)."""
        buf, head, size = self._buf[c], int(self._head[c]), int(self._size[c])
        if head == 0:
            return buf[:size].copy()
        return np.concatenate([buf[head:size], buf[:head]]) if size == self.capacity else buf[:size].copy()

    def load(self, c: int, rows: np.ndarray) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.size == 0:
            self._head[c], self._size[c] = 0, 0
            return
        self._head[c], self._size[c] = 0, 0
        self._append(c, rows[-self.capacity :])


class GmmBank:
    """All per-class GMMs plus the source FIFO memory and update machinery."""

    def __init__(
        self,
        n_classes: int,
        n_components: int,
        dim: int,
        momentum: float = 0.999,
        sinkhorn_iters: int = 10,
        variance_floor: float = 1e-4,
        memory_capacity: int = 2048,
        seed: int = 0,
    ):
        self.n_classes = n_classes
        self.n_components = n_components
        self.dim = dim
        self.momentum = momentum
        self.sinkhorn_iters = sinkhorn_iters
        self.variance_floor = variance_floor
        self.memory = FifoBuffer(n_classes, dim, memory_capacity)
        self.gmms: list[ClassGmm | None] = [None] * n_classes
        self._rng = np.random.default_rng(seed)

    # -- queries ---------------------------------------------------------

    def initialized(self, c: int | None = None) -> bool:
        if c is None:
            return all(g is not None for g in self.gmms)
        return self.gmms[c] is not None

    def _require(self, c: int) -> ClassGmm:
        g = self.gmms[c]
        if g is None:
            raise NotReady(f"GMM for class {c} not initialized yet")
        return g

    def component_logliks(self, F: np.ndarray, c: int) -> np.ndarray:
        """log(pi_m N(f_n; mu_m, var_m)) for every sample/component, shape (N, M)."""
        g = self._require(c)
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        if F.shape[1] != self.dim:
            raise ContractViolation(f"feature dim {F.shape[1]} != bank dim {self.dim}")
        return np.log(g.weights)[None, :] + diag_gaussian_logpdf_batch(F, g.means, g.vars)

    def class_conditional_logpdf(self, f: np.ndarray, c: int) -> float:
        """log p(f | c) = log sum_m pi_m N(f; mu_m, var_m)."""
        return float(log_sum_exp(self.component_logliks(f, c)[0]))

    def class_logpdf_batch(self, F: np.ndarray) -> np.ndarray:
        """log p(f | c) for all classes at once, shape (N, C). Needs every class ready."""
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        out = np.empty((F.shape[0], self.n_classes))
        for c in range(self.n_classes):
            out[:, c] = log_sum_exp(self.component_logliks(F, c), axis=1)
        return out

    def component_posterior(self, f: np.ndarray, c: int) -> np.ndarray:
        """p(m | f, c) over the M components, sums to 1."""
        return self.component_posterior_batch(np.atleast_2d(f), c)[0]

    def component_posterior_batch(self, F: np.ndarray, c: int) -> np.ndarray:
        ll = self.component_logliks(F, c)
        ll -= log_sum_exp(ll, axis=1, keepdims=True)
        return np.exp(ll)

    # -- updates ---------------------------------------------------------

    def memory_push(self, features: np.ndarray, labels: np.ndarray, per_image_cap: int) -> None:
        self.memory.push(features, labels, per_image_cap)

    def lazy_init(self, F: np.ndarray, c: int) -> None:
        """Seed class c: means are M distinct pool samples, unit variances, uniform weights."""
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        n, m = F.shape[0], self.n_components
        if n >= m:
            idx = self._rng.choice(n, size=m, replace=False)
            means = F[idx].copy()
        else:
            idx = self._rng.choice(n, size=m, replace=True)
            means = F[idx].copy()
            # jitter repeats so no two components start identical
            means += 1e-3 * self._rng.standard_normal(means.shape)
        self.gmms[c] = ClassGmm(
            class_id=c,
            weights=np.full(m, 1.0 / m),
            means=means,
            vars=np.ones((m, self.dim)),
        )

    def sinkhorn_estep(self, F: np.ndarray, c: int, iters: int | None = None) -> np.ndarray:
        """Balanced soft assignment of pool F to the class's components.

        Starting from K[n,m] = pi_m N(f_n; mu_m, var_m), alternately rescale
        rows to sum 1 and columns to sum N/M, finishing with a row rescale so
        each row is an exact distribution. iters=0 gives the plain posterior.
        Runs entirely in the log domain; linear-space kernels underflow at
        realistic feature dimensions.
        """
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        if F.shape[0] == 0:
            raise ContractViolation("sinkhorn_estep on an empty batch")
        iters = self.sinkhorn_iters if iters is None else iters
        log_k = self.component_logliks(F, c)
        n, m = log_k.shape
        log_col_target = np.log(n / m)
        for _ in range(iters):  # lse inlined; this loop dominates training cost
            mx = log_k.max(axis=1, keepdims=True)
            log_k -= mx + np.log(np.exp(log_k - mx).sum(axis=1, keepdims=True))
            mx = log_k.max(axis=0, keepdims=True)
            log_k -= mx + np.log(np.exp(log_k - mx).sum(axis=0, keepdims=True)) - log_col_target
        mx = log_k.max(axis=1, keepdims=True)
        log_k -= mx + np.log(np.exp(log_k - mx).sum(axis=1, keepdims=True))
        return np.exp(log_k)

    def momentum_mstep(self, F: np.ndarray, R: np.ndarray, c: int, momentum: float | None = None) -> None:
        """Blend batch estimates into the class parameters.

        pi_hat_m = sum_n R[n,m] / N, mu_hat_m and var_hat_m are R-weighted
        mean/variance; then theta <- rho theta_old + (1-rho) theta_hat.
        Components with total responsibility < RESP_EPS keep their old
        parameters. Weights are renormalized and variances floored last.
        """
        g = self._require(c)
        rho = self.momentum if momentum is None else momentum
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        R = np.asarray(R, dtype=np.float64)
        if R.shape != (F.shape[0], self.n_components):
            raise ContractViolation(f"responsibility shape {R.shape} inconsistent with batch")

        r_tot = R.sum(axis=0)
        live = r_tot >= RESP_EPS
        pi_hat = r_tot / F.shape[0]
        mu_hat = np.where(live[:, None], (R.T @ F) / np.where(live, r_tot, 1.0)[:, None], g.means)
        diff = F[:, None, :] - mu_hat[None, :, :]
        var_num = np.einsum("nm,nmd->md", R, diff * diff)
        var_hat = np.where(live[:, None], var_num / np.where(live, r_tot, 1.0)[:, None], g.vars)

        new_w = np.where(live, rho * g.weights + (1.0 - rho) * pi_hat, g.weights)
        new_mu = np.where(live[:, None], rho * g.means + (1.0 - rho) * mu_hat, g.means)
        new_var = np.where(live[:, None], rho * g.vars + (1.0 - rho) * var_hat, g.vars)

        g.weights = new_w / new_w.sum()
        g.means = new_mu
        g.vars = np.maximum(new_var, self.variance_floor)

    def em_update(self, features: np.ndarray, labels: np.ndarray, per_image_cap: int = 100) -> None:
        """One momentum Sinkhorn-EM step per class present in the minibatch.

        Each class pools its batch features with its memory contents for the
        E/M step; the batch is pushed into memory afterwards so it never
        enters its own pool twice. Unseen classes are lazily initialized.
        """
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        labels = np.asarray(labels)
        if labels.size == 0:
            return
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ContractViolation(f"label out of range [0, {self.n_classes})")
        for c in np.unique(labels):
            batch_c = features[labels == c]
            pool = np.concatenate([batch_c, self.memory.contents(int(c))], axis=0)
            if not self.initialized(int(c)):
                self.lazy_init(pool, int(c))
            R = self.sinkhorn_estep(pool, int(c))
            self.momentum_mstep(pool, R, int(c))
        self.memory_push(features, labels, per_image_cap)

    def pooled_loglik(self, features: np.ndarray, labels: np.ndarray) -> float:
        """sum_n log p(f_n | y_n) over a labeled set; the EM objective."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        labels = np.asarray(labels)
        total = 0.0
        for c in np.unique(labels):
            ll = self.component_logliks(features[labels == c], int(c))
            total += float(np.sum(log_sum_exp(ll, axis=1)))
        return total
