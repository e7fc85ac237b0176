"""Score matrices, dustbin augmentation, Sinkhorn transport, and dual-softmax.

Matching starts from the pairwise inner products of two token matrices.  The
transport route augments the score matrix with a dustbin row and column that
absorb unmatched mass, then runs Sinkhorn scaling toward marginals built from
the two probability vectors (each dustbin gets mass 1, so the plan's total
mass is 2).  The dual-softmax route normalizes the exponentiated scores along
rows and columns and multiplies the two.

Both routes come in a uniform flavor (every point weighted equally) and a
reweighted flavor (points weighted by their detection probabilities).  With
uniform probabilities the two flavors coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .attention import ProbabilityWeights

__all__ = [
    "NumericalError",
    "AugmentedAssignment",
    "score_matrix",
    "augment",
    "marginals",
    "sinkhorn",
    "ot_uniform",
    "ot_reweighted",
    "dual_softmax",
    "dual_softmax_reweighted",
    "DEFAULT_EPS",
    "DEFAULT_ALPHA",
    "DEFAULT_MAX_ITERS",
    "DEFAULT_TOL",
]

DEFAULT_EPS = 0.1
DEFAULT_ALPHA = 1.0
DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-9


class NumericalError(RuntimeError):
    """A computation produced non-finite intermediates and was aborted."""


@dataclass(frozen=True)
class AugmentedAssignment:
    """Transport plan over augmented indices plus convergence bookkeeping.

    plan has shape (n_A + 1, n_B + 1); the last row and column are the
    dustbins.  residual is the final infinity-norm violation of the marginal
    constraints, and converged records whether it reached the requested
    tolerance within the iteration budget.
    """

    plan: np.ndarray
    iterations: int
    residual: float
    converged: bool

    @property
    def interior(self) -> np.ndarray:
        """The plan without the dustbin row and column."""
        return self.plan[:-1, :-1]


def score_matrix(tokens_a: np.ndarray, tokens_b: np.ndarray) -> np.ndarray:
    """Pairwise inner products: entry (i, j) is token_a_i . token_b_j."""
    tokens_a = np.asarray(tokens_a, dtype=np.float64)
    tokens_b = np.asarray(tokens_b, dtype=np.float64)
    if tokens_a.ndim != 2 or tokens_b.ndim != 2 or tokens_a.shape[0] != tokens_b.shape[0]:
        raise ValueError(
            f"token matrices must be (d, n) with equal d, got {tokens_a.shape} vs {tokens_b.shape}"
        )
    return tokens_a.T @ tokens_b


def augment(scores: np.ndarray, alpha: float) -> np.ndarray:
    """Append a dustbin row and column holding the score ``alpha``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    n_a, n_b = scores.shape
    out = np.full((n_a + 1, n_b + 1), float(alpha))
    out[:n_a, :n_b] = scores
    return out


def marginals(
    p_a: ProbabilityWeights, p_b: ProbabilityWeights
) -> tuple[np.ndarray, np.ndarray]:
    """Augmented marginals: probabilities with a unit dustbin appended to each."""
    a = np.concatenate([p_a.p, [1.0]])
    b = np.concatenate([p_b.p, [1.0]])
    return a, b


def sinkhorn(
    sbar: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    eps: float,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> AugmentedAssignment:
    """Entropic transport plan by alternating scaling, in the log domain.

    Solves for plan P = diag(u) K diag(v) with K = exp(sbar / eps), row sums
    a and column sums b, via the updates u = a / (K v), v = b / (K' u),
    starting from u = a, v = b.  All scalings are stored as logarithms and
    combined with log-sum-exp, so large score-to-eps ratios cannot overflow.
    Zero marginal entries pin the matching plan rows or columns to exact
    zeros.

    Iterates until the infinity norm of the row-sum violation, checked after
    each column update (column sums are exact there by construction), drops
    to ``tol``, or until ``max_iters``.  The reported residual is recomputed
    from the final plan over both constraints.
    """
    sbar = np.asarray(sbar, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if sbar.shape != (a.size, b.size):
        raise ValueError(
            f"scores {sbar.shape} do not match marginal sizes {a.size} x {b.size}"
        )
    if not np.all(np.isfinite(sbar)):
        raise ValueError("scores must be finite")
    if not (eps > 0.0):
        raise ValueError("eps must be positive")
    if abs(a.sum() - b.sum()) > 1e-9 * max(a.sum(), 1.0):
        raise ValueError("marginals must carry equal total mass")

    log_k = sbar / eps
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)

    # starting from v = b, the first half-iteration below is the u update
    log_v = log_b.copy()
    log_u = log_a.copy()
    row_lse = logsumexp(log_k + log_v[None, :], axis=1)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        log_u = log_a - row_lse
        col_lse = logsumexp(log_k + log_u[:, None], axis=0)
        log_v = log_b - col_lse
        if np.any(np.isnan(log_u)) or np.any(np.isnan(log_v)):
            raise NumericalError(
                f"sinkhorn produced non-finite scalings at iteration {iterations}"
            )
        # the row log-sum-exp doubles as the residual check and is reused by
        # the next u update, so each iteration costs two log-sum-exp sweeps
        row_lse = logsumexp(log_k + log_v[None, :], axis=1)
        row_sums = np.exp(log_u + row_lse)
        if np.max(np.abs(row_sums - a)) <= tol:
            break

    plan = np.exp(log_u[:, None] + log_k + log_v[None, :])
    residual = max(
        float(np.max(np.abs(plan.sum(axis=1) - a))),
        float(np.max(np.abs(plan.sum(axis=0) - b))),
    )
    return AugmentedAssignment(
        plan=plan,
        iterations=iterations,
        residual=residual,
        converged=residual <= tol,
    )


def ot_uniform(
    tokens_a: np.ndarray,
    tokens_b: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> AugmentedAssignment:
    """Transport with equal weight on every point of each side.

    Delegates to ``ot_reweighted`` with uniform probabilities, so the two
    agree bitwise when the probabilities are uniform.
    """
    n_a = np.asarray(tokens_a).shape[1]
    n_b = np.asarray(tokens_b).shape[1]
    return ot_reweighted(
        tokens_a,
        tokens_b,
        ProbabilityWeights.uniform(n_a),
        ProbabilityWeights.uniform(n_b),
        alpha=alpha,
        eps=eps,
        max_iters=max_iters,
        tol=tol,
    )


def ot_reweighted(
    tokens_a: np.ndarray,
    tokens_b: np.ndarray,
    p_a: ProbabilityWeights,
    p_b: ProbabilityWeights,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> AugmentedAssignment:
    """Transport whose interior marginals are the detection probabilities."""
    scores = score_matrix(tokens_a, tokens_b)
    if len(p_a) != scores.shape[0] or len(p_b) != scores.shape[1]:
        raise ValueError("probability lengths must match the token counts")
    a, b = marginals(p_a, p_b)
    return sinkhorn(augment(scores, alpha), a, b, eps, max_iters=max_iters, tol=tol)


def dual_softmax(scores: np.ndarray) -> np.ndarray:
    """Row softmax times column softmax of the scores, computed in log space."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    log_ds = (
        2.0 * scores
        - logsumexp(scores, axis=1, keepdims=True)
        - logsumexp(scores, axis=0, keepdims=True)
    )
    return np.exp(log_ds)


def dual_softmax_reweighted(
    scores: np.ndarray, p_a: ProbabilityWeights, p_b: ProbabilityWeights
) -> np.ndarray:
    """Dual-softmax with detection probabilities folded into both softmaxes.

    Entry (i, j) is p_A(i) p_B(j) z_ij^2 / (sum_l p_B(l) z_il * sum_k p_A(k)
    z_kj) with z = exp(scores): the row normalization weights key columns by
    p_B and the column normalization weights key rows by p_A.  Under this
    normalization, summing the uniform dual-softmax of a duplicated point set
    over duplicate groups reproduces the reweighted values exactly, and
    uniform probabilities cancel back to the unweighted dual-softmax.  Rows
    and columns with zero probability are exactly zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    if len(p_a) != scores.shape[0] or len(p_b) != scores.shape[1]:
        raise ValueError("probability lengths must match the score shape")
    log_pa = p_a.log()
    log_pb = p_b.log()
    log_ds = (
        log_pa[:, None]
        + log_pb[None, :]
        + 2.0 * scores
        - logsumexp(scores + log_pb[None, :], axis=1, keepdims=True)
        - logsumexp(scores + log_pa[:, None], axis=0, keepdims=True)
    )
    # -inf log weights produce -inf log entries; exp maps them to exact zeros
    return np.exp(log_ds)
