"""
Variational Bayesian Gaussian mixture with diagonal covariances.

Each component has a Dirichlet weight posterior and an independent
Normal-Gamma posterior per dimension. Components are ranked into rating grades
by their mean risk-spread coordinate.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import digamma, gammaln, logsumexp, xlogy

from .errors import DomainError, NumericalError, ShapeError
from .logger import get_logger
from .schema import N_GRADES, grades_to_probabilities

logger = get_logger("vbgmm")

VARIANCE_FLOOR = 1e-6
ELBO_SLACK = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


def component_grades(n_components: int) -> np.ndarray:
    """Grade of each risk rank (rank 0 = riskiest); the identity for 22 components"""
    if n_components == 1:
        return np.array([1])
    ranks = np.arange(n_components)
    return np.rint(1 + ranks * (N_GRADES - 1) / (n_components - 1)).astype(int)


@dataclass(frozen=True)
class _Prior:
    alpha: float
    beta: float
    a: float
    m: np.ndarray
    b: np.ndarray


@dataclass(eq=False)
class GmmModel:
    """Fitted variational posterior plus the component -> grade map"""

    alpha: np.ndarray  # (K,) Dirichlet concentrations
    beta: np.ndarray  # (K,) mean precision scale
    m: np.ndarray  # (K, D) posterior means
    a: np.ndarray  # (K,) Gamma shapes
    b: np.ndarray  # (K, D) Gamma rates
    grade_order: np.ndarray  # (K,) grade of each component
    elbo_trace: List[float] = field(default_factory=list)
    converged: bool = False
    prior: Optional[Dict[str, Any]] = None

    @property
    def n_components(self) -> int:
        return len(self.alpha)

    @property
    def n_dims(self) -> int:
        return self.m.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Expected mixing weights"""
        return self.alpha / self.alpha.sum()

    @property
    def means(self) -> np.ndarray:
        return self.m

    @property
    def covariances(self) -> np.ndarray:
        """Diagonal of each component covariance, E[1/precision] floored"""
        variance = self.b / np.maximum(self.a[:, None] - 1.0, 1e-12)
        variance = np.where(self.a[:, None] > 1.0, variance, self.b / self.a[:, None])
        return np.maximum(variance, VARIANCE_FLOOR)

    @property
    def n_iter(self) -> int:
        return len(self.elbo_trace)

    def log_rho(self, x: np.ndarray) -> np.ndarray:
        """Unnormalized log responsibilities (N, K)"""
        x = _as_matrix(x, self.n_dims)
        return _log_rho(x, self.alpha, self.beta, self.m, self.a, self.b)

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        log_rho = self.log_rho(x)
        return np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))

    def predict_component(self, x: np.ndarray) -> np.ndarray:
        """Argmax-responsibility component; exact ties go to the riskier grade"""
        log_rho = self.log_rho(x)
        tied = log_rho >= log_rho.max(axis=1, keepdims=True)
        ranked = np.where(tied, self.grade_order[None, :], N_GRADES + 1)
        return np.argmin(ranked, axis=1)

    def predict_grades(self, x: np.ndarray) -> np.ndarray:
        return self.grade_order[self.predict_component(x)]

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        """Default probability of every row through its assigned grade"""
        return grades_to_probabilities(self.predict_grades(x))

    def grade_shares(self, x: np.ndarray) -> Dict[int, float]:
        """Share of rows assigned to each grade 1..22"""
        grades = self.predict_grades(x)
        counts = np.bincount(grades, minlength=N_GRADES + 1)[1:]
        total = max(len(grades), 1)
        return {g + 1: float(c) / total for g, c in enumerate(counts)}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "m": self.m.tolist(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "grade_order": self.grade_order.tolist(),
            "elbo_trace": list(self.elbo_trace),
            "converged": self.converged,
            "prior": self.prior,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GmmModel":
        return cls(
            alpha=np.asarray(data["alpha"], dtype=np.float64),
            beta=np.asarray(data["beta"], dtype=np.float64),
            m=np.asarray(data["m"], dtype=np.float64),
            a=np.asarray(data["a"], dtype=np.float64),
            b=np.asarray(data["b"], dtype=np.float64),
            grade_order=np.asarray(data["grade_order"], dtype=int),
            elbo_trace=[float(v) for v in data.get("elbo_trace", [])],
            converged=bool(data.get("converged", False)),
            prior=data.get("prior"),
        )


def _as_matrix(x: np.ndarray, n_dims: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"Observations must be a matrix, got shape {x.shape}")
    if n_dims is not None and x.shape[1] != n_dims:
        raise ShapeError(f"Observations have {x.shape[1]} columns; the mixture was fitted on {n_dims}")
    if not np.all(np.isfinite(x)):
        raise DomainError("Observations contain absent or non-finite values")
    return x


def _expected_sq_dist(x, beta, m, a, b) -> np.ndarray:
    """E[lambda (x - mu)^2] summed over dimensions, (N, K)"""
    precision = a[:, None] / b  # (K, D)
    quad = (x ** 2) @ precision.T - 2.0 * x @ (precision * m).T + np.sum(precision * m ** 2, axis=1)
    return np.maximum(quad, 0.0) + x.shape[1] / beta


def _log_rho(x, alpha, beta, m, a, b) -> np.ndarray:
    n_dims = x.shape[1]
    e_log_pi = digamma(alpha) - digamma(alpha.sum())
    e_log_lambda = digamma(a)[:, None] - np.log(b)
    return (
        e_log_pi
        + 0.5 * e_log_lambda.sum(axis=1)
        - 0.5 * n_dims * LOG_2PI
        - 0.5 * _expected_sq_dist(x, beta, m, a, b)
    )


def _m_step(x, resp, prior: _Prior):
    nk = resp.sum(axis=0)
    s1 = resp.T @ x
    s2 = resp.T @ (x ** 2)
    alpha = prior.alpha + nk
    beta = prior.beta + nk
    m = (prior.beta * prior.m + s1) / beta[:, None]
    a = prior.a + 0.5 * nk
    b = prior.b + 0.5 * (s2 + prior.beta * prior.m ** 2 - beta[:, None] * m ** 2)
    # only rounding can push the scatter term negative
    b = np.maximum(b, prior.b)
    return alpha, beta, m, a, b


def _log_dirichlet_norm(alpha: np.ndarray) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum())


def _elbo(x, resp, prior: _Prior, alpha, beta, m, a, b) -> float:
    n_components, n_dims = m.shape
    e_log_pi = digamma(alpha) - digamma(alpha.sum())
    e_log_lambda = digamma(a)[:, None] - np.log(b)  # (K, D)
    e_lambda = a[:, None] / b

    # likelihood and assignment terms share the responsibilities
    log_lik = (
        0.5 * e_log_lambda.sum(axis=1)
        - 0.5 * n_dims * LOG_2PI
        - 0.5 * _expected_sq_dist(x, beta, m, a, b)
    )
    total = float(np.sum(resp * (log_lik + e_log_pi)))

    prior_alpha = np.full(n_components, prior.alpha)
    total += _log_dirichlet_norm(prior_alpha) + (prior.alpha - 1.0) * float(e_log_pi.sum())

    total += float(
        np.sum(
            0.5 * math.log(prior.beta)
            + 0.5 * e_log_lambda
            - 0.5 * LOG_2PI
            - 0.5 * prior.beta * (1.0 / beta[:, None] + e_lambda * (m - prior.m) ** 2)
        )
    )
    total += float(
        np.sum(
            prior.a * np.log(prior.b)
            - gammaln(prior.a)
            + (prior.a - 1.0) * e_log_lambda
            - prior.b * e_lambda
        )
    )

    total -= float(np.sum(xlogy(resp, resp)))
    total -= _log_dirichlet_norm(alpha) + float(np.sum((alpha - 1.0) * e_log_pi))
    total -= float(
        np.sum(0.5 * np.log(beta)[:, None] + 0.5 * e_log_lambda - 0.5 * LOG_2PI - 0.5)
    )
    total -= float(
        np.sum(
            a[:, None] * np.log(b)
            - gammaln(a)[:, None]
            + (a[:, None] - 1.0) * e_log_lambda
            - a[:, None]
        )
    )
    return total


def _initial_responsibilities(x: np.ndarray, n_components: int, seed: int) -> np.ndarray:
    n = x.shape[0]
    resp = np.zeros((n, n_components))
    n_distinct = len(np.unique(x, axis=0))
    if n_distinct < n_components:
        # the Dirichlet prior lets the unused components collapse
        resp[:, 0] = 1.0
        return resp
    _, labels = kmeans2(x, n_components, minit="++", seed=np.random.default_rng(seed))
    resp[np.arange(n), labels] = 1.0
    return resp


def grade_components(m: np.ndarray, risk_column: Optional[int]) -> np.ndarray:
    """Rank components by descending mean of the risk column; rank 0 becomes grade 1"""
    n_components = m.shape[0]
    if risk_column is None:
        order = np.arange(n_components)
    else:
        # stable sort so identical means keep component order
        order = np.argsort(-m[:, risk_column], kind="stable")
    grades = np.empty(n_components, dtype=int)
    grades[order] = component_grades(n_components)
    return grades


def fit_vb_gmm(
    observations: np.ndarray,
    n_components: int = N_GRADES,
    max_iter: int = 200,
    seed: int = 0,
    tol: float = 1e-6,
    risk_column: Optional[int] = None,
) -> GmmModel:
    """
    Fit the variational mixture by coordinate ascent on the evidence lower bound.

    Priors: symmetric Dirichlet 1/K, Normal-Gamma centred on the pooled mean with
    rate equal to the pooled variance. Initial hard assignments come from k-means++.
    Stops after max_iter iterations or when the bound improves by less than tol.
    The bound may not fall by more than ELBO_SLACK (relative) between iterations.

    Args:
        observations: (rows, dims) standardized observations
        n_components: K
        max_iter: Iteration cap
        seed: Seed for the k-means++ initialization
        tol: Absolute ELBO improvement threshold
        risk_column: Column whose component means order the grades (riskiest first)

    Returns:
        GmmModel

    Raises:
        NumericalError: if the bound decreases or stops being finite
    """
    x = _as_matrix(observations)
    n_rows, n_dims = x.shape
    if n_components < 1:
        raise DomainError(f"Component count must be >= 1, got {n_components}")
    if n_rows < n_components:
        raise DomainError(f"Need at least {n_components} rows to fit {n_components} components, got {n_rows}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter}")

    prior = _Prior(
        alpha=1.0 / n_components,
        beta=1.0,
        a=1.0,
        m=x.mean(axis=0),
        b=np.maximum(x.var(axis=0), VARIANCE_FLOOR),
    )

    resp = _initial_responsibilities(x, n_components, seed)
    params = _m_step(x, resp, prior)
    trace = [_elbo(x, resp, prior, *params)]
    converged = False

    for iteration in range(1, max_iter):
        log_rho = _log_rho(x, *params)
        resp = np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))
        params = _m_step(x, resp, prior)
        elbo = _elbo(x, resp, prior, *params)
        previous = trace[-1]
        trace.append(elbo)
        if not math.isfinite(elbo):
            raise NumericalError(f"ELBO became {elbo} at iteration {iteration} (K={n_components}, {n_rows} rows)")
        if elbo < previous - ELBO_SLACK * max(1.0, abs(previous)):
            raise NumericalError(
                f"ELBO decreased at iteration {iteration}: {previous:.6f} -> {elbo:.6f} "
                f"(K={n_components}, {n_rows} rows)"
            )
        if abs(elbo - previous) < tol:
            converged = True
            break

    alpha, beta, m, a, b = params
    model = GmmModel(
        alpha=alpha,
        beta=beta,
        m=m,
        a=a,
        b=b,
        grade_order=grade_components(m, risk_column),
        elbo_trace=trace,
        converged=converged,
        prior={
            "alpha": prior.alpha,
            "beta": prior.beta,
            "a": prior.a,
            "m": prior.m.tolist(),
            "b": prior.b.tolist(),
        },
    )
    logger.debug(
        f"VB-GMM K={n_components} on {n_rows}x{n_dims}: {len(trace)} iterations, "
        f"ELBO {trace[-1]:.4f}, converged={converged}"
    )
    return model
