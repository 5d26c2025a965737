"""Binary logistic model supplying the CA's local conversion potential.

The local potential of a parcel is sigmoid(a0 + sum_k a_k * c_k) over its
named features. Fitting is maximum likelihood via iteratively reweighted
least squares (Newton steps on the log-likelihood) guarded by step-halving,
which makes the log-likelihood non-decreasing across iterations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_FEATURES = ("ln_area", "center_distance_km", "poi_density_norm")

SEPARATION_NORM_LIMIT = 1e4


class FitError(ValueError):
    """Fitting cannot proceed (bad labels, separation, singular system)."""


def sigmoid(eta):
    """Numerically stable logistic function, elementwise."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_likelihood(Xd: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    """Bernoulli log-likelihood on a design matrix (intercept column included).

    Uses sum(y*eta - log(1+exp(eta))) with logaddexp for stability.
    """
    eta = Xd @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def log_likelihood_grad(Xd: np.ndarray, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` with respect to beta."""
    p = sigmoid(Xd @ beta)
    return Xd.T @ (y - p)


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.hstack([np.ones((X.shape[0], 1)), X])


@dataclass
class LogisticModel:
    """Fitted (or user-supplied) logistic model over named features."""

    features: list[str]
    intercept: float
    coefficients: np.ndarray  # aligned with features
    se: np.ndarray | None = None  # intercept first, then features
    p_values: np.ndarray | None = None
    converged: bool = True
    iterations: int = 0
    log_likelihood: float | None = None
    ll_path: list[float] = field(default_factory=list, repr=False)

    @property
    def beta(self) -> np.ndarray:
        """Full coefficient vector, intercept first."""
        return np.concatenate([[self.intercept], self.coefficients])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Probabilities for a feature matrix with columns in feature order."""
        X = np.asarray(X, dtype=float)
        return sigmoid(self.intercept + X @ self.coefficients)

    def to_json(self) -> dict:
        d = {
            "features": list(self.features),
            "coefficients": {"intercept": self.intercept}
            | {f: float(c) for f, c in zip(self.features, self.coefficients)},
            "se": None,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.se is not None:
            d["se"] = {"intercept": float(self.se[0])} | {
                f: float(s) for f, s in zip(self.features, self.se[1:])
            }
        if self.p_values is not None:
            d["p_values"] = {"intercept": float(self.p_values[0])} | {
                f: float(p) for f, p in zip(self.features, self.p_values[1:])
            }
        if self.log_likelihood is not None:
            d["log_likelihood"] = self.log_likelihood
        return d

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def from_json(cls, d: dict) -> "LogisticModel":
        features = list(d["features"])
        coeffs = d["coefficients"]
        missing = [f for f in features + ["intercept"] if f not in coeffs]
        if missing:
            raise ValueError(f"model file missing coefficients: {missing}")
        se = d.get("se")
        se_arr = None
        if se:
            se_arr = np.array([se["intercept"]] + [se[f] for f in features])
        pv = d.get("p_values")
        pv_arr = None
        if pv:
            pv_arr = np.array([pv["intercept"]] + [pv[f] for f in features])
        return cls(
            features=features,
            intercept=float(coeffs["intercept"]),
            coefficients=np.array([coeffs[f] for f in features], dtype=float),
            se=se_arr,
            p_values=pv_arr,
            converged=bool(d.get("converged", True)),
            iterations=int(d.get("iterations", 0)),
            log_likelihood=d.get("log_likelihood"),
        )

    @classmethod
    def load(cls, path) -> "LogisticModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: list[str] | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> LogisticModel:
    """Maximum-likelihood logistic fit by IRLS with step-halving.

    Converged when the largest coefficient step falls below `tol`. Reports
    standard errors from the inverse observed information and two-sided
    normal p-values.

    Raises FitError on: labels all one class, constant feature columns,
    perfect separation (diverging coefficients, named by the worst
    feature), or a singular information matrix.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise FitError("X and y shapes do not align")
    if feature_names is None:
        feature_names = [f"x{k}" for k in range(X.shape[1])]
    if len(feature_names) != X.shape[1]:
        raise FitError("feature_names length does not match X columns")
    npos = int(np.sum(y == 1))
    if npos == 0 or npos == len(y):
        raise FitError("labels need at least one positive and one negative")
    col_std = X.std(axis=0)
    for k, s in enumerate(col_std):
        if s == 0.0:
            raise FitError(f"feature '{feature_names[k]}' is constant")

    Xd = add_intercept(X)
    beta = np.zeros(Xd.shape[1])
    ll = log_likelihood(Xd, y, beta)
    ll_path = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(Xd @ beta)
        w = p * (1.0 - p)
        grad = Xd.T @ (y - p)
        H = (Xd * w[:, None]).T @ Xd
        try:
            delta = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular information matrix") from exc

        # step-halving keeps the log-likelihood non-decreasing
        step = 1.0
        new_ll = log_likelihood(Xd, y, beta + step * delta)
        halvings = 0
        while new_ll < ll and halvings < 50:
            step *= 0.5
            halvings += 1
            new_ll = log_likelihood(Xd, y, beta + step * delta)
        beta = beta + step * delta
        ll = new_ll
        ll_path.append(ll)

        if np.linalg.norm(beta, ord=np.inf) > SEPARATION_NORM_LIMIT:
            worst = int(np.argmax(np.abs(beta[1:])))
            raise FitError(
                f"perfect separation suspected: coefficient for "
                f"'{feature_names[worst]}' diverges"
            )
        if np.max(np.abs(step * delta)) < tol:
            converged = True
            break

    if not converged:
        log.warning("IRLS did not converge in %d iterations", max_iter)

    p = sigmoid(Xd @ beta)
    w = p * (1.0 - p)
    H = (Xd * w[:, None]).T @ Xd
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular information matrix at optimum") from exc
    se = np.sqrt(np.diag(cov))
    z = beta / se
    pvals = np.array([math.erfc(abs(zk) / math.sqrt(2.0)) for zk in z])

    return LogisticModel(
        features=list(feature_names),
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        se=se,
        p_values=pvals,
        converged=converged,
        iterations=it,
        log_likelihood=ll,
        ll_path=ll_path,
    )


def local_potential(model: LogisticModel, features: dict[str, float]) -> float:
    """Sigmoid of the linear predictor for one parcel's named features."""
    missing = [f for f in model.features if f not in features]
    if missing:
        raise KeyError(f"missing features: {missing}")
    z = model.intercept + sum(
        c * features[f] for f, c in zip(model.features, model.coefficients)
    )
    return float(sigmoid(z))


def classification_accuracy(
    model: LogisticModel, X: np.ndarray, y: np.ndarray, cutoff: float = 0.5
) -> float:
    """Fraction of labels matched at the cutoff.

    A probability exactly at the cutoff predicts the negative (non-urban)
    class.
    """
    pred = (model.predict(X) > cutoff).astype(int)
    y = np.asarray(y).ravel().astype(int)
    return float(np.mean(pred == y))
