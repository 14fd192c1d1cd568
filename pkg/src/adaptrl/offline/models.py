"""Working models for nuisance functions: propensity and outcome regressions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core import FeatureMap
from ..errors import PropensityOutOfRange, ValidationError
from ..regression import ridge_fit


@dataclass(frozen=True)
class PropensityModel:
    """Specification of ``P(A = a | H)``.

    ``kind="logistic"`` fits an unpenalized (multinomial) logistic regression
    on the main-effect summary of ``fmap``; ``"known"`` uses the probabilities
    recorded in the data; ``"constant"`` is intercept-only logistic (the
    marginal action frequencies).
    """

    kind: str = "logistic"
    fmap: FeatureMap | None = None

    def __post_init__(self):
        if self.kind not in ("logistic", "known", "constant"):
            raise ValidationError(f"unknown propensity kind {self.kind!r}")

    def design(self, H: np.ndarray, p: int, t: int) -> np.ndarray:
        if self.kind == "constant":
            return np.ones((np.atleast_2d(H).shape[0], 1))
        fmap = self.fmap or FeatureMap("linear")
        return fmap.summarize(H, p, t)[0]

    def fit(self, H: np.ndarray, actions: np.ndarray, n_actions: int, p: int, t: int,
            recorded: np.ndarray | None = None) -> "FittedPropensity":
        if self.kind == "known":
            if recorded is None or np.any(np.isnan(recorded)):
                raise ValidationError("known propensities requested but behaviour probabilities are not recorded")
            return FittedPropensity(self, None, None, n_actions, p, t, recorded_taken=np.asarray(recorded, float),
                                    recorded_actions=np.asarray(actions))
        from sklearn.linear_model import LogisticRegression

        X = self.design(H, p, t)
        y = np.asarray(actions)
        classes = np.unique(y)
        if classes.size < 2:
            raise PropensityOutOfRange("only one action observed; propensity is degenerate")
        clf = LogisticRegression(penalty=None, fit_intercept=False, tol=1e-10, max_iter=5000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            clf.fit(X, y)
        coef = clf.coef_.copy()
        return FittedPropensity(self, coef, clf.classes_.copy(), n_actions, p, t)


@dataclass
class FittedPropensity:
    spec: PropensityModel
    coef: np.ndarray | None
    classes: np.ndarray | None
    n_actions: int
    p: int
    t: int
    recorded_taken: np.ndarray | None = None
    recorded_actions: np.ndarray | None = None

    def probs(self, H: np.ndarray) -> np.ndarray:
        """``(n, K)`` action probabilities."""
        if self.spec.kind == "known":
            if self.n_actions != 2:
                raise ValidationError("known propensities expand to full distributions for binary actions only")
            p1 = np.where(self.recorded_actions == 1, self.recorded_taken, 1.0 - self.recorded_taken)
            return np.column_stack([1.0 - p1, p1])
        X = self.spec.design(H, self.p, self.t)
        z = X @ self.coef.T
        if z.shape[1] == 1:
            p1 = 1.0 / (1.0 + np.exp(-z[:, 0]))
            full = np.column_stack([1.0 - p1, p1])
        else:
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            full = e / e.sum(axis=1, keepdims=True)
        out = np.zeros((X.shape[0], self.n_actions))
        out[:, self.classes] = full
        return out

    def prob_of(self, H: np.ndarray, a: np.ndarray) -> np.ndarray:
        P = self.probs(H)
        return P[np.arange(P.shape[0]), np.asarray(a, dtype=np.int64)]

    def to_dict(self) -> dict:
        return {
            "kind": self.spec.kind,
            "coef": None if self.coef is None else self.coef.tolist(),
            "classes": None if self.classes is None else self.classes.tolist(),
        }


def check_propensity(p: np.ndarray) -> None:
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise PropensityOutOfRange("propensity estimates must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class OutcomeModel:
    """Linear model ``E[Y | H, A] = design(H, A) @ beta`` fitted by least squares."""

    fmap: FeatureMap = field(default_factory=FeatureMap)
    ridge: float = 0.0

    def fit(self, H, actions, y, n_actions: int, p: int, t: int) -> "FittedOutcome":
        X = self.fmap.design(H, actions, n_actions, p, t)
        return FittedOutcome(self, ridge_fit(X, y, self.ridge), n_actions, p, t)


@dataclass
class FittedOutcome:
    spec: OutcomeModel
    coef: np.ndarray
    n_actions: int
    p: int
    t: int

    def predict(self, H: np.ndarray, a) -> np.ndarray:
        return self.spec.fmap.design(H, a, self.n_actions, self.p, self.t) @ self.coef
