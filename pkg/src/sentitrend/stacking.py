"""Logistic stacking of the two per-message probability sources.

A three-parameter logistic model maps the attention network's probability
and the upstream transformer's probability to the final negative / not
negative call. Features default to the logit of each input probability
(clamped away from 0 and 1); ties at the decision threshold classify as
negative.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .logistic import irls

CLAMP_EPS = 1e-6
TRANSFORMS = ("logit", "identity")


@dataclass(frozen=True)
class StackObservation:
    msg_id: str
    p_gat: float
    p_upstream: float
    label: Optional[int] = None  # 1 = negative

    def __post_init__(self):
        for name in ("p_gat", "p_upstream"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0/1, got {self.label}")


@dataclass(frozen=True)
class StackModel:
    w0: float
    w1: float  # attention-network feature
    w2: float  # upstream feature
    transform: str = "logit"
    threshold: float = 0.5

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        for name in ("w0", "w1", "w2"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def to_json(self) -> str:
        return json.dumps(
            {"w0": self.w0, "w1": self.w1, "w2": self.w2,
             "transform": self.transform, "threshold": self.threshold},
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "StackModel":
        obj = json.loads(text)
        return StackModel(w0=obj["w0"], w1=obj["w1"], w2=obj["w2"],
                          transform=obj.get("transform", "logit"),
                          threshold=obj.get("threshold", 0.5))


@dataclass
class StackFit:
    model: StackModel
    iterations: int
    deviance: float
    converged: bool
    separated: bool


def _features(p, transform):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if transform == "logit":
        return logit(np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS))
    return p


def _design(p_gat, p_upstream, transform):
    f1 = _features(p_gat, transform)
    f2 = _features(p_upstream, transform)
    return np.column_stack([np.ones(len(f1)), f1, f2])


def fit_stack(observations, transform: str = "logit", threshold: float = 0.5) -> StackFit:
    """Maximum-likelihood stacking coefficients from labeled observations.

    Requires at least one observation of each label and non-collinear
    transformed features. Perfect separation is detected (coefficients
    diverging while the likelihood still improves) and reported on the
    returned fit rather than raised.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"transform must be one of {TRANSFORMS}")
    labeled = [o for o in observations if o.label is not None]
    if not labeled:
        raise ValueError("no labeled observations")
    y = np.array([o.label for o in labeled], dtype=np.float64)
    if y.min() == y.max():
        raise ValueError("need at least one observation of each label")
    X = _design([o.p_gat for o in labeled], [o.p_upstream for o in labeled], transform)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("transformed features are collinear; cannot identify coefficients")
    res = irls(X, y)
    model = StackModel(w0=float(res.beta[0]), w1=float(res.beta[1]), w2=float(res.beta[2]),
                       transform=transform, threshold=threshold)
    return StackFit(model=model, iterations=res.iterations, deviance=res.deviance,
                    converged=res.converged, separated=res.separated)


def predict_stack(model: StackModel, p_gat, p_upstream):
    """(p_negative, is_negative); ties at the threshold classify negative.

    Accepts scalars or arrays; arrays come back as numpy arrays.
    """
    scalar = np.isscalar(p_gat) and np.isscalar(p_upstream)
    f1 = _features(np.atleast_1d(p_gat), model.transform)
    f2 = _features(np.atleast_1d(p_upstream), model.transform)
    p = expit(model.w0 + model.w1 * f1 + model.w2 * f2)
    negative = p >= model.threshold
    if scalar:
        return float(p[0]), bool(negative[0])
    return p, negative


def stack_deviance(model: StackModel, observations) -> float:
    """-2 log-likelihood of labeled observations under the model."""
    labeled = [o for o in observations if o.label is not None]
    p, _ = predict_stack(model, np.array([o.p_gat for o in labeled]),
                         np.array([o.p_upstream for o in labeled]))
    y = np.array([o.label for o in labeled], dtype=np.float64)
    eps = 1e-300
    return -2.0 * float(np.sum(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


@dataclass(frozen=True)
class Prediction:
    """One classified message as emitted by the stacking stage."""

    msg_id: str
    school_id: str
    year: int
    p_gat: float
    p_upstream: float
    p_stacked: float
    is_negative: bool


PREDICTION_HEADER = ["msg_id", "school_id", "year", "p_gat", "p_upstream", "p_stacked", "class"]


def write_predictions(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PREDICTION_HEADER)
    for r in rows:
        writer.writerow([
            r.msg_id, r.school_id, r.year,
            repr(float(r.p_gat)), repr(float(r.p_upstream)), repr(float(r.p_stacked)),
            "negative" if r.is_negative else "nonnegative",
        ])
    return buf.getvalue()


def read_predictions(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != PREDICTION_HEADER:
        raise ValueError(f"bad predictions header: {rows[0] if rows else 'empty file'}")
    out = []
    for row in rows[1:]:
        if not row:
            continue
        out.append(Prediction(
            msg_id=row[0], school_id=row[1], year=int(row[2]),
            p_gat=float(row[3]), p_upstream=float(row[4]), p_stacked=float(row[5]),
            is_negative=(row[6] == "negative"),
        ))
    return out
