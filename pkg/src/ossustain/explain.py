"""Local linear surrogate explanations of the sequence classifier.

Each month-feature cell of an instance is kept or replaced by a draw from
that feature's training values; the classifier is probed on every sample
and a kernel-weighted ridge regression of its output on the keep/replace
masks gives one coefficient per cell.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .features import FEATURES, N_FEATURES

EXPLANATION_SCHEMA = {
    "type": "object",
    "required": ["project_id", "months", "intercept", "coefficients", "r2"],
    "properties": {
        "project_id": {"type": "string"},
        "months": {"type": "integer", "minimum": 1},
        "intercept": {"type": "number"},
        "r2": {"type": "number"},
        "features": {"type": "array", "items": {"type": "string"}},
        "coefficients": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": N_FEATURES, "maxItems": N_FEATURES, "items": {"type": "number"}},
        },
    },
}


@dataclass
class ExplainerConfig:
    num_samples: int = 5000
    kernel_width: float | None = None  # default 0.75 * sqrt(months * features)
    ridge: float = 1.0
    seed: int = 0
    bucket_months: int | None = None

    def __post_init__(self) -> None:
        if self.num_samples < 100:
            raise ValueError("num_samples must be at least 100")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise ValueError("kernel_width must be positive")

    @property
    def alpha(self) -> float:
        """Penalty on the weight-normalized loss: ``ridge`` per configured sample."""
        return self.ridge / self.num_samples

    def width_for(self, n_cells: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * math.sqrt(n_cells)


@dataclass
class ExplanationSet:
    project_id: str
    coefficients: np.ndarray  # (months, 18)
    intercept: float
    r2: float

    def to_json(self) -> dict:
        return {
            "project_id": self.project_id,
            "months": int(self.coefficients.shape[0]),
            "intercept": float(self.intercept),
            "r2": float(self.r2),
            "features": list(FEATURES),
            "coefficients": [[float(v) for v in row] for row in self.coefficients],
        }


@dataclass
class ProjectCoefficients:
    project_id: str
    median: np.ndarray  # (18,)
    iqr: np.ndarray  # (18,)


@dataclass
class OverallSigns:
    positive: np.ndarray  # per-feature project counts
    negative: np.ndarray
    n_projects: int


def perturb(
    instance: np.ndarray, training: np.ndarray, count: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` neighbours of ``instance`` and their keep masks.

    ``training`` is a (rows, 18) matrix of scaled training months; a replaced
    cell takes a value sampled uniformly from its feature's column. Sample 0
    is the instance itself with an all-ones mask.
    """
    inst = np.asarray(instance, dtype=float)
    training = np.asarray(training, dtype=float)
    T, F = inst.shape
    rng = np.random.default_rng(seed)
    masks = (rng.random((count, T, F)) < 0.5).astype(float)
    rows = rng.integers(0, training.shape[0], size=(count, T, F))
    draws = training[rows, np.arange(F)[None, None, :]]
    masks[0] = 1.0
    samples = np.where(masks == 1.0, inst[None], draws)
    return samples, masks.reshape(count, T * F)


def kernel_weight(mask: np.ndarray, width: float) -> np.ndarray:
    """exp(-d^2 / width^2) with d the distance from the all-kept mask."""
    mask = np.asarray(mask, dtype=float)
    d2 = np.sum((1.0 - mask) ** 2, axis=-1)
    return np.exp(-d2 / width**2)


def _ridge_solve(Z: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    # minimizes sum(w * r^2) / sum(w) + alpha * |coef|^2 with a free intercept;
    # solved by lstsq on the augmented system rather than the normal matrix
    wn = w / w.sum()
    z_mean = wn @ Z
    y_mean = wn @ y
    sw = np.sqrt(wn)[:, None]
    A = np.vstack([sw * (Z - z_mean), math.sqrt(alpha) * np.eye(Z.shape[1])])
    rhs = np.concatenate([sw[:, 0] * (y - y_mean), np.zeros(Z.shape[1])])
    coef, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < Z.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient surrogate system")
    return coef, float(y_mean - z_mean @ coef)


def fit_surrogate(
    masks: np.ndarray,
    outputs: np.ndarray,
    weights: np.ndarray,
    months: int,
    alpha: float,
    project_id: str = "",
) -> ExplanationSet:
    """Weighted ridge regression of black-box outputs on keep masks.

    The loss is the weighted mean squared residual plus ``alpha`` times the
    squared coefficient norm, so the fit does not change when all weights
    are rescaled or every sample is duplicated.
    """
    Z = np.asarray(masks, dtype=float)
    y = np.asarray(outputs, dtype=float)
    w = np.asarray(weights, dtype=float)
    try:
        coef, intercept = _ridge_solve(Z, y, w, alpha)
    except np.linalg.LinAlgError:
        warnings.warn("singular surrogate system; retrying with ten times the ridge penalty", RuntimeWarning)
        coef, intercept = _ridge_solve(Z, y, w, 10.0 * alpha if alpha > 0 else 1e-8)
    pred = Z @ coef + intercept
    y_bar = w @ y / w.sum()
    ss_tot = float(w @ (y - y_bar) ** 2)
    ss_res = float(w @ (y - pred) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExplanationSet(project_id, coef.reshape(months, N_FEATURES), intercept, r2)


def explain_instance(
    predict: Callable[[np.ndarray], np.ndarray],
    instance: np.ndarray,
    training: np.ndarray,
    config: ExplainerConfig | None = None,
    project_id: str = "",
) -> ExplanationSet:
    """Explain ``predict`` (a batch -> P(graduate) function) around one scaled instance."""
    config = config or ExplainerConfig()
    inst = np.asarray(instance, dtype=float)
    if config.bucket_months is not None:
        if inst.shape[0] < config.bucket_months:
            raise ValueError(f"{project_id}: shorter than the {config.bucket_months}-month bucket")
        inst = inst[: config.bucket_months]
    samples, masks = perturb(inst, training, config.num_samples, config.seed)
    outputs = np.asarray(predict(samples), dtype=float)
    weights = kernel_weight(masks, config.width_for(masks.shape[1]))
    return fit_surrogate(masks, outputs, weights, inst.shape[0], config.alpha, project_id)


def project_level(expl: ExplanationSet) -> ProjectCoefficients:
    c = expl.coefficients
    q75, q25 = np.percentile(c, [75, 25], axis=0)
    return ProjectCoefficients(expl.project_id, np.median(c, axis=0), q75 - q25)


def overall_level(projects: Sequence[ProjectCoefficients]) -> OverallSigns:
    if not projects:
        raise ValueError("need at least one project")
    med = np.vstack([p.median for p in projects])
    return OverallSigns((med > 0).sum(axis=0), (med < 0).sum(axis=0), len(projects))


def quarter_bounds(n_months: int) -> list[tuple[int, int]]:
    """Four consecutive [lo, hi) month ranges; leftover months join the last one."""
    q = n_months // 4
    return [(0, q), (q, 2 * q), (2 * q, 3 * q), (3 * q, n_months)]


def quarter_coefficients(explanations: Sequence[ExplanationSet], feature: str) -> np.ndarray | None:
    """Median over projects of each project's per-quarter median coefficient.

    Projects shorter than four months are skipped; returns None if none remain.
    """
    j = FEATURES.index(feature)
    per_project = []
    for e in explanations:
        T = e.coefficients.shape[0]
        if T < 4:
            continue
        col = e.coefficients[:, j]
        per_project.append([np.median(col[lo:hi]) for lo, hi in quarter_bounds(T)])
    if not per_project:
        return None
    return np.median(np.array(per_project), axis=0)


def write_project_coefficients(projects: Sequence[ProjectCoefficients]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["project_id", "feature", "median", "iqr"])
    for p in projects:
        for name, med, iqr in zip(FEATURES, p.median, p.iqr):
            writer.writerow([p.project_id, name, repr(float(med)), repr(float(iqr))])
    return buf.getvalue()


def read_project_coefficients(text: str) -> dict[str, ProjectCoefficients]:
    rows: dict[str, dict[str, tuple[float, float]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        rows.setdefault(row["project_id"], {})[row["feature"]] = (float(row["median"]), float(row["iqr"]))
    out = {}
    for pid, vals in rows.items():
        out[pid] = ProjectCoefficients(
            pid,
            np.array([vals[f][0] for f in FEATURES]),
            np.array([vals[f][1] for f in FEATURES]),
        )
    return out


def write_overall_signs(signs: OverallSigns) -> str:
    lines = ["feature,positive,negative,projects"]
    for name, pos, neg in zip(FEATURES, signs.positive, signs.negative):
        lines.append(f"{name},{int(pos)},{int(neg)},{signs.n_projects}")
    return "\n".join(lines) + "\n"


def dump_explanation(expl: ExplanationSet) -> str:
    return json.dumps(expl.to_json(), indent=1) + "\n"
