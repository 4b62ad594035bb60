"""Single-layer LSTM sequence classifier written directly in numpy.

One 64-unit LSTM layer, inverted dropout on the last hidden state, and a
two-way softmax head. Training feeds one full-length project sequence per
Adam step (no padding). Gate blocks in the stacked weight matrices are
ordered input, forget, cell candidate, output.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FEATURES, FeatureSequence, Scaler, apply_scaler, fit_scaler

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"OSSLSTM\0"
METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass
class LstmParams:
    W: np.ndarray  # (input_dim, 4 * hidden)
    U: np.ndarray  # (hidden, 4 * hidden)
    b: np.ndarray  # (4 * hidden,)
    V: np.ndarray  # (hidden, classes)
    c: np.ndarray  # (classes,)

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def classes(self) -> int:
        return self.V.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> "LstmParams":
        return LstmParams(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros(cls, input_dim: int = len(FEATURES), hidden: int = 64, classes: int = 2) -> "LstmParams":
        return cls(
            np.zeros((input_dim, 4 * hidden)),
            np.zeros((hidden, 4 * hidden)),
            np.zeros(4 * hidden),
            np.zeros((hidden, classes)),
            np.zeros(classes),
        )


def init_params(rng: np.random.Generator, input_dim: int = len(FEATURES), hidden: int = 64, classes: int = 2) -> LstmParams:
    """Glorot-uniform input and head weights, orthogonal recurrent weights, forget bias 1."""

    def glorot(n_in, n_out):
        limit = math.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_in, n_out))

    q, r = np.linalg.qr(rng.standard_normal((4 * hidden, hidden)))
    q = q * np.sign(np.diag(r))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmParams(glorot(input_dim, 4 * hidden), q.T.copy(), b, glorot(hidden, classes), np.zeros(classes))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _step(params: LstmParams, x_t, h, c):
    H = params.hidden
    a = x_t @ params.W + h @ params.U + params.b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H : 2 * H])
    g = np.tanh(a[..., 2 * H : 3 * H])
    o = sigmoid(a[..., 3 * H :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new, (i, f, g, o)


def _head(params: LstmParams, h):
    return softmax(h @ params.V + params.c)


@dataclass
class Cache:
    xs: np.ndarray
    hs: list
    cs: list
    gates: list
    mask: np.ndarray
    h_out: np.ndarray
    probs: np.ndarray


def forward(
    params: LstmParams,
    seq: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.3,
) -> tuple[np.ndarray, Cache]:
    """Run the recurrence over all months and return (class probabilities, cache).

    In train mode an inverted-dropout mask drawn from ``rng`` is applied to
    the final hidden state.
    """
    xs = np.asarray(seq, dtype=float)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("sequence must be a non-empty (months, features) matrix")
    H = params.hidden
    h, c = np.zeros(H), np.zeros(H)
    hs, cs, gates = [h], [c], []
    for t, x_t in enumerate(xs):
        h, c, gs = _step(params, x_t, h, c)
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
            raise FloatingPointError(f"non-finite LSTM state at step {t}")
        hs.append(h)
        cs.append(c)
        gates.append(gs)
    if train and dropout > 0:
        if rng is None:
            raise ValueError("train mode needs a random generator for the dropout mask")
        mask = (rng.random(H) >= dropout) / (1.0 - dropout)
    else:
        mask = np.ones(H)
    h_out = h * mask
    probs = _head(params, h_out)
    if not np.all(np.isfinite(probs)):
        raise FloatingPointError("non-finite output probabilities")
    return probs, Cache(xs, hs, cs, gates, mask, h_out, probs)


def loss(probs: np.ndarray, label: int) -> float:
    return -math.log(max(float(probs[label]), 1e-300))


def backward(params: LstmParams, cache: Cache, label: int, scale: float = 1.0) -> LstmParams:
    """Exact gradients of ``scale * cross-entropy`` by backpropagation through time."""
    H = params.hidden
    grads = LstmParams.zeros(params.input_dim, H, params.classes)
    dlogits = cache.probs.copy()
    dlogits[label] -= 1.0
    dlogits *= scale
    grads.V = np.outer(cache.h_out, dlogits)
    grads.c = dlogits
    dh = (params.V @ dlogits) * cache.mask
    dc = np.zeros(H)
    for t in range(len(cache.xs) - 1, -1, -1):
        i, f, g, o = cache.gates[t]
        c_t, c_prev, h_prev = cache.cs[t + 1], cache.cs[t], cache.hs[t]
        tc = np.tanh(c_t)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)])
        grads.W += np.outer(cache.xs[t], da)
        grads.U += np.outer(h_prev, da)
        grads.b += da
        dh = params.U @ da
        dc = dc * f
    return grads


def predict_proba(params: LstmParams, seq: np.ndarray) -> float:
    """P(graduate) from the whole sequence, inference mode."""
    probs, _ = forward(params, seq)
    return float(probs[1])


def prefix_probabilities(params: LstmParams, seq: np.ndarray) -> np.ndarray:
    """P(graduate) after each month; entry m-1 uses months 1..m only."""
    xs = np.asarray(seq, dtype=float)
    H = params.hidden
    h, c = np.zeros(H), np.zeros(H)
    out = np.empty(len(xs))
    for t, x_t in enumerate(xs):
        h, c, _ = _step(params, x_t, h, c)
        out[t] = _head(params, h)[1]
    return out


def predict_batch(params: LstmParams, batch: np.ndarray) -> np.ndarray:
    """P(graduate) for a (samples, months, features) stack of equal-length sequences."""
    X = np.asarray(batch, dtype=float)
    n, T, _ = X.shape
    H = params.hidden
    h, c = np.zeros((n, H)), np.zeros((n, H))
    for t in range(T):
        h, c, _ = _step(params, X[:, t, :], h, c)
    return _head(params, h)[:, 1]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout_rate: float = 0.3
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    repeats: int = 10
    hidden: int = 64
    class_weighting: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


class Adam:
    def __init__(self, params: LstmParams, config: TrainConfig) -> None:
        self.cfg = config
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: LstmParams, grads: LstmParams) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


def stratified_split(labels: Sequence[int], fraction: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Indices (first, second) with ``fraction`` of each class in the first part.

    Each class keeps at least one member on each side when it has two or more.
    """
    first, second = [], []
    labels = np.asarray(labels)
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(fraction * len(idx)))
        if len(idx) >= 2:
            k = min(max(k, 1), len(idx) - 1)
        first.extend(idx[:k].tolist())
        second.extend(idx[k:].tolist())
    return sorted(first), sorted(second)


def confusion_metrics(probs: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> dict[str, float]:
    """Accuracy, precision, recall and F1 with graduation as the positive class.

    A probability equal to the threshold counts as positive. Undefined
    precision/recall/F1 (no predicted or no actual positives) are 0.
    """
    pred = np.asarray(probs) >= threshold
    y = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": (tp + tn) / len(y), "precision": precision, "recall": recall, "f1": f1}


@dataclass
class ForecastTrajectory:
    project_id: str
    label: int
    forecasts: np.ndarray


def forecast_trajectory(params: LstmParams, scaler: Scaler, seq: FeatureSequence) -> ForecastTrajectory:
    scaled = scaler.transform(seq.months)
    return ForecastTrajectory(seq.project_id, seq.label, prefix_probabilities(params, scaled))


def evaluate(params: LstmParams, scaler: Scaler, test: Sequence[FeatureSequence], month: int) -> dict[str, float] | None:
    """Month-``month`` classification metrics over test projects at least that long.

    Returns None when no test project lasts ``month`` months.
    """
    if month < 1:
        raise ValueError("month must be >= 1")
    eligible = [s for s in test if len(s) >= month]
    if not eligible:
        return None
    probs = [predict_proba(params, scaler.transform(s.months[:month])) for s in eligible]
    out = confusion_metrics(probs, [s.label for s in eligible])
    out["n"] = len(eligible)
    return out


def evaluate_final(params: LstmParams, scaler: Scaler, test: Sequence[FeatureSequence]) -> dict[str, float]:
    """Metrics using each test project's full-length forecast."""
    probs = [predict_proba(params, scaler.transform(s.months)) for s in test]
    out = confusion_metrics(probs, [s.label for s in test])
    out["n"] = len(test)
    return out


@dataclass
class RunResult:
    params: LstmParams
    scaler: Scaler
    train_ids: list[str]
    validation_ids: list[str]
    test_ids: list[str]
    history: list[dict]
    monthly: dict[int, dict]
    final: dict


@dataclass
class EvalReport:
    """Per-month metric means and standard errors over repeats."""

    months: dict[int, dict[str, tuple[float, float, int]]] = field(default_factory=dict)
    final: dict[str, tuple[float, float, int]] = field(default_factory=dict)

    @staticmethod
    def _summarize(values: list[float]) -> tuple[float, float, int]:
        arr = np.asarray(values, dtype=float)
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        return float(arr.mean()), se, len(arr)

    @classmethod
    def from_runs(cls, runs: Sequence[RunResult]) -> "EvalReport":
        report = cls()
        all_months = sorted({m for r in runs for m in r.monthly})
        for m in all_months:
            present = [r.monthly[m] for r in runs if m in r.monthly]
            report.months[m] = {k: cls._summarize([p[k] for p in present]) for k in METRIC_NAMES}
        report.final = {k: cls._summarize([r.final[k] for r in runs]) for k in METRIC_NAMES}
        return report

    def to_csv(self) -> str:
        lines = ["month,metric,mean,stderr,repeats"]
        for m, metrics in self.months.items():
            for k, (mean, se, n) in metrics.items():
                lines.append(f"{m},{k},{mean!r},{se!r},{n}")
        for k, (mean, se, n) in self.final.items():
            lines.append(f"final,{k},{mean!r},{se!r},{n}")
        return "\n".join(lines) + "\n"


def _dataset_loss(params: LstmParams, seqs: Sequence[np.ndarray], labels: Sequence[int]) -> float:
    return float(np.mean([loss(forward(params, x)[0], y) for x, y in zip(seqs, labels)]))


def train_once(corpus: Sequence[FeatureSequence], config: TrainConfig, repeat: int = 0) -> RunResult:
    """One seeded train/test split, Adam training with early stopping, and evaluation."""
    rng = np.random.default_rng([config.seed, repeat])
    labels = [s.label for s in corpus]
    train_idx, test_idx = stratified_split(labels, config.train_fraction, rng)
    val_idx: list[int] = []
    if config.validation_fraction > 0 and len(train_idx) >= 5:
        fit_pos, val_pos = stratified_split([labels[i] for i in train_idx], 1.0 - config.validation_fraction, rng)
        val_idx = [train_idx[i] for i in val_pos]
        train_idx = [train_idx[i] for i in fit_pos]
    train = [corpus[i] for i in train_idx]
    val = [corpus[i] for i in val_idx]
    test = [corpus[i] for i in test_idx]

    scaler = fit_scaler(train + val)
    xs = [apply_scaler(scaler, s).months for s in train]
    ys = [s.label for s in train]
    val_xs = [apply_scaler(scaler, s).months for s in val]
    val_ys = [s.label for s in val]

    weights = {0: 1.0, 1: 1.0}
    if config.class_weighting:
        n1 = sum(ys)
        n0 = len(ys) - n1
        weights = {0: len(ys) / (2.0 * max(n0, 1)), 1: len(ys) / (2.0 * max(n1, 1))}

    params = init_params(rng, input_dim=len(FEATURES), hidden=config.hidden)
    opt = Adam(params, config)
    best, best_loss, stale = params.copy(), math.inf, 0
    history = []
    for epoch in range(config.epochs):
        total = 0.0
        for k in rng.permutation(len(xs)):
            probs, cache = forward(params, xs[k], train=True, rng=rng, dropout=config.dropout_rate)
            total += weights[ys[k]] * loss(probs, ys[k])
            opt.step(params, backward(params, cache, ys[k], scale=weights[ys[k]]))
        entry = {"epoch": epoch + 1, "train_loss": total / len(xs)}
        if val_xs:
            entry["val_loss"] = _dataset_loss(params, val_xs, val_ys)
        history.append(entry)
        log.debug("repeat %d epoch %d %s", repeat, epoch + 1, entry)
        if not val_xs:
            best = params.copy()
            continue
        if entry["val_loss"] < best_loss:
            best, best_loss, stale = params.copy(), entry["val_loss"], 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    monthly = {}
    for m in range(1, max((len(s) for s in test), default=0) + 1):
        res = evaluate(best, scaler, test, m)
        if res is not None:
            monthly[m] = res
    return RunResult(
        params=best,
        scaler=scaler,
        train_ids=[s.project_id for s in train],
        validation_ids=[s.project_id for s in val],
        test_ids=[s.project_id for s in test],
        history=history,
        monthly=monthly,
        final=evaluate_final(best, scaler, test),
    )


def _train_repeat(args):
    corpus, config, repeat = args
    return train_once(corpus, config, repeat)


def train(corpus: Sequence[FeatureSequence], config: TrainConfig | None = None) -> tuple[list[RunResult], EvalReport]:
    """Repeat ``train_once`` over fresh splits; run 0 provides the deployed model."""
    config = config or TrainConfig()
    if len({s.label for s in corpus}) < 2:
        raise ValueError("training corpus must contain both graduated and retired projects")
    jobs = [(list(corpus), config, r) for r in range(config.repeats)]
    if config.workers > 1 and config.repeats > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(_train_repeat, jobs))
    else:
        runs = [_train_repeat(j) for j in jobs]
    return runs, EvalReport.from_runs(runs)


def save_checkpoint(path: Path, params: LstmParams, scaler: Scaler, columns: Sequence[str] = FEATURES) -> None:
    """Header (magic, length, JSON) followed by little-endian float64 parameter arrays."""
    header = {
        "format_version": FORMAT_VERSION,
        "input_dim": params.input_dim,
        "hidden": params.hidden,
        "classes": params.classes,
        "columns": list(columns),
        "scaler_min": [float(v) for v in scaler.mins],
        "scaler_max": [float(v) for v in scaler.maxs],
        "arrays": [[f.name, list(getattr(params, f.name).shape)] for f in fields(params)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C") for a in params.arrays())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + body)


def load_checkpoint(path: Path, columns: Sequence[str] = FEATURES) -> tuple[LstmParams, Scaler]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off : off + n])
    off += n
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {header.get('format_version')}")
    if header["columns"] != list(columns):
        raise ValueError(f"{path}: checkpoint column order does not match")
    arrays = []
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(float))
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    scaler = Scaler(np.array(header["scaler_min"]), np.array(header["scaler_max"]))
    return LstmParams(*arrays), scaler
