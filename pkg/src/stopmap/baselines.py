"""Classical baselines: Gram-trick PCA to 3 dims, 1-NN and linear SVM.

Sample count M (<= 96) is tiny next to the flattened feature dimension
D (= T*N*N), so PCA goes through the M x M Gram matrix of centered rows,
eigendecomposed with a cyclic Jacobi sweep.  Classifiers operate in the
reduced space by default.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .evalharness import ConfusionMatrix, metrics
from .featurize import FeaturizeConfig
from .nncore import CLASS_NAMES, N_CLASSES

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# eigensolver


def jacobi_eigh(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues desc, eigenvectors as columns).  Iterates until
    the off-diagonal Frobenius norm drops below tol (absolute, with a
    relative floor for large matrices).
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise DataError("matrix must be symmetric")
    m = a.shape[0]
    v = np.eye(m)
    stop = max(tol, 1e-14 * np.linalg.norm(a))
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < stop:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-30 * max(abs(a[p, p]), abs(a[q, q]), 1.0):
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e120:
                    t = 1.0 / (2 * theta)
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1))
                c = 1.0 / np.sqrt(t**2 + 1)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], v[:, order]


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    mean: np.ndarray  # [D]
    components: np.ndarray  # [n_components, D], orthonormal rows
    eigenvalues: np.ndarray  # descending, covariance convention


def pca_fit(data: np.ndarray, n_components: int = 3) -> PcaModel:
    """PCA via the Gram matrix of centered rows (exact for M << D)."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"data must be 2-D (samples x features), got {x.shape}")
    m, d = x.shape
    if m < n_components + 1:
        raise DataError(f"need at least {n_components + 1} samples, got {m}")
    if d < n_components:
        raise DataError(f"need at least {n_components} features, got {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    gram = xc @ xc.T
    eigvals, eigvecs = jacobi_eigh(gram)
    positive = eigvals > max(1e-12, 1e-10 * max(eigvals.max(), 0.0))
    if positive[:n_components].sum() < n_components:
        raise DataError(
            f"degenerate data: only {int(positive.sum())} positive eigenvalues, "
            f"need {n_components}"
        )
    comps = np.empty((n_components, d))
    for i in range(n_components):
        comp = xc.T @ eigvecs[:, i] / np.sqrt(eigvals[i])
        # sign convention: largest-magnitude entry positive
        if comp[np.argmax(np.abs(comp))] < 0:
            comp = -comp
        comps[i] = comp
    return PcaModel(
        mean=mean,
        components=comps,
        eigenvalues=eigvals[:n_components] / (m - 1),
    )


def pca_project(model: PcaModel, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != model.mean.shape:
        raise ShapeError(
            f"vector has dimension {v.shape}, model expects {model.mean.shape}"
        )
    return model.components @ (v - model.mean)


# ---------------------------------------------------------------------------
# k-nearest-neighbor


def knn_classify(train_points, train_labels, query, k: int = 1) -> int:
    """Majority vote among the k Euclidean-nearest training points.

    Vote ties break toward the class with the nearer neighbor, then the
    lower class index.
    """
    pts = np.asarray(train_points, dtype=float)
    labels = np.asarray(train_labels, dtype=int)
    if pts.shape[0] == 0:
        raise DataError("k-NN needs a non-empty training set")
    if not 1 <= k <= pts.shape[0]:
        raise ConfigError(f"k must be in 1..{pts.shape[0]}, got {k}")
    q = np.asarray(query, dtype=float)
    dist = np.sqrt(((pts - q) ** 2).sum(axis=1))
    order = np.argsort(dist, kind="stable")[:k]
    votes = {}
    for rank, idx in enumerate(order):
        lab = int(labels[idx])
        count, best_rank = votes.get(lab, (0, rank))
        votes[lab] = (count + 1, min(best_rank, rank))
    return min(votes, key=lambda lab: (-votes[lab][0], votes[lab][1], lab))


# ---------------------------------------------------------------------------
# linear SVM (one-vs-rest, hinge loss, decaying-step subgradient descent)


@dataclass
class SvmConfig:
    reg_lambda: float = 0.1
    step_size: float = 0.2
    epochs: int = 300

    def __post_init__(self):
        if self.reg_lambda <= 0:
            raise ConfigError("reg_lambda must be positive")
        if self.step_size < 0:
            raise ConfigError("step_size must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class SvmModel:
    weights: np.ndarray  # [n_classes, dim]
    bias: np.ndarray  # [n_classes]
    config: SvmConfig
    objective_trace: list = field(default_factory=list)  # per class, per epoch


def svm_objective(w, b, x, y, reg_lambda) -> float:
    """L2-regularized mean hinge loss of one binary problem."""
    margins = y * (x @ w + b)
    return 0.5 * reg_lambda * float(w @ w) + float(np.maximum(0, 1 - margins).mean())


def svm_train(train_points, train_labels, config: SvmConfig | None = None) -> SvmModel:
    """One-vs-rest linear SVMs by full-batch subgradient descent.

    Step at epoch t is step_size / (reg_lambda * t); weights are kept
    inside the standard 1/sqrt(reg_lambda) ball for stability.
    """
    config = config or SvmConfig()
    x = np.asarray(train_points, dtype=float)
    y = np.asarray(train_labels, dtype=int)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError("train_points must be (M, dim) matching train_labels")
    present = np.unique(y)
    if present.size < 2:
        log.warning("single-class training data; SVM degenerates to a constant")
    dim = x.shape[1]
    weights = np.zeros((N_CLASSES, dim))
    bias = np.zeros(N_CLASSES)
    traces = []
    lam = config.reg_lambda
    radius = 1.0 / np.sqrt(lam)
    for c in range(N_CLASSES):
        yc = np.where(y == c, 1.0, -1.0)
        w = np.zeros(dim)
        b = 0.0
        trace = []
        for t in range(1, config.epochs + 1):
            margins = yc * (x @ w + b)
            viol = margins < 1
            grad_w = lam * w
            grad_b = 0.0
            if viol.any():
                grad_w = grad_w - (yc[viol, None] * x[viol]).sum(axis=0) / len(yc)
                grad_b = -yc[viol].sum() / len(yc)
            eta = config.step_size / (lam * t)
            w = w - eta * grad_w
            b = b - eta * grad_b
            norm = np.linalg.norm(w)
            if norm > radius:
                w = w * (radius / norm)
            trace.append(svm_objective(w, b, x, yc, lam))
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise DataError(f"SVM weights diverged for class {CLASS_NAMES[c]}")
        weights[c] = w
        bias[c] = b
        traces.append(trace)
    return SvmModel(weights=weights, bias=bias, config=config, objective_trace=traces)


def svm_classify(model: SvmModel, query) -> int:
    q = np.asarray(query, dtype=float)
    if q.shape != (model.weights.shape[1],):
        raise ShapeError(
            f"query has shape {q.shape}, model expects ({model.weights.shape[1]},)"
        )
    scores = model.weights @ q + model.bias
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# LOCO baseline harness


@dataclass
class BaselineConfig:
    pca_dims: int = 3
    knn_k: int = 1
    svm: SvmConfig = field(default_factory=SvmConfig)
    svm_on_pca: bool = True


def run_loco_baseline_items(items, bcfg: BaselineConfig | None = None,
                            config_echo: dict | None = None) -> dict:
    """PCA+1-NN and PCA+SVM over pre-featurized LOCO items.

    items: list of (recording_id, cage_id, features, class_index); the
    report dict mirrors EvalReport per method.
    """
    from .evalharness import loco_item_folds

    t0 = time.time()
    bcfg = bcfg or BaselineConfig()
    report = {
        "class_order": list(CLASS_NAMES),
        "methods": {},
        "config": {
            "pca_dims": bcfg.pca_dims,
            "knn_k": bcfg.knn_k,
            "svm": vars(bcfg.svm).copy(),
            "svm_on_pca": bcfg.svm_on_pca,
            **(config_echo or {}),
        },
    }
    results = {"knn": {}, "svm": {}}
    for cage_id, train_items, test_items in loco_item_folds(items):
        xtr = np.stack([np.asarray(it[2]).ravel() for it in train_items])
        ytr = np.array([it[3] for it in train_items])
        pca = pca_fit(xtr, bcfg.pca_dims)
        ztr = np.stack([pca_project(pca, row) for row in xtr])

        svm_feats = ztr if bcfg.svm_on_pca else xtr
        svm = svm_train(svm_feats, ytr, bcfg.svm)

        cm_knn = ConfusionMatrix()
        cm_svm = ConfusionMatrix()
        for _, _, feats, label in test_items:
            vec = np.asarray(feats).ravel()
            z = pca_project(pca, vec)
            cm_knn.add(label, knn_classify(ztr, ytr, z, bcfg.knn_k))
            cm_svm.add(label, svm_classify(svm, z if bcfg.svm_on_pca else vec))
        results["knn"][cage_id] = cm_knn
        results["svm"][cage_id] = cm_svm

    for method, fold_ms in results.items():
        agg = ConfusionMatrix()
        for cm in fold_ms.values():
            agg = agg + cm
        m = metrics(agg)
        report["methods"][method] = {
            "fold_matrices": {k: v.to_lists() for k, v in fold_ms.items()},
            "aggregate": agg.to_lists(),
            "overall_accuracy": m["overall"],
            "male_accuracy": m["male"],
            "female_accuracy": m["female"],
        }
    report["wall_time"] = time.time() - t0
    return report


def run_loco_baselines(
    recordings,
    fcfg: FeaturizeConfig,
    bcfg: BaselineConfig | None = None,
    normalization: str = "total",
) -> dict:
    """Featurize recordings, then run the baselines under LOCO folds."""
    from .evalharness import featurize_items

    items = featurize_items(recordings, fcfg, normalization)
    return run_loco_baseline_items(
        items, bcfg, config_echo={"normalization": normalization}
    )


def save_baseline_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
