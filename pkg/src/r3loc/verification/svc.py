"""Multi-class polynomial-kernel SVC over (MCS, nu), trained with SMO.

Binary problems are one-vs-one and solved with SMO using maximal-violating-
pair working-set selection, which is deterministic and stops once the KKT
gap falls below the tolerance. Samples are put in canonical order before
training, so presentation order never changes the model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .. import io
from ..errors import FormatError, InvalidArgument

log = logging.getLogger(__name__)

CLASSES = ("matched", "mismatched", "unmatched")
DEGREE = 5


def poly_kernel(X: NDArray, Z: NDArray, gamma: float, coef0: float, degree: int = DEGREE) -> NDArray:
    return (gamma * (np.asarray(X, np.float64) @ np.asarray(Z, np.float64).T) + coef0) ** degree


@dataclass(frozen=True, eq=False)
class BinarySvc:
    """Decision f(x) = sum_i coef_i K(sv_i, x) + bias; f > 0 votes ``positive``."""

    positive: str
    negative: str
    support_vectors: NDArray
    dual_coef: NDArray  # alpha_i * y_i
    bias: float
    iterations: int = 0
    kkt_gap: float = 0.0

    def decision(self, X: NDArray, gamma: float, coef0: float, degree: int) -> NDArray:
        if self.support_vectors.shape[0] == 0:
            return np.full(np.asarray(X).shape[0], self.bias)
        return poly_kernel(X, self.support_vectors, gamma, coef0, degree) @ self.dual_coef + self.bias


@dataclass(frozen=True, eq=False)
class SvcModel:
    classes: tuple[str, ...]
    classifiers: tuple[BinarySvc, ...]
    C: float = 1.0
    gamma: float = 1.0
    coef0: float = 1.0
    degree: int = DEGREE
    training_accuracy: float = float("nan")

    def predict(self, X: ArrayLike) -> list[str]:
        X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
        votes = np.zeros((X.shape[0], len(self.classes)), dtype=np.int64)
        pos = {c: i for i, c in enumerate(self.classes)}
        for clf in self.classifiers:
            f = clf.decision(X, self.gamma, self.coef0, self.degree)
            votes[f > 0, pos[clf.positive]] += 1
            votes[f <= 0, pos[clf.negative]] += 1
        # argmax picks the first maximum: ties resolve in class-priority order
        return [self.classes[i] for i in np.argmax(votes, axis=1)]

    def predict_one(self, mcs: float, nu: float) -> str:
        return self.predict([[mcs, nu]])[0]

    # -- text serialisation -------------------------------------------------------
    def save(self, path: str | Path) -> None:
        h = io.hexf
        out = [
            "r3loc-svc 1",
            f"kernel poly degree {self.degree} gamma {h(self.gamma)} coef0 {h(self.coef0)}",
            f"C {h(self.C)}",
            "classes " + " ".join(self.classes),
            f"training_accuracy {h(self.training_accuracy)}",
        ]
        for clf in self.classifiers:
            out.append(f"classifier {clf.positive} {clf.negative} {clf.support_vectors.shape[0]} bias {h(clf.bias)}")
            for x, c in zip(clf.support_vectors, clf.dual_coef):
                out.append(f"sv {h(x[0])} {h(x[1])} {h(c)}")
        Path(path).write_text("\n".join(out) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> SvcModel:
        p = str(path)
        lines = Path(p).read_text().splitlines()
        it = iter(enumerate(lines, start=1))

        def next_tokens(expect: str) -> tuple[int, list[str]]:
            for lineno, line in it:
                if line.strip():
                    toks = line.split()
                    if toks[0] != expect:
                        raise FormatError(f"expected {expect!r}, got {toks[0]!r}", p, lineno)
                    return lineno, toks
            raise FormatError(f"unexpected end of file, expected {expect!r}", p, len(lines))

        try:
            _, t = next_tokens("r3loc-svc")
            _, t = next_tokens("kernel")
            degree, gamma, coef0 = int(t[3]), io.parse_float(t[5]), io.parse_float(t[7])
            _, t = next_tokens("C")
            C = io.parse_float(t[1])
            _, t = next_tokens("classes")
            classes = tuple(t[1:])
            _, t = next_tokens("training_accuracy")
            acc = io.parse_float(t[1])
            clfs = []
            for _ in range(len(classes) * (len(classes) - 1) // 2):
                lineno, t = next_tokens("classifier")
                pos_c, neg_c, nsv, bias = t[1], t[2], int(t[3]), io.parse_float(t[5])
                if pos_c not in classes or neg_c not in classes:
                    raise FormatError("classifier references unknown class", p, lineno)
                sv, coef = [], []
                for _ in range(nsv):
                    _, s = next_tokens("sv")
                    sv.append([io.parse_float(s[1]), io.parse_float(s[2])])
                    coef.append(io.parse_float(s[3]))
                clfs.append(BinarySvc(pos_c, neg_c, np.array(sv).reshape(-1, 2), np.array(coef), bias))
        except (IndexError, ValueError) as exc:
            raise FormatError(f"malformed SVC model: {exc}", p) from exc
        return cls(classes, tuple(clfs), C, gamma, coef0, degree, acc)


def smo(
    K: NDArray, y: NDArray, C: float, tol: float = 1e-3, max_iter: int = 1_000_000
) -> tuple[NDArray, float, int, float]:
    """Solve the C-SVM dual for a precomputed kernel matrix.

    Returns (alpha, bias, iterations, final KKT gap m - M).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    diag = np.diag(K).copy()
    it = 0
    gap = np.inf
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        v = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        gap = vu[i] - vl[j]
        if gap < tol:
            break
        a = diag[i] + diag[j] - 2.0 * K[i, j]
        if a <= 0:
            a = 1e-12
        t = gap / a
        # box limits on the step along (alpha_i += y_i t, alpha_j -= y_j t)
        t_max_i = (C - alpha[i]) if y[i] > 0 else alpha[i]
        t_max_j = alpha[j] if y[j] > 0 else (C - alpha[j])
        t = min(t, t_max_i, t_max_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = min(max(alpha[j], 0.0), C)
        G += t * y * (K[:, i] - K[:, j])
        it += 1
    else:
        log.warning("SMO hit max_iter=%d with KKT gap %.3g", max_iter, gap)

    v = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(np.mean(v[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = v[up].max() if up.any() else 0.0
        lo = v[low].min() if low.any() else 0.0
        b = 0.5 * (hi + lo)
    return alpha, b, it, float(gap)


def _canonical(X: NDArray, labels: Sequence[str], classes: Sequence[str]) -> tuple[NDArray, NDArray]:
    rank = np.array([classes.index(c) for c in labels])
    order = np.lexsort((X[:, 1], X[:, 0], rank))
    return X[order], rank[order]


def svc_train(
    samples: Sequence[tuple[float, float, str]],
    C: float = 1.0,
    gamma: float = 1.0,
    coef0: float = 1.0,
    degree: int = DEGREE,
    tol: float = 1e-3,
) -> SvcModel:
    """Train one-vs-one binary SVMs on (MCS, nu, label) triples."""
    if not samples:
        raise InvalidArgument("no training samples")
    X = np.array([[s[0], s[1]] for s in samples], dtype=np.float64)
    labels = [str(s[2]) for s in samples]
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("training features must be finite")
    unknown = set(labels) - set(CLASSES)
    classes = list(CLASSES) + sorted(unknown)
    present = [c for c in classes if c in set(labels)]
    if len(present) < 2:
        raise InvalidArgument(f"need at least two classes, got {present}")
    Xc, rank = _canonical(X, labels, classes)

    clfs = []
    for a, b in combinations(range(len(present)), 2):
        ca, cb = present[a], present[b]
        ia, ib = classes.index(ca), classes.index(cb)
        sel = (rank == ia) | (rank == ib)
        Xs = Xc[sel]
        y = np.where(rank[sel] == ia, 1.0, -1.0)
        K = poly_kernel(Xs, Xs, gamma, coef0, degree)
        alpha, bias, iters, gap = smo(K, y, C, tol)
        sv = alpha > 0
        clfs.append(BinarySvc(ca, cb, Xs[sv], alpha[sv] * y[sv], bias, iters, gap))
    model = SvcModel(tuple(present), tuple(clfs), C, gamma, coef0, degree)
    acc = float(np.mean(np.array(model.predict(X)) == np.array(labels)))
    return SvcModel(tuple(present), tuple(clfs), C, gamma, coef0, degree, acc)


def svc_predict(model: SvcModel, features) -> str:
    return model.predict_one(features.mcs, features.alignment_ratio)


@dataclass(frozen=True)
class KktReport:
    margin: float  # worst complementary-slackness violation of y f(x) vs 1
    box: float  # worst excursion of alpha outside [0, C]
    equality: float  # |sum alpha_i y_i|


def kkt_audit(model: SvcModel, samples: Sequence[tuple[float, float, str]]) -> list[KktReport]:
    """Recompute the KKT conditions of every binary classifier from its training data."""
    X = np.array([[s[0], s[1]] for s in samples], dtype=np.float64)
    labels = np.array([str(s[2]) for s in samples])
    out = []
    for clf in model.classifiers:
        sel = (labels == clf.positive) | (labels == clf.negative)
        Xs = X[sel]
        y = np.where(labels[sel] == clf.positive, 1.0, -1.0)
        alpha = np.zeros(Xs.shape[0])
        # map support vectors back onto training rows (exact float match)
        sv_alpha: dict[tuple[float, float, float], list[float]] = {}
        for x, c in zip(clf.support_vectors, clf.dual_coef):
            sv_alpha.setdefault((float(x[0]), float(x[1]), float(np.sign(c))), []).append(abs(float(c)))
        for i, (x, yi) in enumerate(zip(Xs, y)):
            key = (float(x[0]), float(x[1]), yi)
            if sv_alpha.get(key):
                alpha[i] = sv_alpha[key].pop(0)
        f = clf.decision(Xs, model.gamma, model.coef0, model.degree)
        m = y * f - 1.0
        viol = np.zeros_like(m)
        at0 = alpha <= 0
        atC = alpha >= model.C
        free = ~at0 & ~atC
        viol[at0] = np.maximum(0.0, -m[at0])
        viol[atC] = np.maximum(0.0, m[atC])
        viol[free] = np.abs(m[free])
        box = max(0.0, -alpha.min(initial=0.0), alpha.max(initial=0.0) - model.C)
        eq = abs(float(np.sum(alpha * y)))
        out.append(KktReport(float(viol.max(initial=0.0)), box, eq))
    return out
