"""Block-residual classification.

A labeled set of columns becomes a class dictionary whose blocks are the
classes; a batch of L observations is labeled by the class whose block,
together with the estimated outliers, reconstructs the observations with
the smallest summed squared residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BlockStructure

__all__ = [
    "ClassDictionary",
    "build_dictionary",
    "class_residuals",
    "class_residual",
    "classify",
    "reconstruct",
]


@dataclass(frozen=True, eq=False)
class ClassDictionary:
    """Column-normalized dictionary with one contiguous block per class.

    A : (n, m) normalized columns, permuted so classes are contiguous.
    blocks : group g holds the columns of class labels[g].
    labels : one identifier per group, in first-appearance order.
    masks : (G, m) boolean; masks[k] selects exactly class k's columns.
    permutation : A[:, j] is input column permutation[j].
    """

    A: np.ndarray
    blocks: BlockStructure
    labels: tuple
    masks: np.ndarray
    permutation: np.ndarray

    def group_of_label(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"unknown class {label!r}; known: {list(self.labels)}") from None


def build_dictionary(columns, labels) -> ClassDictionary:
    """Assemble a class dictionary from labeled columns.

    Columns of the same label are gathered into one contiguous block (classes
    ordered by first appearance, columns keeping their input order) and each
    column is scaled to unit l2 norm.
    """
    columns = np.asarray(columns, dtype=float)
    if columns.ndim != 2 or columns.shape[1] == 0:
        raise ValueError(f"columns must be a nonempty 2-D matrix, got shape {columns.shape}")
    labels = list(labels)
    if len(labels) != columns.shape[1]:
        raise ValueError(
            f"{len(labels)} labels for {columns.shape[1]} columns"
        )

    class_order = []
    for lab in labels:
        if lab not in class_order:
            class_order.append(lab)
    groups_in = {lab: [] for lab in class_order}
    for j, lab in enumerate(labels):
        groups_in[lab].append(j)
    for lab in class_order:
        if not groups_in[lab]:
            raise ValueError(f"class {lab!r} has zero columns")

    permutation = np.array([j for lab in class_order for j in groups_in[lab]], dtype=np.int64)
    A = columns[:, permutation]
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0.0):
        bad = int(permutation[np.flatnonzero(norms == 0.0)[0]])
        raise ValueError(f"input column {bad} is zero and cannot be normalized")
    A = A / norms

    sizes = [len(groups_in[lab]) for lab in class_order]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    blocks = BlockStructure(
        [np.arange(starts[k], starts[k + 1]) for k in range(len(class_order))]
    )
    masks = np.zeros((len(class_order), A.shape[1]), dtype=bool)
    for k, g in enumerate(blocks.groups):
        masks[k, g] = True
    return ClassDictionary(
        A=A,
        blocks=blocks,
        labels=tuple(class_order),
        masks=masks,
        permutation=permutation,
    )


def class_residuals(cdict: ClassDictionary, Y, X_hat, E_hat) -> np.ndarray:
    """(G,) vector of sum_i ||y_i - A (mask_k * x^_i) - e^_i||^2 per class."""
    Y = np.asarray(Y, dtype=float)
    X_hat = np.asarray(X_hat, dtype=float)
    E_hat = np.asarray(E_hat, dtype=float)
    n, m = cdict.A.shape
    if Y.ndim != 2 or Y.shape[0] != n:
        raise ValueError(f"Y shape {Y.shape} inconsistent with dictionary ({n} rows)")
    if X_hat.shape != (m, Y.shape[1]) or E_hat.shape != Y.shape:
        raise ValueError(
            f"estimate shapes X_hat {X_hat.shape} / E_hat {E_hat.shape} are "
            f"inconsistent with Y {Y.shape} and the dictionary ({n}, {m})"
        )
    base = Y - E_hat
    out = np.empty(cdict.blocks.num_groups)
    for k, g in enumerate(cdict.blocks.groups):
        r = base - cdict.A[:, g] @ X_hat[g, :]
        out[k] = float(np.sum(r * r))
    return out


def class_residual(cdict: ClassDictionary, Y, X_hat, E_hat, label) -> float:
    """Residual of one class, addressed by its label."""
    return float(class_residuals(cdict, Y, X_hat, E_hat)[cdict.group_of_label(label)])


def classify(cdict: ClassDictionary, Y, X_hat, E_hat):
    """Label of the minimum-residual class; ties go to the lowest class index."""
    residuals = class_residuals(cdict, Y, X_hat, E_hat)
    return cdict.labels[int(np.argmin(residuals))]


def reconstruct(cdict: ClassDictionary, X_hat) -> np.ndarray:
    """Outlier-free reconstruction A @ X_hat of the observations."""
    X_hat = np.asarray(X_hat, dtype=float)
    if X_hat.ndim != 2 or X_hat.shape[0] != cdict.A.shape[1]:
        raise ValueError(
            f"X_hat shape {X_hat.shape} inconsistent with dictionary "
            f"({cdict.A.shape[1]} coefficients)"
        )
    return cdict.A @ X_hat
