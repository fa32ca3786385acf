import numpy as np
import pytest

from rosbl.classify import (
    build_dictionary,
    class_residual,
    class_residuals,
    classify,
    reconstruct,
)
from rosbl.core import Problem
from rosbl.solver import OutlierModel, SolverConfig, fit
from rosbl.synth import rng_from_seed, sample_cauchy, sample_dictionary, scale_to_ratio


def _labeled_columns(n=12, classes=3, per_class=4, seed=0):
    rng = rng_from_seed(seed)
    cols = sample_dictionary(n, classes * per_class, rng)
    labels = [f"c{k}" for k in range(classes) for _ in range(per_class)]
    return cols, labels


class TestBuildDictionary:
    def test_grouping(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        assert cdict.blocks.num_groups == 3
        assert np.all(cdict.blocks.group_sizes == 4)
        assert cdict.labels == ("c0", "c1", "c2")

    def test_columns_normalized(self):
        rng = np.random.default_rng(0)
        cols = rng.standard_normal((6, 8)) * 7.3
        cdict = build_dictionary(cols, ["a"] * 4 + ["b"] * 4)
        assert np.allclose(np.linalg.norm(cdict.A, axis=0), 1.0, atol=1e-12)

    def test_grouped_input_keeps_identity_permutation(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        assert np.array_equal(cdict.permutation, np.arange(12))

    def test_interleaved_labels_regrouped(self):
        rng = np.random.default_rng(1)
        cols = rng.standard_normal((5, 4))
        cdict = build_dictionary(cols, ["a", "b", "a", "b"])
        assert np.array_equal(cdict.permutation, [0, 2, 1, 3])
        expected = cols[:, [0, 2, 1, 3]]
        expected = expected / np.linalg.norm(expected, axis=0)
        assert np.allclose(cdict.A, expected)

    def test_masks_partition_coefficients(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        assert np.array_equal(cdict.masks.sum(axis=0), np.ones(12))
        for k, g in enumerate(cdict.blocks.groups):
            assert np.array_equal(np.flatnonzero(cdict.masks[k]), g)

    def test_zero_column_rejected(self):
        cols = np.ones((4, 3))
        cols[:, 1] = 0.0
        with pytest.raises(ValueError, match="column 1"):
            build_dictionary(cols, ["a", "a", "b"])

    def test_label_count_mismatch(self):
        with pytest.raises(ValueError, match="labels"):
            build_dictionary(np.ones((4, 3)), ["a", "b"])


class TestClassResiduals:
    def _setup(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        rng = np.random.default_rng(2)
        X_hat = rng.standard_normal((12, 2))
        E_hat = rng.standard_normal((12, 2))[: cdict.A.shape[0]]
        E_hat = rng.standard_normal((cdict.A.shape[0], 2))
        return cdict, X_hat, E_hat

    def test_exact_reconstruction_gives_zero(self):
        cdict, X_hat, E_hat = self._setup()
        k = 1
        g = cdict.blocks.groups[k]
        Y = cdict.A[:, g] @ X_hat[g, :] + E_hat
        assert class_residual(cdict, Y, X_hat, E_hat, "c1") <= 1e-20

    def test_zero_estimates_give_energy(self):
        cdict, _, _ = self._setup()
        rng = np.random.default_rng(3)
        Y = rng.standard_normal((cdict.A.shape[0], 2))
        res = class_residuals(cdict, Y, np.zeros((12, 2)), np.zeros_like(Y))
        assert np.allclose(res, float(np.sum(Y * Y)), rtol=1e-12)

    def test_single_measurement_single_term(self):
        cdict, X_hat, E_hat = self._setup()
        y = (cdict.A @ X_hat[:, :1]) + E_hat[:, :1]
        res_all = class_residuals(cdict, y, X_hat[:, :1], E_hat[:, :1])
        for k, lab in enumerate(cdict.labels):
            g = cdict.blocks.groups[k]
            r = y[:, 0] - cdict.A[:, g] @ X_hat[g, 0] - E_hat[:, 0]
            assert np.isclose(res_all[k], r @ r, rtol=1e-12)

    def test_unknown_class_rejected(self):
        cdict, X_hat, E_hat = self._setup()
        Y = np.zeros((cdict.A.shape[0], 2))
        with pytest.raises(ValueError, match="unknown class"):
            class_residual(cdict, Y, X_hat, E_hat, "nope")

    def test_shape_mismatch_rejected(self):
        cdict, X_hat, E_hat = self._setup()
        with pytest.raises(ValueError, match="inconsistent"):
            class_residuals(cdict, np.zeros((3, 2)), X_hat, E_hat)


class TestClassify:
    def test_pure_class_signal(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        rng = np.random.default_rng(5)
        X_hat = np.zeros((12, 2))
        g = cdict.blocks.groups[2]
        X_hat[g, :] = rng.standard_normal((g.size, 2))
        Y = cdict.A @ X_hat
        assert classify(cdict, Y, X_hat, np.zeros_like(Y)) == "c2"

    def test_tie_breaks_to_lowest_class_index(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        Y = np.ones((cdict.A.shape[0], 1))
        assert classify(cdict, Y, np.zeros((12, 1)), np.zeros_like(Y)) == "c0"

    def test_invariant_to_common_rescaling(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        rng = np.random.default_rng(6)
        Y = rng.standard_normal((cdict.A.shape[0], 2))
        X_hat = rng.standard_normal((12, 2))
        E_hat = rng.standard_normal(Y.shape)
        base = classify(cdict, Y, X_hat, E_hat)
        scaled = classify(cdict, 3.0 * Y, 3.0 * X_hat, 3.0 * E_hat)
        assert base == scaled


class TestReconstruct:
    def test_zero(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        assert not reconstruct(cdict, np.zeros((12, 2))).any()

    def test_basis_column(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        X_hat = np.zeros((12, 1))
        X_hat[4, 0] = 1.0
        assert np.allclose(reconstruct(cdict, X_hat)[:, 0], cdict.A[:, 4])

    def test_residual_identity(self):
        cols, labels = _labeled_columns()
        cdict = build_dictionary(cols, labels)
        rng = np.random.default_rng(7)
        X_hat = rng.standard_normal((12, 3))
        Y = rng.standard_normal((cdict.A.shape[0], 3))
        R = Y - reconstruct(cdict, X_hat)
        assert np.allclose(np.sum(R**2), np.sum((Y - cdict.A @ X_hat) ** 2))


class TestEndToEndClassification:
    def test_occluded_signal_classified_by_solver(self):
        # signal from one class plus strong sparse-ish heavy-tailed outliers:
        # the robust solver's estimate should still pick the right class
        rng = rng_from_seed(2024)
        n, classes, per_class, L = 40, 5, 6, 3
        cols = sample_dictionary(n, classes * per_class, rng)
        labels = [k for k in range(classes) for _ in range(per_class)]
        cdict = build_dictionary(cols, labels)

        true_class = 3
        g = cdict.blocks.groups[true_class]
        X = np.zeros((classes * per_class, L))
        X[g, :] = rng.standard_normal((g.size, L))
        signal = cdict.A @ X
        E = scale_to_ratio(signal, sample_cauchy(n, L, rng), 3.0)
        V = scale_to_ratio(signal, rng.standard_normal((n, L)), 30.0)
        Y = signal + E + V

        problem = Problem(Y=Y, A=cdict.A, blocks=cdict.blocks)
        est = fit(problem, SolverConfig(outlier_model=OutlierModel.TIME_VARYING,
                                        learn_sigma2=False,
                                        sigma2_init=float(np.sum(V**2)) / V.size,
                                        max_iters=200))
        assert classify(cdict, Y, est.X_hat, est.E_hat) == true_class
