import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rosbl.core import (
    BlockStructure,
    Estimate,
    Hyperparameters,
    Posterior,
    Problem,
    partition_uniform,
)
from rosbl.io import read_matrix_csv, write_matrix_csv


class TestPartitionUniform:
    def test_paper_scale_partition(self):
        blocks = partition_uniform(160, 8)
        assert blocks.num_groups == 20
        assert blocks.m == 160
        assert np.all(blocks.group_sizes == 8)
        # coefficient index 8 (the 9th) sits in the second group
        assert blocks.index_of_group[8] == 1

    def test_single_block(self):
        blocks = partition_uniform(4, 4)
        assert blocks.num_groups == 1
        assert np.array_equal(blocks.groups[0], [0, 1, 2, 3])

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError, match="does not divide"):
            partition_uniform(6, 4)

    def test_singletons(self):
        blocks = partition_uniform(5, 1)
        assert blocks.num_groups == 5
        assert np.array_equal(blocks.index_of_group, np.arange(5))


class TestBlockStructure:
    def test_non_contiguous_groups(self):
        blocks = BlockStructure([[0, 2, 4], [1, 3, 5]])
        assert blocks.m == 6
        assert np.array_equal(blocks.index_of_group, [0, 1, 0, 1, 0, 1])

    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlaps"):
            BlockStructure([[0, 1], [1, 2]])

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            BlockStructure([[0, 0], [1, 2]])

    def test_gap_rejected(self):
        with pytest.raises(ValueError, match="outside|not covered"):
            BlockStructure([[0, 1], [3, 4]])

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            BlockStructure([[0, 1], []])

    def test_no_groups_rejected(self):
        with pytest.raises(ValueError):
            BlockStructure([])

    def test_expand(self):
        blocks = partition_uniform(6, 3)
        assert np.array_equal(blocks.expand([2.0, 5.0]), [2, 2, 2, 5, 5, 5])

    def test_json_round_trip(self):
        blocks = BlockStructure([[0, 2], [1], [3, 4, 5]])
        again = BlockStructure.from_json_dict(blocks.to_json_dict())
        assert again == blocks

    def test_json_uniform_form(self):
        blocks = BlockStructure.from_json_dict({"uniform": {"m": 160, "block_len": 8}})
        assert blocks == partition_uniform(160, 8)

    def test_json_bad_key(self):
        with pytest.raises(ValueError):
            BlockStructure.from_json_dict({"nope": 1})

    @given(st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=6),
           st.randoms(use_true_random=False))
    def test_partition_invariants(self, sizes, rnd):
        m = sum(sizes)
        perm = list(range(m))
        rnd.shuffle(perm)
        groups, at = [], 0
        for size in sizes:
            groups.append(perm[at:at + size])
            at += size
        blocks = BlockStructure(groups)
        assert blocks.m == m
        assert int(blocks.group_sizes.sum()) == m
        # every index belongs to exactly one group
        for j in range(m):
            g = blocks.index_of_group[j]
            assert j in blocks.groups[g]


class TestDomainTypes:
    def _problem(self, n=4, m=6, L=2):
        rng = np.random.default_rng(0)
        return Problem(
            Y=rng.standard_normal((n, L)),
            A=rng.standard_normal((n, m)),
            blocks=partition_uniform(m, 2),
        )

    def test_problem_dims(self):
        p = self._problem()
        assert (p.n, p.m, p.L) == (4, 6, 2)

    def test_problem_row_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="row mismatch"):
            Problem(Y=rng.standard_normal((3, 2)),
                    A=rng.standard_normal((4, 6)),
                    blocks=partition_uniform(6, 2))

    def test_problem_block_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="block structure"):
            Problem(Y=rng.standard_normal((4, 2)),
                    A=rng.standard_normal((4, 6)),
                    blocks=partition_uniform(8, 2))

    def test_problem_nonfinite_rejected(self):
        rng = np.random.default_rng(0)
        Y = rng.standard_normal((4, 2))
        Y[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            Problem(Y=Y, A=rng.standard_normal((4, 6)), blocks=partition_uniform(6, 2))

    def test_problem_truth_shapes(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="truth X"):
            Problem(Y=rng.standard_normal((4, 2)),
                    A=rng.standard_normal((4, 6)),
                    blocks=partition_uniform(6, 2),
                    truth=(rng.standard_normal((5, 2)), rng.standard_normal((4, 2))))

    def test_problem_immutable_arrays(self):
        p = self._problem()
        with pytest.raises(ValueError):
            p.Y[0, 0] = 1.0

    def test_hyperparameters_validation(self):
        Hyperparameters(gamma=np.ones(3), delta=np.ones((2, 2)), sigma2=0.1)
        Hyperparameters(gamma=np.ones(3), delta=None, sigma2=0.1)
        with pytest.raises(ValueError, match="sigma2"):
            Hyperparameters(gamma=np.ones(3), delta=None, sigma2=0.0)
        with pytest.raises(ValueError, match="gamma"):
            Hyperparameters(gamma=-np.ones(3), delta=None, sigma2=0.1)

    def test_posterior_shape_validation(self):
        with pytest.raises(ValueError, match="sigma shape"):
            Posterior(mu=np.zeros((3, 2)), sigma=np.zeros((2, 3, 4)))

    def test_estimate_holds_fields(self):
        hyper = Hyperparameters(gamma=np.ones(1), delta=None, sigma2=1.0)
        est = Estimate(
            X_hat=np.zeros((2, 1)), E_hat=np.zeros((3, 1)), hyper=hyper,
            evidence_trace=np.array([1.0, 2.0]), iterations=2, converged=True,
        )
        assert est.converged and est.iterations == 2


class TestMatrixCsv:
    def test_direct_parse(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,4")
        assert np.array_equal(read_matrix_csv(path), [[1, 2], [3, 4]])

    def test_scientific_notation(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1e-3,2E+4\n-3.5e0,4.25\n")
        assert np.allclose(read_matrix_csv(path), [[1e-3, 2e4], [-3.5, 4.25]])

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3")
        with pytest.raises(ValueError, match="row 1"):
            read_matrix_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,abc")
        with pytest.raises(ValueError, match=r"row 1, column 1"):
            read_matrix_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            read_matrix_csv(path)

    def test_crlf_tolerated(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\r\n3,4\r\n")
        assert np.array_equal(read_matrix_csv(path), [[1, 2], [3, 4]])

    def test_write_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError):
            write_matrix_csv(np.zeros(3), tmp_path / "m.csv")

    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        M = rng.standard_normal((5, 3)) * np.logspace(-12, 12, 3)
        path = tmp_path / "m.csv"
        write_matrix_csv(M, path)
        assert np.array_equal(read_matrix_csv(path), M)

    def test_write_read_write_stable(self, tmp_path):
        M = np.array([[1 / 3, 2 / 7], [np.pi, -1e-300]])
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_matrix_csv(M, p1)
        write_matrix_csv(read_matrix_csv(p1), p2)
        assert p1.read_text() == p2.read_text()

    @given(
        rows=st.lists(
            st.lists(
                st.floats(min_value=-1e15, max_value=1e15,
                          allow_nan=False, allow_infinity=False),
                min_size=3, max_size=3,
            ),
            min_size=1, max_size=6,
        )
    )
    def test_round_trip_property(self, rows):
        import tempfile

        M = np.asarray(rows, dtype=float)
        with tempfile.TemporaryDirectory() as d:
            path = f"{d}/m.csv"
            write_matrix_csv(M, path)
            back = read_matrix_csv(path)
        assert back.shape == M.shape
        assert np.array_equal(back, M)
