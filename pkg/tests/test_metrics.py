import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqadapt import metrics as mx

FIXTURE = np.array([[2, 1], [0, 3]])


class TestAccuracy:
    def test_diagonal_is_one(self):
        assert mx.accuracy(np.diag([3, 5, 2])) == 1.0

    def test_zero_diagonal_is_zero(self):
        assert mx.accuracy([[0, 2], [3, 0]]) == 0.0

    def test_hand_count(self):
        assert mx.accuracy(FIXTURE) == pytest.approx(5 / 6, abs=1e-12)

    def test_empty_matrix_rejected(self):
        with pytest.raises(mx.MetricError):
            mx.accuracy(np.zeros((3, 3), dtype=int))


class TestMacroF1:
    def test_perfect_diagonal(self):
        assert mx.macro_f1(np.diag([1, 4])) == 1.0

    def test_hand_computation(self):
        # class 0: P=1, R=2/3 -> F1=0.8; class 1: P=3/4, R=1 -> F1=6/7
        expected = (0.8 + 6 / 7) / 2
        assert mx.macro_f1(FIXTURE) == pytest.approx(expected, abs=1e-12)

    def test_absent_class_contributes_zero(self):
        cm = np.array([[3, 0, 0], [0, 2, 0], [0, 0, 0]])
        assert mx.macro_f1(cm) == pytest.approx(2 / 3, abs=1e-12)


class TestCohensKappa:
    def test_perfect_diagonal(self):
        assert mx.cohens_kappa(np.diag([2, 5])) == pytest.approx(1.0,
                                                                 abs=1e-12)

    def test_hand_computation(self):
        assert mx.cohens_kappa(FIXTURE) == pytest.approx(2 / 3, abs=1e-12)

    def test_independent_marginals_give_zero(self):
        rows = np.array([2, 3])
        cols = np.array([4, 1])
        cm = np.outer(rows, cols)   # p_o == p_e by construction
        assert mx.cohens_kappa(cm) == pytest.approx(0.0, abs=1e-12)

    def test_single_cell_is_an_error(self):
        cm = np.zeros((3, 3), dtype=int)
        cm[1, 1] = 7
        with pytest.raises(mx.MetricError, match="undefined"):
            mx.cohens_kappa(cm)


@st.composite
def confusion_matrices(draw):
    k = draw(st.integers(min_value=2, max_value=5))
    cells = draw(st.lists(st.integers(min_value=0, max_value=20),
                          min_size=k * k, max_size=k * k))
    cm = np.asarray(cells).reshape(k, k)
    if cm.sum() == 0:
        cm[0, 1] = 1
        cm[1, 0] = 1
    return cm


class TestInvariants:
    @settings(max_examples=60, deadline=None)
    @given(confusion_matrices(), st.randoms())
    def test_permutation_invariance(self, cm, rnd):
        k = cm.shape[0]
        perm = list(range(k))
        rnd.shuffle(perm)
        permuted = cm[np.ix_(perm, perm)]
        assert mx.accuracy(permuted) == pytest.approx(mx.accuracy(cm),
                                                      abs=1e-12)
        assert mx.macro_f1(permuted) == pytest.approx(mx.macro_f1(cm),
                                                      abs=1e-12)
        try:
            expected = mx.cohens_kappa(cm)
        except mx.MetricError:
            return
        assert mx.cohens_kappa(permuted) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(confusion_matrices())
    def test_bounds_and_kappa_below_accuracy(self, cm):
        acc = mx.accuracy(cm)
        assert 0.0 <= acc <= 1.0
        total = cm.sum()
        p_o = np.trace(cm) / total
        p_e = np.dot(cm.sum(axis=1), cm.sum(axis=0)) / total ** 2
        if p_e >= 1.0:
            return
        kappa = mx.cohens_kappa(cm)
        assert kappa <= 1.0 + 1e-12
        if 0 < p_e < p_o:
            assert kappa < acc

    def test_matrix_equals_prediction_list(self):
        rng = np.random.default_rng(0)
        true = rng.integers(0, 4, size=200)
        pred = rng.integers(0, 4, size=200)
        cm = mx.confusion_matrix(true, pred, 4)
        assert cm.sum() == 200
        assert mx.accuracy(cm) == pytest.approx(float((true == pred).mean()),
                                                abs=1e-12)
        manual = np.zeros((4, 4), dtype=int)
        for t, p in zip(true, pred):
            manual[t, p] += 1
        assert np.array_equal(cm, manual)


def test_report_and_row_round_numbers():
    record = mx.compute_all(FIXTURE)
    text = mx.format_report(record)
    assert "accuracy=" in text and "kappa=" in text
    row = mx.csv_row(record)
    acc_repr = row.split(",")[0]
    assert float(acc_repr) == record.accuracy
