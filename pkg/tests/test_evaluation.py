import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihmm.data import Dataset, ObsStatus
from ihmm.evaluation import (
    MetricReport,
    aggregate,
    contingency,
    evaluate,
    evaluate_independent,
    hamming_distance,
    imputation_error,
    k_hat,
    mean_hamming,
    microenv_crosstab,
    mu_mse,
    point_estimate_partition,
    read_metrics,
    variation_of_information,
    write_metrics,
)
from ihmm.exceptions import LengthMismatch, NoCells, NoDraws, NoLabels
from ihmm.sampler import PosteriorDraws
from ihmm.simulation import RemovedCells, SimTruth

from conftest import make_series
from oracles import brute_force_hamming

labels = st.lists(st.integers(0, 4), min_size=1, max_size=30)


def draws_of(zs, mus=None):
    d = PosteriorDraws()
    for i, z in enumerate(zs):
        d.iterations.append(i)
        d.z.append([np.asarray(a) for a in z] if np.ndim(z[0]) else [np.asarray(z)])
        d.k_occupied.append(len(np.unique(np.concatenate(d.z[-1]))))
        d.mu.append(np.zeros((1, 1)) if mus is None else np.asarray(mus[i]))
    return d


def test_hamming_example():
    assert hamming_distance([0, 0, 1, 1, 2, 2], [0, 0, 0, 1, 1, 1]) == pytest.approx(1 / 3)
    assert hamming_distance([5, 5, 7], [0, 0, 1]) == 0.0


def test_hamming_length_mismatch():
    with pytest.raises(LengthMismatch):
        hamming_distance([0, 1], [0, 1, 1])


@settings(max_examples=200, deadline=None)
@given(labels, st.data())
def test_hamming_invariant_to_relabelling(a, data):
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    perm = data.draw(st.permutations(range(5)))
    a = np.array(a)
    relabelled = np.array(perm)[a] + 10
    assert hamming_distance(a, b) == pytest.approx(hamming_distance(relabelled, b), abs=1e-12)
    assert hamming_distance(a, b) == pytest.approx(brute_force_hamming(a, np.array(b)), abs=1e-12)


def test_list_input_pools_series():
    assert hamming_distance([np.array([0, 1]), np.array([1, 0])], [np.array([3, 4]), np.array([4, 3])]) == 0.0
    table, la, lb = contingency([np.array([0, 1])], [np.array([2, 2])])
    np.testing.assert_array_equal(table, [[1], [1]])


def test_vi_example():
    assert variation_of_information([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(2 * np.log(2))
    assert variation_of_information([0, 0, 1, 1], [0, 0, 0, 0]) == pytest.approx(np.log(2))


@settings(max_examples=200, deadline=None)
@given(labels, st.data())
def test_vi_is_a_metric(a, data):
    n = len(a)
    b = data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n))
    c = data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n))
    assert variation_of_information(a, a) == pytest.approx(0.0, abs=1e-12)
    assert variation_of_information(a, b) == pytest.approx(variation_of_information(b, a), abs=1e-12)
    assert variation_of_information(a, c) <= variation_of_information(a, b) + variation_of_information(b, c) + 1e-12


def test_k_hat_and_mean_hamming():
    d = draws_of([[0, 0, 1], [0, 1, 2], [3, 3, 3]])
    assert k_hat(d) == pytest.approx(2.0)
    assert mean_hamming(d, [0, 0, 1]) == pytest.approx((0 + 1 / 3 + 1 / 3) / 3)
    with pytest.raises(NoDraws):
        k_hat(PosteriorDraws())


def test_mu_mse_matched_and_unmatched():
    mu_true = np.array([[0.0, 0.0], [1.0, 1.0]])
    z_true = [0, 0, 1, 1]
    d = draws_of([[1, 1, 0, 0]], mus=[[[1.1, 0.9], [0.1, 0.1]]])
    assert mu_mse(d, z_true, mu_true) == pytest.approx(0.01)
    # one estimated state: the second true state goes unmatched
    d = draws_of([[0, 0, 0, 0]], mus=[[[0.0, 0.2]]])
    assert mu_mse(d, z_true, mu_true) == pytest.approx((0.02 + 1.0) / 2)


def removed_cells():
    return RemovedCells(series=np.array([0, 0, 1]), t=np.array([1, 2, 0]), dim=np.array([0, 1, 0]),
                        true_value=np.array([1.0, -2.0, 0.5]),
                        mechanism=np.array([ObsStatus.MAR, ObsStatus.BELOW_LOD, ObsStatus.MAR], np.int8))


def test_imputation_error_example():
    cells = np.array([[1, 0, 0], [0, 1, 0], [0, 2, 1]])
    values = np.array([[1.0, 1.5, -2.5], [0.0, 0.5, -1.5]])
    out = imputation_error(values, cells, removed_cells())
    # MAR errors are 0.5, -0.5, 0.5, -0.5; LOD errors are -0.5, 0.5
    assert out["mar"] == pytest.approx((0.25, 0.0))
    assert out["lod"] == pytest.approx((0.25, 0.0))
    shifted = np.array([[1.0, 1.5, -1.5], [1.0, 1.5, -1.5]])
    assert imputation_error(shifted, cells, removed_cells())["lod"] == pytest.approx((0.25, 0.5))
    with pytest.raises(NoCells):
        imputation_error(values, cells, RemovedCells())


def test_point_estimate_picks_the_modal_partition():
    a = [0, 0, 1, 1, 2, 2]
    zs = [a, [1, 1, 0, 0, 2, 2], [0, 1, 0, 1, 0, 1], [5, 5, 6, 6, 7, 7], [0, 0, 0, 0, 0, 1]]
    pp = point_estimate_partition(draws_of(zs))
    assert pp.draw_index in (0, 1, 3)
    assert variation_of_information(pp.z, a) == pytest.approx(0.0, abs=1e-12)
    sub = point_estimate_partition(draws_of(zs * 3), max_draws=4)
    assert 0 <= sub.draw_index < 15


def test_crosstab():
    env = np.array(["home", "work", "home", "work"], dtype=object)
    ds = Dataset(series=[make_series(np.arange(4.0)[:, None], microenv=env)], lod=np.array([-9.0]))
    ct = microenv_crosstab([np.array([0, 0, 1, 1])], ds)
    assert ct.labels == ["home", "work"]
    np.testing.assert_array_equal(ct.counts, [[1, 1], [1, 1]])
    assert ct.total == 4 and list(ct.row_totals) == [2, 2]
    with pytest.raises(LengthMismatch):
        microenv_crosstab([np.array([0, 0, 1])], ds)
    with pytest.raises(NoLabels):
        microenv_crosstab([np.zeros(4, int)], Dataset(series=[make_series(np.arange(4.0)[:, None])],
                                                       lod=np.array([-9.0])))


def toy_truth():
    return SimTruth(z_true=[np.array([0, 0, 1]), np.array([1, 1, 0])], mu_true=np.array([[0.0], [2.0]]),
                    sigma_true=np.zeros((2, 1, 1)), complete=[], removed=removed_cells())


def test_evaluate_truth_as_draws_is_perfect():
    truth = toy_truth()
    d = draws_of([truth.z_true] * 2, mus=[truth.mu_true] * 2)
    d.cells = np.array([[0, 1, 0], [0, 2, 1], [1, 0, 0]])
    d.imputations = [truth.removed.true_value.copy()] * 2
    rep = evaluate(d, truth)
    assert rep.k_hat == 2 and rep.hamming == 0 and rep.mu_mse == 0
    assert rep.mar_mse == 0 and rep.lod_mse == 0 and rep.lod_bias == 0


def test_evaluate_independent_sums_k():
    truth = toy_truth()
    fits = [draws_of([[z]], mus=[truth.mu_true]) for z in truth.z_true]
    for s, f in enumerate(fits):
        f.z = [[truth.z_true[s]]]
        keep = truth.removed.series == s
        f.cells = np.column_stack([np.zeros(keep.sum(), int), truth.removed.t[keep], truth.removed.dim[keep]])
        f.imputations = [truth.removed.true_value[keep] + 1.0]
    rep = evaluate_independent(fits, truth)
    assert rep.k_hat == 4 and rep.hamming == 0
    assert rep.mar_mse == pytest.approx(1.0) and rep.mar_bias == pytest.approx(1.0)
    with pytest.raises(LengthMismatch):
        evaluate_independent(fits[:1], truth)


def test_aggregate_and_metrics_file(tmp_path):
    reps = [MetricReport(k_hat=2.0, hamming=0.1, mu_mse=0.0), MetricReport(k_hat=4.0, hamming=0.3, mu_mse=0.0)]
    mean, se = aggregate(reps)
    assert mean.k_hat == 3.0 and se.k_hat == pytest.approx(1.0)
    write_metrics(tmp_path / "m.csv", reps)
    back = read_metrics(tmp_path / "m.csv")
    assert [r.k_hat for r in back] == [2.0, 4.0]
    assert np.isnan(back[0].mar_mse)
