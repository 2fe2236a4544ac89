import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pescov.covariates import (
    EncodingError,
    aggregate_household,
    build_occurrence_maps,
    build_spline_basis,
    encode_households,
    encode_person,
    encode_persons,
    eval_full_basis,
    eval_splines,
    household_presence,
    x_hh_names,
    x_ind_names,
)


def cox_de_boor(t, i, p, x):
    """Textbook recursion for the i-th degree-p B-spline (right-closed at the last knot)."""
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        return 1.0 if (x == t[-1] and t[i] < t[i + 1] == t[-1]) else 0.0
    a = 0.0 if t[i + p] == t[i] else (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x)
    b = 0.0 if t[i + p + 1] == t[i + 1] else (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x)
    return a + b


def person(**kw):
    p = dict(sex=0, age=45, eth_m=0, eth_p=0, eth_a=0, eth_o=0, nz_born=0, maori_descent=0)
    p.update(kw)
    return p


basis = build_spline_basis()
names = x_ind_names()


def block(name_prefix):
    return [i for i, n in enumerate(names) if n.startswith(name_prefix)]


def test_basis_counts():
    assert basis.n_basis == 10
    assert basis.n_full == 11


@pytest.mark.parametrize("age", [45.0, 0.0, 9.5, 10.0, 33.3, 80.99, 115.0])
def test_splines_match_recursion(age):
    t = basis.knot_vector
    oracle = np.array([cox_de_boor(t, i, 2, age) for i in range(11)])
    np.testing.assert_allclose(eval_full_basis(basis, age)[0], oracle, atol=1e-14)


def test_at_most_three_nonzero():
    ages = np.linspace(0.01, 114.99, 2000)
    full = eval_full_basis(basis, ages)
    assert (np.count_nonzero(full, axis=1) <= 3).all()
    assert np.count_nonzero(eval_splines(basis, 45.0)) <= 3


def test_partition_of_unity():
    assert eval_full_basis(basis, 45.0).sum() == pytest.approx(1.0, abs=1e-14)
    full0 = eval_full_basis(basis, 0.0)[0]
    assert eval_splines(basis, 0.0).sum() == pytest.approx(1.0 - full0[0], abs=1e-14)


def test_splines_bounded_and_lipschitz():
    ages = np.arange(0, 115, 0.05)
    S = eval_splines(basis, ages)
    assert S.min() >= 0 and S.max() <= 1
    # quadratic B-splines: |B'| <= 2 / min knot gap
    L = 2.0 / np.min(np.diff(basis.knot_vector)[np.diff(basis.knot_vector) > 0])
    assert np.max(np.abs(np.diff(S, axis=0))) <= L * 0.05 + 1e-12


def test_out_of_range_age_clamps_with_warning():
    with pytest.warns(UserWarning):
        v = eval_splines(basis, 130.0)
    np.testing.assert_array_equal(v, eval_splines(basis, 115.0))


def test_encoding_length_and_layout():
    assert len(names) == 55
    x = encode_person(person())
    assert x.shape == (55,)
    nz = np.flatnonzero(x)
    assert set(nz) <= set(block("age"))


def test_maori_other_female():
    x = encode_person(person(sex=1, eth_m=1, eth_o=1, age=30))
    assert x[names.index("maori_x_other")] == 1
    np.testing.assert_array_equal(x[block("female_x_age")], x[block("age")])


def test_missing_covariate_names_field():
    p = person()
    del p["nz_born"]
    with pytest.raises(EncodingError, match="nz_born"):
        encode_person(p)


@settings(max_examples=50, deadline=None)
@given(st.fixed_dictionaries({
    "sex": st.integers(0, 1), "age": st.integers(0, 110), "eth_m": st.integers(0, 1), "eth_p": st.integers(0, 1),
    "eth_a": st.integers(0, 1), "eth_o": st.integers(0, 1), "nz_born": st.integers(0, 1),
    "maori_descent": st.integers(0, 1)}))
def test_interactions_are_products(p):
    x = encode_person(p)
    v = dict(zip(names, x))
    ages = [f"age{i}" for i in range(1, 11)]
    assert v["maori_x_other"] == p["eth_m"] * p["eth_o"]
    assert v["maori_x_pacific"] == p["eth_m"] * p["eth_p"]
    assert v["asian_x_nz_born"] == p["eth_a"] * p["nz_born"]
    for a in ages:
        assert v[f"female_x_{a}"] == v["female"] * v[a]
    for e, ind in (("maori", "eth_m"), ("pacific", "eth_p"), ("asian", "eth_a"), ("other", "eth_o")):
        for a in ages[:5]:
            assert v[f"{e}_x_{a}"] == p[ind] * v[a]
    for a in ages[:5]:
        assert v[f"maori_x_other_x_{a}"] == v["maori_x_other"] * v[a]
    np.testing.assert_array_equal(x, encode_person(p))  # pure


def test_household_single_maori_male_overseas():
    row = household_presence({"sex": [0], "eth_m": [1], "eth_p": [0], "eth_a": [0], "eth_o": [0],
                              "nz_born": [0], "maori_descent": [1]})
    assert row == {"hh_m": 1, "hh_p": 0, "hh_a": 0, "hh_o": 0, "hh_female": 0, "hh_maori_descent": 1,
                   "hh_nz_born": 0}


def _member(**kw):
    m = {"sex": 0, "eth_m": 0, "eth_p": 0, "eth_a": 0, "eth_o": 0, "nz_born": 0, "maori_descent": 0}
    m.update(kw)
    return m


def test_household_union_is_or():
    a, b = _member(sex=1, eth_a=1), _member(eth_m=1, nz_born=1)
    both = {k: [a[k], b[k]] for k in a}
    pa, pb = household_presence({k: [v] for k, v in a.items()}), household_presence({k: [v] for k, v in b.items()})
    assert household_presence(both) == {k: max(pa[k], pb[k]) for k in pa}


def test_maori_asian_interaction():
    a, b = _member(eth_m=1), _member(eth_a=1)
    x = aggregate_household({k: [a[k], b[k]] for k in a}, htf=0.0)
    assert x[x_hh_names("model2").index("hh_m_x_hh_a")] == 1
    assert len(x) == 16


def test_empty_household():
    with pytest.raises(EncodingError):
        household_presence({k: [] for k in _member()})


def test_model1_household_is_htf():
    X = encode_households({"htf": [0.0, 1.0]}, "model1")
    assert X.tolist() == [[0.0], [1.0]]


def test_occurrence_maps():
    m = build_occurrence_maps([[1]])
    assert m.W.tolist() == [[1.0]] and m.p_strat_given_ta.tolist() == [[1.0]]
    m = build_occurrence_maps([[30, 10], [0, 60]])
    np.testing.assert_allclose(m.W, [[0.75, 0.25], [0, 1]], atol=1e-15)
    np.testing.assert_allclose(m.p_strat_given_ta, [[1, 1 / 7], [0, 6 / 7]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 50), min_size=3, max_size=3), min_size=2, max_size=5))
def test_occurrence_invariants(rows):
    c = np.array(rows, dtype=float) + np.eye(len(rows), 3)  # make every stratum and TA nonempty
    c[:, :][c.sum(axis=1) == 0] = 1
    c[:, c.sum(axis=0) == 0] = 1
    m = build_occurrence_maps(c)
    np.testing.assert_allclose(m.W.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(m.p_strat_given_ta.sum(axis=0), 1, atol=1e-12)
    assert np.array_equal(m.W > 0, m.p_strat_given_ta > 0)
    assert np.array_equal(m.p_strat_given_ta, c / c.sum(axis=0))


def test_empty_stratum_rejected():
    with pytest.raises(ValueError, match="stratum"):
        build_occurrence_maps([[0, 0], [1, 1]])


def test_encode_persons_matches_rowwise():
    rows = [person(age=a, sex=a % 2, eth_p=int(a > 40)) for a in (3, 27, 41, 88)]
    X = encode_persons({k: [r[k] for r in rows] for k in rows[0]})
    for r, x in zip(rows, X):
        np.testing.assert_array_equal(encode_person(r), x)
