"""Similarity engine: rank-correlation init, transfer fits, Bayes updates."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_space
from mdesign.similarity import (
    COLD_START_VAR_SCALE,
    NOISE_FLOOR,
    ObservationPair,
    SimilarityError,
    SimilarityView,
    TransferModel,
    bayes_update,
    explicit_similarity,
    gaussian_likelihood,
    init_similarity_kendall,
    kendall_tau,
    uniform_similarity,
    update_transfer,
)
from mdesign.store import KnowledgeStore, TaskRecord
from oracles import brute_kendall_tau, brute_posterior, brute_slope_and_variance

# ------------------------------------------------------------------ kendall tau


def test_kendall_identity_and_reversal():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)


def test_kendall_one_discordant_pair():
    # one swapped pair out of six disagrees: (5 - 1) / 6
    assert kendall_tau([1, 2, 3, 4], [1, 2, 4, 3]) == pytest.approx(2 / 3)


def test_kendall_two_discordant_pairs():
    # adjacent swaps in both halves: (4 - 2) / 6
    assert kendall_tau([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(1 / 3)


def test_kendall_constant_vector_scores_zero():
    assert kendall_tau([1.0, 1.0, 1.0], [1, 2, 3]) == 0.0
    assert kendall_tau([1, 2, 3], [5.0, 5.0, 5.0]) == 0.0


def test_kendall_input_validation():
    with pytest.raises(SimilarityError):
        kendall_tau([1, 2, 3], [1, 2])
    with pytest.raises(SimilarityError):
        kendall_tau([1], [2])
    with pytest.raises(SimilarityError):
        kendall_tau([1, float("nan")], [1, 2])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.integers(min_value=-5, max_value=5), min_size=2, max_size=12),
    st.data(),
)
def test_kendall_matches_pair_counting_oracle(x, data):
    y = data.draw(
        st.lists(
            st.integers(min_value=-5, max_value=5), min_size=len(x), max_size=len(x)
        )
    )
    assert kendall_tau(x, y) == pytest.approx(brute_kendall_tau(x, y), abs=1e-12)


# ----------------------------------------------------------- gaussian likelihood


def test_gaussian_unit_peak():
    # at zero residual and variance 1/(2*pi), the density is exactly 1
    lk = gaussian_likelihood(ObservationPair(0.3, 0.3), 1.0, 1.0 / (2.0 * math.pi))
    assert lk == pytest.approx(1.0, rel=1e-12)


def test_gaussian_standard_peak():
    lk = gaussian_likelihood(ObservationPair(0.0, 0.0), 1.0, 1.0)
    assert lk == pytest.approx(0.3989422804014327, rel=1e-12)


def test_gaussian_one_sigma_out():
    lk = gaussian_likelihood(ObservationPair(1.0, 0.0), 1.0, 1.0)
    assert lk == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-12)
    assert lk == pytest.approx(0.24197072451914337, rel=1e-12)


def test_gaussian_slope_rescales_prediction():
    # observed 2.0 against retrieved 1.0 under slope 2 is a perfect match
    lk = gaussian_likelihood(ObservationPair(2.0, 1.0), 2.0, 1.0)
    assert lk == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-12)


def test_gaussian_rejects_bad_variance():
    with pytest.raises(SimilarityError):
        gaussian_likelihood(ObservationPair(0.0, 0.0), 1.0, 0.0)
    with pytest.raises(SimilarityError):
        gaussian_likelihood(ObservationPair(0.0, 0.0), 1.0, -1.0)
    with pytest.raises(SimilarityError):
        gaussian_likelihood(ObservationPair(0.0, 0.0), float("inf"), 1.0)


# -------------------------------------------------------------- transfer models


def test_cold_start_is_neutral():
    model = TransferModel(window_size=30)
    assert model.slope == 1.0
    assert model.noise_var == NOISE_FLOOR * COLD_START_VAR_SCALE
    update_transfer(model, ObservationPair(5.0, 1.0))
    # one pair is still cold
    assert model.slope == 1.0
    assert model.noise_var == NOISE_FLOOR * COLD_START_VAR_SCALE


def test_exact_double_relationship():
    model = TransferModel(window_size=30)
    update_transfer(model, ObservationPair(2.0, 1.0))
    update_transfer(model, ObservationPair(4.0, 2.0))
    assert model.slope == pytest.approx(2.0, rel=1e-12)
    assert model.noise_var == NOISE_FLOOR  # zero residuals clamp to the floor


def test_zero_retrieved_keeps_unit_slope():
    model = TransferModel(window_size=30)
    update_transfer(model, ObservationPair(1.0, 0.0))
    update_transfer(model, ObservationPair(2.0, 0.0))
    assert model.slope == 1.0
    assert model.noise_var == pytest.approx(2.5)  # mean of 1^2 and 2^2


def test_three_point_fit():
    model = TransferModel(window_size=30)
    for pair in [(1.0, 1.0), (3.0, 2.0), (2.0, 3.0)]:
        update_transfer(model, ObservationPair(*pair))
    assert model.slope == pytest.approx(13 / 14, rel=1e-12)
    assert model.noise_var == pytest.approx(9 / 14, rel=1e-12)


def test_window_eviction():
    model = TransferModel(window_size=2)
    for pair in [(9.0, 1.0), (2.0, 1.0), (4.0, 2.0)]:
        update_transfer(model, ObservationPair(*pair))
    assert len(model.window) == 2
    assert model.slope == pytest.approx(2.0)  # the (9, 1) outlier was evicted


def test_window_size_validation():
    with pytest.raises(SimilarityError):
        TransferModel(window_size=1)
    with pytest.raises(SimilarityError):
        TransferModel(window_size=30, noise_floor=0.0)


def test_update_rejects_non_finite():
    model = TransferModel(window_size=30)
    with pytest.raises(SimilarityError):
        update_transfer(model, ObservationPair(float("nan"), 1.0))


@settings(max_examples=60, deadline=None)
@given(
    pairs=st.lists(
        st.tuples(
            st.floats(-10, 10, allow_nan=False),
            st.floats(-10, 10, allow_nan=False),
        ),
        min_size=0,
        max_size=50,
    ),
    window=st.integers(min_value=2, max_value=12),
)
def test_fit_matches_loop_oracle(pairs, window):
    model = TransferModel(window_size=window)
    for obs, ret in pairs:
        update_transfer(model, ObservationPair(obs, ret))
    slope, var = brute_slope_and_variance(list(model.window), NOISE_FLOOR)
    assert len(model.window) <= window
    assert model.slope == pytest.approx(slope, rel=1e-9, abs=1e-12)
    if len(model.window) < 2:
        assert model.noise_var == NOISE_FLOOR * COLD_START_VAR_SCALE
    else:
        assert model.noise_var == pytest.approx(var, rel=1e-9, abs=1e-15)


# ----------------------------------------------------------------- bayes update


def _fixed_model(slope: float, variance: float) -> TransferModel:
    model = TransferModel(window_size=30)
    model.slope = slope
    model.noise_var = variance
    return model


def test_posterior_four_to_one():
    # likelihoods 0.4 and 0.1 against a uniform prior give weights 0.8 / 0.2
    v = 1.0 / (2.0 * math.pi)  # unit prefactor
    transfers = {"a": _fixed_model(1.0, v), "b": _fixed_model(1.0, v)}
    retrieved = {
        "a": -math.sqrt(math.log(1 / 0.4) / math.pi),
        "b": -math.sqrt(math.log(1 / 0.1) / math.pi),
    }
    view = uniform_similarity(["a", "b"])
    out = bayes_update(view, transfers, 0.0, retrieved)
    assert out.weights["a"] == pytest.approx(0.8, rel=1e-12)
    assert out.weights["b"] == pytest.approx(0.2, rel=1e-12)
    assert out.iteration == 1


def test_posterior_recovers_from_skewed_prior():
    # equal-but-opposite likelihoods wash a 0.9/0.1 prior back to 0.5/0.5
    v = 1.0 / (2.0 * math.pi)
    transfers = {"a": _fixed_model(1.0, v), "b": _fixed_model(1.0, v)}
    r_a = math.sqrt(math.log(1 / 0.1) / math.pi)
    r_b = math.sqrt(math.log(1 / 0.9) / math.pi)
    view = explicit_similarity({"a": 0.9, "b": 0.1})
    out = bayes_update(view, transfers, 0.0, {"a": r_a, "b": r_b})
    assert out.weights["a"] == pytest.approx(0.5, rel=1e-9)
    assert out.weights["b"] == pytest.approx(0.5, rel=1e-9)


def test_equal_likelihoods_keep_prior():
    transfers = {"a": _fixed_model(1.0, 1.0), "b": _fixed_model(1.0, 1.0)}
    view = explicit_similarity({"a": 0.7, "b": 0.3})
    out = bayes_update(view, transfers, 0.5, {"a": 0.2, "b": 0.2})
    assert out.weights["a"] == pytest.approx(0.7, rel=1e-12)
    assert out.weights["b"] == pytest.approx(0.3, rel=1e-12)


def test_missing_retrieval_is_neutral():
    # the absent task gets the mean likelihood, so only present tasks shift
    transfers = {tid: _fixed_model(1.0, 1.0) for tid in ("a", "b", "c")}
    view = uniform_similarity(["a", "b", "c"])
    out = bayes_update(view, transfers, 0.0, {"a": 0.0, "b": 2.0, "c": None})
    lk_a = gaussian_likelihood(ObservationPair(0.0, 0.0), 1.0, 1.0)
    lk_b = gaussian_likelihood(ObservationPair(0.0, 2.0), 1.0, 1.0)
    lk_c = (lk_a + lk_b) / 2.0
    total = lk_a + lk_b + lk_c
    assert out.weights["a"] == pytest.approx(lk_a / total, rel=1e-12)
    assert out.weights["b"] == pytest.approx(lk_b / total, rel=1e-12)
    assert out.weights["c"] == pytest.approx(lk_c / total, rel=1e-12)


def test_all_missing_keeps_prior():
    transfers = {"a": _fixed_model(1.0, 1.0), "b": _fixed_model(1.0, 1.0)}
    view = explicit_similarity({"a": 0.6, "b": 0.4})
    out = bayes_update(view, transfers, 1.0, {"a": None, "b": None})
    assert out.weights == pytest.approx(view.weights)
    assert out.iteration == 1


def test_total_underflow_keeps_prior():
    transfers = {"a": _fixed_model(1.0, 1e-6), "b": _fixed_model(1.0, 1e-6)}
    view = explicit_similarity({"a": 0.6, "b": 0.4})
    # residuals ~1e3 against sigma ~1e-3: exp(-5e11) underflows to exactly 0
    out = bayes_update(view, transfers, 1000.0, {"a": 0.0, "b": 0.0})
    assert out.weights == pytest.approx(view.weights)
    assert out.iteration == 1


def test_posterior_matches_independent_oracle():
    import numpy as np

    rng = np.random.default_rng(42)
    ids = [f"t{i}" for i in range(6)]
    for trial in range(20):
        weights = rng.random(len(ids)) + 0.01
        weights /= weights.sum()
        view = SimilarityView(dict(zip(ids, weights)), iteration=trial)
        transfers = {}
        models = {}
        for tid in ids:
            slope = float(rng.normal(1.0, 0.5))
            var = float(rng.uniform(0.01, 2.0))
            transfers[tid] = _fixed_model(slope, var)
            models[tid] = (slope, var)
        observed = float(rng.normal())
        retrieved = {
            tid: (None if rng.random() < 0.25 else float(rng.normal())) for tid in ids
        }
        out = bayes_update(view, transfers, observed, retrieved)
        expected = brute_posterior(dict(view.weights), models, observed, retrieved)
        for tid in ids:
            assert out.weights[tid] == pytest.approx(expected[tid], rel=1e-9, abs=1e-12)
        assert out.iteration == trial + 1


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    steps=st.integers(min_value=1, max_value=40),
)
def test_posterior_stays_normalized(seed, steps):
    import numpy as np

    rng = np.random.default_rng(seed)
    ids = ["a", "b", "c", "d"]
    view = uniform_similarity(ids)
    transfers = {tid: TransferModel(window_size=10) for tid in ids}
    for _ in range(steps):
        observed = float(rng.normal())
        retrieved = {
            tid: (None if rng.random() < 0.2 else float(rng.normal())) for tid in ids
        }
        view = bayes_update(view, transfers, observed, retrieved)
        for tid, value in retrieved.items():
            if value is not None:
                update_transfer(transfers[tid], ObservationPair(observed, value))
        assert abs(view.total() - 1.0) <= 1e-9
        assert all(w >= 0.0 for w in view.weights.values())


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    scale=st.floats(min_value=0.5, max_value=2.0, allow_nan=False),
)
def test_posterior_invariant_under_common_rescaling(seed, scale):
    """Scaling every gain in the problem by a constant leaves weights unchanged.

    Slopes are scale-free and variances pick up scale^2, so each likelihood
    changes by the same factor, which normalization removes.
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    ids = ["a", "b", "c"]
    base_pairs = {
        tid: [(float(rng.normal()), float(rng.normal())) for _ in range(5)] for tid in ids
    }
    observed = float(rng.normal())
    retrieved = {tid: float(rng.normal()) for tid in ids}

    def run(k: float) -> SimilarityView:
        transfers = {}
        for tid in ids:
            model = TransferModel(window_size=10)
            for obs, ret in base_pairs[tid]:
                update_transfer(model, ObservationPair(k * obs, k * ret))
            transfers[tid] = model
        view = uniform_similarity(ids)
        return bayes_update(
            view, transfers, k * observed, {tid: k * r for tid, r in retrieved.items()}
        )

    plain = run(1.0)
    scaled = run(scale)
    for tid in ids:
        assert scaled.weights[tid] == pytest.approx(plain.weights[tid], rel=1e-9)


# --------------------------------------------------------------- initialization


def _stats_store(stats_by_task: dict[str, tuple[float, ...]], names: tuple[str, ...]):
    space = make_space(2, 2)
    tasks = [TaskRecord(tid, stats=stats) for tid, stats in stats_by_task.items()]
    rows = [(tid, (0, 0), 0.5) for tid in stats_by_task]
    return KnowledgeStore.build(space, tasks, rows, stat_names=names)


def test_init_prefers_rank_aligned_benchmark():
    names = ("s0", "s1", "s2", "s3")
    store = _stats_store(
        {
            "aligned": (1.0, 2.0, 3.0, 4.0),
            "swapped": (1.0, 2.0, 4.0, 3.0),
            "reversed": (4.0, 3.0, 2.0, 1.0),
        },
        names,
    )
    view = init_similarity_kendall({"s0": 1, "s1": 2, "s2": 3, "s3": 4}, store)
    # scores: (tau+1)/2 = 1, 5/6, 0 -> normalized over 11/6
    assert view.weights["aligned"] == pytest.approx(6 / 11, rel=1e-12)
    assert view.weights["swapped"] == pytest.approx(5 / 11, rel=1e-12)
    assert view.weights["reversed"] == pytest.approx(0.0, abs=1e-15)
    assert view.total() == pytest.approx(1.0, rel=1e-12)


def test_init_all_anticorrelated_falls_back_to_uniform():
    names = ("s0", "s1", "s2")
    store = _stats_store(
        {"x": (3.0, 2.0, 1.0), "y": (30.0, 20.0, 10.0)},
        names,
    )
    view = init_similarity_kendall({"s0": 1, "s1": 2, "s2": 3}, store)
    assert view.weights == {"x": 0.5, "y": 0.5}


def test_init_schema_mismatch_rejected():
    store = _stats_store({"x": (1.0, 2.0)}, ("s0", "s1"))
    with pytest.raises(SimilarityError, match="schema"):
        init_similarity_kendall({"s0": 1.0}, store)
    with pytest.raises(SimilarityError, match="schema"):
        init_similarity_kendall({"s0": 1.0, "s1": 2.0, "s9": 3.0}, store)


def test_init_needs_two_statistics():
    store = _stats_store({"x": (1.0,)}, ("s0",))
    with pytest.raises(SimilarityError, match="two"):
        init_similarity_kendall({"s0": 1.0}, store)


def test_uniform_view():
    view = uniform_similarity(["a", "b", "c", "d"])
    assert view.total() == pytest.approx(1.0)
    assert view.weights["a"] == 0.25
    with pytest.raises(SimilarityError):
        uniform_similarity([])


def test_explicit_view_normalizes():
    view = explicit_similarity({"a": 3.0, "b": 1.0})
    assert view.weights == {"a": 0.75, "b": 0.25}
    with pytest.raises(SimilarityError):
        explicit_similarity({"a": 0.0, "b": 0.0})
    with pytest.raises(SimilarityError):
        explicit_similarity({})


def test_view_validation():
    with pytest.raises(SimilarityError):
        SimilarityView({})
    with pytest.raises(SimilarityError):
        SimilarityView({"a": -0.1})
    with pytest.raises(SimilarityError):
        SimilarityView({"a": float("nan")})
