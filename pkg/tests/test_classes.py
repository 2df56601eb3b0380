import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfrl import rng as rngmod
from mfrl.classes import (CONTRACTION_MIX, ClassGenSpec, ModelClass, class_separation, gaussian_mean_class,
                          generate_class)
from mfrl.core.distances import gaussian_hellinger
from mfrl.core.dynamics import contraction_upper_bound, lipschitz_constants, transition_lipschitz
from mfrl.core.families import DensityFree, GaussianMean
from mfrl.core.model import MeanFieldModel
from mfrl.errors import GenerationError, PreconditionError, SchemaVersionError


def test_size_one_class_is_the_truth():
    c = generate_class(ClassGenSpec(S=3, A=2, H=2, size=1))
    assert len(c) == 1 and c.truth_index == 0


def test_zero_perturbation_gives_identical_models():
    c = generate_class(ClassGenSpec(S=3, A=2, H=2, size=4, family="density_free", perturbation=0.0))
    tables = {m.to_json() for m in c.models}
    assert len(tables) == 1


def test_same_seed_is_bit_identical():
    spec = ClassGenSpec(S=3, A=2, H=3, size=8, seed=11)
    a, b = generate_class(spec), generate_class(spec)
    assert a.to_json() == b.to_json()
    assert generate_class(ClassGenSpec(S=3, A=2, H=3, size=8, seed=12)).to_json() != a.to_json()


@pytest.mark.parametrize("family", ["density_free", "convex_mixture", "interpolated", "low_rank"])
def test_json_round_trip_is_exact(family):
    c = generate_class(ClassGenSpec(S=3, A=2, H=2, size=3, family=family, seed=2))
    back = ModelClass.from_json(c.to_json())
    assert back.to_json() == c.to_json()
    assert [m.id for m in back.models] == [m.id for m in c.models]
    for m, n in zip(c.models, back.models):
        assert np.array_equal(m.transition.vertices(), n.transition.vertices())


def test_unknown_schema_version_is_rejected():
    doc = generate_class(ClassGenSpec(S=2, A=2, H=2, size=2)).to_dict()
    doc["schema_version"] = 99
    with pytest.raises(SchemaVersionError):
        ModelClass.from_dict(doc)


@pytest.mark.parametrize("family", ["density_free", "convex_mixture", "interpolated", "low_rank"])
def test_members_share_reward_and_initial_density(family):
    c = generate_class(ClassGenSpec(S=3, A=2, H=3, size=5, family=family, seed=3))
    for m in c.models:
        assert m.transition.variant == c.truth.transition.variant
        assert m.reward.same_as(c.truth.reward)
        assert np.array_equal(m.mu1, c.truth.mu1)
        assert m.reward.R0.max() <= 1.0 / m.H


def test_class_rejects_mismatched_members():
    a = generate_class(ClassGenSpec(S=3, A=2, H=2, size=1, seed=0)).truth
    b = generate_class(ClassGenSpec(S=3, A=2, H=2, size=1, seed=1)).truth
    with pytest.raises(PreconditionError):
        ModelClass((a, b), 0)
    with pytest.raises(PreconditionError):
        ModelClass((a,), 1)


def test_lt_range_is_enforced():
    spec = ClassGenSpec(S=3, A=2, H=2, size=4, lt_range=(0.0, 0.9), seed=5)
    c = generate_class(spec)
    assert all(transition_lipschitz(m) <= 0.9 for m in c.models)
    with pytest.raises(GenerationError):
        generate_class(ClassGenSpec(S=3, A=2, H=2, size=4, lt_range=(1.5, 2.0), max_retries=3))


def test_contraction_flag_certifies_every_member():
    c = generate_class(ClassGenSpec(S=3, A=2, H=3, size=8, contraction=True, seed=6))
    assert CONTRACTION_MIX >= 0.7
    for m in c.models:
        rep = lipschitz_constants(m, np.random.default_rng(0), n_samples=500)
        assert contraction_upper_bound(m) < 1
        assert rep.gamma_lower <= contraction_upper_bound(m) + 1e-9


def test_spec_validation():
    with pytest.raises(PreconditionError):
        ClassGenSpec(S=3, A=2, H=2, size=2, perturbation=1.5)
    with pytest.raises(PreconditionError):
        ClassGenSpec(S=3, A=2, H=2, size=2, family="nope")
    spec = ClassGenSpec(S=3, A=2, H=2, size=2, lt_range=[0, 1])
    assert ClassGenSpec.from_dict(spec.to_dict()) == spec


# --- separation ------------------------------------------------------------------------------

def test_identical_models_have_zero_separation():
    c = generate_class(ClassGenSpec(S=3, A=2, H=2, size=3, family="density_free", perturbation=0.0))
    assert np.array_equal(class_separation(c, 20, np.random.default_rng(0)), np.zeros((3, 3)))


def test_separation_recovers_a_single_cell_gap():
    rng = np.random.default_rng(7)
    H, S, A = 2, 3, 2
    T = rng.dirichlet(np.ones(S), size=(H, S, A))
    T2 = T.copy()
    T2[1, 2, 0] = [0.1, 0.2, 0.7]
    gap = 0.5 * np.abs(T2[1, 2, 0] - T[1, 2, 0]).sum()
    base = generate_class(ClassGenSpec(S=S, A=A, H=H, size=1, family="density_free"))
    r = base.truth.reward
    ms = (MeanFieldModel(base.truth.mu1, DensityFree(T), r), MeanFieldModel(base.truth.mu1, DensityFree(T2), r))
    sep = class_separation(ModelClass(ms, 0), H * S * A, np.random.default_rng(1))
    assert sep[0, 1] == pytest.approx(gap, abs=1e-15)
    assert sep[1, 0] == sep[0, 1] and sep[0, 0] == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_separation_is_a_symmetric_bounded_matrix(seed):
    c = generate_class(ClassGenSpec(S=3, A=2, H=2, size=4, seed=seed))
    sep = class_separation(c, 24, rngmod.stream(seed, rngmod.PROBES))
    assert np.array_equal(sep, sep.T)
    assert np.all(np.diag(sep) == 0)
    assert sep.min() >= 0 and sep.max() <= 1


# --- gaussian classes --------------------------------------------------------------------------

def test_gaussian_single_function():
    g = gaussian_mean_class(2, [np.zeros(2)], 1.0)
    assert len(g) == 1


def test_gaussian_equal_means_have_zero_distance():
    g = gaussian_mean_class(2, [np.ones(2), np.ones(2)], 0.5, S=2)
    probes = [(0, 0, np.array([0.5, 0.5])), (1, 0, np.array([1.0, 0.0]))]
    mm = g.means(0, probes)
    assert np.all(gaussian_hellinger(mm[0], mm[1], g.sigma) == 0)


def test_gaussian_means_four_sigma_apart():
    sigma = 0.3
    g = gaussian_mean_class(1, [np.zeros(1), np.array([4 * sigma])], sigma)
    mm = g.means(0, [(0, 0, np.array([1.0]))])
    got = gaussian_hellinger(mm[0], mm[1], sigma)
    assert got[0] == pytest.approx(math.sqrt(1 - math.exp(-2)), abs=1e-12)


def test_gaussian_class_accepts_families_and_callables():
    rng = np.random.default_rng(0)
    fam = GaussianMean(rng.normal(size=(1, 2, 1, 3)), rng.normal(size=(1, 2, 1, 2, 3)), 0.5)
    g = gaussian_mean_class(3, [fam, lambda s, a, mu: np.full(3, s + mu[0])], 0.5)
    mu = np.array([0.25, 0.75])
    mm = g.means(0, [(1, 0, mu)])
    assert np.allclose(mm[0, 0], fam.mean(0, 1, 0, mu))
    assert np.allclose(mm[1, 0], 1.25)
    with pytest.raises(PreconditionError):
        gaussian_mean_class(1, [np.zeros(1)], 0.0)
