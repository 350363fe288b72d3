import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone

from spajm import JointModel, PEDTransformer
from spajm.basis import lattice_graph
from spajm.config import Hyperpriors, SamplerConfig, serialize_model_config
from spajm.simulate import SimulationConfig, simulate_study, study_model_spec


@pytest.fixture(scope="module")
def study():
    return simulate_study(SimulationConfig(n=40, seed=21, setting=3))


@pytest.fixture(scope="module")
def fitted(study):
    model = JointModel(study_model_spec(3), iterations=300, burn_in=100, thinning=2, seed=4,
                       maps={"grid": lattice_graph()})
    return model.fit(study.long, study.surv)


def test_params_and_clone():
    m = JointModel(iterations=50, seed=3, level=0.9)
    p = m.get_params()
    assert p["iterations"] == 50 and p["seed"] == 3 and p["level"] == 0.9 and p["burn_in"] is None
    c = clone(m)
    assert c.get_params() == p and c is not m
    m.set_params(thinning=7)
    assert m.thinning == 7
    t = clone(PEDTransformer(cuts="quantiles:4"))
    assert t.get_params()["cuts"] == "quantiles:4"


def test_fit_attributes(fitted):
    assert fitted.chain_.n_draws == 100
    assert fitted.sampler_config_.seed == 4
    assert "alpha" in fitted.coef_.index
    assert set(fitted.acceptance_) >= {"alpha", "s.baseline"}
    assert "l.mrf_region" in fitted.summary_.functions


def test_predict_tracks_outcome(fitted, study):
    pred = fitted.predict(study.long)
    assert pred.shape == (len(study.long),)
    resid = study.long["y"].to_numpy() - pred
    # the fitted mean explains most of the outcome variance
    assert resid.var() < 0.5 * study.long["y"].var()
    assert fitted.score(study.long) == pytest.approx(-np.mean(resid**2))


def test_predict_rejects_unseen_subjects(fitted, study):
    rows = study.long.head(2).assign(id=9999)
    with pytest.raises(ValueError, match="unseen"):
        fitted.predict(rows)


def test_config_text_budget_and_overrides(study):
    sampler = SamplerConfig(iterations=150, burn_in=30, thinning=1, seed=9)
    text = serialize_model_config(study_model_spec(3), Hyperpriors(), sampler)
    m = JointModel(text, maps={"grid": lattice_graph()}).fit(study.long, study.surv)
    assert m.chain_.n_draws == 120 and m.sampler_config_.seed == 9
    m2 = JointModel(text, seed=10, maps={"grid": lattice_graph()}).fit(study.long, study.surv)
    assert m2.sampler_config_.seed == 10 and m2.sampler_config_.iterations == 150


def test_same_seed_same_draws(study):
    kw = dict(iterations=120, burn_in=10, thinning=1, seed=2, maps={"grid": lattice_graph()})
    a = JointModel(study_model_spec(3), **kw).fit(study.long, study.surv)
    b = JointModel(study_model_spec(3), **kw).fit(study.long, study.surv)
    pd.testing.assert_frame_equal(a.chain_.draws, b.chain_.draws)


def test_bad_inputs(study):
    with pytest.raises(TypeError):
        JointModel(42).fit(study.long, study.surv)
    with pytest.raises(ValueError, match="map"):
        JointModel(study_model_spec(3), iterations=20, burn_in=0).fit(study.long, study.surv)
