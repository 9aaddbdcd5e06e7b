import numpy as np
import pytest

from physprior.errors import InvalidArgument
from physprior.metrics import rel_l2
from physprior.sampler import MeasurementOp, SigmaSchedule
from physprior.tasks import (PhysicsPrior, forward_predict, infer_params, infer_partial_params,
                             inverse_state, measurement, ood_joint_reconstruct, task_spec,
                             vector_forward, vector_inverse)
from physprior.unified import generate_dataset, registry, strip_mask

FAST = SigmaSchedule(n_steps=24)


@pytest.fixture(scope="module")
def param_ds():
    return generate_dataset("parametric", 15, seed=2)


@pytest.fixture(scope="module")
def param_prior(param_ds):
    return PhysicsPrior.oracle(param_ds, schedule=FAST)


@pytest.fixture(scope="module")
def vector_ds():
    return generate_dataset("structural", 6, seed=3,
                            classes=["burgers_u", "burgers_v", "navier_stokes_u",
                                     "navier_stokes_v"])


def test_task_spec_fractions():
    cls = registry("parametric")[2]
    assert task_spec("forward", cls, 0.3).fractions == (1.0, 0.3, 0.0)
    assert task_spec("infer_params", cls, 0.3).fractions == (0.0, 0.3, 0.3)
    spec = task_spec("partial_params", cls, 0.3, ("nu", "ay"))
    assert spec.fractions[0] == pytest.approx(2 / 3)
    with pytest.raises(InvalidArgument):
        task_spec("partial_params", cls, 0.3, ("nu", "ax", "ay"))
    with pytest.raises(InvalidArgument):
        task_spec("partial_params", cls, 0.3, ("k",))
    with pytest.raises(InvalidArgument):
        task_spec("infer_params", registry("unified")[0], 1.0)
    with pytest.raises(InvalidArgument):
        task_spec("vector_forward_u", cls, 1.0)
    with pytest.raises(InvalidArgument):
        task_spec("forward", cls, 1.2)


def test_measurement_masks():
    cls = registry("parametric")[2]
    op = measurement(task_spec("forward", cls, 0.3), cls, (32, 32), seed=4)
    assert op.channels == (0, 1)
    assert op.masks[0].all()
    assert op.masks[1].sum() == 307
    assert not op.masks[2].any()
    op = measurement(task_spec("partial_params", cls, 0.3, ("nu", "ay")), cls, (32, 32), 4)
    expect = strip_mask((32, 32), 3, 0) | strip_mask((32, 32), 3, 2)
    np.testing.assert_array_equal(op.masks[0], expect)


def test_guidance_auto_selection(param_prior):
    cls = param_prior.cls(1)
    full = measurement(task_spec("forward", cls, 1.0), cls, (32, 32), 0)
    sparse = measurement(task_spec("forward", cls, 0.3), cls, (32, 32), 0)
    g = param_prior.guidance_for(full)
    assert (g.mode, g.zeta, g.jacobian) == ("fixed", 0.2, "exact_oracle")
    g = param_prior.guidance_for(sparse)
    assert (g.mode, g.zeta) == ("residual_normalized", 1.0)


def test_held_in_forward_and_inverse(param_ds, param_prior):
    s = param_ds.of_class(2)[4]
    cls = param_ds.cls(2)
    uT = forward_predict(param_prior, cls, s.phi, s.x.data[1], 1.0, seed=1)
    assert rel_l2(uT, s.x.data[2]).value < 1
    u0 = inverse_state(param_prior, cls, s.phi, s.x.data[2], 0.3, seed=1)
    assert rel_l2(u0, s.x.data[1]).value < 5


def test_held_in_parameter_recovery(param_ds, param_prior):
    s = param_ds.of_class(1)[2]
    cls = param_ds.cls(1)
    phi = infer_params(param_prior, cls, s.x.data[1], s.x.data[2], 1.0, seed=0)
    np.testing.assert_allclose(phi, s.phi, rtol=0.05)
    part = infer_partial_params(param_prior, cls, s.x.data[1], s.x.data[2], {"ax": s.phi[0]},
                                1.0, seed=0)
    assert set(part) == {"ay"}
    assert part["ay"] == pytest.approx(s.phi[1], rel=0.05)


def test_ensemble_shapes(param_ds, param_prior):
    s = param_ds.of_class(0)[0]
    cls = param_ds.cls(0)
    uT = forward_predict(param_prior, cls, s.phi, s.x.data[1], 0.3, seed=3, M=3)
    assert uT.shape == (3, 32, 32)
    phi = infer_params(param_prior, cls, s.x.data[1], s.x.data[2], 0.3, seed=3, M=2)
    assert phi.shape == (2, 1)


def test_tasks_deterministic(param_ds, param_prior):
    s = param_ds.of_class(2)[1]
    cls = param_ds.cls(2)
    a = forward_predict(param_prior, cls, s.phi, s.x.data[1], 0.3, seed=7)
    b = forward_predict(param_prior, cls, s.phi, s.x.data[1], 0.3, seed=7)
    assert a.tobytes() == b.tobytes()


def test_ood_joint_returns_both_states(param_ds, param_prior):
    s = param_ds.of_class(2)[0]
    cls = param_ds.cls(2)
    u0, uT = ood_joint_reconstruct(param_prior, cls, s.phi, s.x.data[1], s.x.data[2], 1.0, 0)
    assert rel_l2(u0, s.x.data[1]).value < 1 and rel_l2(uT, s.x.data[2]).value < 1


def test_scalar_tasks_reject_vector_classes(vector_ds):
    prior = PhysicsPrior.oracle(vector_ds, schedule=FAST)
    z = np.zeros((32, 32))
    with pytest.raises(InvalidArgument):
        forward_predict(prior, vector_ds.cls("burgers_u"), [], z, 1.0, 0)


def test_vector_tasks_held_in(vector_ds):
    prior = PhysicsPrior.oracle(vector_ds, schedule=FAST)
    cu, cv = vector_ds.cls("burgers_u"), vector_ds.cls("burgers_v")
    su, sv = vector_ds.of_class(cu.id)[2], vector_ds.of_class(cv.id)[2]
    uT, vT = vector_forward(prior, cu, cv, su.x.data[0], su.x.data[1], 1.0, seed=0)
    assert rel_l2(uT, su.x.data[2]).value < 1
    assert rel_l2(vT, sv.x.data[2]).value < 1
    u0 = vector_inverse(prior, cu, su.x.data[2], su.x.data[1], 1.0, seed=0)
    assert rel_l2(u0, su.x.data[0]).value < 1
    cn = vector_ds.cls("navier_stokes_v")
    sn = vector_ds.of_class(cn.id)[1]
    v0 = vector_inverse(prior, cn, sn.x.data[2], sn.x.data[0], 1.0, seed=0)
    assert rel_l2(v0, sn.x.data[1]).value < 1
    with pytest.raises(InvalidArgument):
        vector_inverse(prior, cn, sn.x.data[2], None, 1.0, 0)
