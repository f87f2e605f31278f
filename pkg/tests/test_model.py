import numpy as np
import pytest

from backupcbf import (BackupPolicy, ClassKappa, ConstraintFunction,
                       ControlPolytope, DimensionMismatchError,
                       DisturbanceBound, ParameterError, SystemModel,
                       eval_backup_closed_loop, eval_class_kappa,
                       eval_dynamics)


def test_double_integrator_dynamics_drift_only(di_scenario):
    out = eval_dynamics(di_scenario.model, np.array([0.0, 1.0]), np.array([0.0]))
    assert np.allclose(out, [1.0, 0.0])


def test_double_integrator_dynamics_pure_input(di_scenario):
    out = eval_dynamics(di_scenario.model, np.array([0.0, 0.0]), np.array([-1.0]))
    assert np.allclose(out, [0.0, -1.0])


def test_spacecraft_dynamics_pure_torque_at_rest(sc_scenario):
    out = eval_dynamics(sc_scenario.model, np.zeros(3), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(out, [1.0 / 12.0, 0.0, 0.0], atol=1e-15)


def test_dimension_mismatch_raises(di_scenario):
    with pytest.raises(DimensionMismatchError):
        eval_dynamics(di_scenario.model, np.zeros(3), np.array([0.0]))
    with pytest.raises(DimensionMismatchError):
        eval_dynamics(di_scenario.model, np.zeros(2), np.zeros(2))


def test_backup_closed_loop_double_integrator(di_scenario):
    out = eval_backup_closed_loop(di_scenario.model, di_scenario.policy,
                                  np.array([-1.0, 2.0]))
    assert np.allclose(out, [2.0, -1.0])


def test_backup_closed_loop_matches_dynamics_composition(di_scenario,
                                                         sc_scenario, rng):
    for scenario in (di_scenario, sc_scenario):
        n = scenario.model.state_dim
        for _ in range(100):
            x = rng.uniform(-1.5, 1.5, n)
            via_policy = eval_backup_closed_loop(scenario.model,
                                                 scenario.policy, x)
            direct = eval_dynamics(scenario.model, x,
                                   scenario.policy.control(x))
            assert np.array_equal(via_policy, direct)


def test_spacecraft_backup_is_pure_decay(sc_scenario, rng):
    # gyroscopic torque cancels algebraically: f_cl(w) = -k_b w
    for _ in range(100):
        w = rng.uniform(-2.0, 2.0, 3)
        out = eval_backup_closed_loop(sc_scenario.model, sc_scenario.policy, w)
        assert np.allclose(out, -w, atol=1e-12)
    at_rest = eval_backup_closed_loop(sc_scenario.model, sc_scenario.policy,
                                      np.zeros(3))
    assert np.allclose(at_rest, np.zeros(3))


def _central_jacobian(f, x, eps=1e-6):
    n = x.size
    out = np.empty((f(x).size, n))
    for i in range(n):
        step = np.zeros(n)
        step[i] = eps
        out[:, i] = (f(x + step) - f(x - step)) / (2 * eps)
    return out


def test_closed_loop_jacobian_matches_finite_differences(di_scenario,
                                                         sc_scenario, rng):
    for scenario in (di_scenario, sc_scenario):
        f_cl = lambda x: eval_backup_closed_loop(scenario.model,
                                                 scenario.policy, x)
        for _ in range(100):
            x = rng.uniform(-1.0, 1.0, scenario.model.state_dim)
            jac = scenario.policy.closed_loop_jacobian(x)
            fd = _central_jacobian(f_cl, x)
            assert np.allclose(jac, fd, rtol=1e-4, atol=1e-6)


def test_constraint_gradients_match_finite_differences(di_scenario,
                                                       sc_scenario, rng):
    functions = [di_scenario.h, *di_scenario.hb_list,
                 sc_scenario.h, *sc_scenario.hb_list]
    dims = [2, 2, 2, 3, 3]
    for fn, n in zip(functions, dims):
        for _ in range(30):
            x = rng.uniform(-1.0, 1.0, n)
            grad = np.asarray(fn.gradient(x))
            fd = np.empty(n)
            for i in range(n):
                step = np.zeros(n)
                step[i] = 1e-6
                fd[i] = (fn.value(x + step) - fn.value(x - step)) / 2e-6
            assert np.allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_class_kappa_values():
    assert eval_class_kappa(ClassKappa(2.0), 0.0) == 0.0
    assert eval_class_kappa(ClassKappa(2.0), 1.5) == 3.0
    assert eval_class_kappa(ClassKappa(0.5), -2.0) == -1.0


def test_class_kappa_strictly_increasing(rng):
    alpha = ClassKappa(0.7)
    s = np.sort(rng.uniform(-5, 5, 50))
    values = [alpha(v) for v in s]
    assert np.all(np.diff(values) > 0)


def test_class_kappa_validation():
    with pytest.raises(ParameterError):
        ClassKappa(0.0)
    with pytest.raises(ParameterError):
        ClassKappa(1.0, kind="cubic")


def test_control_polytope_validation_and_ops():
    with pytest.raises(ParameterError):
        ControlPolytope(lower=np.array([1.0]), upper=np.array([0.0]))
    box = ControlPolytope(lower=np.array([-1.0, 0.0]),
                          upper=np.array([1.0, 2.0]))
    assert box.dim == 2
    assert box.contains(np.array([0.5, 1.0]))
    assert not box.contains(np.array([1.5, 1.0]))
    assert np.allclose(box.clip(np.array([3.0, -1.0])), [1.0, 0.0])


def test_backup_control_stays_in_box_double_integrator(di_scenario, rng):
    for _ in range(100):
        x = np.array([rng.uniform(-5, 0), rng.uniform(-2, 2)])
        assert di_scenario.box.contains(di_scenario.policy.control(x))


def test_disturbance_bound_validation():
    assert DisturbanceBound(0.0).xi == 0.0
    with pytest.raises(ParameterError):
        DisturbanceBound(-0.1)


def test_model_validation():
    with pytest.raises(ParameterError):
        SystemModel(state_dim=0, control_dim=1, drift=lambda x: x,
                    input_matrix=lambda x: x, domain_speed_bound=1.0)
    with pytest.raises(ParameterError):
        BackupPolicy(control=lambda x: x, closed_loop_jacobian=lambda x: x,
                     lipschitz_cl=0.0)
    with pytest.raises(ParameterError):
        ConstraintFunction(value=lambda x: 0.0, gradient=lambda x: x,
                           lipschitz=0.0)


def test_domain_speed_bound_covers_samples(di_scenario, sc_scenario, rng):
    for scenario, sampler in (
            (di_scenario, lambda: np.array([rng.uniform(-5, 0),
                                            rng.uniform(-2, 2)])),
            (sc_scenario, lambda: _ball(rng))):
        for _ in range(200):
            x = sampler()
            speed = np.linalg.norm(eval_backup_closed_loop(
                scenario.model, scenario.policy, x))
            assert speed <= scenario.model.domain_speed_bound + 1e-12


def _ball(rng):
    raw = rng.standard_normal(3)
    return rng.uniform(0, 1) ** (1 / 3) * raw / np.linalg.norm(raw)
