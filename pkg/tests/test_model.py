"""System description and validation tests."""

import numpy as np
import pytest

from care_filter.model import (
    ConstraintSet,
    NoiseSpec,
    SystemModel,
    ValidationReport,
    validate,
)
from care_filter.projection import InfeasibleConstraintsError


def identity_model(m=2, n_d=1):
    return SystemModel.constant(
        A=np.eye(m),
        B=np.zeros((m, 1)),
        C=np.eye(m),
        G=np.eye(m)[:, :n_d],
        Q=np.eye(m),
        R=np.eye(m),
    )


class TestValidate:
    def test_identity_system_passes(self):
        model = identity_model()
        cons = ConstraintSet.unconstrained(attack_dim=1, state_dim=2)
        rep = validate(model, cons, horizon=20)
        assert rep.ok
        assert rep.issues == []
        assert str(rep) == "all checks passed"

    def test_zero_measurement_noise_is_flagged(self):
        model = identity_model()
        model = SystemModel.constant(
            A=np.eye(2), B=np.zeros((2, 1)), C=np.eye(2),
            G=np.eye(2)[:, :1], Q=np.eye(2), R=np.zeros((2, 2)),
        )
        rep = validate(model, ConstraintSet.unconstrained(1, 2), horizon=3)
        assert not rep.ok
        assert any("R" in msg and "not positive definite" in msg for msg in rep.issues)

    def test_full_rank_state_constraints_flagged(self):
        model = identity_model()
        cons = ConstraintSet.constant(
            state_matrix=np.eye(2), state_bound=np.ones(2), attack_dim=1,
        )
        rep = validate(model, cons, horizon=2)
        assert any("rank" in msg for msg in rep.issues)

    def test_indefinite_q_flagged_with_step(self):
        def Q(k):
            return np.diag([1.0, -1.0]) if k == 3 else np.eye(2)

        base = identity_model()
        model = SystemModel(2, 1, 1, 2, base.A, base.B, base.C, base.G, Q, base.R)
        rep = validate(model, ConstraintSet.unconstrained(1, 2), horizon=5)
        assert any("Q(3)" in msg for msg in rep.issues)

    def test_rank_deficient_cg_flagged(self):
        model = SystemModel.constant(
            A=np.eye(2), B=np.zeros((2, 1)), C=np.eye(2),
            G=np.zeros((2, 1)), Q=np.eye(2), R=np.eye(2),
        )
        rep = validate(model, ConstraintSet.unconstrained(1, 2), horizon=2)
        assert any("attack dimension" in msg for msg in rep.issues)

    def test_nondeterministic_provider_flagged(self):
        calls = iter(range(10**6))

        def A(k):
            return np.eye(2) * (1.0 + 1e-9 * next(calls))

        base = identity_model()
        model = SystemModel(2, 1, 1, 2, A, base.B, base.C, base.G, base.Q, base.R)
        rep = validate(model, ConstraintSet.unconstrained(1, 2), horizon=2)
        assert any("deterministic" in msg for msg in rep.issues)

    def test_shape_mismatch_flagged(self):
        base = identity_model()
        model = SystemModel(2, 1, 1, 2, base.A, lambda k: np.zeros((3, 1)),
                            base.C, base.G, base.Q, base.R)
        rep = validate(model, ConstraintSet.unconstrained(1, 2), horizon=1)
        assert any("B(0)" in msg and "shape" in msg for msg in rep.issues)

    def test_empty_feasible_set_flagged(self):
        cons = ConstraintSet(
            input_matrix=lambda k: np.array([[1.0], [-1.0]]),
            input_bound=lambda k: np.array([-1.0, -1.0]),
            state_matrix=lambda k: np.zeros((0, 2)),
            state_bound=lambda k: np.zeros(0),
        )
        rep = validate(identity_model(), cons, horizon=1)
        assert any("empty" in msg for msg in rep.issues)

    def test_bad_horizon_rejected(self):
        with pytest.raises(ValueError):
            validate(identity_model(), ConstraintSet.unconstrained(1, 2), horizon=0)


class TestConstraintSet:
    def test_constant_probes_feasibility(self):
        with pytest.raises(InfeasibleConstraintsError):
            ConstraintSet.constant(
                input_matrix=[[1.0], [-1.0]], input_bound=[-2.0, -2.0], state_dim=2,
            )

    def test_unconstrained_has_zero_rows(self):
        cons = ConstraintSet.unconstrained(attack_dim=2, state_dim=4)
        assert cons.input_matrix(0).shape == (0, 2)
        assert cons.state_matrix(7).shape == (0, 4)
        assert cons.input_bound(0).size == 0

    def test_constant_round_trip(self):
        cons = ConstraintSet.constant(
            input_matrix=[[1.0, 0.0], [-1.0, 0.0]], input_bound=[1.0, 1.0],
            state_matrix=[[0.0, 1.0]], state_bound=[5.0],
        )
        np.testing.assert_array_equal(cons.input_matrix(3), [[1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(cons.state_bound(11), [5.0])


class TestNoiseSpec:
    def test_bit_reproducible(self):
        model = identity_model()
        W1, V1 = NoiseSpec(seed=123, run_index=4).sample(model, 50)
        W2, V2 = NoiseSpec(seed=123, run_index=4).sample(model, 50)
        assert np.array_equal(W1, W2)
        assert np.array_equal(V1, V2)

    def test_run_index_changes_draws(self):
        model = identity_model()
        W1, _ = NoiseSpec(seed=123, run_index=0).sample(model, 50)
        W2, _ = NoiseSpec(seed=123, run_index=1).sample(model, 50)
        assert not np.allclose(W1, W2)

    def test_prefix_stability(self):
        model = identity_model()
        W_long, V_long = NoiseSpec(seed=7).sample(model, 80)
        W_short, V_short = NoiseSpec(seed=7).sample(model, 30)
        assert np.array_equal(W_long[:30], W_short)
        assert np.array_equal(V_long[:31], V_short)

    def test_first_measurement_row_zero(self):
        _, V = NoiseSpec(seed=9).sample(identity_model(), 10)
        assert np.array_equal(V[0], np.zeros(2))

    def test_covariance_matches_spec(self):
        q = np.diag([4.0, 0.25])
        model = SystemModel.constant(
            A=np.eye(2), B=np.zeros((2, 1)), C=np.eye(2),
            G=np.eye(2)[:, :1], Q=q, R=np.eye(2),
        )
        W, _ = NoiseSpec(seed=31).sample(model, 20000)
        emp = W.T @ W / W.shape[0]
        assert np.allclose(emp, q, atol=0.15)

    def test_singular_q_uses_clamped_factor(self):
        q = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank one
        model = SystemModel.constant(
            A=np.eye(2), B=np.zeros((2, 1)), C=np.eye(2),
            G=np.eye(2)[:, :1], Q=q, R=np.eye(2),
        )
        W, _ = NoiseSpec(seed=5).sample(model, 4000)
        assert np.allclose(W[:, 0], W[:, 1], atol=1e-10)
        assert np.isfinite(W).all()


def test_report_str_lists_issues():
    rep = ValidationReport()
    rep.add("first problem")
    rep.add("second problem")
    assert "first problem" in str(rep)
    assert not rep.ok
