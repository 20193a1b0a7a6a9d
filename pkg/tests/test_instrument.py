import numpy as np
import pytest

from wstate.errors import (
    DimensionMismatch,
    InvalidState,
    MissingDecomposition,
    NotUnitary,
    ValidationError,
)
from wstate.instrument import (
    MeasurementOperator,
    QuantumInstrument,
    QuantumState,
    apply_exact,
    as_normal_instrument,
    branches,
    concatenate,
    expectation,
    identity_instrument,
    random_density,
)
from wstate.subroutines import (
    build_gqt_instrument,
    build_qhp_instrument,
    build_qsp_instrument,
    build_teleport_instrument,
    qhp,
)
from wstate.tensor import Register, RegisterLayout

from conftest import rand_density, rand_hermitian, rand_state, rand_unitary


class TestQuantumState:
    def test_pure_requires_normalization(self):
        with pytest.raises(InvalidState):
            QuantumState.pure(np.array([1.0, 1.0]))

    def test_density_requires_unit_trace(self):
        with pytest.raises(InvalidState):
            QuantumState.from_density(np.eye(2))

    def test_density_requires_hermitian(self):
        m = np.array([[0.5, 1.0], [0.0, 0.5]])
        with pytest.raises(InvalidState):
            QuantumState.from_density(m)

    def test_matrix_view(self, rng):
        v = rand_state(rng, 3)
        st = QuantumState.pure(v)
        assert np.abs(st.matrix - np.outer(v, v.conj())).max() < 1e-12

    def test_random_density_is_state(self, rng):
        rho = random_density(4, rng)
        assert abs(np.trace(rho) - 1) < 1e-12
        assert np.linalg.eigvalsh(rho).min() > -1e-12


class TestMeasurementClassification:
    def test_hermitian_detected(self, rng):
        m = MeasurementOperator.of(rand_hermitian(rng, 3))
        assert m.kind == "hermitian"
        assert m.normal_parts() == ((1.0, m.matrix),)

    def test_skew_hermitian_is_normal(self):
        m = MeasurementOperator.of(np.array([[0.0, -2.0], [2.0, 0.0]]))
        assert m.kind == "normal"

    def test_unitary_is_normal(self, rng):
        u = rand_unitary(rng, 4)
        # generic unitaries are neither hermitian nor skew-hermitian
        assert MeasurementOperator.of(u).kind == "normal"

    def test_nonnormal_gets_default_split(self):
        m = np.array([[1.0, 1.0], [0.0, 1.0]])
        op = MeasurementOperator.of(m)
        assert op.kind == "nonnormal"
        parts = op.normal_parts()
        assert len(parts) == 2
        acc = sum(c * p for c, p in parts)
        assert np.abs(acc - m).max() < 1e-12

    def test_kind_mislabel_rejected(self, rng):
        herm = rand_hermitian(rng, 2)
        with pytest.raises(ValidationError):
            MeasurementOperator(herm, "nonnormal", ((1.0, herm),))
        upper = np.array([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ValidationError):
            MeasurementOperator(upper, "hermitian")
        with pytest.raises(ValidationError):
            MeasurementOperator(upper, "normal")

    def test_nonnormal_without_decomposition_cannot_apply(self):
        m = np.array([[1.0, 1.0], [0.0, 1.0]])
        op = MeasurementOperator(m, "nonnormal")
        with pytest.raises(MissingDecomposition):
            op.normal_parts()

    def test_decomposition_must_reconstruct(self):
        m = np.array([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ValidationError):
            MeasurementOperator(m, "nonnormal", ((1.0, np.eye(2)),))

    def test_decomposition_parts_must_be_normal(self):
        from wstate.errors import NotNormal

        m = np.array([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(NotNormal):
            MeasurementOperator(m, "nonnormal", ((1.0, m),))

    def test_large_dim_certificate_paths(self, rng):
        dim = MeasurementOperator.LARGE_DIM + 1
        diag = np.diag(rng.normal(size=dim)).astype(complex)
        assert MeasurementOperator.of(diag).kind == "hermitian"
        assert MeasurementOperator.of(1j * diag).kind == "normal"
        # no cheap certificate above LARGE_DIM: falls back to a split
        generic = diag.copy()
        generic[0, 1] = 1.0
        op = MeasurementOperator.of(generic)
        assert op.kind == "nonnormal"
        acc = sum(c * p for c, p in op.normal_parts())
        assert np.abs(acc - generic).max() < 1e-12


class TestInstrumentValidation:
    def test_all_registers_need_roles(self):
        lay = RegisterLayout.of(Register("S", 2))
        with pytest.raises(ValidationError):
            QuantumInstrument(lay, None, np.eye(2), MeasurementOperator.of(np.eye(1)))

    def test_measurement_dim_must_match_e(self):
        lay = RegisterLayout.of(Register("S", 2, role="S"), Register("E", 2, role="E"))
        with pytest.raises(DimensionMismatch):
            QuantumInstrument(
                lay, None, np.eye(4), MeasurementOperator.of(np.eye(3))
            )

    def test_unitary_must_be_unitary(self):
        lay = RegisterLayout.of(Register("S", 2, role="S"), Register("E", 2, role="E"))
        with pytest.raises(NotUnitary):
            QuantumInstrument(
                lay, None, 2 * np.eye(4), MeasurementOperator.of(np.eye(2))
            )

    def test_ancilla_register_needs_state(self):
        lay = RegisterLayout.of(
            Register("A", 2, role="E", source="ancilla"),
            Register("S", 2, role="S"),
        )
        with pytest.raises(ValidationError):
            QuantumInstrument(lay, None, np.eye(4), MeasurementOperator.of(np.eye(2)))


class TestApplyExact:
    def test_identity_instrument_returns_input(self, rng):
        inst = identity_instrument(3)
        rho = rand_density(rng, 3)
        tau = apply_exact(inst, [QuantumState.from_density(rho)])
        assert np.abs(tau.matrix - rho).max() < 1e-12

    def test_pure_and_density_paths_agree(self, rng):
        inst = build_qhp_instrument(1)
        a, b = rand_state(rng, 2), rand_state(rng, 2)
        tau_pure = apply_exact(inst, [QuantumState.pure(a), QuantumState.pure(b)])
        tau_dens = apply_exact(
            inst,
            [
                QuantumState.from_density(np.outer(a, a.conj())),
                QuantumState.from_density(np.outer(b, b.conj())),
            ],
        )
        assert np.abs(tau_pure.matrix - tau_dens.matrix).max() < 1e-10

    def test_linearity_over_decomposition(self, rng):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        inst = build_teleport_instrument(1, [(np.eye(2), x)])
        assert inst.measurement.kind == "nonnormal"
        rho = rand_density(rng, 2)
        sigma = rand_state(rng, 2)
        tau = apply_exact(inst, [QuantumState.from_density(rho), QuantumState.pure(sigma)])
        parts = inst.measurement.normal_parts()
        acc = np.zeros_like(tau.matrix)
        for c, n in parts:
            single = QuantumInstrument(
                inst.layout,
                ancilla=inst.ancilla,
                unitary=inst.unitary,
                measurement=MeasurementOperator.of(n) if c else None,
            )
            acc += c * apply_exact(
                single, [QuantumState.from_density(rho), QuantumState.pure(sigma)]
            ).matrix
        assert np.abs(acc - tau.matrix).max() < 1e-10

    def test_wrong_input_count(self, rng):
        inst = build_qhp_instrument(1)
        with pytest.raises(ValidationError):
            apply_exact(inst, [QuantumState.pure(rand_state(rng, 2))])

    def test_wrong_input_dim(self, rng):
        inst = build_qhp_instrument(1)
        with pytest.raises(DimensionMismatch):
            apply_exact(
                inst,
                [QuantumState.pure(rand_state(rng, 4)), QuantumState.pure(rand_state(rng, 4))],
            )


class TestBranches:
    def test_branches_sum_to_weighted_state(self, rng):
        inst = build_gqt_instrument(1)
        sig, rho = rand_density(rng, 2), rand_density(rng, 2)
        inputs = [QuantumState.from_density(sig), QuantumState.from_density(rho)]
        tau = apply_exact(inst, inputs)
        out = branches(inst, inputs)
        acc = sum(
            br.eigenvalue * br.probability * br.conditional_state.matrix
            for br in out
            if br.conditional_state is not None
        )
        assert np.abs(acc - tau.matrix).max() < 1e-10

    def test_branch_probabilities_sum_to_one(self, rng):
        inst = build_qhp_instrument(1)
        inputs = [
            QuantumState.from_density(rand_density(rng, 2)),
            QuantumState.from_density(rand_density(rng, 2)),
        ]
        out = branches(inst, inputs)
        assert abs(sum(br.probability for br in out) - 1.0) < 1e-10


class TestEmulation:
    def test_as_normal_instrument_same_weighted_state(self, rng):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        inst = build_teleport_instrument(1, [(np.eye(2), x), (x, np.eye(2))])
        merged = as_normal_instrument(inst)
        assert merged.measurement.kind in ("hermitian", "normal")
        inputs = [
            QuantumState.from_density(rand_density(rng, 2)),
            QuantumState.pure(rand_state(rng, 2)),
        ]
        t1 = apply_exact(inst, inputs)
        t2 = apply_exact(merged, inputs)
        assert np.abs(t1.matrix - t2.matrix).max() < 1e-10

    def test_normal_instrument_passes_through(self):
        inst = build_qhp_instrument(1)
        assert as_normal_instrument(inst) is inst


class TestConcatenate:
    def test_two_qhp_stages_square_twice(self, rng):
        # (a ⊙ b) ⊙ c with the first stage's output feeding stage two
        inst = build_qhp_instrument(1)
        chained = concatenate(inst, inst)
        a, b, c = (rand_density(rng, 2) for _ in range(3))
        inputs = [QuantumState.from_density(s) for s in (a, b)]
        fresh = [QuantumState.from_density(c)]
        tau = chained.apply_flattened(inputs, fresh)
        assert np.abs(tau.matrix - qhp(qhp(a, b), c)).max() < 1e-10

    def test_staged_equals_flattened(self, rng):
        inst = build_qhp_instrument(1)
        chained = concatenate(inst, inst)
        states = [rand_density(rng, 2) for _ in range(3)]
        inputs = [QuantumState.from_density(s) for s in states[:2]]
        fresh = [QuantumState.from_density(states[2])]
        staged = chained.apply_staged(inputs, fresh)
        flat = chained.apply_flattened(inputs, fresh)
        assert np.abs(staged.matrix - flat.matrix).max() < 1e-10

    def test_expectation_matches_composition(self, rng):
        inst = build_qhp_instrument(1)
        chained = concatenate(inst, inst)
        states = [rand_density(rng, 2) for _ in range(3)]
        obs = rand_hermitian(rng, 2)
        tau = chained.apply_flattened(
            [QuantumState.from_density(s) for s in states[:2]],
            [QuantumState.from_density(states[2])],
        )
        direct = np.trace(qhp(qhp(states[0], states[1]), states[2]) @ obs)
        assert abs(expectation(tau, obs) - direct) < 1e-10
