import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wstate.errors import (
    DimensionMismatch,
    NotUnitary,
    SchemaError,
    UnknownLabel,
    ValidationError,
)
from wstate.tensor import (
    PermutationUnitary,
    Register,
    RegisterLayout,
    asarray,
    combine_digits,
    dephase,
    eigenbasis,
    embed_operator,
    embed_permutation,
    hermitian_skew_split,
    hermiticity_residual,
    kron_all,
    matrix_from_json,
    matrix_to_json,
    normality_residual,
    partial_trace,
    register_digits,
    spectral_decompose,
    spectral_norm,
    unitarity_residual,
    vector_from_json,
    vector_to_json,
)

from conftest import rand_density, rand_hermitian, rand_state, rand_unitary


class TestRegisters:
    def test_layout_basics(self):
        lay = RegisterLayout.of(
            Register("A", 2, role="E", source="ancilla"),
            Register("B", 3, role="S"),
            Register("C", 4, role="G"),
        )
        assert lay.dims == (2, 3, 4)
        assert lay.total_dim == 24
        assert lay.labels == ("A", "B", "C")
        assert lay.with_role("S") == ("B",)
        assert lay.dim_of(("A", "C")) == 8
        assert lay.sub(("B",)).total_dim == 3

    def test_qubits_property(self):
        assert Register("A", 8).qubits == 3
        assert Register("A", 3).qubits is None

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValidationError):
            RegisterLayout.of(Register("A", 2), Register("A", 2))

    def test_unknown_role_rejected(self):
        with pytest.raises(UnknownLabel):
            Register("A", 2, role="Q")

    def test_unknown_label_lookup(self):
        lay = RegisterLayout.of(Register("A", 2))
        with pytest.raises(UnknownLabel):
            lay.index("B")


class TestPartialTrace:
    def test_trace_preserved(self, rng):
        lay = RegisterLayout.of(Register("A", 2), Register("B", 3))
        m = rand_density(rng, 6)
        for keep in (("A",), ("B",), ("A", "B")):
            red = partial_trace(m, lay, keep)
            assert abs(np.trace(red) - np.trace(m)) < 1e-12

    def test_product_state_factors(self, rng):
        a = rand_density(rng, 2)
        b = rand_density(rng, 3)
        lay = RegisterLayout.of(Register("A", 2), Register("B", 3))
        joint = np.kron(a, b)
        assert np.abs(partial_trace(joint, lay, ("A",)) - a).max() < 1e-12
        assert np.abs(partial_trace(joint, lay, ("B",)) - b).max() < 1e-12

    def test_kept_registers_stay_in_layout_order(self, rng):
        lay = RegisterLayout.of(Register("A", 2), Register("B", 2))
        a, b = rand_density(rng, 2), rand_density(rng, 2)
        out = partial_trace(np.kron(a, b), lay, ("B", "A"))
        assert np.abs(out - np.kron(a, b)).max() < 1e-12


class TestResiduals:
    def test_dephase(self, rng):
        m = rand_density(rng, 4)
        d = dephase(m)
        assert np.abs(d - np.diag(np.diag(m))).max() == 0
        assert np.abs(dephase(d) - d).max() == 0

    def test_split_reconstructs(self, rng):
        m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h, s = hermitian_skew_split(m)
        assert hermiticity_residual(h) < 1e-12
        assert np.abs(s + s.conj().T).max() < 1e-12
        assert np.abs(h + s - m).max() < 1e-12

    def test_normality(self, rng):
        assert normality_residual(rand_hermitian(rng, 4)) < 1e-12
        nilp = np.zeros((2, 2), dtype=complex)
        nilp[0, 1] = 1.0
        assert normality_residual(nilp) == 1.0

    def test_spectral_norm(self, rng):
        u = rand_unitary(rng, 5)
        assert abs(spectral_norm(3.0 * u) - 3.0) < 1e-12

    def test_unitarity(self, rng):
        assert unitarity_residual(rand_unitary(rng, 4)) < 1e-12
        assert unitarity_residual(2 * np.eye(2)) > 1.0


class TestEigenbasis:
    def test_hermitian_roundtrip(self, rng):
        m = rand_hermitian(rng, 5)
        vals, vecs, labels = eigenbasis(m)
        recon = vecs @ np.diag(vals[labels]) @ vecs.conj().T
        assert np.abs(recon - m).max() < 1e-9

    def test_degenerate_eigenvalues_merge(self):
        m = np.diag([1.0, 1.0 + 1e-12, 2.0]).astype(complex)
        vals, _, labels = eigenbasis(m)
        assert len(vals) == 2
        assert labels[0] == labels[1]

    def test_normal_complex_spectrum(self, rng):
        u = rand_unitary(rng, 4)
        m = u @ np.diag([1j, -1j, 1.0, -1.0]) @ u.conj().T
        vals, vecs, labels = eigenbasis(m)
        assert np.abs(np.sort_complex(vals) - np.sort_complex(np.array([-1, -1j, 1j, 1]))).max() < 1e-9

    def test_spectral_decompose_projectors(self, rng):
        m = rand_hermitian(rng, 4)
        pairs = spectral_decompose(m)
        acc = sum(val * proj for val, proj in pairs)
        assert np.abs(acc - m).max() < 1e-9
        for _, p in pairs:
            assert np.abs(p @ p - p).max() < 1e-9


class TestPermutationUnitary:
    def test_vector_and_density_match_dense(self, rng):
        perm = np.array([2, 0, 3, 1])
        u = PermutationUnitary(perm)
        psi = rand_state(rng, 4)
        rho = rand_density(rng, 4)
        ud = u.dense()
        assert np.abs(u.apply_vector(psi) - ud @ psi).max() < 1e-12
        assert np.abs(u.apply_density(rho) - ud @ rho @ ud.conj().T).max() < 1e-12

    def test_not_a_permutation(self):
        with pytest.raises(NotUnitary):
            PermutationUnitary(np.array([0, 0, 1]))

    @given(st.permutations(list(range(6))))
    def test_inverse_composition(self, perm):
        u = PermutationUnitary(np.array(perm))
        assert np.array_equal((u @ u.inverse()).perm, np.arange(6))

    def test_embed_permutation(self, rng):
        lay = RegisterLayout.of(Register("A", 2), Register("B", 2))
        flip = PermutationUnitary(np.array([1, 0]))
        big = embed_permutation(flip, ("B",), lay)
        psi = rand_state(rng, 4)
        x = np.kron(np.eye(2), flip.dense())
        assert np.abs(big.apply_vector(psi) - x @ psi).max() < 1e-12

    def test_register_digits_roundtrip(self):
        lay = RegisterLayout.of(Register("A", 2), Register("B", 3), Register("C", 2))
        digits = register_digits(lay)
        back = combine_digits(digits, lay.dims)
        assert np.array_equal(back, np.arange(12))

    def test_embed_operator(self, rng):
        lay = RegisterLayout.of(Register("A", 2), Register("B", 3))
        op = rand_hermitian(rng, 3)
        big = embed_operator(op, ("B",), lay)
        assert np.abs(big - np.kron(np.eye(2), op)).max() < 1e-12


class TestArrayJson:
    def test_matrix_roundtrip(self, rng):
        m = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        back = matrix_from_json(matrix_to_json(m))
        assert np.array_equal(back, m)

    def test_vector_roundtrip(self, rng):
        v = rand_state(rng, 5)
        assert np.array_equal(vector_from_json(vector_to_json(v)), v)

    def test_nan_rejected(self):
        with pytest.raises(SchemaError) as exc:
            vector_from_json({"dims": [1], "data": [[float("nan"), 0.0]]})
        assert "data[0]" in str(exc.value)

    def test_wrong_count(self):
        with pytest.raises(SchemaError):
            matrix_from_json({"dims": [2, 2], "data": [[0.0, 0.0]]})

    def test_non_numeric_entry_path(self):
        with pytest.raises(SchemaError) as exc:
            matrix_from_json({"dims": [1, 1], "data": [["a", 0.0]]}, "obs")
        assert str(exc.value).startswith("obs")

    def test_asarray_square_check(self):
        with pytest.raises(DimensionMismatch):
            asarray(np.zeros((2, 3)), square=True)

    def test_kron_all(self, rng):
        a, b, c = (rand_density(rng, 2) for _ in range(3))
        assert np.abs(kron_all([a, b, c]) - np.kron(np.kron(a, b), c)).max() < 1e-12
