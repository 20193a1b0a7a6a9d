"""Quantum instruments with classical reweighting.

An instrument is a triple (ancilla state sigma, unitary U, measurement
operator M) over an ordered register layout whose registers carry roles:
S registers survive as the weighted output, E registers are measured by M,
G registers are traced out. Applying the instrument to an input produces the
weighted state

    tau = Tr_EG( U (sigma (x) rho_in) U^dag  (I_S (x) M_E (x) I_G) )

which in general is neither Hermitian, positive, nor normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidState,
    InvalidDistribution,
    MissingDecomposition,
    NotNormal,
    NotUnitary,
    ValidationError,
)
from .tensor import (
    NORMALITY_TOL,
    PermutationUnitary,
    Register,
    RegisterLayout,
    asarray,
    eigenbasis,
    embed_operator,
    embed_permutation,
    hermiticity_residual,
    normality_residual,
    unitarity_residual,
)

STATE_TOL = 1e-10
ZERO_BRANCH_TOL = 1e-12
PROBABILITY_TOL = 1e-9


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class QuantumState:
    """A physical state: pure vector fast path or a density matrix."""

    layout: RegisterLayout
    vector: np.ndarray | None = None
    density: np.ndarray | None = None

    def __post_init__(self):
        if (self.vector is None) == (self.density is None):
            raise ValidationError("state needs exactly one of vector or density")
        d = self.layout.total_dim
        if self.vector is not None:
            v = asarray(self.vector)
            if v.shape != (d,):
                raise DimensionMismatch(f"vector shape {v.shape} vs layout dim {d}")
            nrm = float(np.linalg.norm(v))
            if abs(nrm - 1.0) > STATE_TOL:
                raise InvalidState(f"pure state norm {nrm} is not 1 within {STATE_TOL}")
            object.__setattr__(self, "vector", v)
        else:
            m = asarray(self.density, square=True)
            if m.shape != (d, d):
                raise DimensionMismatch(f"density shape {m.shape} vs layout dim {d}")
            if hermiticity_residual(m) > STATE_TOL:
                raise InvalidState("density matrix is not Hermitian within tolerance")
            tr = float(np.trace(m).real)
            if abs(tr - 1.0) > STATE_TOL:
                raise InvalidState(f"density trace {tr} is not 1 within {STATE_TOL}")
            if float(np.linalg.eigvalsh((m + m.conj().T) / 2).min()) < -STATE_TOL:
                raise InvalidState("density matrix has a negative eigenvalue")
            object.__setattr__(self, "density", m)

    @staticmethod
    def pure(vec, layout: RegisterLayout | None = None, label: str = "R") -> "QuantumState":
        v = asarray(vec)
        if layout is None:
            layout = RegisterLayout.of(Register(label, v.shape[0]))
        return QuantumState(layout, vector=v)

    @staticmethod
    def from_density(mat, layout: RegisterLayout | None = None, label: str = "R") -> "QuantumState":
        m = asarray(mat, square=True)
        if layout is None:
            layout = RegisterLayout.of(Register(label, m.shape[0]))
        return QuantumState(layout, density=m)

    @property
    def is_pure(self) -> bool:
        return self.vector is not None

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    @property
    def matrix(self) -> np.ndarray:
        if self.vector is not None:
            return np.outer(self.vector, self.vector.conj())
        return self.density


@dataclass(frozen=True)
class WeightedState:
    """Reweighted instrument output; any finite complex square matrix."""

    matrix: np.ndarray
    layout: RegisterLayout

    def __post_init__(self):
        m = asarray(self.matrix, square=True)
        if m.shape[0] != self.layout.total_dim:
            raise DimensionMismatch(
                f"matrix dim {m.shape[0]} vs layout total {self.layout.total_dim}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


def expectation(tau, obs) -> complex:
    """Tr(tau O). Accepts a WeightedState, QuantumState, or bare matrix."""
    m = tau.matrix if hasattr(tau, "matrix") else asarray(tau, square=True)
    o = asarray(obs, square=True)
    if o.shape != m.shape:
        raise DimensionMismatch(f"observable shape {o.shape} vs state shape {m.shape}")
    return complex(np.einsum("ij,ji->", m, o))


def random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Full-rank random density matrix (normalized Wishart)."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = a @ a.conj().T
    return m / np.trace(m).real


def haar_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# measurement operators


@dataclass(frozen=True)
class MeasurementOperator:
    """Measurement operator M with its normality class.

    kind is one of hermitian / normal / nonnormal. A non-normal operator
    carries a decomposition M = sum_k c_k N_k into normal parts, used both for
    exact linear evaluation and for single-instrument emulation.
    """

    matrix: np.ndarray
    kind: str
    decomposition: tuple[tuple[complex, np.ndarray], ...] | None = None

    # above this dimension the O(d^3) normality product is skipped in favor
    # of the O(d^2) Hermitian / skew-Hermitian certificates; an operator that
    # is normal in a non-obvious way is then handled through its
    # decomposition, which is exact regardless of the label
    LARGE_DIM = 512

    @staticmethod
    def _normal_certificate(m: np.ndarray) -> bool | None:
        """True if (skew-)Hermitian (hence normal); None if undecided."""
        # contiguous copy of the adjoint: elementwise passes against a
        # transposed view are several times slower at large dimension
        adj = np.ascontiguousarray(m.T).conj() if m.shape[0] > 256 else m.conj().T
        if float(np.max(np.abs(m - adj))) <= NORMALITY_TOL:
            return True
        if float(np.max(np.abs(m + adj))) <= NORMALITY_TOL:
            return True
        return None

    def __post_init__(self):
        m = asarray(self.matrix, square=True)
        object.__setattr__(self, "matrix", m)
        large = m.shape[0] > self.LARGE_DIM
        if self.kind == "hermitian":
            if hermiticity_residual(m) > NORMALITY_TOL:
                raise ValidationError("kind 'hermitian' but the matrix is not Hermitian")
        elif self.kind == "normal":
            if self._normal_certificate(m) is None and (
                large or normality_residual(m) > NORMALITY_TOL
            ):
                raise ValidationError("kind 'normal' but the matrix is not normal")
        elif self.kind == "nonnormal":
            if not large and normality_residual(m) <= NORMALITY_TOL:
                raise ValidationError("kind 'nonnormal' but the matrix is normal")
        else:
            raise ValidationError(f"unknown measurement kind {self.kind!r}")
        if self.decomposition is not None:
            parts = tuple((complex(c), asarray(n, square=True)) for c, n in self.decomposition)
            if not parts:
                raise ValidationError("empty decomposition")
            acc = np.zeros_like(m)
            for c, n in parts:
                if n.shape != m.shape:
                    raise DimensionMismatch("decomposition part has wrong shape")
                if self._normal_certificate(n) is None:
                    res = normality_residual(n)
                    if res > NORMALITY_TOL:
                        raise NotNormal(res, NORMALITY_TOL)
                acc = acc + c * n
            if float(np.max(np.abs(acc - m))) > NORMALITY_TOL:
                raise ValidationError("decomposition does not reconstruct the matrix")
            object.__setattr__(self, "decomposition", parts)

    @staticmethod
    def of(matrix, decomposition=None) -> "MeasurementOperator":
        """Classify and wrap. Non-normal operators without an explicit
        decomposition get the Hermitian/skew split M = (1/2)(M+M^dag) +
        (1/2)(M-M^dag), both parts normal by construction."""
        m = asarray(matrix, square=True)
        adj = np.ascontiguousarray(m.T).conj() if m.shape[0] > 256 else m.conj().T
        skew = m - adj
        if float(np.max(np.abs(skew))) <= NORMALITY_TOL:
            return MeasurementOperator(m, "hermitian", decomposition)
        herm = m + adj
        if float(np.max(np.abs(herm))) <= NORMALITY_TOL or (
            m.shape[0] <= MeasurementOperator.LARGE_DIM
            and normality_residual(m) <= NORMALITY_TOL
        ):
            return MeasurementOperator(m, "normal", decomposition)
        if decomposition is None:
            decomposition = ((0.5, herm), (0.5, skew))
        return MeasurementOperator(m, "nonnormal", decomposition)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def normal_parts(self) -> tuple[tuple[complex, np.ndarray], ...]:
        """(coefficient, normal operator) terms summing to M."""
        if self.kind != "nonnormal":
            return ((1.0 + 0.0j, self.matrix),)
        if self.decomposition is None:
            raise MissingDecomposition(
                "non-normal measurement requires a decomposition into normal parts"
            )
        return self.decomposition


# ---------------------------------------------------------------------------
# instruments


@dataclass(frozen=True)
class QuantumInstrument:
    """(ancilla, U, M) over a role-annotated register layout.

    The ancilla state occupies the source='ancilla' registers (a dim-1 layout
    is represented by ancilla=None); callers supply the source='input'
    registers at application time. M acts on the E registers in layout order.
    """

    layout: RegisterLayout
    ancilla: QuantumState | None
    unitary: np.ndarray | PermutationUnitary
    measurement: MeasurementOperator

    def __post_init__(self):
        for r in self.layout.registers:
            if r.role is None:
                raise ValidationError(f"register {r.label!r} has no role")
        anc = self.ancilla_labels
        if self.ancilla is None:
            if anc:
                raise ValidationError(f"ancilla registers {anc} but no ancilla state")
        else:
            sub = self.layout.sub(anc)
            if self.ancilla.layout.dims != sub.dims:
                raise DimensionMismatch(
                    f"ancilla dims {self.ancilla.layout.dims} vs registers {sub.dims}"
                )
        d = self.layout.total_dim
        if isinstance(self.unitary, PermutationUnitary):
            if self.unitary.dim != d:
                raise DimensionMismatch(f"unitary dim {self.unitary.dim} vs layout {d}")
        else:
            u = asarray(self.unitary, square=True)
            if u.shape != (d, d):
                raise DimensionMismatch(f"unitary shape {u.shape} vs layout dim {d}")
            res = unitarity_residual(u)
            if res > NORMALITY_TOL:
                raise NotUnitary(f"U^dag U deviates from identity by {res:.3e}")
            object.__setattr__(self, "unitary", u)
        de = self.layout.dim_of(self.e_labels)
        if self.measurement.dim != de:
            raise DimensionMismatch(
                f"measurement dim {self.measurement.dim} vs E-register dim {de}"
            )

    @property
    def ancilla_labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.layout.registers if r.source == "ancilla")

    @property
    def input_labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.layout.registers if r.source == "input")

    @property
    def input_layout(self) -> RegisterLayout:
        return self.layout.sub(self.input_labels)

    @property
    def s_labels(self) -> tuple[str, ...]:
        return self.layout.with_role("S")

    @property
    def e_labels(self) -> tuple[str, ...]:
        return self.layout.with_role("E")

    @property
    def g_labels(self) -> tuple[str, ...]:
        return self.layout.with_role("G")

    @property
    def output_layout(self) -> RegisterLayout:
        return self.layout.sub(self.s_labels)

    @property
    def input_dim(self) -> int:
        return self.layout.dim_of(self.input_labels)

    def unitary_dense(self) -> np.ndarray:
        u = self.unitary
        return u.dense() if isinstance(u, PermutationUnitary) else u


def identity_instrument(dim: int, label: str = "S") -> QuantumInstrument:
    """Pass-through: one S register, trivial measurement, no ancilla."""
    layout = RegisterLayout.of(Register(label, dim, role="S"))
    return QuantumInstrument(
        layout,
        ancilla=None,
        unitary=PermutationUnitary.identity(dim),
        measurement=MeasurementOperator.of(np.ones((1, 1))),
    )


# ---------------------------------------------------------------------------
# joint-state assembly and evolution


def _as_piece(x):
    """Normalize an input piece to ('vec', v) or ('mat', m)."""
    if isinstance(x, QuantumState):
        return ("vec", x.vector) if x.is_pure else ("mat", x.density)
    if isinstance(x, WeightedState):
        return ("mat", x.matrix)
    a = asarray(x)
    if a.ndim == 1:
        return ("vec", a)
    if a.ndim == 2:
        return ("mat", a)
    raise ValidationError(f"cannot interpret input with ndim {a.ndim}")


def _kron_pieces(pieces):
    """Kron a list of ('vec'|'mat', array) pieces; vectors stay vectors only
    if every piece is a vector."""
    if all(k == "vec" for k, _ in pieces):
        out = pieces[0][1]
        for _, v in pieces[1:]:
            out = np.kron(out, v)
        return "vec", out
    out = None
    for k, a in pieces:
        m = np.outer(a, a.conj()) if k == "vec" else a
        out = m if out is None else np.kron(out, m)
    return "mat", out


def assemble_product(pieces, layout: RegisterLayout):
    """Arrange pieces onto register positions.

    pieces: list of ((kind, array), positions) where positions index
    layout.registers; positions must partition the layout. Returns
    ('vec'|'mat', array) in layout register order.
    """
    dims = layout.dims
    k = len(dims)
    order: list[int] = []
    for _, pos in pieces:
        order.extend(pos)
    if sorted(order) != list(range(k)):
        raise ValidationError("piece positions do not partition the layout")
    kind, flat = _kron_pieces([p for p, _ in pieces])
    if order == list(range(k)):
        return kind, flat
    axis_dims = [dims[p] for p in order]
    inv = [order.index(r) for r in range(k)]
    if kind == "vec":
        return kind, flat.reshape(axis_dims).transpose(inv).reshape(-1)
    t = flat.reshape(axis_dims + axis_dims)
    t = t.transpose(inv + [k + p for p in inv])
    d = layout.total_dim
    return kind, t.reshape(d, d)


def _joint_initial(inst: QuantumInstrument, inputs):
    """Full-layout initial state from the ancilla and caller inputs."""
    if isinstance(inputs, (QuantumState, WeightedState, np.ndarray)):
        inputs = [inputs]
    pieces = [_as_piece(x) for x in inputs]
    kind_in, flat_in = _kron_pieces(pieces)
    d_in = inst.input_dim
    got = flat_in.shape[0]
    if got != d_in:
        raise DimensionMismatch(f"input dim {got} vs instrument input dim {d_in}")
    inp_pos = [inst.layout.index(l) for l in inst.input_labels]
    parts = [((kind_in, flat_in), inp_pos)]
    if inst.ancilla is not None:
        anc_pos = [inst.layout.index(l) for l in inst.ancilla_labels]
        anc_kind = "vec" if inst.ancilla.is_pure else "mat"
        anc_arr = inst.ancilla.vector if inst.ancilla.is_pure else inst.ancilla.density
        parts.insert(0, ((anc_kind, anc_arr), anc_pos))
    return assemble_product(parts, inst.layout)


def _role_positions(inst: QuantumInstrument):
    lay = inst.layout
    s = [lay.index(l) for l in inst.s_labels]
    e = [lay.index(l) for l in inst.e_labels]
    g = [lay.index(l) for l in inst.g_labels]
    return s, e, g


@dataclass(frozen=True)
class Evolved:
    """State after U, grouped by role.

    pure: tensor is Psi with axes (S, E, G).
    density: tensor is rho_out with axes (S, E, G, S', E', G'); the primed
    axes are the column indices.
    """

    kind: str
    tensor: np.ndarray
    dims: tuple[int, int, int]


def evolve(inst: QuantumInstrument, inputs) -> Evolved:
    kind, state = _joint_initial(inst, inputs)
    dims = inst.layout.dims
    s_pos, e_pos, g_pos = _role_positions(inst)
    group = s_pos + e_pos + g_pos
    d_s = math.prod(dims[p] for p in s_pos) if s_pos else 1
    d_e = math.prod(dims[p] for p in e_pos) if e_pos else 1
    d_g = math.prod(dims[p] for p in g_pos) if g_pos else 1
    u = inst.unitary
    if kind == "vec":
        psi = u.apply_vector(state) if isinstance(u, PermutationUnitary) else u @ state
        psi_t = psi.reshape(dims).transpose(group).reshape(d_s, d_e, d_g)
        return Evolved("pure", psi_t, (d_s, d_e, d_g))
    if isinstance(u, PermutationUnitary):
        rho = u.apply_density(state)
    else:
        rho = u @ state @ u.conj().T
    k = len(dims)
    rho_t = rho.reshape(dims + dims).transpose(group + [k + p for p in group])
    rho_t = rho_t.reshape(d_s, d_e, d_g, d_s, d_e, d_g)
    return Evolved("density", rho_t, (d_s, d_e, d_g))


def weighted_output(ev: Evolved, m: np.ndarray) -> np.ndarray:
    """tau_st = sum_{e,e',g} rho_out[(s,e,g),(t,e',g)] M[e',e]."""
    d_s, d_e, d_g = ev.dims
    if ev.kind == "pure":
        psi = ev.tensor
        # C[t,g,e'] = sum_e Psi[t,e,g] conj(M)[e,e']; tau = <Psi, C> over (g,e)
        c = np.tensordot(psi, m.conj(), axes=([1], [0]))
        a = psi.transpose(0, 2, 1).reshape(d_s, d_g * d_e)
        return a @ c.reshape(d_s, d_g * d_e).conj().T
    return np.einsum(ev.tensor, [0, 1, 2, 3, 4, 2], m, [4, 1], [0, 3])


def joint_expectation(ev: Evolved, a_s: np.ndarray, b_e: np.ndarray) -> complex:
    """Tr[rho_out (A_S (x) B_E (x) I_G)]."""
    if ev.kind == "pure":
        psi = ev.tensor
        return complex(
            np.einsum(
                psi.conj(), [0, 1, 2], a_s, [0, 3], b_e, [1, 4], psi, [3, 4, 2], []
            )
        )
    return complex(
        np.einsum(ev.tensor, [0, 1, 2, 3, 4, 2], a_s, [3, 0], b_e, [4, 1], [])
    )


def apply_exact(inst: QuantumInstrument, inputs) -> WeightedState:
    """Exact weighted state of the instrument on the given input.

    inputs may be a QuantumState, a WeightedState or bare matrix (evaluation
    is linear, so non-physical inputs are allowed), a bare vector (pure), or a
    sequence of such pieces which is tensored in input-register order.
    Non-normal measurements are evaluated by linearity over their
    decomposition into normal parts (which must be present; the weighted
    output is linear in M, so the decomposition sum is exact).
    """
    ev = evolve(inst, inputs)
    parts = inst.measurement.normal_parts()
    tau = None
    for c, n in parts:
        t = weighted_output(ev, n)
        tau = c * t if tau is None else tau + c * t
    return WeightedState(tau, inst.output_layout)


# ---------------------------------------------------------------------------
# branches


@dataclass(frozen=True)
class InstrumentBranch:
    """One merged measurement outcome: eigenvalue, probability, and the
    conditional post-measurement state on S."""

    eigenvalue: complex
    probability: float
    conditional_state: QuantumState | None


def branches(inst: QuantumInstrument, inputs) -> list[InstrumentBranch]:
    """Outcome decomposition for a normal measurement: one branch per merged
    eigenvalue; sum_j lambda_j p_j (conditional) reproduces apply_exact."""
    meas = inst.measurement
    if meas.kind == "nonnormal":
        raise NotNormal(normality_residual(meas.matrix), NORMALITY_TOL)
    values, z, labels = eigenbasis(meas.matrix)
    ev = evolve(inst, inputs)
    d_s, d_e, d_g = ev.dims
    out = []
    total_p = 0.0
    out_layout = inst.output_layout
    for g, val in enumerate(values):
        cols = z[:, labels == g]
        if ev.kind == "pure":
            # B[s,g,c] = sum_e Psi[s,e,g] conj(v_c)[e]; E_j = B B^dag
            b = np.tensordot(ev.tensor, cols.conj(), axes=([1], [0]))
            b = b.reshape(d_s, d_g * cols.shape[1])
            ej = b @ b.conj().T
        else:
            proj = cols @ cols.conj().T
            ej = np.einsum(ev.tensor, [0, 1, 2, 3, 4, 2], proj, [4, 1], [0, 3])
        p = float(np.trace(ej).real)
        total_p += p
        if p < ZERO_BRANCH_TOL:
            out.append(InstrumentBranch(complex(val), 0.0, None))
        else:
            cond = ej / p
            cond = (cond + cond.conj().T) / 2
            out.append(
                InstrumentBranch(
                    complex(val), p, QuantumState(out_layout, density=cond)
                )
            )
    if abs(total_p - 1.0) > PROBABILITY_TOL:
        raise InvalidDistribution(f"branch probabilities sum to {total_p}")
    return out


# ---------------------------------------------------------------------------
# non-normal emulation


def _fresh_label(base: str, taken) -> str:
    label = base
    while label in taken:
        label = label + "'"
    return label


def emulate_nonnormal(inst: QuantumInstrument) -> QuantumInstrument:
    """Single physical instrument equivalent to one with a non-normal M.

    Adds a measured qudit ancilla in the mixed state diag(q_k) with
    q_k = |c_k|/sum|c_k| and the block measurement sum_k |k><k| (x) N_k
    (rescaled so each block absorbs c_k/q_k); the result has a normal
    measurement and the same weighted output on every input.
    """
    parts = [(c, n) for c, n in inst.measurement.normal_parts() if c != 0]
    if not parts:
        raise MissingDecomposition("decomposition has no nonzero terms")
    total = sum(abs(c) for c, _ in parts)
    q = np.array([abs(c) / total for c, _ in parts])
    scaled = [(c / qk) * n for (c, n), qk in zip(parts, q)]
    nk = len(parts)

    taken = set(inst.layout.labels)
    k_label = _fresh_label("K", taken)
    k_reg = Register(k_label, nk, role="E", source="ancilla")
    new_layout = RegisterLayout(inst.layout.registers + (k_reg,))

    # measurement on the E sub-layout: old E registers (major) then K (minor)
    d_e_old = inst.layout.dim_of(inst.e_labels)
    m_new = np.zeros((d_e_old * nk, d_e_old * nk), dtype=np.complex128)
    for k, n in enumerate(scaled):
        ekk = np.zeros((nk, nk))
        ekk[k, k] = 1.0
        m_new += np.kron(n, ekk)

    if inst.ancilla is None:
        anc_layout = RegisterLayout.of(k_reg)
        anc_state = QuantumState(anc_layout, density=np.diag(q).astype(np.complex128))
    else:
        anc_layout = RegisterLayout(inst.ancilla.layout.registers + (k_reg,))
        anc_state = QuantumState(
            anc_layout, density=np.kron(inst.ancilla.matrix, np.diag(q))
        )

    u = inst.unitary
    if isinstance(u, PermutationUnitary):
        u_new = embed_permutation(u, list(inst.layout.labels), new_layout)
    else:
        u_new = np.kron(u, np.eye(nk))

    return QuantumInstrument(
        new_layout,
        ancilla=anc_state,
        unitary=u_new,
        measurement=MeasurementOperator.of(m_new),
    )


def as_normal_instrument(inst: QuantumInstrument) -> QuantumInstrument:
    """Pass through instruments that already measure a normal operator;
    emulate the rest."""
    if inst.measurement.kind != "nonnormal":
        return inst
    return emulate_nonnormal(inst)


# ---------------------------------------------------------------------------
# concatenation


@dataclass(frozen=True)
class Pipeline:
    """Two instruments wired in sequence plus the flattened equivalent.

    wiring maps each S register of the first stage onto an input register of
    the second. Staged evaluation applies the second stage to
    tau_1 (x) fresh inputs by linearity; the flattened form is a single
    instrument with the combined unitary and the product measurement, used
    for sampling and variance analysis.
    """

    first: QuantumInstrument
    second: QuantumInstrument
    wiring: dict
    flattened: QuantumInstrument
    fresh_labels: tuple[str, ...]

    def apply_staged(self, first_inputs, fresh_inputs=()) -> WeightedState:
        tau1 = apply_exact(self.first, first_inputs)
        sub = self.second.input_layout
        wired_labels = [self.wiring[l] for l in self.first.s_labels]
        wired_pos = [sub.index(l) for l in wired_labels]
        other_pos = [i for i in range(len(sub.registers)) if i not in set(wired_pos)]
        pieces = [(("mat", tau1.matrix), wired_pos)]
        if other_pos:
            if isinstance(fresh_inputs, (QuantumState, WeightedState, np.ndarray)):
                fresh_inputs = [fresh_inputs]
            kind, flat = _kron_pieces([_as_piece(x) for x in fresh_inputs])
            pieces.append(((kind, flat), other_pos))
        kind, joint = assemble_product(pieces, sub)
        if kind == "vec":
            joint = np.outer(joint, joint.conj())
        return apply_exact(self.second, joint)

    def apply_flattened(self, first_inputs, fresh_inputs=()) -> WeightedState:
        xs: list = []
        for part in (first_inputs, fresh_inputs):
            if isinstance(part, (QuantumState, WeightedState, np.ndarray)):
                xs.append(part)
            else:
                xs.extend(part)
        return apply_exact(self.flattened, xs)


def concatenate(
    first: QuantumInstrument, second: QuantumInstrument, wiring: dict | None = None
) -> Pipeline:
    """Wire the first stage's S registers into input registers of the second.

    Unwired second-stage inputs become fresh inputs of the pipeline, appended
    after the first stage's own inputs. The flattened instrument applies
    U = U2 U1 and measures M1 (x) M2 on the union of E registers.
    """
    s1 = list(first.s_labels)
    in2 = list(second.input_labels)
    if wiring is None:
        if len(s1) > len(in2):
            raise DimensionMismatch(
                f"first stage outputs {len(s1)} registers, second accepts {len(in2)}"
            )
        wiring = dict(zip(s1, in2))
    if sorted(wiring.keys()) != sorted(s1):
        raise ValidationError(f"wiring must cover exactly the S registers {s1}")
    if len(set(wiring.values())) != len(wiring):
        raise ValidationError("wiring maps two registers onto the same target")
    lay2 = second.layout
    for a, b in wiring.items():
        if b not in in2:
            raise ValidationError(f"wiring target {b!r} is not an input register")
        da = first.layout.registers[first.layout.index(a)].dim
        db = lay2.registers[lay2.index(b)].dim
        if da != db:
            raise DimensionMismatch(f"wire {a!r}->{b!r} joins dims {da} and {db}")

    inverse = {b: a for a, b in wiring.items()}
    taken = set(first.layout.labels)
    rename: dict[str, str] = {}
    combined: list[Register] = []
    for r in first.layout.registers:
        if r.label in wiring:
            tgt = lay2.registers[lay2.index(wiring[r.label])]
            combined.append(replace(r, role=tgt.role))
        else:
            combined.append(r)
    appended: list[Register] = []
    for r in lay2.registers:
        if r.label in inverse:
            rename[r.label] = inverse[r.label]
            continue
        new_label = _fresh_label(r.label, taken)
        taken.add(new_label)
        rename[r.label] = new_label
        reg = replace(r, label=new_label)
        combined.append(reg)
        appended.append(reg)
    new_layout = RegisterLayout(tuple(combined))

    # second-stage unitary acts on its registers wherever they now live
    u2_labels = [rename[r.label] for r in lay2.registers]
    u1, u2 = first.unitary, second.unitary
    if isinstance(u1, PermutationUnitary) and isinstance(u2, PermutationUnitary):
        u_total = embed_permutation(u2, u2_labels, new_layout) @ embed_permutation(
            u1, list(first.layout.labels), new_layout
        )
    else:
        d1 = u1.dense() if isinstance(u1, PermutationUnitary) else u1
        d2 = u2.dense() if isinstance(u2, PermutationUnitary) else u2
        u_total = embed_operator(d2, u2_labels, new_layout) @ embed_operator(
            d1, list(first.layout.labels), new_layout
        )

    e_labels = [r.label for r in combined if r.role == "E"]
    e_sub = new_layout.sub(e_labels)
    e1 = list(first.e_labels)
    e2 = [rename[l] for l in second.e_labels]
    m1, m2 = first.measurement.matrix, second.measurement.matrix

    def emb(m, labels):
        return embed_operator(m, labels, e_sub) if labels else np.eye(e_sub.total_dim)

    m_total = emb(m1, e1) @ emb(m2, e2)
    decomposition = None
    if (
        hermiticity_residual(m_total) > NORMALITY_TOL
        and normality_residual(m_total) > NORMALITY_TOL
    ):
        parts1 = first.measurement.normal_parts()
        parts2 = second.measurement.normal_parts()
        decomposition = tuple(
            (c1 * c2, emb(n1, e1) @ emb(n2, e2)) for c1, n1 in parts1 for c2, n2 in parts2
        )
        # product of commuting normal parts need not be normal; fall back to
        # the Hermitian/skew split of the product when that happens
        for _, n in decomposition:
            if normality_residual(n) > NORMALITY_TOL:
                decomposition = None
                break

    if first.ancilla is None and second.ancilla is None:
        anc = None
    else:
        anc_regs: list[Register] = []
        pieces = []
        if first.ancilla is not None:
            anc_regs.extend(first.ancilla.layout.registers)
        if second.ancilla is not None:
            anc_regs.extend(
                replace(r, label=rename[r.label]) for r in second.ancilla.layout.registers
            )
        anc_layout = RegisterLayout(tuple(anc_regs))
        both_pure = (first.ancilla is None or first.ancilla.is_pure) and (
            second.ancilla is None or second.ancilla.is_pure
        )
        arrays = [a for a in (first.ancilla, second.ancilla) if a is not None]
        if both_pure:
            v = arrays[0].vector
            for a in arrays[1:]:
                v = np.kron(v, a.vector)
            anc = QuantumState(anc_layout, vector=v)
        else:
            m = arrays[0].matrix
            for a in arrays[1:]:
                m = np.kron(m, a.matrix)
            anc = QuantumState(anc_layout, density=m)

    flattened = QuantumInstrument(
        new_layout,
        ancilla=anc,
        unitary=u_total,
        measurement=MeasurementOperator.of(m_total, decomposition),
    )
    return Pipeline(
        first=first,
        second=second,
        wiring=dict(wiring),
        flattened=flattened,
        fresh_labels=tuple(r.label for r in appended if r.source == "input"),
    )
