"""Dense complex linear algebra substrate.

Kronecker products, register layouts, partial traces, spectral decomposition
of normal matrices, dephasing, and computational-basis permutation unitaries.

Conventions: matrices are dense complex128 ndarrays, row-major. Register order
in a layout matches tensor-product order; the leftmost register carries the
most significant index bits. All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    NotNormal,
    NotUnitary,
    SchemaError,
    UnknownLabel,
    ValidationError,
)

NORMALITY_TOL = 1e-10
DEGENERACY_TOL = 1e-9

Roles = ("S", "E", "G")


def asarray(m, square: bool | None = None) -> np.ndarray:
    a = np.asarray(m, dtype=np.complex128)
    if not np.all(np.isfinite(a)):
        raise ValidationError("array contains NaN or Inf entries")
    if square is True:
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def kron(a, b) -> np.ndarray:
    """Kronecker product; dimensions multiply."""
    return np.kron(asarray(a), asarray(b))


def kron_all(ms: Sequence) -> np.ndarray:
    out = asarray(ms[0])
    for m in ms[1:]:
        out = np.kron(out, asarray(m))
    return out


@dataclass(frozen=True)
class Register:
    """One tensor factor. role is S (kept output), E (measured), G (traced);
    source says whether the instrument's ancilla or the caller's input
    occupies it."""

    label: str
    dim: int
    role: str | None = None
    source: str = "input"

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"register {self.label!r}: dim must be >= 1")
        if self.role is not None and self.role not in Roles:
            raise UnknownLabel(f"register {self.label!r}: unknown role {self.role!r}")
        if self.source not in ("ancilla", "input"):
            raise ValidationError(f"register {self.label!r}: bad source {self.source!r}")

    @property
    def qubits(self) -> int | None:
        n = self.dim.bit_length() - 1
        return n if (1 << n) == self.dim and self.dim > 1 else (0 if self.dim == 1 else None)


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[Register, ...]

    def __post_init__(self):
        labels = [r.label for r in self.registers]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate register labels in {labels}")

    @staticmethod
    def of(*regs: Register) -> "RegisterLayout":
        return RegisterLayout(tuple(regs))

    @staticmethod
    def qubits(spec: Iterable[tuple[str, int]]) -> "RegisterLayout":
        """Build from (label, qubit count) pairs."""
        regs = []
        for label, n in spec:
            if n < 1:
                raise ValidationError(f"register {label!r}: qubit count must be >= 1")
            regs.append(Register(label, 2**n))
        return RegisterLayout(tuple(regs))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.registers)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    def index(self, label: str) -> int:
        for i, r in enumerate(self.registers):
            if r.label == label:
                return i
        raise UnknownLabel(f"no register labeled {label!r} in {self.labels}")

    def sub(self, labels: Iterable[str]) -> "RegisterLayout":
        """Sub-layout of the given labels, in layout order."""
        wanted = set(labels)
        for lab in wanted:
            self.index(lab)
        return RegisterLayout(tuple(r for r in self.registers if r.label in wanted))

    def with_role(self, role: str) -> tuple[str, ...]:
        return tuple(r.label for r in self.registers if r.role == role)

    def dim_of(self, labels: Iterable[str]) -> int:
        return math.prod(self.registers[self.index(l)].dim for l in labels)


def partial_trace(m, layout: RegisterLayout, keep: Iterable[str]) -> np.ndarray:
    """Trace out every register not in keep. Kept registers stay in layout
    order; the total trace is preserved."""
    a = asarray(m, square=True)
    dims = layout.dims
    if a.shape[0] != layout.total_dim:
        raise DimensionMismatch(
            f"matrix dim {a.shape[0]} does not match layout total {layout.total_dim}"
        )
    keep = set(keep)
    for lab in keep:
        layout.index(lab)
    k = len(dims)
    kept_pos = [i for i in range(k) if layout.registers[i].label in keep]
    t = a.reshape(dims + dims)
    row_ids = [2 * i for i in range(k)]
    col_ids = [2 * i + 1 if i in set(kept_pos) else 2 * i for i in range(k)]
    out_ids = [2 * i for i in kept_pos] + [2 * i + 1 for i in kept_pos]
    traced = np.einsum(t, row_ids + col_ids, out_ids)
    d_keep = math.prod(dims[i] for i in kept_pos) if kept_pos else 1
    return traced.reshape(d_keep, d_keep)


def dephase(m) -> np.ndarray:
    """Project onto the computational-basis diagonal: D(m) = sum_i m_ii |i><i|."""
    a = asarray(m, square=True)
    return np.diag(np.diag(a))


def hermitian_skew_split(m) -> tuple[np.ndarray, np.ndarray]:
    """m = h + s with h Hermitian and s skew-Hermitian, both normal."""
    a = asarray(m, square=True)
    h = (a + a.conj().T) / 2
    return h, a - h


def hermiticity_residual(m) -> float:
    a = np.asarray(m)
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def normality_residual(m) -> float:
    a = np.asarray(m)
    return float(np.max(np.abs(a @ a.conj().T - a.conj().T @ a))) if a.size else 0.0


def unitarity_residual(m) -> float:
    a = np.asarray(m)
    return float(np.max(np.abs(a.conj().T @ a - np.eye(a.shape[0]))))


def spectral_norm(m) -> float:
    return float(np.linalg.norm(np.asarray(m), 2))


def eigenbasis(m, tol: float = NORMALITY_TOL, merge_tol: float = DEGENERACY_TOL):
    """Unitary diagonalization of a normal matrix with degeneracy merging.

    Returns (values, vectors, labels): values[g] is the merged eigenvalue of
    group g, vectors is a unitary whose columns are eigenvectors, labels[j]
    assigns column j to its group. Groups appear in the order the Schur
    diagonal first visits them, which makes the output deterministic.
    """
    a = asarray(m, square=True)
    res = normality_residual(a)
    if res > tol:
        raise NotNormal(res, tol)
    # Schur of a normal matrix is a unitary diagonalization; unlike a raw
    # eigendecomposition the basis stays orthonormal inside degenerate spaces.
    t, z = scipy.linalg.schur(a, output="complex")
    w = np.diag(t)
    labels = np.empty(len(w), dtype=np.intp)
    reps: list[complex] = []
    members: list[list[int]] = []
    for j, val in enumerate(w):
        for g, rep in enumerate(reps):
            if abs(val - rep) <= merge_tol:
                labels[j] = g
                members[g].append(j)
                break
        else:
            labels[j] = len(reps)
            reps.append(val)
            members.append([j])
    values = np.array([np.mean(w[idx]) for idx in members])
    return values, z, labels


def spectral_decompose(m, tol: float = NORMALITY_TOL):
    """Decompose a normal matrix into (eigenvalue, orthogonal projector)
    pairs; degenerate eigenvalues share a single projector."""
    values, z, labels = eigenbasis(m, tol)
    out = []
    for g, val in enumerate(values):
        cols = z[:, labels == g]
        out.append((complex(val), cols @ cols.conj().T))
    return out


@dataclass(frozen=True)
class PermutationUnitary:
    """Computational-basis permutation: U|x> = |perm[x]>.

    Structurally unitary; applies to vectors and density matrices in O(D)
    and O(D^2) without materializing the dense matrix.
    """

    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.intp)
        object.__setattr__(self, "perm", p)
        # bijectivity check; counts are cheaper than sorting
        if np.bincount(p, minlength=p.size).max(initial=0) != 1:
            raise NotUnitary("index map is not a permutation")

    @property
    def dim(self) -> int:
        return self.perm.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def apply_vector(self, psi: np.ndarray) -> np.ndarray:
        out = np.empty_like(psi)
        out[self.perm] = psi
        return out

    def apply_density(self, rho: np.ndarray) -> np.ndarray:
        out = np.empty_like(rho)
        out[np.ix_(self.perm, self.perm)] = rho
        return out

    def inverse(self) -> "PermutationUnitary":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.dim)
        return PermutationUnitary(inv)

    def __matmul__(self, other: "PermutationUnitary") -> "PermutationUnitary":
        # matrix semantics: other acts first
        return PermutationUnitary(self.perm[other.perm])

    def dense(self) -> np.ndarray:
        z = np.zeros((self.dim, self.dim), dtype=np.complex128)
        z[self.perm, np.arange(self.dim)] = 1.0
        return z

    @staticmethod
    def identity(dim: int) -> "PermutationUnitary":
        return PermutationUnitary(np.arange(dim))


def register_digits(layout: RegisterLayout) -> list[np.ndarray]:
    """digits[r][x] = value of register r in basis state x (mixed radix)."""
    dims = layout.dims
    idx = np.arange(layout.total_dim)
    digits: list[np.ndarray] = [np.empty(0)] * len(dims)
    rem = idx
    for r in range(len(dims) - 1, -1, -1):
        digits[r] = rem % dims[r]
        rem = rem // dims[r]
    return digits


def combine_digits(digits: Sequence[np.ndarray], dims: Sequence[int]) -> np.ndarray:
    out = np.zeros_like(digits[0])
    for d, dim in zip(digits, dims):
        out = out * dim + d
    return out


def embed_permutation(
    u: PermutationUnitary, labels: Sequence[str], layout: RegisterLayout
) -> PermutationUnitary:
    """Extend a permutation acting on the given registers (in the order of
    labels) to the full layout, identity elsewhere."""
    dims = layout.dims
    pos = [layout.index(l) for l in labels]
    sub_dims = [dims[p] for p in pos]
    if math.prod(sub_dims) != u.dim:
        raise DimensionMismatch(
            f"permutation dim {u.dim} does not match registers {list(labels)}"
        )
    digits = register_digits(layout)
    sub = combine_digits([digits[p] for p in pos], sub_dims)
    sub_out = u.perm[sub]
    new_digits = list(digits)
    for p in reversed(pos):
        new_digits[p] = sub_out % dims[p]
        sub_out = sub_out // dims[p]
    return PermutationUnitary(combine_digits(new_digits, dims))


def embed_operator(op, labels: Sequence[str], layout: RegisterLayout) -> np.ndarray:
    """Dense embedding of an operator on the given registers (in the order of
    labels) into the full layout, identity elsewhere."""
    a = asarray(op, square=True)
    dims = layout.dims
    k = len(dims)
    pos = [layout.index(l) for l in labels]
    if math.prod(dims[p] for p in pos) != a.shape[0]:
        raise DimensionMismatch(
            f"operator dim {a.shape[0]} does not match registers {list(labels)}"
        )
    rest = [i for i in range(k) if i not in set(pos)]
    d_rest = math.prod(dims[i] for i in rest) if rest else 1
    full = np.kron(a, np.eye(d_rest, dtype=np.complex128))
    axis_dims = [dims[p] for p in pos] + [dims[i] for i in rest]
    t = full.reshape(axis_dims + axis_dims)
    order = pos + rest  # axis i of t belongs to register order[i]
    inv = [order.index(r) for r in range(k)]
    t = t.transpose(inv + [k + p for p in inv])
    return t.reshape(layout.total_dim, layout.total_dim)


# ---------------------------------------------------------------------------
# JSON forms: {"dims": [r, c], "data": [[re, im], ...]} row-major.


def _require(cond: bool, field_path: str, msg: str):
    if not cond:
        raise SchemaError(field_path, msg)


def matrix_to_json(m) -> dict:
    a = asarray(m)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got ndim {a.ndim}")
    data = [[float(v.real), float(v.imag)] for v in a.ravel()]
    return {"dims": [int(a.shape[0]), int(a.shape[1])], "data": data}


def vector_to_json(v) -> dict:
    a = asarray(v)
    if a.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got ndim {a.ndim}")
    return {"dims": [int(a.shape[0])], "data": [[float(x.real), float(x.imag)] for x in a]}


def _entries_from_json(obj, field_path: str, count: int) -> np.ndarray:
    data = obj.get("data")
    _require(isinstance(data, list), f"{field_path}.data", "must be a list")
    _require(len(data) == count, f"{field_path}.data", f"expected {count} entries, got {len(data)}")
    out = np.empty(count, dtype=np.complex128)
    for i, pair in enumerate(data):
        loc = f"{field_path}.data[{i}]"
        _require(
            isinstance(pair, (list, tuple)) and len(pair) == 2, loc, "expected [re, im]"
        )
        re, im = pair
        _require(
            isinstance(re, (int, float)) and not isinstance(re, bool), loc, "re must be a number"
        )
        _require(
            isinstance(im, (int, float)) and not isinstance(im, bool), loc, "im must be a number"
        )
        _require(math.isfinite(re) and math.isfinite(im), loc, "NaN/Inf rejected")
        out[i] = complex(re, im)
    return out


def matrix_from_json(obj, field_path: str = "matrix") -> np.ndarray:
    _require(isinstance(obj, dict), field_path, "must be an object")
    dims = obj.get("dims")
    _require(
        isinstance(dims, list) and len(dims) == 2, f"{field_path}.dims", "expected [rows, cols]"
    )
    r, c = dims
    _require(
        isinstance(r, int) and isinstance(c, int) and r > 0 and c > 0,
        f"{field_path}.dims",
        "dims must be positive integers",
    )
    return _entries_from_json(obj, field_path, r * c).reshape(r, c)


def vector_from_json(obj, field_path: str = "vector") -> np.ndarray:
    _require(isinstance(obj, dict), field_path, "must be an object")
    dims = obj.get("dims")
    _require(isinstance(dims, list) and len(dims) in (1, 2), f"{field_path}.dims", "expected [d]")
    if len(dims) == 2:
        _require(dims[1] == 1, f"{field_path}.dims", "expected a column vector")
    d = dims[0]
    _require(isinstance(d, int) and d > 0, f"{field_path}.dims", "dim must be a positive integer")
    return _entries_from_json(obj, field_path, d)
