"""Truncated two-mode Fock space and the operators of the open Bose-Hubbard dimer.

Basis ordering is row-major: the state ``|n1, n2>`` lives at index
``n1 * (n_max_2 + 1) + n2``.  Every file written by this package records the
string :data:`BASIS_ORDERING` so outputs can be re-read unambiguously.

Wave functions and density matrices are plain complex numpy arrays of length
``dim`` and shape ``(dim, dim)``; operators are :class:`SparseOperator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

BASIS_ORDERING = "row-major: index = n1*(n_max_2+1) + n2"

# operator construction refuses anything larger than this
MAX_DIM = 4_000_000
# dense storage is allowed at or below this dimension
DENSE_DIM_LIMIT = 64


@dataclass(frozen=True)
class ModeTruncation:
    """Fock cutoff of the two cavities (levels ``0..n_max_i`` are kept)."""

    n_max_1: int
    n_max_2: int

    def __post_init__(self):
        for name in ("n_max_1", "n_max_2"):
            value = getattr(self, name)
            if isinstance(value, bool) or not float(value).is_integer() or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.dim > MAX_DIM:
            raise ValueError(f"Hilbert-space dimension {self.dim} exceeds {MAX_DIM}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_max_1 + 1, self.n_max_2 + 1)

    @property
    def dim(self) -> int:
        return (self.n_max_1 + 1) * (self.n_max_2 + 1)

    def index(self, n1: int, n2: int) -> int:
        if not (0 <= n1 <= self.n_max_1 and 0 <= n2 <= self.n_max_2):
            raise IndexError(f"|{n1},{n2}> lies outside the truncation {self.shape}")
        return n1 * (self.n_max_2 + 1) + n2

    def levels(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.dim:
            raise IndexError(f"basis index {i} out of range for dim {self.dim}")
        return divmod(i, self.n_max_2 + 1)

    def occupations(self) -> tuple[np.ndarray, np.ndarray]:
        """Photon numbers ``(n1, n2)`` of every basis vector, in basis order."""
        n1, n2 = np.meshgrid(np.arange(self.n_max_1 + 1), np.arange(self.n_max_2 + 1), indexing="ij")
        return n1.ravel().astype(float), n2.ravel().astype(float)

    def edge_mask(self) -> np.ndarray:
        """Boolean mask of basis states on the truncation edge (n1 = n_max_1 or n2 = n_max_2)."""
        n1, n2 = self.occupations()
        return (n1 == self.n_max_1) | (n2 == self.n_max_2)


def make_truncation(n_max_1: int, n_max_2: int) -> ModeTruncation:
    return ModeTruncation(n_max_1, n_max_2)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Immutable complex sparse matrix acting on a two-mode truncation.

    Stored as canonical CSR (sorted indices, no duplicate entries, explicit
    zeros removed), so two operators built along different routes compare
    equal entry by entry.
    """

    matrix: sp.csr_matrix = field(repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex, copy=True)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        m.data.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def entries(self) -> list[tuple[int, int, complex]]:
        coo = self.matrix.tocoo()
        return [(int(r), int(c), complex(v)) for r, c, v in zip(coo.row, coo.col, coo.data)]

    def element(self, row: int, col: int) -> complex:
        return complex(self.matrix[row, col])

    def adjoint(self) -> SparseOperator:
        return SparseOperator(self.matrix.conj().T)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            _check_dims(self.dim, other.dim)
            return SparseOperator(self.matrix @ other.matrix)
        return apply_operator(self, other)

    def __add__(self, other: SparseOperator) -> SparseOperator:
        _check_dims(self.dim, other.dim)
        return SparseOperator(self.matrix + other.matrix)

    def __sub__(self, other: SparseOperator) -> SparseOperator:
        _check_dims(self.dim, other.dim)
        return SparseOperator(self.matrix - other.matrix)

    def __mul__(self, scalar) -> SparseOperator:
        return SparseOperator(self.matrix * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> SparseOperator:
        return SparseOperator(-self.matrix)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseOperator) or other.dim != self.dim:
            return NotImplemented
        return (self.matrix != other.matrix).nnz == 0

    __hash__ = None

    @classmethod
    def identity(cls, dim: int) -> SparseOperator:
        return cls(sp.identity(dim, dtype=complex, format="csr"))

    @classmethod
    def zero(cls, dim: int) -> SparseOperator:
        return cls(sp.csr_matrix((dim, dim), dtype=complex))


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


@dataclass(frozen=True)
class PhysicalParams:
    """Rotating-frame parameters of the dimer.

    ``J`` hopping, ``Delta`` detuning (cavity minus pump frequency), ``U``
    on-site energy, ``F`` drive amplitude (all rad/time), ``gamma`` loss rate
    and ``mu`` the photon-number scale that maps intensities to photon numbers.
    ``U`` and ``F`` are the values entering the Hamiltonian, i.e. already
    rescaled by ``mu`` when built with :meth:`at_drive`.
    """

    J: float = -3.5
    Delta: float = 4.5
    U: float = 0.5
    gamma: float = 2.0
    F: complex = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        for name in ("J", "Delta", "U", "gamma", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not np.isfinite(complex(self.F)):
            raise ValueError("F must be finite")

    def with_drive(self, F: complex) -> PhysicalParams:
        return PhysicalParams(self.J, self.Delta, self.U, self.gamma, F, self.mu)

    @classmethod
    def at_drive(cls, f: float, mu: float = 1.0, *, J: float = -3.5, Delta: float = 4.5,
                 U: float = 0.5, gamma: float = 2.0) -> PhysicalParams:
        """Physical parameters whose semiclassical drive is ``f`` at photon scale ``mu``.

        ``U`` and ``F`` are given for ``mu = 1`` and rescaled to ``(U/mu, sqrt(mu) F)``.
        """
        F1 = f * gamma ** 1.5 / (4.0 * math.sqrt(abs(U)))
        return cls(J=J, Delta=Delta, U=U / mu, gamma=gamma, F=math.sqrt(mu) * F1, mu=mu)


def _ladder(n_max: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1, format="csr", dtype=complex)


def mode_annihilator(trunc: ModeTruncation, mode: int) -> SparseOperator:
    """Annihilation operator of cavity ``mode`` (1 or 2) on the two-mode space."""
    if mode == 1:
        op = sp.kron(_ladder(trunc.n_max_1), sp.identity(trunc.n_max_2 + 1), format="csr")
    elif mode == 2:
        op = sp.kron(sp.identity(trunc.n_max_1 + 1), _ladder(trunc.n_max_2), format="csr")
    else:
        raise ValueError(f"mode must be 1 or 2, got {mode!r}")
    return SparseOperator(op)


def number_operator(trunc: ModeTruncation, mode: int) -> SparseOperator:
    n1, n2 = trunc.occupations()
    if mode not in (1, 2):
        raise ValueError(f"mode must be 1 or 2, got {mode!r}")
    return SparseOperator(sp.diags(n1 if mode == 1 else n2, format="csr", dtype=complex))


def swap_permutation(trunc: ModeTruncation) -> np.ndarray:
    """Index permutation realising ``|n1,n2> -> |n2,n1>`` (requires equal cutoffs)."""
    if trunc.n_max_1 != trunc.n_max_2:
        raise ValueError("mode swap needs n_max_1 == n_max_2")
    m = trunc.n_max_1 + 1
    return np.arange(trunc.dim).reshape(m, m).T.ravel()


def swap_operator(trunc: ModeTruncation) -> SparseOperator:
    perm = swap_permutation(trunc)
    return SparseOperator(sp.csr_matrix((np.ones(trunc.dim), (perm, np.arange(trunc.dim))),
                                        shape=(trunc.dim, trunc.dim)))


def _hamiltonian(p: PhysicalParams, trunc: ModeTruncation, with_loss: bool) -> SparseOperator:
    a1 = mode_annihilator(trunc, 1).matrix
    a2 = mode_annihilator(trunc, 2).matrix
    n1, n2 = trunc.occupations()
    # Kerr and detuning terms are diagonal: -Delta n + U n(n-1)
    diag = -p.Delta * (n1 + n2) + p.U * (n1 * (n1 - 1) + n2 * (n2 - 1))
    if with_loss:
        diag = diag - 0.5j * p.gamma * (n1 + n2)
    F = complex(p.F)
    h = (-p.J) * (a1.conj().T @ a2 + a2.conj().T @ a1)
    h = h + F * (a1 + a2) + F.conjugate() * (a1.conj().T + a2.conj().T)
    h = h + sp.diags(diag.astype(complex), format="csr")
    return SparseOperator(h)


def build_effective_hamiltonian(p: PhysicalParams, trunc: ModeTruncation) -> SparseOperator:
    """Non-Hermitian generator of the no-jump evolution, including ``-(i gamma/2)(n1 + n2)``."""
    return _hamiltonian(p, trunc, with_loss=True)


def build_hermitian_hamiltonian(p: PhysicalParams, trunc: ModeTruncation) -> SparseOperator:
    return _hamiltonian(p, trunc, with_loss=False)


def apply_operator(op: SparseOperator, psi: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product; the result is not renormalised."""
    psi = np.asarray(psi)
    if psi.shape != (op.dim,):
        raise ValueError(f"dimension mismatch: operator dim {op.dim}, vector shape {psi.shape}")
    return op.matrix @ psi.astype(complex, copy=False)


def expectation(op: SparseOperator, psi: np.ndarray) -> complex:
    """``<psi|op|psi>`` for a normalised ``psi`` (normalisation is the caller's job)."""
    return complex(np.vdot(psi, apply_operator(op, psi)))


def basis_state(trunc: ModeTruncation, n1: int, n2: int) -> np.ndarray:
    psi = np.zeros(trunc.dim, dtype=complex)
    psi[trunc.index(n1, n2)] = 1.0
    return psi


def vacuum(trunc: ModeTruncation) -> np.ndarray:
    return basis_state(trunc, 0, 0)


def coherent_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    """Fock amplitudes of a coherent state cut at ``n_max`` and renormalised."""
    n = np.arange(n_max + 1)
    log_fact = np.cumsum(np.log(np.maximum(n, 1)))
    with np.errstate(divide="ignore"):
        logmag = n * np.log(abs(alpha)) - 0.5 * log_fact if alpha != 0 else np.where(n == 0, 0.0, -np.inf)
    c = np.exp(logmag - logmag.max()) * np.exp(1j * np.angle(alpha) * n)
    return c / np.linalg.norm(c)


def product_state(trunc: ModeTruncation, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    if c1.shape != (trunc.n_max_1 + 1,) or c2.shape != (trunc.n_max_2 + 1,):
        raise ValueError("single-mode amplitude lengths must match the truncation")
    return np.kron(np.asarray(c1, dtype=complex), np.asarray(c2, dtype=complex))


def density_matrix(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())
