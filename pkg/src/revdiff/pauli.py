"""Dense Pauli algebra, closed-form exponentials and state utilities.

Every exponential in the package goes through :func:`exp_affine_pauli` or
:func:`exp_pauli_vector`; both are exact because the generators square to
the identity.  Arrays carry an optional leading batch axis so that whole
trajectory ensembles can be stepped with elementwise numpy operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

SIGMA = np.array([_SINGLE["X"], _SINGLE["Y"], _SINGLE["Z"]])

# single-qubit products a*b = phase * c
_PRODUCT = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_j, _i, _k] = -1.0

DISSIPATIVE = "dissipative"
CONSERVING = "conserving"
MODES = (DISSIPATIVE, CONSERVING)

_SERIES_CUTOFF = 1e-6
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class PauliString:
    """An m-qubit Pauli word such as ``"XZ"``, phase free.

    Qubit 0 is the leftmost letter and the most significant factor of the
    Kronecker product.
    """

    word: str

    def __post_init__(self):
        word = str(self.word).upper()
        if not word or any(c not in "IXYZ" for c in word):
            raise ValueError(f"invalid Pauli word {self.word!r}")
        object.__setattr__(self, "word", word)

    @classmethod
    def parse(cls, value) -> "PauliString":
        return value if isinstance(value, cls) else cls(value)

    @classmethod
    def identity(cls, m: int) -> "PauliString":
        return cls("I" * m)

    def __str__(self):
        return self.word

    def __len__(self):
        return len(self.word)

    @property
    def m(self) -> int:
        return len(self.word)

    @property
    def dim(self) -> int:
        return 2 ** len(self.word)

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.word)

    def matrix(self) -> np.ndarray:
        return pauli_matrix(self)

    @cached_property
    def _action(self):
        mat = pauli_matrix(self)
        perm = np.argmax(np.abs(mat), axis=1)
        phases = mat[np.arange(mat.shape[0]), perm]
        return perm, phases

    def apply(self, psi: np.ndarray, axis: int = -1) -> np.ndarray:
        """Apply the string to ``psi`` along ``axis`` as a signed permutation."""
        perm, phases = self._action
        out = np.take(psi, perm, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = -1
        return out * phases.reshape(shape)

    def multiply(self, other: "PauliString") -> tuple[complex, "PauliString"]:
        """Return ``(phase, Q)`` with ``self @ other == phase * Q``."""
        other = PauliString.parse(other)
        if other.m != self.m:
            raise ValueError("qubit counts differ")
        phase = 1 + 0j
        letters = []
        for a, b in zip(self.word, other.word):
            ph, c = _PRODUCT[(a, b)]
            phase *= ph
            letters.append(c)
        return phase, PauliString("".join(letters))

    def commutes_with(self, other: "PauliString") -> bool:
        other = PauliString.parse(other)
        if other.m != self.m:
            raise ValueError("qubit counts differ")
        clashes = sum(a != "I" and b != "I" and a != b for a, b in zip(self.word, other.word))
        return clashes % 2 == 0


@dataclass(frozen=True)
class JumpOperator:
    """L = P (dissipative, weak measurement) or L = iP (conserving)."""

    pauli: PauliString
    mode: str = DISSIPATIVE

    def __post_init__(self):
        object.__setattr__(self, "pauli", PauliString.parse(self.pauli))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def phase(self) -> complex:
        return 1.0 + 0j if self.mode == DISSIPATIVE else 1j

    @property
    def square_sign(self) -> float:
        """L @ L = square_sign * I."""
        return 1.0 if self.mode == DISSIPATIVE else -1.0

    @property
    def hermitian(self) -> bool:
        return self.mode == DISSIPATIVE

    @property
    def dim(self) -> int:
        return self.pauli.dim

    def matrix(self) -> np.ndarray:
        return self.phase * pauli_matrix(self.pauli)

    def apply(self, psi, axis=-1):
        return self.phase * self.pauli.apply(psi, axis=axis)

    def signal(self, psi_hat: np.ndarray) -> np.ndarray:
        """<L + L^dagger> on normalized state(s); identically 0 when conserving."""
        if not self.hermitian:
            return np.zeros(psi_hat.shape[:-1])
        return 2.0 * np.real(np.sum(np.conj(psi_hat) * self.pauli.apply(psi_hat), axis=-1))


def pauli_matrix(word) -> np.ndarray:
    """Dense Kronecker product of single-qubit Pauli matrices in word order."""
    word = PauliString.parse(word).word
    out = np.ones((1, 1), dtype=complex)
    for c in word:
        out = np.kron(out, _SINGLE[c])
    return out


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def _check_exponent(a, b):
    bound = np.max(np.real(np.asarray(a)) + np.abs(np.real(np.asarray(b))), initial=-np.inf)
    if bound > _EXP_LIMIT:
        raise OverflowError(
            f"exponent real part {bound:.1f} overflows; rescale through log_norm_offset"
        )


def affine_pauli_coefficients(a, b):
    """Coefficients ``(e^a cosh b, e^a sinh b)`` of exp(aI + bP)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    _check_exponent(a, b)
    ea = np.exp(a)
    return ea * np.cosh(b), ea * np.sinh(b)


def exp_affine_pauli(a, b, P) -> np.ndarray:
    """exp(aI + bP) = e^a (cosh(b) I + sinh(b) P), valid since P^2 = I.

    Raises
    ------
    OverflowError
        If ``Re(a) + |Re(b)|`` exceeds the double range; callers keep the
        scale in a separate log-norm.
    """
    P = PauliString.parse(P)
    alpha, beta = affine_pauli_coefficients(a, b)
    eye = np.eye(P.dim, dtype=complex)
    return alpha[..., None, None] * eye + beta[..., None, None] * pauli_matrix(P)


def apply_affine_pauli(a, b, P, psi: np.ndarray) -> np.ndarray:
    """exp(aI + bP) applied to ``psi`` (last axis) without forming matrices."""
    P = PauliString.parse(P)
    alpha, beta = affine_pauli_coefficients(a, b)
    return alpha[..., None] * psi + beta[..., None] * P.apply(psi)


def pauli_vector_coefficients(c0, c):
    """Return ``(alpha, beta)`` with exp(c0 I + c.sigma) = alpha I + beta.sigma.

    ``c`` has shape (..., 3).  The principal square root is used for
    r = sqrt(c.c); cosh(r) and sinh(r)/r are even so the branch is immaterial.
    """
    c = np.asarray(c, dtype=complex)
    c0 = np.asarray(c0, dtype=complex)
    r2 = np.sum(c * c, axis=-1)
    r = np.sqrt(r2)
    small = np.abs(r) < _SERIES_CUTOFF
    safe_r = np.where(small, 1.0, r)
    sinhc = np.where(small, 1 + r2 / 6 + r2 * r2 / 120, np.sinh(safe_r) / safe_r)
    _check_exponent(c0, r)
    scale = np.exp(c0)
    return scale * np.cosh(r), (scale * sinhc)[..., None] * c


def exp_pauli_vector(c0, c) -> np.ndarray:
    """Single-qubit exp(c0 I + sum_k c_k sigma_k) in closed form."""
    alpha, beta = pauli_vector_coefficients(c0, c)
    return alpha[..., None, None] * np.eye(2) + np.einsum("...k,kij->...ij", beta, SIGMA)


def apply_pauli_vector(alpha, beta, psi: np.ndarray) -> np.ndarray:
    """(alpha I + beta.sigma) psi for single-qubit states, batched."""
    b1, b2, b3 = beta[..., 0], beta[..., 1], beta[..., 2]
    u, v = psi[..., 0], psi[..., 1]
    return np.stack(
        [alpha * u + b3 * u + (b1 - 1j * b2) * v, alpha * v + (b1 + 1j * b2) * u - b3 * v],
        axis=-1,
    )


def bloch_vector(psi_hat: np.ndarray) -> np.ndarray:
    """(<sigma_1>, <sigma_2>, <sigma_3>) of normalized single-qubit states."""
    u, v = psi_hat[..., 0], psi_hat[..., 1]
    cross = np.conj(u) * v
    return np.stack([2 * cross.real, 2 * cross.imag, np.abs(u) ** 2 - np.abs(v) ** 2], axis=-1)


@dataclass
class QuantumState:
    """Unnormalized amplitudes plus a log-scale kept outside the vector.

    The represented vector is ``exp(log_norm_offset) * amplitudes``.  Both
    fields may carry a leading batch axis.
    """

    amplitudes: np.ndarray
    log_norm_offset: float | np.ndarray = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        dim = self.amplitudes.shape[-1]
        if dim < 2 or dim & (dim - 1):
            raise ValueError(f"dimension {dim} is not a power of two")
        self.log_norm_offset = np.asarray(self.log_norm_offset, dtype=float)

    @classmethod
    def basis(cls, index: int, m: int = 1) -> "QuantumState":
        amps = np.zeros(2**m, dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def m(self) -> int:
        return self.dim.bit_length() - 1

    def log_norm(self):
        with np.errstate(divide="ignore"):
            return self.log_norm_offset + np.log(np.linalg.norm(self.amplitudes, axis=-1))

    def norm(self):
        return np.exp(self.log_norm())

    def normalized(self) -> np.ndarray:
        return normalize(self.amplitudes)

    def rescaled(self, lo: float = 1e-6, hi: float = 1e6) -> "QuantumState":
        amps, offset = renormalize(self.amplitudes, self.log_norm_offset, lo, hi)
        return QuantumState(amps, offset)


def as_amplitudes(state) -> np.ndarray:
    if isinstance(state, QuantumState):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def normalize(psi: np.ndarray) -> np.ndarray:
    psi = as_amplitudes(psi)
    nrm = np.linalg.norm(psi, axis=-1, keepdims=True)
    if np.any(nrm == 0) or not np.all(np.isfinite(nrm)):
        raise ValueError("state has zero or non-finite norm")
    return psi / nrm


def renormalize(psi: np.ndarray, log_norm, lo: float = 1e-6, hi: float = 1e6):
    """Rescale rows whose norm left [lo, hi], moving the scale into ``log_norm``."""
    nrm = np.linalg.norm(psi, axis=-1)
    out = (nrm < lo) | (nrm > hi)
    if not np.any(out):
        return psi, log_norm
    if np.any(nrm[out] == 0) or not np.all(np.isfinite(nrm)):
        raise ValueError("state has zero or non-finite norm")
    scale = np.where(out, nrm, 1.0)
    return psi / scale[..., None], log_norm + np.log(scale)


def fidelity(a, b) -> np.ndarray | float:
    """|<a_hat|b_hat>| of the normalized views (batched over leading axes)."""
    a_hat = normalize(a)
    b_hat = normalize(b)
    f = np.abs(np.sum(np.conj(a_hat) * b_hat, axis=-1))
    f = np.minimum(f, 1.0)
    return float(f) if f.ndim == 0 else f


def project_density(state) -> np.ndarray:
    """|s_hat><s_hat| for a (batch of) state(s)."""
    s = normalize(state)
    return s[..., :, None] * np.conj(s[..., None, :])


def normalize_density(rho: np.ndarray) -> np.ndarray:
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.any(np.abs(tr) == 0):
        raise ValueError("density matrix has zero trace")
    return rho / tr[..., None, None]


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> np.ndarray | float:
    diff = rho - sigma
    diff = 0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2)))
    d = 0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff)), axis=-1)
    return float(d) if np.ndim(d) == 0 else d


def random_state(rng: np.random.Generator, m: int = 1, size=None) -> np.ndarray:
    """Haar-random normalized amplitudes."""
    shape = (2**m,) if size is None else (size, 2**m)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return normalize(z)
