"""Circular convolution, partial circulant operators and the Gamma_v family.

Index convention: the API speaks of coordinates 1..n, storage is 0-based.
With 0-based storage the convolution reads
``(x * xi)[k] = sum_j x[j] * xi[(k - j) % n]`` so that ``e_1 * xi == xi``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.fft as sfft
from scipy.linalg import circulant
from scipy.sparse.linalg import LinearOperator

from config.settings import get_runtime_settings

logger = logging.getLogger(__name__)

IMAG_RESIDUE_TOL = 1e-10
HADAMARD_KINDS = ("dft", "idft", "walsh", "dct")
_REAL_COMPLEX_TRIPLES = {("idft", "dft", "dft"), ("dft", "idft", "idft")}


class MeasurementError(ValueError):
    """Raised on invalid dimensions, parameters or size caps of measurement operators."""


def as_real_vector(x: Any, name: str = "x") -> np.ndarray:
    """Validate a dense real signal: 1-D, n >= 1, all entries finite."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise MeasurementError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise MeasurementError(f"{name} must have dimension n >= 1")
    if not np.all(np.isfinite(arr)):
        raise MeasurementError(f"{name} contains NaN or Inf entries")
    return arr


def _check_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise MeasurementError(f"dimension mismatch in {what}: {a.shape[-1]} != {b.shape[-1]}")


def _real_part(z: np.ndarray, scale: float) -> np.ndarray:
    residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if residue > IMAG_RESIDUE_TOL * scale:
        raise MeasurementError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_TOL:g} relative to {scale:.3e}; "
            "the composition is not real-valued"
        )
    return np.ascontiguousarray(z.real)


def circular_convolve(x: Any, xi: Any) -> np.ndarray:
    """FFT evaluation of ``x * xi``: transform both, multiply, invert, keep the real part."""
    x = as_real_vector(x, "x")
    xi = as_real_vector(xi, "xi")
    _check_dims(x, xi, "circular_convolve")
    full = sfft.ifft(sfft.fft(x) * sfft.fft(xi))
    return _real_part(full, scale=float(np.linalg.norm(x) * np.linalg.norm(xi)))


def circular_convolve_naive(x: Any, xi: Any, *, cap: Optional[int] = None) -> np.ndarray:
    """Direct O(n^2) evaluation of the index formula, for testing the FFT path."""
    x = as_real_vector(x, "x")
    xi = as_real_vector(xi, "xi")
    _check_dims(x, xi, "circular_convolve_naive")
    n = x.size
    cap = int(cap if cap is not None else get_runtime_settings()["naive_cap"])
    if n > cap:
        raise MeasurementError(f"naive convolution limited to n <= {cap}, got {n}")

    out = np.empty(n)
    cols = np.arange(n)
    # Row blocks keep the index table small at n = 4096.
    for start in range(0, n, 256):
        rows = np.arange(start, min(start + 256, n))
        table = xi[(rows[:, None] - cols[None, :]) % n]
        out[rows] = table @ x
    return out


@dataclass(frozen=True, eq=False)
class SelectorMask:
    """Bernoulli(delta) row selectors; ``omega`` holds sorted 0-based indices."""

    n: int
    delta: float
    omega: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega, dtype=np.int64)
        if omega.ndim != 1:
            raise MeasurementError("omega must be a flat index list")
        if omega.size and (omega[0] < 0 or omega[-1] >= self.n or np.any(np.diff(omega) <= 0)):
            raise MeasurementError("omega must be strictly increasing indices inside [0, n)")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @property
    def m(self) -> int:
        return int(self.omega.size)

    @property
    def target_m(self) -> float:
        return self.delta * self.n

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "delta": self.delta,
            "seed": self.seed,
            "omega": [int(i) + 1 for i in self.omega],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SelectorMask":
        try:
            n = int(data["n"])
            omega = np.asarray(sorted(int(i) - 1 for i in data["omega"]), dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise MeasurementError(f"malformed mask record: {exc}") from exc
        delta = float(data.get("delta") or (omega.size / n))
        seed = data.get("seed")
        return cls(n=n, delta=delta, omega=omega, seed=None if seed is None else int(seed))


def make_selector_mask(n: int, delta: float, seed: int) -> SelectorMask:
    """Draw n independent Bernoulli(delta) selectors; Omega is the set of successes."""
    if n < 1:
        raise MeasurementError(f"n must be >= 1, got {n}")
    if not (0.0 < delta <= 1.0):
        raise MeasurementError(f"delta must lie in (0, 1], got {delta}")
    rng = np.random.default_rng(seed)
    selectors = rng.random(n) < delta
    return SelectorMask(n=n, delta=float(delta), omega=np.flatnonzero(selectors), seed=seed)


@dataclass(frozen=True, eq=False)
class CirculantOperator:
    """Convolution with a fixed generator, applied through cached spectra."""

    xi: np.ndarray
    spectrum: np.ndarray = field(init=False, repr=False)
    _half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        xi = as_real_vector(self.xi, "xi").copy()
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "spectrum", sfft.fft(xi))
        object.__setattr__(self, "_half", sfft.rfft(xi))

    @property
    def n(self) -> int:
        return int(self.xi.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _check_dims(x, self.xi, "CirculantOperator.apply")
        return sfft.irfft(sfft.rfft(x) * self._half, n=self.n)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        # Correlation with xi, i.e. convolution with the time-reversed generator.
        y = np.asarray(y, dtype=float)
        _check_dims(y, self.xi, "CirculantOperator.adjoint")
        return sfft.irfft(sfft.rfft(y) * np.conj(self._half), n=self.n)

    def matrix(self) -> np.ndarray:
        return circulant(self.xi)


@dataclass(frozen=True, eq=False)
class PartialCirculantOperator:
    """B x = P_Omega(x * xi), an m x n operator with m = |Omega|."""

    circ: CirculantOperator
    mask: SelectorMask

    def __post_init__(self) -> None:
        if self.mask.n != self.circ.n:
            raise MeasurementError(f"mask dimension {self.mask.n} != generator dimension {self.circ.n}")

    @property
    def n(self) -> int:
        return self.circ.n

    @property
    def m(self) -> int:
        return self.mask.m

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(float)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.circ.apply(np.ravel(x))[self.mask.omega]

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        y = np.ravel(np.asarray(y, dtype=float))
        if y.size != self.m:
            raise MeasurementError(f"dimension mismatch in adjoint: {y.size} != {self.m}")
        full = np.zeros(self.n)
        full[self.mask.omega] = y
        return self.circ.adjoint(full)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.rmatvec, dtype=float)

    def matrix(self) -> np.ndarray:
        return self.circ.matrix()[self.mask.omega]


def make_partial_circulant(xi: Any, mask: SelectorMask) -> PartialCirculantOperator:
    return PartialCirculantOperator(CirculantOperator(np.asarray(xi, dtype=float)), mask)


def apply_partial(B: PartialCirculantOperator, x: Any) -> np.ndarray:
    """Restriction of x * xi to Omega, in sorted index order (length m, possibly 0)."""
    x = as_real_vector(x, "x")
    if x.size != B.n:
        raise MeasurementError(f"dimension mismatch in apply_partial: {x.size} != {B.n}")
    return B.matvec(x)


def adjoint_partial(B: PartialCirculantOperator, y: Any) -> np.ndarray:
    """B* y: zero-fill outside Omega, then correlate with the generator."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size != B.m:
        raise MeasurementError(f"dimension mismatch in adjoint_partial: {y.shape} vs m={B.m}")
    if not np.all(np.isfinite(y)):
        raise MeasurementError("y contains NaN or Inf entries")
    return B.rmatvec(y)


def _fwht(z: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform along the last axis (Sylvester order)."""
    z = np.array(z, dtype=np.result_type(z, float))
    n = z.shape[-1]
    batch = z.shape[:-1]
    h = 1
    while h < n:
        z = z.reshape(*batch, n // (2 * h), 2, h)
        a = z[..., 0, :]
        b = z[..., 1, :]
        z = np.stack((a + b, a - b), axis=-2)
        h *= 2
    return z.reshape(*batch, n) / math.sqrt(n)


def _dct(z: np.ndarray, inverse: bool) -> np.ndarray:
    fn = sfft.idct if inverse else sfft.dct
    if np.iscomplexobj(z):
        return fn(z.real, type=2, norm="ortho", axis=-1) + 1j * fn(z.imag, type=2, norm="ortho", axis=-1)
    return fn(np.asarray(z, dtype=float), type=2, norm="ortho", axis=-1)


@dataclass(frozen=True)
class HadamardTypeMatrix:
    """Orthogonal or unitary n x n matrix with entries bounded by beta / sqrt(n).

    Applied along the last axis, so stacks of vectors transform in one call.
    """

    n: int
    kind: str
    beta: float
    is_complex: bool

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        if z.shape[-1] != self.n:
            raise MeasurementError(f"dimension mismatch: {z.shape[-1]} != {self.n}")
        if self.kind == "dft":
            return sfft.fft(z, axis=-1, norm="ortho")
        if self.kind == "idft":
            return sfft.ifft(z, axis=-1, norm="ortho")
        if self.kind == "walsh":
            return _fwht(z)
        return _dct(z, inverse=False)

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        if z.shape[-1] != self.n:
            raise MeasurementError(f"dimension mismatch: {z.shape[-1]} != {self.n}")
        if self.kind == "dft":
            return sfft.ifft(z, axis=-1, norm="ortho")
        if self.kind == "idft":
            return sfft.fft(z, axis=-1, norm="ortho")
        if self.kind == "walsh":
            return _fwht(z)
        return _dct(z, inverse=True)

    def row(self, i: int) -> np.ndarray:
        """Row i (0-based) of the matrix, via O[i, :] = conj(O* e_i)."""
        if not 0 <= i < self.n:
            raise MeasurementError(f"row index {i} outside [0, {self.n})")
        e = np.zeros(self.n)
        e[i] = 1.0
        return np.conj(self.adjoint(e))

    def matrix(self) -> np.ndarray:
        # apply() maps each row e_j of the identity to the column O e_j.
        return self.apply(np.eye(self.n)).T


def make_hadamard_type(n: int, kind: str) -> HadamardTypeMatrix:
    kind = kind.lower()
    if kind not in HADAMARD_KINDS:
        raise MeasurementError(f"unknown Hadamard-type kind {kind!r}; expected one of {HADAMARD_KINDS}")
    if n < 1:
        raise MeasurementError(f"n must be >= 1, got {n}")
    if kind == "walsh" and n & (n - 1):
        raise MeasurementError(f"Walsh-Hadamard needs n a power of two, got {n}")
    beta = math.sqrt(2.0) if kind == "dct" else 1.0
    return HadamardTypeMatrix(n=n, kind=kind, beta=beta, is_complex=kind in ("dft", "idft"))


def fourier_triple(n: int) -> tuple[HadamardTypeMatrix, HadamardTypeMatrix, HadamardTypeMatrix]:
    """(U, W, O) = (n^-1/2 F^-1, n^-1/2 F, n^-1/2 F); Gamma_v is then convolution with v."""
    return make_hadamard_type(n, "idft"), make_hadamard_type(n, "dft"), make_hadamard_type(n, "dft")


def hadamard_triple(n: int, kind: str) -> tuple[HadamardTypeMatrix, HadamardTypeMatrix, HadamardTypeMatrix]:
    if kind.lower() == "fourier":
        return fourier_triple(n)
    h = make_hadamard_type(n, kind)
    return h, h, h


@dataclass(frozen=True, eq=False)
class GammaOperator:
    """Gamma_v = sqrt(n) U D_{Wv} O for a fixed v."""

    U: HadamardTypeMatrix
    W: HadamardTypeMatrix
    O: HadamardTypeMatrix
    v: np.ndarray
    diagonal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        v = as_real_vector(self.v, "v").copy()
        if not (self.U.n == self.W.n == self.O.n == v.size):
            raise MeasurementError(
                f"dimension mismatch: U={self.U.n}, W={self.W.n}, O={self.O.n}, v={v.size}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "diagonal", self.W.apply(v))

    @property
    def n(self) -> int:
        return int(self.v.size)

    @property
    def real_valued(self) -> bool:
        kinds = (self.U.kind, self.W.kind, self.O.kind)
        if not any(h.is_complex for h in (self.U, self.W, self.O)):
            return True
        return kinds in _REAL_COMPLEX_TRIPLES

    def _scale(self, z: np.ndarray) -> float:
        return math.sqrt(self.n) * float(np.max(np.abs(self.diagonal))) * float(np.max(np.abs(z)) * math.sqrt(self.n))

    def apply(self, z: np.ndarray, real: Optional[bool] = None) -> np.ndarray:
        z = np.asarray(z)
        if z.shape[-1] != self.n:
            raise MeasurementError(f"dimension mismatch: {z.shape[-1]} != {self.n}")
        out = math.sqrt(self.n) * self.U.apply(self.diagonal * self.O.apply(z))
        real = self.real_valued if real is None else real
        if real and np.iscomplexobj(out):
            return _real_part(out, scale=max(self._scale(z), 1e-300))
        return out

    def adjoint(self, z: np.ndarray, real: Optional[bool] = None) -> np.ndarray:
        z = np.asarray(z)
        if z.shape[-1] != self.n:
            raise MeasurementError(f"dimension mismatch: {z.shape[-1]} != {self.n}")
        out = math.sqrt(self.n) * self.O.adjoint(np.conj(self.diagonal) * self.U.adjoint(z))
        real = self.real_valued if real is None else real
        if real and np.iscomplexobj(out):
            return _real_part(out, scale=max(self._scale(z), 1e-300))
        return out

    def materialize(self, cap: Optional[int] = None) -> np.ndarray:
        cap = int(cap if cap is not None else get_runtime_settings()["materialize_cap"])
        if self.n > cap:
            raise MeasurementError(f"materialization limited to n <= {cap}, got {self.n}")
        return self.apply(np.eye(self.n)).T

    @property
    def hs_norm(self) -> float:
        """sqrt(n) * ||v||_2, the Hilbert-Schmidt norm."""
        return math.sqrt(self.n) * float(np.linalg.norm(self.v))

    @property
    def operator_norm(self) -> float:
        """sqrt(n) * ||Wv||_inf, valid for unitary U and O."""
        return math.sqrt(self.n) * float(np.max(np.abs(self.diagonal)))

    @property
    def row_norm_bound(self) -> float:
        return self.U.beta * float(np.linalg.norm(self.v))


def gamma_apply(
    U: HadamardTypeMatrix,
    W: HadamardTypeMatrix,
    O: HadamardTypeMatrix,
    v: Any,
    z: Any,
    real: Optional[bool] = None,
) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim == 1:
        z = as_real_vector(z, "z") if not np.iscomplexobj(z) else z
    return GammaOperator(U, W, O, np.asarray(v, dtype=float)).apply(z, real=real)


def gamma_materialize(
    U: HadamardTypeMatrix,
    W: HadamardTypeMatrix,
    O: HadamardTypeMatrix,
    v: Any,
    cap: Optional[int] = None,
) -> np.ndarray:
    return GammaOperator(U, W, O, np.asarray(v, dtype=float)).materialize(cap=cap)


def unit_gamma_responses(
    U: HadamardTypeMatrix,
    W: HadamardTypeMatrix,
    O: HadamardTypeMatrix,
    xi: np.ndarray,
) -> np.ndarray:
    """Row i is Gamma_{e_i} xi = sqrt(n) U ((W e_i) . O xi), for all i at once."""
    n = U.n
    if not (W.n == O.n == n == np.shape(xi)[-1]):
        raise MeasurementError("dimension mismatch in unit_gamma_responses")
    columns = W.matrix().T  # row i holds W e_i
    out = math.sqrt(n) * U.apply(columns * O.apply(np.asarray(xi, dtype=float))[None, :])
    probe = GammaOperator(U, W, O, np.eye(1, n).ravel())
    if probe.real_valued and np.iscomplexobj(out):
        scale = math.sqrt(n) * float(np.max(np.abs(columns))) * math.sqrt(n) * max(float(np.max(np.abs(xi))), 1e-300)
        return _real_part(out, scale=scale)
    return out
