"""Linearized operator around a ground state and its kernel.

L+ phi = A (-Delta)^s phi + c phi - p U^(p-1) phi
         + 2 b (int (-Delta)^(s/2) U . (-Delta)^(s/2) phi) (-Delta)^s U

with A the full Kirchhoff coefficient and c the local potential value
(c = 1, A = a + b ||(-Delta)^(s/2) U||^2 for the unit-potential ground
state).  Nondegeneracy means the kernel is exactly span{d_j U}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import linalg as sla

from . import spectral as sp
from .errors import EigensolverError, GridMismatchError, ParameterError
from .groundstate import KirchhoffGroundState, SystemSolution
from .spectral import Field, GridSpec

KERNEL_THRESHOLD = 1e-4  # |lambda| below this counts as kernel, at default grids


@dataclass
class LinearizedOperator:
    """Matrix-free symmetric action of L+ on the profile's grid."""

    profile: Field
    s: float
    p: float
    coefficient: float       # A = bulk Kirchhoff coefficient
    b: float
    c: float                 # local potential value

    def __post_init__(self):
        if not (0.0 < self.s <= 1.0):
            raise ParameterError(f"s must lie in (0, 1], got {self.s}")
        grid = self.profile.grid
        self._flU = sp.fractional_laplacian(self.profile, self.s).values
        self._pUp1 = self.p * sp.pos_power(self.profile.values, self.p - 1.0)
        self._h = grid.spacing**grid.dim
        self._sym = grid.symbol(self.s)

    @property
    def grid(self) -> GridSpec:
        return self.profile.grid

    @classmethod
    def from_kirchhoff(cls, ground: KirchhoffGroundState) -> "LinearizedOperator":
        pr = ground.params
        return cls(
            profile=ground.profile, s=pr.s, p=pr.p,
            coefficient=pr.a + pr.b * ground.seminorm_sq,
            b=pr.b, c=ground.c,
        )

    @classmethod
    def from_system_peak(cls, system: SystemSolution, i: int) -> "LinearizedOperator":
        pr = system.params
        return cls(
            profile=system.profiles[i], s=pr.s, p=pr.p,
            coefficient=system.kirchhoff_coefficient,
            b=pr.b, c=system.peak_values[i],
        )

    def apply_values(self, vals: np.ndarray) -> np.ndarray:
        flv = sp._ifftn(self._sym * sp._fftn(vals)).real
        out = self.coefficient * flv + (self.c - self._pUp1) * vals
        if self.b != 0.0:
            # <(-D)^(s/2)U, (-D)^(s/2)phi> = <(-D)^s U, phi>: one inner
            # product per application
            inner = self._h * float((self._flU * vals).sum())
            out += 2.0 * self.b * inner * self._flU
        return out


def apply_Lplus(op: LinearizedOperator, phi: Field) -> Field:
    """Evaluate the four-term action of L+ spectrally."""
    if phi.grid != op.grid:
        raise GridMismatchError("phi lives on a different grid than the profile")
    return Field(op.grid, op.apply_values(phi.values))


def translation_modes(op: LinearizedOperator) -> list[Field]:
    """Spectral derivatives d_j U, the expected kernel directions."""
    return [sp.derivative(op.profile, j) for j in range(op.grid.dim)]


def _dense_matrix(op: LinearizedOperator) -> np.ndarray:
    npts = op.grid.points_per_dim**op.grid.dim
    mat = np.empty((npts, npts))
    e = np.zeros(op.grid.shape)
    flat = e.ravel()
    for col in range(npts):
        flat[col] = 1.0
        mat[:, col] = op.apply_values(e).ravel()
        flat[col] = 0.0
    return 0.5 * (mat + mat.T)


def kernel_spectrum(op: LinearizedOperator, n: int,
                    method: str = "iterative",
                    inner_rtol: float = 1e-9,
                    maxiter: int = 4000) -> list[tuple[float, Field]]:
    """The n smallest-magnitude eigenpairs of the discretized operator.

    `iterative` runs restarted shift-inverted Lanczos (ARPACK) at shift 0
    with matrix-free inner MINRES solves preconditioned by the spectral
    part; eigenvalues are re-evaluated as Rayleigh quotients of the
    returned vectors.  `dense` assembles the matrix column by column and
    diagonalises it (cross-validation oracle on small grids).
    Eigenfields are L2-normalised.
    """
    if n < 1 or n > 2 * op.grid.dim + 4:
        raise ParameterError(f"n must lie in [1, 2N+4], got {n}")
    npts = op.grid.points_per_dim**op.grid.dim
    shape = op.grid.shape
    h = op.grid.spacing**op.grid.dim

    if method == "dense":
        if npts > 6000:
            raise ParameterError("dense spectrum limited to small grids")
        mat = _dense_matrix(op)
        vals, vecs = np.linalg.eigh(mat)
        order = np.argsort(np.abs(vals))[:n]
        pairs = []
        for idx in order:
            v = vecs[:, idx].reshape(shape)
            v = v / np.sqrt(h * (v**2).sum())
            pairs.append((float(vals[idx]), Field(op.grid, v)))
        return pairs
    if method != "iterative":
        raise ParameterError(f"unknown method {method!r}")

    def matvec(flat):
        return op.apply_values(flat.reshape(shape)).ravel()

    a_op = sla.LinearOperator((npts, npts), matvec=matvec, dtype=float)
    precond_arr = 1.0 / (op.coefficient * op._sym + op.c)
    m_op = sla.LinearOperator(
        (npts, npts),
        matvec=lambda v: sp._ifftn(precond_arr * sp._fftn(v.reshape(shape))).real.ravel(),
        dtype=float,
    )
    solve_failures = []

    def opinv(rhs):
        x, info = sla.minres(a_op, rhs, rtol=inner_rtol, maxiter=maxiter, M=m_op)
        if info > 0:
            solve_failures.append(info)
        return x

    opinv_op = sla.LinearOperator((npts, npts), matvec=opinv, dtype=float)
    v0 = np.cos(np.arange(npts) * 0.37) + 0.5  # fixed deterministic start
    try:
        vals, vecs = sla.eigsh(a_op, k=n, sigma=0.0, which="LM", v0=v0,
                               OPinv=opinv_op, maxiter=300, tol=1e-10)
    except sla.ArpackNoConvergence as exc:
        ritz = []
        if exc.eigenvalues is not None and exc.eigenvectors is not None:
            for lam, vec in zip(exc.eigenvalues, exc.eigenvectors.T):
                r = np.linalg.norm(matvec(vec) - lam * vec)
                ritz.append(float(r))
        raise EigensolverError(
            f"shift-invert Lanczos stagnated ({exc})", ritz_residuals=ritz,
        ) from exc
    if len(solve_failures) > len(vals) * 50:
        raise EigensolverError(
            f"inner MINRES failed to converge {len(solve_failures)} times",
            ritz_residuals=None,
        )

    pairs = []
    for idx in range(vals.size):
        v = vecs[:, idx]
        # Rayleigh quotient cleans up inexact-inverse bias
        lam = float(v @ matvec(v) / (v @ v))
        vn = v.reshape(shape) / np.sqrt(h * (v**2).sum())
        pairs.append((lam, Field(op.grid, vn)))
    pairs.sort(key=lambda t: abs(t[0]))
    return pairs[:n]


def subspace_cosines(op: LinearizedOperator,
                     fields: list[Field]) -> list[float]:
    """Cosine of each field against span{d_j U} (orthogonal projection)."""
    modes = translation_modes(op)
    h = op.grid.spacing**op.grid.dim
    basis = np.stack([m.values.ravel() for m in modes])
    q, _ = np.linalg.qr(basis.T)
    out = []
    for f in fields:
        v = f.values.ravel()
        nv = np.linalg.norm(v)
        out.append(float(np.linalg.norm(q.T @ v) / nv) if nv > 0 else 0.0)
    return out


def kernel_report(op: LinearizedOperator, n: int,
                  threshold: float = KERNEL_THRESHOLD,
                  method: str = "iterative") -> dict:
    """Spectrum summary: kernel count/alignment, gap, Morse-index count.

    The negative-eigenvalue count is a diagnostic only.
    """
    pairs = kernel_spectrum(op, n, method=method)
    vals = [lam for lam, _ in pairs]
    kernel_pairs = [(lam, f) for lam, f in pairs if abs(lam) < threshold]
    cosines = subspace_cosines(op, [f for _, f in kernel_pairs])
    absvals = sorted(abs(v) for v in vals)
    kdim = len(kernel_pairs)
    gap_ratio = (absvals[kdim] / absvals[kdim - 1]
                 if 0 < kdim < len(absvals) else float("inf"))
    return {
        "eigenvalues": vals,
        "threshold": threshold,
        "kernel_dim": kdim,
        "kernel_cosines": cosines,
        "gap_ratio": gap_ratio,
        "negative_count": sum(1 for v in vals if v < -threshold),
    }
