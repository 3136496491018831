"""Periodic CMV operators through Szegő transfer matrices.

One step is ``A(α, z) = ρ^{-1} [[z, -conj(α)], [-α z, 1]]`` with
``ρ = sqrt(1 - |α|^2)``, so ``det A = z``.  For even period p the
discriminant ``Δ(θ) = z^{-p/2} tr(A(α_{p-1}, z) ... A(α_0, z))`` at
``z = e^{iθ}`` is real, and the spectrum is ``{θ : |Δ(θ)| <= 2}``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np

from .bands import NumericalFailure
from .intervals import TWO_PI, CircularArcSet

IMAG_TOL = 1e-10
ANGLE_TOL = 1e-13
CLOSED_GAP_TOL = 1e-10
# a gap whose discriminant never exceeds 2 by more than this is treated as closed
CLOSED_GAP_RESIDUAL = 1e-9


@dataclass(frozen=True)
class PeriodicCMV:
    alpha: tuple[complex, ...]

    def __post_init__(self):
        alpha = tuple(complex(x) for x in self.alpha)
        if not alpha or len(alpha) % 2:
            raise ValueError(f"CMV period must be even and positive, got {len(alpha)}")
        if any(abs(x) >= 1 for x in alpha):
            raise ValueError("Verblunsky coefficients must lie in the open unit disk")
        object.__setattr__(self, "alpha", alpha)

    @property
    def p(self) -> int:
        return len(self.alpha)

    @property
    def rho(self) -> tuple[float, ...]:
        return tuple(math.sqrt(1.0 - abs(x) ** 2) for x in self.alpha)

    def extended(self, q: int) -> "PeriodicCMV":
        if q % self.p:
            raise ValueError(f"period {q} is not a multiple of {self.p}")
        return PeriodicCMV(self.alpha * (q // self.p))

    def rotated(self, phi: float) -> "PeriodicCMV":
        w = cmath.exp(1j * phi)
        return PeriodicCMV(tuple(w * x for x in self.alpha))

    def twisted(self, k: int) -> "PeriodicCMV":
        """``α_n -> e^{-2πikn/p} α_n``; rotates the spectral arcs by ``2πk/p``."""
        w = [cmath.exp(-2j * math.pi * k * n / self.p) for n in range(self.p)]
        return PeriodicCMV(tuple(x * c for x, c in zip(self.alpha, w)))

    def to_dict(self) -> dict:
        return {"p": self.p, "alpha": [[x.real, x.imag] for x in self.alpha]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodicCMV":
        C = cls(tuple(complex(re, im) for re, im in d["alpha"]))
        if "p" in d and int(d["p"]) != C.p:
            raise ValueError(f"declared period {d['p']} does not match {C.p} coefficients")
        return C

    @classmethod
    def from_json(cls, text: str) -> "PeriodicCMV":
        return cls.from_dict(json.loads(text))


def szego_transfer(alpha: complex, z: complex) -> np.ndarray:
    if abs(alpha) >= 1:
        raise ValueError("|alpha| must be < 1")
    if abs(abs(z) - 1.0) > 1e-12:
        raise ValueError("z must lie on the unit circle")
    rho = math.sqrt(1.0 - abs(alpha) ** 2)
    return np.array([[z, -alpha.conjugate()], [-alpha * z, 1.0]], dtype=complex) / rho


def _trace_and_derivative(C: PeriodicCMV, theta, derivative: bool):
    theta = np.asarray(theta, dtype=float)
    z = np.exp(1j * theta)
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    m11, m12, m21, m22 = one, zero, zero, one
    d11 = d12 = d21 = d22 = zero
    for al, r in zip(C.alpha, C.rho):
        t11, t12, t21, t22 = z / r, -al.conjugate() / r, -al * z / r, 1.0 / r
        if derivative:
            # dA/dθ = ρ^{-1} [[iz, 0], [-iαz, 0]]
            s11, s21 = 1j * t11, 1j * t21
            d11, d12, d21, d22 = (
                s11 * m11 + t11 * d11 + t12 * d21,
                s11 * m12 + t11 * d12 + t12 * d22,
                s21 * m11 + t21 * d11 + t22 * d21,
                s21 * m12 + t21 * d12 + t22 * d22,
            )
        m11, m12, m21, m22 = (t11 * m11 + t12 * m21, t11 * m12 + t12 * m22,
                              t21 * m11 + t22 * m21, t21 * m12 + t22 * m22)
    half = np.exp(-0.5j * C.p * theta)
    tr = half * (m11 + m22)
    dtr = None
    if derivative:
        dtr = half * (d11 + d22) - 0.5j * C.p * tr
    return tr, dtr


def _real(x, check: bool):
    if check and np.any(np.abs(np.imag(x)) > IMAG_TOL * np.maximum(1.0, np.abs(x))):
        raise NumericalFailure("CMV discriminant has a non-negligible imaginary part")
    out = np.real(x)
    return out if np.ndim(out) else float(out)


def cmv_discriminant(C: PeriodicCMV, theta, check: bool = True):
    tr, _ = _trace_and_derivative(C, theta, False)
    return _real(tr, check)


def cmv_discriminant_complex(C: PeriodicCMV, theta):
    tr, _ = _trace_and_derivative(C, theta, False)
    return tr


def cmv_discriminant_derivative(C: PeriodicCMV, theta, check: bool = True):
    _, dtr = _trace_and_derivative(C, theta, True)
    return _real(dtr, check)


def normalized_monodromy(C: PeriodicCMV, theta: float) -> np.ndarray:
    z = cmath.exp(1j * theta)
    M = np.eye(2, dtype=complex)
    for al in C.alpha:
        M = szego_transfer(al, z) @ M
    return M * cmath.exp(-0.5j * C.p * theta)


@dataclass(frozen=True)
class ArcBands:
    arcs: CircularArcSet
    edges: tuple[tuple[float, int], ...]
    grid_points: int

    def to_dict(self) -> dict:
        return {"arcs": self.arcs.to_list(), "edges": [[t, lab] for t, lab in self.edges],
                "grid_points": self.grid_points}


def _bisect_angle(f, lo: float, hi: float, flo: float) -> float:
    while hi - lo > ANGLE_TOL:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _edges_on_grid(C: PeriodicCMV, n: int) -> list[tuple[float, int]]:
    theta = np.arange(n + 1) * (TWO_PI / n)
    D = cmv_discriminant(C, theta)
    edges = []
    for label in (2, -2):
        g = D - label
        f = lambda t, label=label: cmv_discriminant(C, t) - label  # noqa: E731
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
        for i in idx:
            edges.append((_bisect_angle(f, theta[i], theta[i + 1], g[i]) % TWO_PI, label))
        for i in np.nonzero(g[:-1] == 0.0)[0]:
            # exact hits on grid nodes: count only genuine crossings
            if np.sign(g[i - 1]) * np.sign(g[i + 1]) < 0:
                edges.append((float(theta[i]), label))
    return sorted(edges)


def arc_band_structure(C: PeriodicCMV, points_per_period: int = 64,
                       max_doublings: int = 6) -> ArcBands:
    """Spectral arcs from bracketing ``Δ ∓ 2`` on a θ-grid.

    The grid is doubled until two consecutive resolutions find the same edge
    count; failing that within ``max_doublings`` raises.
    """
    n = points_per_period * C.p
    prev = _edges_on_grid(C, n)
    for _ in range(max_doublings):
        n *= 2
        cur = _edges_on_grid(C, n)
        if len(cur) == len(prev):
            break
        prev = cur
    else:
        raise NumericalFailure(f"edge count did not stabilize up to {n} grid points")
    edges = cur
    if not edges:
        arcs = CircularArcSet.full() if abs(cmv_discriminant(C, 0.0)) <= 2 else CircularArcSet(())
        return ArcBands(arcs, (), n)
    pieces = []
    m = len(edges)
    for k in range(m):
        s = edges[k][0]
        e = edges[(k + 1) % m][0]
        if k == m - 1 or e <= s:
            e += TWO_PI
        if m == 1:
            e = s + TWO_PI
        mid = 0.5 * (s + e)
        if abs(cmv_discriminant(C, mid)) <= 2 + CLOSED_GAP_RESIDUAL:
            pieces.append((s, e))
    # merge arcs separated by numerically closed gaps
    merged: list[list[float]] = []
    for s, e in pieces:
        if merged and s - merged[-1][1] <= CLOSED_GAP_TOL:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    if len(merged) > 1 and merged[0][0] + TWO_PI - merged[-1][1] <= CLOSED_GAP_TOL:
        first = merged.pop(0)
        merged[-1][1] = first[1] + TWO_PI
    return ArcBands(CircularArcSet.of(merged), tuple(edges), n)


def ring_matrix(C: PeriodicCMV, N: int) -> np.ndarray:
    """``L M`` factorization of the CMV matrix on a ring of N sites (N a multiple of p).

    ``Θ_j = [[conj(α_j), ρ_j], [ρ_j, -α_j]]``; L holds Θ_0, Θ_2, ... on sites
    (0,1), (2,3), ...; M holds Θ_1, Θ_3, ... on (1,2), ..., (N-1, 0).
    Its eigenvalues sample the spectrum of the p-periodic operator.
    """
    if N % C.p or N % 2:
        raise ValueError("ring size must be an even multiple of the period")
    al = np.array(C.alpha * (N // C.p))
    rho = np.sqrt(1.0 - np.abs(al) ** 2)
    L = np.zeros((N, N), dtype=complex)
    M = np.zeros((N, N), dtype=complex)
    for j in range(0, N, 2):
        L[j, j], L[j, j + 1] = al[j].conjugate(), rho[j]
        L[j + 1, j], L[j + 1, j + 1] = rho[j], -al[j]
    for j in range(1, N, 2):
        k = (j + 1) % N
        M[j, j], M[j, k] = al[j].conjugate(), rho[j]
        M[k, j], M[k, k] = rho[j], -al[j]
    return L @ M


def random_cmv(rng: np.random.Generator, p: int, max_modulus: float = 0.9) -> PeriodicCMV:
    r = rng.uniform(0.0, max_modulus, size=p)
    phi = rng.uniform(0.0, TWO_PI, size=p)
    return PeriodicCMV(tuple(r * np.exp(1j * phi)))
