"""Periodic Jacobi operators.

The operator acts as ``(Ju)_n = a_{n-1} u_{n-1} + b_n u_n + a_n u_{n+1}`` with
p-periodic coefficients stored as ``a[0..p-1]``, ``b[0..p-1]``.

Transfer matrices map ``(u_n, u_{n-1})`` to ``(u_{n+1}, u_n)``::

    T_n(E) = (1/a_n) [[E - b_n, -a_{n-1}],
                      [a_n,      0       ]]      (a_{-1} = a_{p-1})

and the monodromy is ``M(E) = T_{p-1}(E) ... T_0(E)``.  Since
``det T_n = a_{n-1}/a_n`` the product telescopes to ``a_{-1}/a_{p-1} = 1``.
For p = 1, a = 1, b = 0 this gives ``M(E) = [[E, -1], [1, 0]]`` and
``Δ(E) = E``, so the spectrum is ``[-2, 2]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bands import BandStructure, NumericalFailure, assemble

CLOSED_GAP_TOL = 1e-10


@dataclass(frozen=True)
class PeriodicJacobi:
    a: tuple[float, ...]
    b: tuple[float, ...]
    gamma: float = field(default=0.0, compare=False)

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        b = tuple(float(x) for x in self.b)
        if len(a) != len(b) or not a:
            raise ValueError("a and b must be nonempty and of equal length")
        if not all(math.isfinite(x) for x in a + b):
            raise ValueError("non-finite Jacobi coefficient")
        gamma = self.gamma if self.gamma > 0 else min(a)
        if min(a) < gamma or gamma <= 0:
            raise ValueError(f"off-diagonal coefficients must be >= gamma > 0, got min {min(a)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "gamma", float(gamma))

    @property
    def p(self) -> int:
        return len(self.a)

    def extended(self, q: int) -> "PeriodicJacobi":
        """The same operator viewed as q-periodic (q a multiple of p)."""
        if q % self.p:
            raise ValueError(f"period {q} is not a multiple of {self.p}")
        k = q // self.p
        return PeriodicJacobi(self.a * k, self.b * k, self.gamma)

    def shifted(self, c: float) -> "PeriodicJacobi":
        return PeriodicJacobi(self.a, tuple(x + c for x in self.b), self.gamma)

    def to_dict(self) -> dict:
        return {"p": self.p, "a": list(self.a), "b": list(self.b)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodicJacobi":
        J = cls(tuple(d["a"]), tuple(d["b"]), d.get("gamma", 0.0))
        if "p" in d and int(d["p"]) != J.p:
            raise ValueError(f"declared period {d['p']} does not match {J.p} coefficients")
        return J

    @classmethod
    def from_json(cls, text: str) -> "PeriodicJacobi":
        return cls.from_dict(json.loads(text))


def one_step(J: PeriodicJacobi, n: int, E) -> np.ndarray:
    a_n, a_prev = J.a[n], J.a[n - 1]
    return np.array([[E - J.b[n], -a_prev], [a_n, 0.0]]) / a_n


def transfer_matrix(J: PeriodicJacobi, E) -> np.ndarray:
    M = np.eye(2, dtype=complex if isinstance(E, complex) else float)
    for n in range(J.p):
        M = one_step(J, n, E) @ M
    return M


def _monodromy_entries(J: PeriodicJacobi, E, derivative: bool):
    """Monodromy entries (and E-derivatives) for an array of energies."""
    E = np.asarray(E)
    one = np.ones_like(E, dtype=np.result_type(E, float))
    zero = np.zeros_like(one)
    m11, m12, m21, m22 = one, zero, zero, one
    d11 = d12 = d21 = d22 = zero
    for n in range(J.p):
        an, ap, bn = J.a[n], J.a[n - 1], J.b[n]
        t11 = (E - bn) / an
        t12 = -ap / an
        if derivative:
            # d/dE of T_n M = T_n' M + T_n dM, with T_n' = (1/a_n)[[1,0],[0,0]]
            d11, d12, d21, d22 = (
                m11 / an + t11 * d11 + t12 * d21,
                m12 / an + t11 * d12 + t12 * d22,
                d11,
                d12,
            )
        m11, m12, m21, m22 = t11 * m11 + t12 * m21, t11 * m12 + t12 * m22, m11, m12
    return (m11, m12, m21, m22), (d11, d12, d21, d22)


def discriminant(J: PeriodicJacobi, E):
    (m11, _, _, m22), _ = _monodromy_entries(J, E, False)
    out = m11 + m22
    return out if np.ndim(out) else out.item()


def discriminant_derivative(J: PeriodicJacobi, E):
    _, (d11, _, _, d22) = _monodromy_entries(J, E, True)
    out = d11 + d22
    return out if np.ndim(out) else out.item()


def periodic_matrix(J: PeriodicJacobi, sign: int = 1) -> np.ndarray:
    """p x p truncation with (anti)periodic corner; eigenvalues solve Δ = 2·sign."""
    p = J.p
    H = np.diag(np.array(J.b, dtype=float))
    for n in range(p - 1):
        H[n, n + 1] += J.a[n]
        H[n + 1, n] += J.a[n]
    H[p - 1, 0] += sign * J.a[p - 1]
    H[0, p - 1] += sign * J.a[p - 1]
    return H


# eigvalsh is backward stable, so a Newton correction larger than this means
# the edge sits at a (nearly) double root and Newton would only wander
POLISH_MAX_STEP = 1e-12


def _polish(J: PeriodicJacobi, E: float, label: int, steps: int = 3) -> float:
    f = discriminant(J, E) - label
    for _ in range(steps):
        d = discriminant_derivative(J, E)
        if d == 0.0:
            break
        E_new = E - f / d
        if abs(E_new - E) > POLISH_MAX_STEP * (1.0 + abs(E)):
            break
        f_new = discriminant(J, E_new) - label
        if not abs(f_new) < abs(f):
            break
        E, f = E_new, f_new
    return E


def band_structure(J: PeriodicJacobi, check_monotone: bool = True) -> BandStructure:
    """Bands from the periodic (Δ = 2) and antiperiodic (Δ = -2) eigenproblems."""
    try:
        per = np.linalg.eigvalsh(periodic_matrix(J, 1))
        anti = np.linalg.eigvalsh(periodic_matrix(J, -1))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue solver failed: {exc}") from exc
    edges = sorted([(float(E), 2) for E in per] + [(float(E), -2) for E in anti])
    edges = [(_polish(J, E, lab), lab) for E, lab in edges]
    closed = []
    for k in range(1, len(edges) - 1, 2):
        lo, hi = edges[k][0], edges[k + 1][0]
        if hi - lo <= CLOSED_GAP_TOL:
            mid = 0.5 * (lo + hi)
            edges[k] = (mid, edges[k][1])
            edges[k + 1] = (mid, edges[k + 1][1])
            closed.append(mid)
    bs = assemble(edges, closed)
    if check_monotone:
        _check_monotone(J, bs)
    return bs


def _check_monotone(J: PeriodicJacobi, bs: BandStructure, samples: int = 8) -> None:
    for band in bs.floquet_bands():
        if band.length <= 1e-8:
            continue
        t = (np.arange(samples) + 0.5) / samples
        d = discriminant_derivative(J, band.lo + t * band.length)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise NumericalFailure(
                f"discriminant not monotone on band [{band.lo}, {band.hi}]")


def sign_pattern_ok(bs: BandStructure) -> bool:
    """Labels go +2, -2, -2, +2, +2, ... read from the top edge downwards."""
    labels = [lab for _, lab in bs.edges][::-1]
    return all(lab == (2 if (k + 1) // 2 % 2 == 0 else -2) for k, lab in enumerate(labels))


class SupDistance(NamedTuple):
    sup: float
    operator_bound: float
    period: int


def sup_distance(J1: PeriodicJacobi, J2: PeriodicJacobi, max_period: int = 1 << 20) -> SupDistance:
    """Coefficient sup-distance over the common period, and ``2 max|Δa| + max|Δb|``."""
    q = math.lcm(J1.p, J2.p)
    if q > max_period:
        raise ValueError(f"periods {J1.p} and {J2.p} are not commensurable within {max_period}")
    A1, A2 = J1.extended(q), J2.extended(q)
    da = max(abs(x - y) for x, y in zip(A1.a, A2.a))
    db = max(abs(x - y) for x, y in zip(A1.b, A2.b))
    return SupDistance(max(da, db), 2 * da + db, q)


def operator_norm(J: PeriodicJacobi) -> float:
    """Bound ``2 max|a| + max|b|`` on the norm of the doubly infinite matrix."""
    return 2 * max(abs(x) for x in J.a) + max(abs(x) for x in J.b)


def random_jacobi(rng: np.random.Generator, p: int, a_range=(0.5, 2.0),
                  b_range=(-2.0, 2.0)) -> PeriodicJacobi:
    a = rng.uniform(*a_range, size=p)
    b = rng.uniform(*b_range, size=p)
    return PeriodicJacobi(tuple(a), tuple(b), gamma=a_range[0])


def derivative_growth_ratio(J: PeriodicJacobi, samples: int = 16) -> float:
    """``max |Δ'(E)| / g^p`` over the bands, ``g = max(1, max|E - b_n|/a_n + max a / min a)``.

    A diagnostic for the discrete derivative estimate, which comes with no
    explicit constant; the ratio over an ensemble is the fitted constant.
    """
    bs = band_structure(J, check_monotone=False)
    a = np.array(J.a)
    b = np.array(J.b)
    worst = 0.0
    for band in bs.floquet_bands():
        E = band.lo + (np.arange(samples + 1) / samples) * band.length
        d = np.abs(np.asarray(discriminant_derivative(J, E)))
        g = np.maximum(1.0, np.max(np.abs(E[:, None] - b) / a, axis=1) + a.max() / a.min())
        worst = max(worst, float(np.max(d / g ** J.p)))
    return worst
