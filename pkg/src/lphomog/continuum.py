"""Hill's equation ``-y'' + V y = E y`` with T-periodic piecewise-constant V.

On a piece of width h where ``V = v`` the propagator of ``(y, y')`` is, with
``κ = E - v``,

    P = [[c, s], [-κ s, c]],   c = cos(√κ h),  s = sin(√κ h)/√κ

(cosh/sinh for κ < 0, ``[[1, h], [0, 1]]`` at κ = 0), so the monodromy is an
exact finite product.  Near κ h² = 0 the entries and their κ-derivatives are
summed from Taylor series to avoid cancellation in ``(h c - s)/(2κ)``.

Band edges are found without a scanning grid: by Sturm oscillation the j-th
Dirichlet eigenvalue ``μ_j`` equals the smallest E at which the Dirichlet
solution has j zeros in (0, T), and each ``μ_j`` lies in the closure of the
j-th gap.  Between ``μ_{j-1}`` and ``μ_j`` the discriminant has exactly one
zero (inside band j) and the two edges are the unique transitions of
``|Δ| >= 2``; all of this is located by vectorized bisection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from math import factorial

import numpy as np

from .bands import BandStructure, NumericalFailure, assemble

SERIES_CUTOFF = 1.0  # |κ h²| below which Taylor series are used
SERIES_TERMS = 20
CLOSED_GAP_RESIDUAL = 1e-9
EDGE_RESIDUAL = 1e-10

_K = np.arange(SERIES_TERMS)
_C_COEF = np.array([(-1.0) ** k / factorial(2 * k) for k in _K])
_S_COEF = np.array([(-1.0) ** k / factorial(2 * k + 1) for k in _K])
_DS_COEF = np.array([k * (-1.0) ** k / factorial(2 * k + 1) for k in _K])


@dataclass(frozen=True)
class PiecewisePotential:
    """T-periodic potential equal to ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``."""

    T: float
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        bp = tuple(float(x) for x in self.breakpoints)
        vals = tuple(float(x) for x in self.values)
        T = float(self.T)
        if not (T > 0 and math.isfinite(T)):
            raise ValueError("period must be positive and finite")
        if len(bp) != len(vals) + 1 or not vals:
            raise ValueError("need len(breakpoints) == len(values) + 1 >= 2")
        if bp[0] != 0.0 or abs(bp[-1] - T) > 1e-12 * T:
            raise ValueError("breakpoints must run from 0 to T")
        if any(b <= a for a, b in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("non-finite potential value")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "breakpoints", bp[:-1] + (T,))
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, T: float, c: float = 0.0) -> "PiecewisePotential":
        return cls(T, (0.0, T), (c,))

    @classmethod
    def uniform(cls, T: float, values) -> "PiecewisePotential":
        vals = tuple(values)
        m = len(vals)
        return cls(T, tuple(T * k / m for k in range(m)) + (T,), vals)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(np.array(self.breakpoints))

    @property
    def min_value(self) -> float:
        return min(self.values)

    @property
    def max_value(self) -> float:
        return max(self.values)

    def __call__(self, x):
        x = np.mod(np.asarray(x, dtype=float), self.T)
        idx = np.searchsorted(np.array(self.breakpoints), x, side="right") - 1
        out = np.array(self.values)[np.clip(idx, 0, len(self.values) - 1)]
        return out if out.ndim else float(out)

    def shifted(self, c: float) -> "PiecewisePotential":
        return PiecewisePotential(self.T, self.breakpoints, tuple(v + c for v in self.values))

    def extended(self, k: int) -> "PiecewisePotential":
        """The same function viewed as (k T)-periodic."""
        if k < 1:
            raise ValueError("extension factor must be a positive integer")
        bp = np.array(self.breakpoints[:-1])
        pts = np.concatenate([bp + j * self.T for j in range(k)]).tolist()
        return PiecewisePotential(k * self.T, tuple(pts) + (k * self.T,), self.values * k)

    def rescaled_to_pi(self) -> "PiecewisePotential":
        """``V_π(x) = (T/π)² V(T x / π)``, a π-periodic potential."""
        f = math.pi / self.T
        g = (self.T / math.pi) ** 2
        return PiecewisePotential(math.pi, tuple(b * f for b in self.breakpoints),
                                  tuple(g * v for v in self.values))

    def to_dict(self) -> dict:
        return {"T": self.T, "breakpoints": list(self.breakpoints), "values": list(self.values)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewisePotential":
        return cls(d["T"], tuple(d["breakpoints"]), tuple(d["values"]))

    @classmethod
    def from_json(cls, text: str) -> "PiecewisePotential":
        return cls.from_dict(json.loads(text))


def square_well(T: float, V0: float, split: float = 0.5) -> PiecewisePotential:
    """0 on ``[0, split T)``, ``V0`` on ``[split T, T)``."""
    return PiecewisePotential(T, (0.0, split * T, T), (0.0, V0))


def common_refinement(V1: PiecewisePotential, V2: PiecewisePotential):
    """Both potentials on a shared partition of their common period."""
    if abs(V1.T - V2.T) > 1e-12 * max(V1.T, V2.T):
        raise ValueError(f"periods differ: {V1.T} vs {V2.T}")
    pts = np.unique(np.concatenate([V1.breakpoints, V2.breakpoints]))
    keep = np.concatenate([[True], np.diff(pts) > 1e-12 * V1.T])
    pts = pts[keep]
    pts[-1] = V1.T
    mids = 0.5 * (pts[:-1] + pts[1:])
    return pts, V1(mids), V2(mids)


def difference(V1: PiecewisePotential, V2: PiecewisePotential) -> PiecewisePotential:
    pts, a, b = common_refinement(V1, V2)
    return PiecewisePotential(V1.T, tuple(pts), tuple(a - b))


# -- norms -------------------------------------------------------------------


def _cumulative_square(V: PiecewisePotential):
    bp = np.array(V.breakpoints)
    cum = np.concatenate([[0.0], np.cumsum(np.array(V.values) ** 2 * np.diff(bp))])
    total = cum[-1]

    def G(x):
        x = np.asarray(x, dtype=float)
        n = np.floor(x / V.T)
        return n * total + np.interp(x - n * V.T, bp, cum)

    return G, total


def besicovitch_norm(V: PiecewisePotential) -> float:
    _, total = _cumulative_square(V)
    return math.sqrt(total / V.T)


def stepanov_norm(V: PiecewisePotential, window: float = 1.0) -> float:
    """``sup_x (∫_x^{x+1} V²)^{1/2}``.

    The windowed integral is piecewise linear in x with kinks only where x or
    x + 1 meets a breakpoint, so the sup is a max over those candidates.
    """
    G, _ = _cumulative_square(V)
    bp = np.array(V.breakpoints)
    xs = np.concatenate([bp, np.mod(bp - window, V.T)])
    vals = G(xs + window) - G(xs)
    return math.sqrt(max(float(np.max(vals)), 0.0))


def besicovitch_distance(V1: PiecewisePotential, V2: PiecewisePotential) -> float:
    return besicovitch_norm(difference(V1, V2))


def stepanov_distance(V1: PiecewisePotential, V2: PiecewisePotential) -> float:
    return stepanov_norm(difference(V1, V2))


# -- propagators -------------------------------------------------------------


def _piece(kappa, h: float, derivative: bool):
    """(c, s) and optionally (dc/dκ, ds/dκ) for one piece, elementwise in κ."""
    kappa = np.asarray(kappa)
    cplx = np.iscomplexobj(kappa)
    x = kappa * h * h
    small = np.abs(x) < SERIES_CUTOFF
    c = np.empty_like(x)
    s = np.empty_like(x)
    if np.any(small):
        xs = x[small]
        powers = np.power.outer(xs, _K)
        c[small] = powers @ _C_COEF
        s[small] = h * (powers @ _S_COEF)
    big = ~small
    if np.any(big):
        kb = kappa[big]
        if cplx:
            w = np.sqrt(kb)
            c[big] = np.cos(w * h)
            s[big] = np.sin(w * h) / w
        else:
            pos = kb > 0
            cb = np.empty_like(kb)
            sb = np.empty_like(kb)
            w = np.sqrt(kb[pos])
            cb[pos] = np.cos(w * h)
            sb[pos] = np.sin(w * h) / w
            q = np.sqrt(-kb[~pos])
            cb[~pos] = np.cosh(q * h)
            sb[~pos] = np.sinh(q * h) / q
            c[big], s[big] = cb, sb
    if not derivative:
        return c, s, None, None
    dc = -0.5 * h * s
    ds = np.empty_like(x)
    if np.any(small):
        xs = x[small]
        powers = np.power.outer(xs, _K[:-1])  # x^(k-1) for k >= 1
        ds[small] = h ** 3 * (powers @ _DS_COEF[1:])
    if np.any(big):
        ds[big] = (h * c[big] - s[big]) / (2.0 * kappa[big])
    return c, s, dc, ds


def _monodromy_arrays(V: PiecewisePotential, E, derivative: bool):
    E = np.asarray(E)
    dtype = np.result_type(E, float)
    one = np.ones(E.shape, dtype=dtype)
    zero = np.zeros(E.shape, dtype=dtype)
    m = [one, zero, zero, one]
    d = [zero, zero, zero, zero]
    for v, h in zip(V.values, V.widths):
        kappa = E - v
        c, s, dc, ds = _piece(kappa, float(h), derivative)
        p11, p12, p21, p22 = c, s, -kappa * s, c
        if derivative:
            q11, q12, q21, q22 = dc, ds, -s - kappa * ds, dc
            d = [
                q11 * m[0] + q12 * m[2] + p11 * d[0] + p12 * d[2],
                q11 * m[1] + q12 * m[3] + p11 * d[1] + p12 * d[3],
                q21 * m[0] + q22 * m[2] + p21 * d[0] + p22 * d[2],
                q21 * m[1] + q22 * m[3] + p21 * d[1] + p22 * d[3],
            ]
        m = [p11 * m[0] + p12 * m[2], p11 * m[1] + p12 * m[3],
             p21 * m[0] + p22 * m[2], p21 * m[1] + p22 * m[3]]
    return m, d


@dataclass(frozen=True)
class Monodromy:
    M: np.ndarray
    E: complex | float

    @property
    def det(self):
        return self.M[0, 0] * self.M[1, 1] - self.M[0, 1] * self.M[1, 0]

    @property
    def trace(self):
        return self.M[0, 0] + self.M[1, 1]


def monodromy(V: PiecewisePotential, E) -> Monodromy:
    """``[[y_N(T), y_D(T)], [y_N'(T), y_D'(T)]]`` at a single (real or complex) energy."""
    m, _ = _monodromy_arrays(V, np.asarray(E), False)
    M = np.array([[m[0], m[1]], [m[2], m[3]]])
    return Monodromy(M, E)


def _scalar(x):
    return x if np.ndim(x) else x.item()


def discriminant(V: PiecewisePotential, E):
    m, _ = _monodromy_arrays(V, E, False)
    return _scalar(m[0] + m[3])


def discriminant_derivative(V: PiecewisePotential, E):
    _, d = _monodromy_arrays(V, E, True)
    return _scalar(d[0] + d[3])


# -- Sturm counting ----------------------------------------------------------


def dirichlet_count(V: PiecewisePotential, E) -> np.ndarray:
    """Number of zeros of the Dirichlet solution in (0, T), elementwise in E.

    Equals the number of Dirichlet eigenvalues of [0, T] strictly below E.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    y = np.zeros_like(E)
    yp = np.ones_like(E)
    count = np.zeros(E.shape, dtype=np.int64)
    widths = V.widths
    last = len(widths) - 1
    for k, (v, h) in enumerate(zip(V.values, widths)):
        h = float(h)
        kappa = E - v
        pos = kappa > 0
        neg = kappa < 0
        zer = ~(pos | neg)
        n = np.zeros_like(count)
        if np.any(pos):
            w = np.sqrt(kappa[pos])
            phi = np.arctan2(y[pos], yp[pos] / w)
            n[pos] = (np.floor((phi + w * h) / np.pi) - np.floor(phi / np.pi)).astype(np.int64)
        if np.any(neg):
            q = np.sqrt(-kappa[neg])
            yy, yyp = y[neg], yp[neg]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(yyp != 0, -yy * q / yyp, -1.0)
            n[neg] = ((yy != 0) & (t > 0) & (t <= np.tanh(q * h))).astype(np.int64)
        if np.any(zer):
            yy, yyp = y[zer], yp[zer]
            with np.errstate(divide="ignore", invalid="ignore"):
                x0 = np.where(yyp != 0, -yy / yyp, -1.0)
            n[zer] = ((yy != 0) & (x0 > 0) & (x0 <= h)).astype(np.int64)
        c, s, _, _ = _piece(kappa, h, False)
        y, yp = c * y + s * yp, -kappa * s * y + c * yp
        if k == last:
            # a zero exactly at T is not in (0, T)
            n -= (y == 0).astype(np.int64)
        count += n
        scale = np.maximum(np.abs(y), np.abs(yp))
        y, yp = y / scale, yp / scale
    return count


# -- band search -------------------------------------------------------------


def _converged(lo, hi):
    return hi - lo <= 2 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))


def _bisect(pred, lo, hi, max_iter: int = 200):
    """Shrink brackets where ``pred`` is True at lo and False at hi."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(max_iter):
        done = _converged(lo, hi)
        if np.all(done):
            break
        mid = np.where(done, lo, 0.5 * (lo + hi))
        ok = pred(mid)
        lo = np.where(~done & ok, mid, lo)
        hi = np.where(~done & ~ok, mid, hi)
    return lo, hi


def dirichlet_eigenvalues(V: PiecewisePotential, E_max: float) -> np.ndarray:
    """All Dirichlet eigenvalues of [0, T] below E_max."""
    E_lo = V.min_value
    J = int(dirichlet_count(V, E_max)[0])
    if J == 0:
        return np.zeros(0)
    j = np.arange(1, J + 1)
    lo, hi = _bisect(lambda E: dirichlet_count(V, E) < j,
                     np.full(J, E_lo), np.full(J, float(E_max)))
    return hi


def _newton_polish(V, E, label, lo, hi, steps: int = 5):
    f = discriminant(V, E) - label
    for _ in range(steps):
        if abs(f) < 1e-13:
            break
        d = discriminant_derivative(V, E)
        if d == 0.0:
            break
        E_new = E - f / d
        if not lo <= E_new <= hi:
            break
        f_new = discriminant(V, E_new) - label
        if not abs(f_new) < abs(f):
            break
        E, f = E_new, f_new
    return E


def band_structure_window(V: PiecewisePotential, E_max: float) -> BandStructure:
    """All bands of the spectrum intersected with ``(-∞, E_max]``."""
    E_lo = V.min_value
    E_max = float(E_max)
    if not E_max > E_lo:
        raise ValueError(f"E_max={E_max} is below the bottom of the potential {E_lo}")
    mu = dirichlet_eigenvalues(V, E_max)
    J = mu.size
    left = np.concatenate([[E_lo], mu])           # S_{j-1}
    right = np.concatenate([mu, [E_max]])         # S_j
    sgn = np.where(np.arange(J + 1) % 2 == 0, 1.0, -1.0)

    D_right_last = discriminant(V, E_max)
    s_last = sgn[-1]
    # last segment: no band if still in the gap, clipped band if inside one
    last_state = "gap" if s_last * D_right_last > 2 else (
        "clipped" if s_last * D_right_last > -2 else "full")
    nb = J if last_state == "gap" else J + 1
    left, right, sgn = left[:nb], right[:nb], sgn[:nb]

    def Dv(E):
        return np.asarray(discriminant(V, E))

    full = np.ones(nb, dtype=bool)
    if last_state == "clipped":
        full[-1] = False

    # zero of Δ inside each complete band
    _, z = _bisect(lambda E: sgn * Dv(E) > 0, left, right)
    z = np.where(full, z, right)
    a_lo, a_hi = _bisect(lambda E: sgn * Dv(E) >= 2, left, z)
    alpha = 0.5 * (a_lo + a_hi)
    b_lo, b_hi = _bisect(lambda E: sgn * Dv(E) > -2, z, right)
    beta = 0.5 * (b_lo + b_hi)

    edges: list[list] = []
    for j in range(nb):
        lab = int(2 * sgn[j])
        a = _newton_polish(V, float(alpha[j]), lab, float(left[j]), float(z[j]))
        edges.append([a, lab])
        if full[j]:
            b = _newton_polish(V, float(beta[j]), -lab, float(z[j]), float(right[j]))
            edges.append([b, -lab])

    closed = []
    for j in range(nb - 1):
        if not full[j]:
            break
        k = 2 * j + 1
        lo_e, hi_e = edges[k][0], edges[k + 1][0]
        probe = [float(mu[j]), 0.5 * (lo_e + hi_e)]
        excess = max(abs(discriminant(V, x)) for x in probe) - 2.0
        if hi_e <= lo_e or excess <= CLOSED_GAP_RESIDUAL:
            mid = 0.5 * (lo_e + hi_e)
            edges[k][0] = edges[k + 1][0] = mid
            closed.append(mid)

    edges_t = [(float(E), int(lab)) for E, lab in edges]
    return assemble(edges_t, closed, clipped_top=E_max if last_state == "clipped" else None,
                    window=E_max, meta={"dirichlet": mu.tolist()})


def edge_residuals(V: PiecewisePotential, bs: BandStructure) -> np.ndarray:
    E = np.array([E for E, _ in bs.edges])
    lab = np.array([lab for _, lab in bs.edges])
    return np.abs(np.asarray(discriminant(V, E)) - lab) if E.size else np.zeros(0)


def ground_energy(V: PiecewisePotential) -> float:
    """Bottom of the spectrum (= smallest periodic eigenvalue E_{1,V})."""
    return periodic_eigenvalues(V, 1)[0]


def periodic_eigenvalues(V: PiecewisePotential, n_max: int, max_doublings: int = 30) -> np.ndarray:
    """First n_max periodic eigenvalues on [0, T] (roots of Δ = 2, with multiplicity)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    span = V.max_value - V.min_value
    E_max = V.min_value + span + (math.pi * (n_max + 1) / V.T) ** 2 + 1.0
    for _ in range(max_doublings):
        bs = band_structure_window(V, E_max)
        eig = bs.edges_with_label(2)
        if len(eig) >= n_max:
            return np.array(eig[:n_max])
        E_max = V.min_value + 2.0 * (E_max - V.min_value)
    raise NumericalFailure(f"found fewer than {n_max} periodic eigenvalues below {E_max}")


def random_piecewise(rng: np.random.Generator, T: float | None = None, pieces: int | None = None,
                     amplitude: float = 2.0) -> PiecewisePotential:
    T = float(T if T is not None else rng.uniform(0.5, 4.0))
    m = int(pieces if pieces is not None else rng.integers(1, 7))
    cuts = np.sort(rng.uniform(0, T, size=m - 1))
    bp = np.concatenate([[0.0], cuts, [T]])
    if np.any(np.diff(bp) <= 1e-9 * T):
        bp = np.linspace(0.0, T, m + 1)
    vals = rng.uniform(-amplitude, amplitude, size=m)
    return PiecewisePotential(T, tuple(bp), tuple(vals))
