"""Riccati flows ``y' = q0 + q1 y + q2 y^2`` for the diagonal entries of ``h2``.

For a reversible scheme whose blocks share an eigenbasis, the eigenvalues
``y_j(x)`` of ``h2`` obey this equation with ``q2 = 2``, ``q1 = -4 c cos(psi)``
and ``q0 = -kappa``, where ``kappa`` is the identity coefficient of the
reduced ``A`` operator.

Given one particular solution ``y1``, every other solution is

    y = y1 + Phi / (C - Q),   Phi = exp int (2 q2 y1 + q1),   Q = int q2 Phi

(``form="standard"``). ``form="swapped"`` swaps ``q2`` for ``q0`` in both
places; :func:`validate_forms` decides between them against a fixed-step RK4
integrator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

INF_SENTINEL = 1e6
GRID = 400


class BlowUpError(RuntimeError):
    def __init__(self, x):
        super().__init__(f"solution blows up (|y| > 1e6) near x = {x:.6g}")
        self.x = x


class SingularSolution(ValueError):
    pass


class InfeasibleTarget(ValueError):
    pass


def _const(v):
    return lambda x: v


@dataclass(frozen=True)
class RiccatiProblem:
    q0: Callable[[float], float]
    q1: Callable[[float], float]
    y1: Callable[[float], float]
    q2: Callable[[float], float] = field(default=_const(2.0))
    lo: float = -1.0
    hi: float = 1.0
    x_ref: float = 0.0
    check: bool = True

    def __post_init__(self):
        if self.check:
            r = self.particular_residual()
            if r > 1e-6:
                raise ValueError(f"y1 does not solve the equation (max residual {r:.3e})")

    def rhs(self, x, y):
        return self.q0(x) + self.q1(x) * y + self.q2(x) * y * y

    def particular_residual(self, n: int = GRID, h: float = 1e-5) -> float:
        xs = np.linspace(self.lo + h, self.hi - h, n)
        return max(abs((self.y1(x + h) - self.y1(x - h)) / (2 * h) - self.rhs(x, self.y1(x))) for x in xs)


def integrate_numeric(problem: RiccatiProblem, y_initial: float, x0: float, x1: float, steps: int = 400, gate: float = 1e-8, max_doublings: int = 8):
    """Classical RK4 from ``x0`` to ``x1``.

    The step count is doubled until the endpoint moves by at most
    ``gate * max(1, |y|)``.
    Returns the grid and samples of the finest run that passed, restricted to
    the original ``steps + 1`` points.

    Raises
    ------
    BlowUpError
        If ``|y|`` exceeds ``1e6``.
    RuntimeError
        If the convergence gate is not met after ``max_doublings``.
    """
    if steps < 100:
        raise ValueError("steps must be at least 100")

    def run(n):
        xs = np.linspace(x0, x1, n + 1)
        h = (x1 - x0) / n
        ys = np.empty(n + 1)
        y = float(y_initial)
        ys[0] = y
        f = problem.rhs
        for i in range(n):
            x = xs[i]
            k1 = f(x, y)
            k2 = f(x + h / 2, y + h / 2 * k1)
            k3 = f(x + h / 2, y + h / 2 * k2)
            k4 = f(x + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.isfinite(y) or abs(y) > INF_SENTINEL:
                raise BlowUpError(xs[i + 1])
            ys[i + 1] = y
        return xs, ys

    n = steps
    xs, ys = run(n)
    for _ in range(max_doublings):
        xs2, ys2 = run(2 * n)
        if abs(ys2[-1] - ys[-1]) <= gate * max(1.0, abs(ys2[-1])):
            k = (2 * n) // steps
            return xs2[::k], ys2[::k]
        n *= 2
        xs, ys = xs2, ys2
    raise RuntimeError("RK4 convergence gate not met")


@dataclass
class RiccatiSolution:
    C: float
    form: str
    y: Callable
    Phi: Callable
    Q: Callable


class _Aux:
    """Dense ``(log Phi, Q)`` on ``[lo, hi]`` integrated outwards from ``x_ref``."""

    def __init__(self, problem: RiccatiProblem, form: str):
        if form not in ("standard", "swapped"):
            raise ValueError("form must be 'standard' or 'swapped'")
        p = problem
        w = p.q2 if form == "standard" else p.q0

        def f(x, u):
            return [2 * w(x) * p.y1(x) + p.q1(x), w(x) * np.exp(u[0])]

        kw = dict(rtol=1e-12, atol=1e-13, dense_output=True, method="DOP853")
        self.ref = p.x_ref
        self.up = solve_ivp(f, (p.x_ref, p.hi), [0.0, 0.0], **kw) if p.hi > p.x_ref else None
        self.dn = solve_ivp(f, (p.x_ref, p.lo), [0.0, 0.0], **kw) if p.lo < p.x_ref else None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((2,) + x.shape)
        hi = x >= self.ref
        if np.any(hi) and self.up is not None:
            out[:, hi] = self.up.sol(x[hi])
        if np.any(~hi) and self.dn is not None:
            out[:, ~hi] = self.dn.sol(x[~hi])
        return out


def general_solution(problem: RiccatiProblem, C: float, form: str = "standard", interval=None, aux=None) -> RiccatiSolution:
    """Member of the one-parameter family with constant ``C`` (``inf`` gives ``y1``)."""
    aux = aux or _Aux(problem, form)
    Phi = lambda x: np.exp(aux(x)[0])
    Q = lambda x: aux(x)[1]
    lo, hi = interval or (problem.lo, problem.hi)
    if np.isinf(C):
        y = lambda x: np.vectorize(problem.y1)(x) * 1.0
    else:
        den = C - Q(np.linspace(lo, hi, GRID))
        if np.min(np.abs(den)) <= 1e-6 or np.ptp(np.sign(den)) != 0:
            raise SingularSolution(f"denominator C - Q(x) vanishes on [{lo}, {hi}] for C = {C}")
        y = lambda x: np.vectorize(problem.y1)(x) + Phi(x) / (C - Q(x))
    return RiccatiSolution(float(C), form, y, Phi, Q)


def closed_form_error(problem: RiccatiProblem, C: float, form: str = "standard", interval=None) -> float:
    """Max gap on a 400-point grid between the closed form and RK4 started from it."""
    lo, hi = interval or (problem.lo, problem.hi)
    sol = general_solution(problem, C, form, (lo, hi))
    x0 = problem.x_ref
    err = 0.0
    for a, b in ((x0, hi), (x0, lo)):
        if b == a:
            continue
        n = max(100, int(round(GRID * abs(b - a) / (hi - lo))))
        xs, ys = integrate_numeric(problem, float(sol.y(a)), a, b, n)
        err = max(err, float(np.max(np.abs(sol.y(xs) - ys))))
    return err


def validate_forms(problem: RiccatiProblem, Cs, tol: float = 1e-6) -> dict:
    """Which closed form reproduces RK4 for every constant in ``Cs``."""
    out = {}
    for form in ("standard", "swapped"):
        errs = []
        for C in Cs:
            try:
                errs.append(closed_form_error(problem, C, form))
            except (SingularSolution, BlowUpError, RuntimeError):
                errs.append(np.inf)
        out[form] = (max(errs) <= tol, max(errs))
    return out


# -- admissible constants -----------------------------------------------------


@dataclass
class AdmissibleRoots:
    """Constants satisfying completeness for one diagonal entry.

    ``degenerate`` is set when the expression vanishes for every admissible
    constant; ``roots`` is then empty and :attr:`count` is infinite.
    """

    roots: list
    quadratic: tuple
    discriminant: float
    branches: tuple
    degenerate: bool = False

    @property
    def count(self) -> float:
        return np.inf if self.degenerate else len(self.roots)

    def pair(self):
        if self.count != 2:
            raise ValueError(f"expected two admissible constants, found {self.count}")
        return tuple(self.roots)


def _gauss_nodes(a: float, b: float, panels: int = 64, order: int = 10):
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    return (mid[:, None] + h[:, None] * t).ravel(), (h[:, None] * w).ravel()


class CompletenessExpression:
    """``g(C) = w1 exp(-2 int_0^X2 y_C) + w2 exp(2 int_X1^0 y_C) - 1`` for one diagonal entry.

    ``w1``, ``w2`` are the squared common scales of the two endpoint
    operators, the normalization the entry must be compatible with. The
    integrals of ``y_C = y1 + Phi/(C - Q)`` are evaluated by composite
    Gauss-Legendre quadrature on the integrated ``Phi`` and ``Q``, so no
    symbolic simplification is assumed.
    """

    def __init__(self, problem: RiccatiProblem, X1: float, X2: float, w1: float, w2: float, form="standard"):
        if not (X1 < problem.x_ref < X2):
            raise ValueError("boundaries must straddle the start point")
        self.p, self.X1, self.X2, self.w = problem, X1, X2, (w1, w2)
        self.aux = _Aux(problem, form)
        grid = np.linspace(X1, X2, 4001)
        Qs = self.aux(grid)[1]
        self.qmin, self.qmax = float(Qs.min()), float(Qs.max())
        self.nodes = []
        for a, b in ((problem.x_ref, X2), (X1, problem.x_ref)):
            xs, ws = _gauss_nodes(a, b)
            lphi, Q = self.aux(xs)
            y1 = np.array([problem.y1(x) for x in xs])
            self.nodes.append((ws, np.exp(lphi), Q, float(ws @ y1)))

    def integrals(self, C):
        out = []
        for ws, phi, Q, Y in self.nodes:
            out.append(Y if np.isinf(C) else Y + float(ws @ (phi / (C - Q))))
        return out

    def entries(self, C):
        """``(|M1_jj|^2, |M2_jj|^2)`` for constant ``C``."""
        w1, w2 = self.w
        I2, I1 = self.integrals(C)
        return w1 * np.exp(-2 * I2), w2 * np.exp(2 * I1)

    def __call__(self, C):
        e1, e2 = self.entries(C)
        return e1 + e2 - 1.0


ZERO_TOL = 1e-8


def admissible_constants(problem: RiccatiProblem, X1: float, X2: float, target, form: str = "standard", n_scan: int = 400) -> AdmissibleRoots:
    """All admissible ``C`` satisfying completeness for one diagonal entry.

    ``target = (w1, w2)`` are the squared endpoint scales. Admissible
    constants keep ``C - Q`` of one sign on ``[X1, X2]``: ``C > max Q`` or
    ``C < min Q``. Each branch is scanned on a log grid of ``|C - Q_edge|``
    for sign changes, which are refined with ``brentq``. ``C = inf`` (the
    particular solution) is reported as ``inf`` when it satisfies
    completeness to ``1e-8``.

    The reported quadratic is a least-squares fit of ``g(C) (C - Q(0))`` on
    sample constants, normalized to unit max coefficient; its leading
    coefficient shows whether the expression is genuinely quadratic.

    Raises
    ------
    InfeasibleTarget
        If no admissible constant exists; the message names the achievable
        range of ``|M1_jj|^2``.
    """
    w1, w2 = target
    if not (w1 > 0 and w2 > 0):
        raise ValueError("normalization weights must be positive")
    g = CompletenessExpression(problem, X1, X2, w1, w2, form)
    ts = np.linspace(-8, 14, n_scan)
    span = max(g.qmax - g.qmin, 1.0)
    branches = ((1, g.qmax), (-1, g.qmin))
    scans = []
    for sign, edge in branches:
        Cs = edge + sign * span * np.exp(ts)
        scans.append((sign, edge, np.array([g(C) for C in Cs])))
    ginf = g(np.inf)

    q0 = float(g.aux(problem.x_ref)[1])
    samp = np.concatenate([g.qmax + span * np.array([0.5, 1, 2, 4, 8]), g.qmin - span * np.array([0.5, 1, 2, 4, 8])])
    num = np.array([g(C) * (C - q0) for C in samp])
    coef = np.polyfit(samp, num, 2)
    scale = np.max(np.abs(coef))
    A, B, D = (coef / scale) if scale > ZERO_TOL else (0.0, 0.0, 0.0)
    A = 0.0 if abs(A) < 1e-8 else A
    disc = float(B * B - 4 * A * D)

    if all(np.max(np.abs(v)) <= ZERO_TOL for _, _, v in scans) and abs(ginf) <= ZERO_TOL:
        return AdmissibleRoots([], (0.0, 0.0, 0.0), 0.0, (g.qmin, g.qmax), degenerate=True)

    roots = []
    for sign, edge, vals in scans:
        f = lambda t: g(edge + sign * span * np.exp(t))
        for i in range(len(ts) - 1):
            if abs(vals[i]) <= ZERO_TOL or abs(vals[i + 1]) <= ZERO_TOL:
                continue
            if vals[i] * vals[i + 1] < 0:
                t = brentq(f, ts[i], ts[i + 1], xtol=1e-14, rtol=1e-14)
                roots.append(float(edge + sign * span * np.exp(t)))
    if abs(ginf) <= ZERO_TOL:
        roots = [r for r in roots if abs(r) <= INF_SENTINEL]
        roots.append(np.inf)
    roots.sort()

    if not roots:
        e_all = [g.entries(edge + sign * span * np.exp(t))[0] for sign, edge in branches for t in ts[::10]]
        raise InfeasibleTarget(
            f"no admissible constant: |M1_jj|^2 only ranges over [{min(e_all):.6g}, {max(e_all):.6g}] "
            f"(max achievable bias {max(abs(min(e_all) - 0.5), abs(max(e_all) - 0.5)):.6g})"
        )
    return AdmissibleRoots(roots, (float(A), float(B), float(D)), disc, (g.qmin, g.qmax))


# -- the Z (x) Z problem --------------------------------------------------------


def zz_problem(a: float, b: float, X1: float, X2: float) -> RiccatiProblem:
    """Flow of the ``|0>`` eigenvalue of ``h2`` in the corrected Z (x) Z scheme.

    ``y1 = s``, ``q1 = -4 c``, ``q0 = -2 s^2``; ``-s`` is the second flow.
    """
    from .zz import detector_tilt, warp_c

    s = lambda x: float(detector_tilt(x, a, b))
    return RiccatiProblem(
        q0=lambda x: -2 * s(x) ** 2,
        q1=lambda x: -4 * float(warp_c(x, a, b)),
        y1=s,
        lo=X1,
        hi=X2,
    )


def zz_second_constant(a: float, b: float) -> float:
    """``C`` that turns ``y1 = s`` into ``-s``: ``Q(0) - Phi(0)/(2 s(0)) = -1/(2 s(0))``."""
    from .zz import detector_tilt

    return -1.0 / (2.0 * float(detector_tilt(0.0, a, b)))
