"""Norms, decay fits, the free-streaming parameter and the Gronwall-type bound.

The free-streaming condition with parameter alpha reads

    |E_L| + |E_T| + |B|            <= alpha (1 + t)^(-3/2),
    |DE_L| + |DE_T| + |DB|         <= alpha (1 + t)^(-5/2),

with sup norms over space.  Runs are judged by the minimal such alpha and
by fitted power-law exponents of the measured norms.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PPoly

from .core_state import GridField, Moments, ParticleEnsemble
from .fields import FieldState, spectral_jacobian

COLUMNS = (
    "t", "sup_rho", "sup_j", "sup_el", "sup_et", "sup_b",
    "sup_grad_el", "sup_grad_et", "sup_grad_b", "q_t", "total_charge", "fp_iters",
)


@dataclass(frozen=True)
class TimeSeriesRecord:
    t: float
    sup_rho: float = 0.0
    sup_j: float = 0.0
    sup_el: float = 0.0
    sup_et: float = 0.0
    sup_b: float = 0.0
    sup_grad_el: float = 0.0
    sup_grad_et: float = 0.0
    sup_grad_b: float = 0.0
    q_t: float = 0.0
    total_charge: float = 0.0
    fixed_point_iters: int = 0

    @property
    def field_sum(self) -> float:
        return self.sup_el + self.sup_et + self.sup_b

    @property
    def gradient_sum(self) -> float:
        return self.sup_grad_el + self.sup_grad_et + self.sup_grad_b

    def row(self):
        return tuple(getattr(self, c if c != "fp_iters" else "fixed_point_iters") for c in COLUMNS)


def momentum_support(ensemble: ParticleEnsemble) -> float:
    """max |p| over markers of nonzero weight (0 for an empty ensemble)."""
    live = ensemble.w != 0
    if not live.any():
        return 0.0
    p = ensemble.p[live]
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", p, p))))


def field_gradients(state: FieldState):
    """Spectral derivative matrices of E_L, E_T and B (9-component fields)."""
    return {name: spectral_jacobian(getattr(state, name)) for name in ("e_l", "e_t", "b")}


def _sup(f: GridField | None) -> float:
    return 0.0 if f is None else f.sup()


def record_step(
    moments: Moments,
    field_state: FieldState | None,
    ensemble: ParticleEnsemble,
    t: float,
    previous: TimeSeriesRecord | None = None,
    gradients: dict | None = None,
) -> TimeSeriesRecord:
    """Sup norms over the physical box (Frobenius norm for derivative matrices)."""
    q = momentum_support(ensemble)
    if previous is not None:
        q = max(q, previous.q_t)
    vals = dict(t=float(t), sup_rho=_sup(moments.rho), sup_j=_sup(moments.j), q_t=q,
                total_charge=float(np.sum(ensemble.w)))
    if field_state is not None:
        g = field_gradients(field_state) if gradients is None else gradients
        vals.update(
            sup_el=field_state.e_l.sup(), sup_et=field_state.e_t.sup(), sup_b=field_state.b.sup(),
            sup_grad_el=g["e_l"].sup(), sup_grad_et=g["e_t"].sup(), sup_grad_b=g["b"].sup(),
            fixed_point_iters=int(field_state.fixed_point_iters),
        )
    return TimeSeriesRecord(**vals)


# --------------------------------------------------------------------------
# free-streaming parameter


@dataclass(frozen=True)
class FreeStreamReport:
    alpha: float
    a: float
    binding_time: float
    binding_branch: str

    def holds(self, series, alpha=None) -> bool:
        """Re-check both inequalities on every record with t <= a."""
        al = self.alpha if alpha is None else alpha
        return all(
            r.field_sum <= al * (1 + r.t) ** -1.5 and r.gradient_sum <= al * (1 + r.t) ** -2.5
            for r in series if r.t <= self.a
        )


def extract_alpha(series, a: float | None = None) -> FreeStreamReport:
    """Smallest alpha for which the free-streaming condition holds on [0, a]."""
    recs = [r for r in series if a is None or r.t <= a]
    if not recs:
        raise ValueError("no records in [0, a]")
    a = max(r.t for r in recs) if a is None else float(a)
    best = (-1.0, 0.0, "fields")
    for r in recs:
        for val, branch in ((r.field_sum * (1 + r.t) ** 1.5, "fields"),
                            (r.gradient_sum * (1 + r.t) ** 2.5, "gradients")):
            if val > best[0]:
                best = (val, r.t, branch)
    return FreeStreamReport(best[0], a, best[1], best[2])


# --------------------------------------------------------------------------
# power-law fits


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    intercept: float
    window: tuple
    residual: float
    n_points: int = 0

    def __call__(self, t):
        return np.exp(self.intercept) * np.asarray(t, dtype=float) ** self.exponent


_SELECTORS = {
    "fields": lambda r: r.field_sum,
    "gradients": lambda r: r.gradient_sum,
}


def _selector(sel):
    if callable(sel):
        return sel
    if sel in _SELECTORS:
        return _SELECTORS[sel]
    return lambda r: getattr(r, sel)


def fit_decay_exponent(series, field_selector="sup_rho", window=None) -> DecayFit:
    """Least-squares slope of log(value) against log(t) over ``window``.

    ``field_selector`` is a column name, ``"fields"`` / ``"gradients"`` for
    the sums entering the free-streaming condition, or a callable on records.
    """
    recs = list(series)
    if window is None:
        t_end = max(r.t for r in recs)
        window = (5.0, 0.8 * t_end)
    lo, hi = window
    if lo <= 0 or hi <= lo:
        raise ValueError(f"bad fit window {window}")
    get = _selector(field_selector)
    pts = [(r.t, get(r)) for r in recs if lo - 1e-12 <= r.t <= hi + 1e-12]
    if len(pts) < 2:
        raise ValueError(f"fewer than two records in window {window}")
    t, y = map(np.asarray, zip(*pts))
    if np.any(y <= 0):
        raise ValueError(f"nonpositive values in window {window}; shrink the window above the noise floor")
    A = np.column_stack([np.log(t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - np.log(y)) ** 2)))
    return DecayFit(float(coef[0]), float(coef[1]), (float(lo), float(hi)), res, len(t))


def default_fit_window(R0: float, t_end: float):
    return (max(5.0, 2.0 * R0), 0.8 * t_end)


@dataclass(frozen=True)
class BootstrapVerdict:
    passed: bool
    field_margin: float
    gradient_margin: float
    alpha: float


def check_bootstrap(report: FreeStreamReport, fits, t0: float = 1.0, margin_min: float = 0.1) -> BootstrapVerdict:
    """Do the measured norms decay strictly faster than the free-streaming rates?

    ``fits`` is the pair (field fit, gradient fit).  Margins are
    -3/2 - exponent and -5/2 - exponent; both must reach ``margin_min``.
    """
    ff, gf = fits
    for f in (ff, gf):
        if f.window[0] < max(1.0, t0) - 1e-12 or f.window[1] > report.a + 1e-9:
            raise ValueError(f"fit window {f.window} outside [max(1, t0), a] = [{max(1.0, t0)}, {report.a}]")
    fm = -1.5 - ff.exponent
    gm = -2.5 - gf.exponent
    return BootstrapVerdict(bool(fm >= margin_min and gm >= margin_min), fm, gm, report.alpha)


# --------------------------------------------------------------------------
# Gronwall-type lemma


def _linear_ppoly(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope = np.diff(y) / np.diff(x)
    return PPoly(np.vstack([slope, y[:-1]]), x)


def _times_sigma(pp: PPoly) -> PPoly:
    """sigma * c(sigma) for a piecewise-linear c."""
    a, b = pp.c
    x0 = pp.x[:-1]
    return PPoly(np.vstack([a, b + a * x0, b * x0]), pp.x)


@dataclass
class GronwallProblem:
    """Coefficients c1, c2, c3 on [0, t], piecewise linear through ``nodes``.

    ``pattern`` selects the sign of the test forcing: ``"plus"`` (always +1),
    ``"sign"`` (random +-1 per piece) or ``"uniform"`` (random in [-1, 1] per
    piece); ``pattern_values`` holds the per-piece factors.
    """

    t: float
    nodes: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    pattern: str = "plus"
    pattern_values: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, float)
        for name in ("c1", "c2", "c3"):
            v = np.asarray(getattr(self, name), float)
            if v.shape != self.nodes.shape:
                raise ValueError(f"{name} must have one value per node")
            if np.any(v < 0):
                raise ValueError(f"{name} must be nonnegative")
            setattr(self, name, v)
        if self.nodes[0] != 0 or not np.isclose(self.nodes[-1], self.t) or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must increase from 0 to t")
        if np.any(np.diff(self.c3) > 0):
            raise ValueError("c3 must be nonincreasing")
        if self.pattern not in ("plus", "sign", "uniform"):
            raise ValueError(f"unknown forcing pattern {self.pattern!r}")
        if self.pattern == "plus":
            self.pattern_values = np.ones(len(self.nodes) - 1)
        self.pattern_values = np.asarray(self.pattern_values, float)
        if self.pattern_values.shape != (len(self.nodes) - 1,) or np.any(np.abs(self.pattern_values) > 1):
            raise ValueError("pattern_values needs one factor in [-1, 1] per piece")

    @classmethod
    def random(cls, rng: np.random.Generator, pattern="plus", t=None, pieces=None, scale=1.0):
        t = float(rng.uniform(0.5, 5.0)) if t is None else float(t)
        k = int(rng.integers(2, 9)) if pieces is None else int(pieces)
        inner = np.sort(rng.uniform(0, t, k - 1))
        nodes = np.concatenate([[0.0], inner, [t]])
        c1 = rng.uniform(0, scale, k + 1)
        c2 = rng.uniform(0, scale, k + 1)
        c3 = np.sort(rng.uniform(0, scale, k + 1))[::-1]
        if pattern == "sign":
            pv = rng.choice([-1.0, 1.0], k)
        elif pattern == "uniform":
            pv = rng.uniform(-1.0, 1.0, k)
        else:
            pv = None
        return cls(t, nodes, c1, c2, c3, pattern, pv)

    def coefficient(self, name):
        return _linear_ppoly(self.nodes, getattr(self, name))

    def bound(self, s):
        """(int_s^t sigma c1) * exp(int_s^t (sigma c2 + c3)) via exact antiderivatives."""
        s = np.asarray(s, float)
        I1 = _times_sigma(self.coefficient("c1")).antiderivative()
        e = _times_sigma(self.coefficient("c2"))
        e.c[1:] += self.coefficient("c3").c
        I2 = e.antiderivative()
        return (I1(self.t) - I1(s)) * np.exp(I2(self.t) - I2(s))

    def solve(self, s_eval):
        """Backward solution of xi'' = f(s)(c1 + c2|xi| + c3|xi'|), xi(t) = xi'(t) = 0."""
        c1, c2, c3 = (self.coefficient(n) for n in ("c1", "c2", "c3"))
        s_eval = np.asarray(s_eval, float)
        out = np.zeros((2, s_eval.size))
        y = np.zeros(2)
        for i in range(len(self.nodes) - 1, 0, -1):
            a, b = self.nodes[i - 1], self.nodes[i]
            sgn = self.pattern_values[i - 1]

            def rhs(s, z, sgn=sgn):
                return [z[1], sgn * (c1(s) + c2(s) * abs(z[0]) + c3(s) * abs(z[1]))]

            mask = (s_eval >= a) & (s_eval <= b)
            sol = solve_ivp(rhs, (b, a), y, method="DOP853", rtol=1e-12, atol=1e-15,
                            dense_output=True)
            if mask.any():
                out[:, mask] = sol.sol(s_eval[mask])
            y = sol.y[:, -1]
        return out


@dataclass
class GronwallReport:
    trials: int
    violations: list
    worst_ratio: float
    worst: tuple | None = None

    @property
    def passed(self) -> bool:
        return not self.violations


def check_gronwall_problem(problem: GronwallProblem, n_eval: int = 801, rtol: float = 1e-9):
    """Return (worst ratio, violation or None) for one problem."""
    s = np.linspace(0.0, problem.t, n_eval)
    xi = problem.solve(s)[0]
    bnd = problem.bound(s)
    tol = rtol * max(1.0, float(np.max(bnd)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bnd > 0, np.abs(xi) / bnd, 0.0)
    bad = np.abs(xi) > bnd + tol
    worst = float(np.max(ratio))
    if bad.any():
        i = int(np.argmax(np.abs(xi) - bnd))
        return worst, dict(s=float(s[i]), xi=float(xi[i]), bound=float(bnd[i]), problem=problem)
    return worst, None


def verify_gronwall(problems, n_trials: int | None = None, n_eval: int = 801) -> GronwallReport:
    """Integrate each problem's extremal trajectory and compare with the bound."""
    problems = list(problems)
    if n_trials is not None:
        problems = problems[:n_trials]
    violations, worst, where = [], 0.0, None
    for k, prob in enumerate(problems):
        r, v = check_gronwall_problem(prob, n_eval)
        if r > worst:
            worst, where = r, (k, prob.pattern)
        if v is not None:
            violations.append(v)
    return GronwallReport(len(problems), violations, worst, where)


def random_gronwall_problems(rng: np.random.Generator, n: int, patterns=("plus", "sign", "uniform")):
    """``n`` random coefficient triples, each paired with every forcing pattern."""
    out = []
    for _ in range(n):
        base = GronwallProblem.random(rng)
        k = len(base.nodes) - 1
        for pat in patterns:
            pv = {"plus": None, "sign": rng.choice([-1.0, 1.0], k), "uniform": rng.uniform(-1, 1, k)}[pat]
            out.append(dataclasses.replace(base, pattern=pat, pattern_values=pv))
    return out
