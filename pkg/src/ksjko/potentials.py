"""Entropy/reaction pair (U, F) and the closed-form constants built from them.

U drives diffusion (Boltzmann ``s log s`` or power ``s^m/(m-1)``, optionally
plus ``delta * s log s``). F is the logistic reaction energy with
``F'(s) = beta s^(r-1) - alpha``. Everything else in this module is a scalar
formula in these parameters: chemotactic threshold, L-infinity and L1 bound
levels, admissible step sizes and the energy-gap constants C1..C9.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class EntropySpec:
    """Internal energy density U.

    ``kind`` is ``"boltzmann"`` or ``"power"`` (exponent ``m``). ``delta=None``
    picks 0 for Boltzmann and 1e-6 for power laws, whose ``t U''(t)`` is not
    bounded away from zero.
    """

    kind: str = "boltzmann"
    m: float = 2.0
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in ("boltzmann", "power"):
            raise ValueError(f"unknown entropy kind {self.kind!r}")
        if self.kind == "power" and (not self.m > 0 or self.m == 1):
            raise ValueError(f"power entropy needs m > 0, m != 1 (got {self.m})")
        if self.delta is None:
            object.__setattr__(self, "delta", 0.0 if self.kind == "boltzmann" else 1e-6)
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")

    @property
    def has_log_part(self) -> bool:
        return self.kind == "boltzmann" or self.delta > 0

    def _xlogx(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)

    def U(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "boltzmann":
            base = self._xlogx(s)
        else:
            base = s**self.m / (self.m - 1)
        return base + self.delta * self._xlogx(s)

    def dU(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            log = np.log(s)
        if self.kind == "boltzmann":
            base = log + 1.0
        else:
            with np.errstate(divide="ignore"):
                base = self.m * s ** (self.m - 1) / (self.m - 1)
        if self.delta > 0:
            base = base + self.delta * (log + 1.0)
        return base

    def d2U(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind == "boltzmann":
                base = 1.0 / s
            else:
                base = self.m * s ** (self.m - 2)
            return base + self.delta / s

    def Psi(self, s):
        """Pressure ``s U'(s) - U(s)``; finite at 0."""
        s = np.asarray(s, dtype=float)
        base = s if self.kind == "boltzmann" else s**self.m
        return base + self.delta * s

    def dPsi(self, s):
        """``Psi'(s) = s U''(s)``."""
        s = np.asarray(s, dtype=float)
        base = np.ones_like(s) if self.kind == "boltzmann" else self.m * s ** (self.m - 1)
        return base + self.delta

    def inv_dU(self, y):
        """Inverse of U' on (0, inf) where it is explicit (no delta mixing)."""
        y = np.asarray(y, dtype=float)
        if self.delta == 0 and self.kind == "boltzmann":
            return np.exp(y - 1.0)
        if self.delta == 0 and self.kind == "power":
            m = self.m
            return (np.maximum(y, 0.0) * (m - 1) / m) ** (1.0 / (m - 1))
        raise NotImplementedError("U' has no closed-form inverse with delta > 0")

    def is_convex_on_samples(self, samples=None) -> bool:
        s = np.logspace(-8, 4, 200) if samples is None else np.asarray(samples)
        return bool(np.all(self.d2U(s) > 0))

    def zero_limit_of_sdU(self) -> tuple[float, float]:
        """``s U'(s)`` at 1e-8 and 1e-12; agreement within 1e-6 indicates the limit exists."""
        a, b = 1e-8, 1e-12
        return float(a * self.dU(a)), float(b * self.dU(b))

    def inf_tU2_positive(self) -> bool:
        """Whether ``inf_{t>0} t U''(t) > 0``."""
        return self.kind == "boltzmann" or self.delta > 0

    def range_on(self, upper: float, n: int = 4001) -> tuple[float, float]:
        """(min, max) of U on [0, upper], using the analytic minimiser where it lies inside."""
        s = np.linspace(0.0, upper, n)
        vals = self.U(s)
        lo, hi = float(vals.min()), float(vals.max())
        # s log s bottoms out at 1/e
        if self.kind == "boltzmann" and math.exp(-1.0) <= upper:
            lo = min(lo, float(self.U(math.exp(-1.0))))
        return lo, hi

    def inf_sdU_on(self, upper: float, n: int = 4001) -> float:
        s = np.linspace(0.0, upper, n)
        vals = s * np.where(s > 0, self.dU(np.where(s > 0, s, 1.0)), 0.0)
        lo = float(vals.min())
        # s(log s + 1) has its minimum -e^-2 at s = e^-2
        if self.kind == "boltzmann" or self.delta > 0:
            c = math.exp(-2.0)
            if c <= upper:
                lo = min(lo, float(c * self.dU(c)))
        return lo


@dataclass(frozen=True)
class ReactionSpec:
    """Logistic reaction energy ``F(s) = beta s^r / r - alpha s``."""

    alpha: float
    beta: float
    r: float

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0 (got {self.alpha})")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0 (got {self.beta})")
        if not self.r > 1:
            raise ValueError(f"r must be > 1 (got {self.r})")

    def F(self, s):
        s = np.asarray(s, dtype=float)
        return self.beta * s**self.r / self.r - self.alpha * s

    def dF(self, s):
        s = np.asarray(s, dtype=float)
        return self.beta * s ** (self.r - 1) - self.alpha

    def d2F(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return self.beta * (self.r - 1) * s ** (self.r - 2)

    @property
    def s_star(self) -> float:
        """Carrying capacity, the zero of F'."""
        return (self.alpha / self.beta) ** (1.0 / (self.r - 1))

    def sup_abs_dF(self, upper: float) -> float:
        """``sup_{[0, upper]} |F'|``; F' is increasing so only the endpoints matter."""
        return max(self.alpha, abs(float(self.dF(upper))))

    @property
    def tau_limit(self) -> float:
        """Step sizes must stay below 1/(2 alpha) for J_tau to be invertible."""
        return INF if self.alpha == 0 else 1.0 / (2.0 * self.alpha)


# --------------------------------------------------------------------------- J_tau


def J_tau(s, tau: float, F: ReactionSpec):
    """``s + tau s F'(s) + tau^2/4 s F'(s)^2 = s (1 + tau F'(s)/2)^2``."""
    s = np.asarray(s, dtype=float)
    return s * (1.0 + 0.5 * tau * F.dF(s)) ** 2


def J_tau_inverse(y, tau: float, F: ReactionSpec, max_iter: int = 100):
    """Solve ``J_tau(s) = y`` for s >= 0, cellwise.

    In ``u = sqrt(s)`` the equation reads
    ``G(u) = (1 - tau alpha/2) u + (tau beta/2) u^(2r-1) - sqrt(y) = 0`` with G
    increasing and convex, so Newton started to the right of the root decreases
    monotonically onto it. A bisection bracket guards against round-off stalls.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if tau >= F.tau_limit:
        raise ValueError(f"tau={tau} must be < 1/(2 alpha) = {F.tau_limit}")
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    if np.any(y < 0):
        raise ValueError("J_tau_inverse needs nonnegative input")
    a = 1.0 - 0.5 * tau * F.alpha
    b = 0.5 * tau * F.beta
    p = 2.0 * F.r - 1.0
    root_y = np.sqrt(y)

    def G(u):
        return a * u + b * u**p - root_y

    hi = root_y / a
    lo = np.zeros_like(hi)
    u = hi.copy()
    for _ in range(max_iter):
        g = G(u)
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        dg = a + b * p * u ** (p - 1)
        step = g / dg
        u_new = u - step
        bad = (u_new <= lo) | (u_new >= hi) | ~np.isfinite(u_new)
        u_new = np.where(bad, 0.5 * (lo + hi), u_new)
        done = np.abs(u_new - u) <= 1e-16 * np.maximum(u, 1e-300)
        u = u_new
        if np.all(done | (g == 0)):
            break
    s = u * u
    s = np.where(y == 0, 0.0, s)
    return float(s[0]) if scalar else s


# --------------------------------------------------------------------------- thresholds


def eta(M: float, F: ReactionSpec) -> float:
    """Level ``((alpha + M)/beta)^(1/(r-1))`` above which F' exceeds M."""
    if not M > 0:
        raise ValueError("M must be positive")
    return ((F.alpha + M) / F.beta) ** (1.0 / (F.r - 1))


def chi_star_case(rho0_linf: float, F: ReactionSpec) -> tuple[float, str]:
    """Admissible chemotactic sensitivity and the label of the branch that produced it."""
    if not rho0_linf > 0:
        raise ValueError("rho0_linf must be positive")
    a, b, r = F.alpha, F.beta, F.r
    if r > 2:
        return INF, "r>2"
    if r == 2:
        return b, "r=2"
    knee = (a / (b * (2 - r))) ** (1.0 / (r - 1))
    if rho0_linf > knee:
        return (b * rho0_linf ** (r - 1) - a) / rho0_linf, "1<r<2, large data"
    value = a ** ((2 - r) / (1 - r)) * b ** (1 / (r - 1)) * (2 - r) ** ((2 - r) / (r - 1)) * (r - 1)
    return value, "1<r<2, small data"


def chi_star(rho0_linf: float, F: ReactionSpec) -> float:
    return chi_star_case(rho0_linf, F)[0]


def theta(M: float, tau, q: float, lam: float, chi: float):
    """``(1 + tau M)(1/q - lam chi tau)``."""
    tau = np.asarray(tau, dtype=float)
    return (1.0 + tau * M) * (1.0 / q - lam * chi * tau)


def tau_star(M: float, rho0_linf: float, F: ReactionSpec, lam: float, chi: float,
             cap: float = 1.0) -> float:
    """Largest tau <= cap with both theta functions at or above their value at 0.

    Each theta is a concave quadratic in tau, so the admissible set is an
    interval; its right end is found by bisection on the sign of
    ``theta(tau) - theta(0)``.
    """
    ends = []
    for q in (rho0_linf, eta(M, F)):
        if chi == 0:
            ends.append(cap)
            continue
        f = lambda t: float(theta(M, t, q, lam, chi) - theta(M, 0.0, q, lam, chi))
        if f(cap) >= 0:
            ends.append(cap)
            continue
        lo, hi = 0.0, cap
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) >= 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(hi, 1e-300):
                break
        ends.append(lo)
    return min(ends)


def M_max_default(F: ReactionSpec) -> float:
    return 1e6 * max(1.0, F.alpha, F.beta)


def select_Mstar(rho0_linf: float, F: ReactionSpec, lam: float, chi: float,
                 M_max: float | None = None, grid_points: int = 4000) -> float:
    """Reaction level M* with positive slopes of both theta functions at 0.

    For ``1 < r < 2`` this is the closed-form maximiser of ``min(f, g)`` with
    ``f(M) = M/eta_M`` and ``g(M) = M/||rho0||``. For ``r >= 2`` the maximiser of
    ``min(f, g)`` is at infinity, so M is chosen on a log grid to maximise the
    resulting step-size window ``tau*``.
    """
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    cs = chi_star(rho0_linf, F)
    if not lam * chi < cs:
        raise ValueError(f"lambda*chi = {lam * chi} must be below chi_star = {cs}")
    a, b, r = F.alpha, F.beta, F.r
    if r < 2:
        knee = (a / (b * (2 - r))) ** (1.0 / (r - 1))
        if rho0_linf > knee:
            return b * rho0_linf ** (r - 1) - a
        return a * (r - 1) / (2 - r)
    M_max = M_max_default(F) if M_max is None else M_max
    if chi == 0:
        # any M is admissible; matching eta_M to ||rho0|| keeps C1 smallest
        return max(b * rho0_linf ** (r - 1) - a, 1e-6)
    Ms = np.logspace(-6, math.log10(M_max), grid_points)
    eta_M = ((a + Ms) / b) ** (1.0 / (r - 1))
    window = np.minimum(1.0 / (lam * chi * rho0_linf), 1.0 / (lam * chi * eta_M)) - 1.0 / Ms
    return float(Ms[int(np.argmax(window))])


@dataclass(frozen=True)
class XiResult:
    xi: float
    eps: float
    A: float
    B: float


def xi(rho0_l1: float, F: ReactionSpec, omega_measure: float, grid_points: int = 4001) -> XiResult:
    """Uniform L1 level ``max(||rho0||_1, B_eps/A_eps)`` with eps chosen to minimise B/A."""
    r = F.r
    r_conj = r / (r - 1)
    k0 = omega_measure ** (1.0 / r_conj)
    a = F.beta * k0 ** (-r)
    if F.alpha > 0:
        eps_hi = a / F.alpha
        frac = np.concatenate([np.logspace(-12, -1e-9, grid_points),
                               1.0 - np.logspace(-1, -9, grid_points // 4)])
        eps = eps_hi * np.unique(frac)
    else:
        eps = a * np.logspace(-12, 12, grid_points)
    A = a / eps - F.alpha
    C = (r * eps) ** (-1.0 / (r - 1)) / r_conj
    B = a / eps * C
    ok = A > 0
    ratio = np.where(ok, B / np.where(ok, A, 1.0), np.inf)
    i = int(np.argmin(ratio))
    return XiResult(max(rho0_l1, float(ratio[i])), float(eps[i]), float(A[i]), float(B[i]))


def l1_step_bound(mass_in: float, tau: float, xr: XiResult) -> float:
    """Mass bound after one reaction step: ``(m + tau B)/(1 + tau A)``."""
    return (mass_in + tau * xr.B) / (1.0 + tau * xr.A)


def c0_and_delta(lam: float, chi: float, d: int) -> tuple[float, float]:
    """``c0 = d delta / (chi (1 + delta)^d)`` with delta the largest x <= cap obeying
    ``(1 + x)^d <= 1 + lam d x``."""
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    cap = 1.0 if d == 1 else min(1.0 / (2 * (d - 1)), 1.0)
    g = lambda x: (1 + x) ** d - 1 - lam * d * x
    if g(cap) <= 0:
        delta = cap
    else:
        lo, hi = 0.0, cap
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) <= 0:
                lo = mid
            else:
                hi = mid
        delta = lo
    c0 = INF if chi == 0 else d * delta / (chi * (1 + delta) ** d)
    return c0, delta


def tau_double_star(C1: float, F: ReactionSpec) -> float:
    """``min(1/(6 k0), 1/(4 alpha))`` with ``k0 = sup_{[0, C1]} |F'|``."""
    k0 = F.sup_abs_dF(C1)
    t1 = INF if k0 == 0 else 1.0 / (6 * k0)
    t2 = INF if F.alpha == 0 else 1.0 / (4 * F.alpha)
    return min(t1, t2)


# --------------------------------------------------------------------------- report


@dataclass
class ThresholdReport:
    """All scalar thresholds for one parameter set. Entries needing an elliptic
    constant K3 or a horizon T are ``None`` until those are supplied."""

    chi_star: float
    chi_star_case: str
    M_star: float
    eta_Mstar: float
    xi: float
    xi_eps: float
    A_eps: float
    B_eps: float
    c0: float
    delta_lambda: float
    tau_star: float
    tau_hat: float
    tau_tilde: float
    tau_double_star: float
    C1: float
    C2: float
    C3: float
    C5: float
    lam: float
    chi: float
    sup_abs_dF: float
    rho0_linf: float
    rho0_l1: float
    omega: float
    dim: int
    K3: float | None = None
    T: float | None = None
    C4: float | None = None
    E1_spread: float | None = None
    C6: float | None = None
    C7: float | None = None
    C8: float | None = None
    C9: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def tau_max(self) -> float:
        return min(self.tau_hat, self.tau_tilde, self.tau_double_star)

    @property
    def linf_level(self) -> float:
        return max(self.eta_Mstar, self.rho0_linf)

    def xi_result(self) -> XiResult:
        return XiResult(self.xi, self.xi_eps, self.A_eps, self.B_eps)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdReport":
        return cls(**json.loads(text))


def compute_thresholds(F: ReactionSpec, rho0_linf: float, chi: float, lam: float,
                       rho0_l1: float | None = None, omega: float = 1.0, dim: int = 1,
                       U: EntropySpec | None = None, K3: float | None = None,
                       T: float | None = None, E1_rho0: float | None = None,
                       M_star: float | None = None) -> ThresholdReport:
    """Evaluate every threshold for the given data.

    ``E1_rho0`` (the initial chemotaxis energy) is only needed for C7/C9.
    """
    if chi < 0:
        raise ValueError("chi must be nonnegative")
    U = U or EntropySpec()
    rho0_l1 = rho0_linf * omega if rho0_l1 is None else rho0_l1
    cs, case = chi_star_case(rho0_linf, F)
    Ms = select_Mstar(rho0_linf, F, lam, chi) if M_star is None else M_star
    eta_M = eta(Ms, F)
    xr = xi(rho0_l1, F, omega)
    c0, delta = c0_and_delta(lam, chi, dim)
    ts = tau_star(Ms, rho0_linf, F, lam, chi)
    inv = lambda v: INF if v == 0 else 1.0 / v
    tau_hat = min(F.tau_limit, c0 / rho0_linf, ts, c0 / eta_M, INF if chi == 0 else omega / (chi * xr.xi))
    tau_tilde = min(inv(2 * lam * chi * rho0_linf), inv(2 * lam * chi * eta_M))
    C1 = 2 * max(eta_M, rho0_linf)
    k0 = F.sup_abs_dF(C1)
    C2 = C1 * k0
    C3 = (2 * F.alpha * C1 * float(U.dU(2 * C1)) - 3 * k0 * U.inf_sdU_on(C1)) * omega
    C5_formula = (4 * k0 * C1 * float(F.dF(2 * C1)) + F.alpha**2 * C1) * omega
    C5 = max(C5_formula, k0 * C2 * omega)
    rep = ThresholdReport(
        chi_star=cs, chi_star_case=case, M_star=Ms, eta_Mstar=eta_M, xi=xr.xi, xi_eps=xr.eps,
        A_eps=xr.A, B_eps=xr.B, c0=c0, delta_lambda=delta, tau_star=ts, tau_hat=tau_hat,
        tau_tilde=tau_tilde, tau_double_star=tau_double_star(C1, F), C1=C1, C2=C2, C3=C3,
        C5=C5, lam=lam, chi=chi, sup_abs_dF=k0, rho0_linf=rho0_linf, rho0_l1=rho0_l1,
        omega=omega, dim=dim,
    )
    if K3 is not None:
        attach_trajectory_constants(rep, U, K3, T, E1_rho0)
    return rep


def attach_trajectory_constants(rep: ThresholdReport, U: EntropySpec, K3: float,
                                T: float | None, E1_rho0: float | None) -> ThresholdReport:
    """Fill C4 and, given a horizon, C6..C9.

    The chemotaxis energy takes values in an interval of width at most
    ``|Omega| (max U - min U) + chi/2 K3 C1^2 |Omega|`` over densities bounded by
    C1. The transport dissipation carries a factor 2 relative to a unit-cost
    step penalty (the step minimises ``E1 + W2^2/(2 tau)``), which doubles the
    energy-spread part of C6 and all of C7.
    """
    C1, omega, chi = rep.C1, rep.omega, rep.chi
    rep.K3 = K3
    rep.C4 = 2 * chi * K3**2 * C1 * rep.C2 * omega
    u_lo, u_hi = U.range_on(C1)
    spread = omega * (u_hi - u_lo) + 0.5 * chi * K3 * C1**2 * omega
    rep.E1_spread = spread
    if T is not None:
        rep.T = T
        gap = (rep.C3 + rep.C4) * T
        rep.C6 = 2 * (2 * T * rep.C5 + 2 * (gap + spread))
        rep.C8 = K3**2 * C1**3 * omega * T
        if E1_rho0 is not None:
            E1_inf = omega * u_lo - 0.5 * chi * K3 * C1**2 * omega
            rep.C7 = 2 * (E1_rho0 - E1_inf + (rep.C3 + rep.C4) * (T + 1))
            rep.C9 = 2 * C1 * (rep.C7 + chi**2 * rep.C8)
    return rep
