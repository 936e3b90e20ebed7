"""Small-noise machinery: rare events, the rate functional, its minimizer,
and Monte Carlo estimates that the two sides can be compared on.

The controlled noise-free solution map

    G0 : h  |->  skeleton solution driven by hdot

is evaluated at one fixed penalty level (EVENT_N_PEN by default), so an
"event" always refers to the penalized dynamics at that level, for both
the optimizer and the stochastic replicas.  The action of a control is

    I(h) = 1/2 |h|_CM^2 = 1/2 int_0^T |hdot(t)|^2 dt,

and the constrained minimum  I* = inf { I(h) : G0(h) realizes the event }
is approached by quadratic-penalty continuation: minimize

    1/2 |h|_CM^2 + mu * shortfall(G0(h))^2

over the control's (m, K) table by gradient descent with forward-difference
gradients and Armijo backtracking, for an increasing schedule of mu.

Monte Carlo estimates run the stochastic solver over a ReplicaPlan, so
replica seeds are independent of worker count and order, and the same
replica index reuses the same Brownian path across noise levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import ModelCoefficients
from .controls import Control
from .diagnostics import penetration_report, weighted_distance
from .fields import h_norm
from .geometry import ConvexDomain, ObliqueField
from .solvers import (ReplicaPlan, SolverError, resolve_time_grid,
                      sample_brownian, solve_penalized_skeleton,
                      solve_penalized_spde)
from .trajectory import Trajectory, state_gap

# Penalty level at which rare events are posed (config can override).
EVENT_N_PEN = 1024.0


def _terminal_mean(traj: Trajectory) -> float:
    return traj.grid.dx * float(np.sum(traj.states[-1][0]))


TRAJECTORY_FUNCTIONALS = {
    "terminal_h_norm": lambda tr: h_norm(tr.terminal),
    "sup_h_norm": lambda tr: math.sqrt(float(np.max(tr.series.h_sq))),
    "eta_mass": lambda tr: penetration_report(tr)["eta_total_variation"],
    "terminal_mean": _terminal_mean,
}


@dataclass
class EventSpec:
    """A rare event, stated on the trajectory of the penalized dynamics.

    kind = "terminal_ball":  |u(T) - center|_H <= radius   (event is the
        closed ball; with complement=True the event is |.| >= radius);
    kind = "sup_exceed":     sup_t |u(t) - reference|_H >= radius;
    kind = "functional_threshold":  F(u) >= level for a named functional
        from TRAJECTORY_FUNCTIONALS.

    ``shortfall`` is the continuous margin by which the event is missed:
    zero exactly when the event occurred, positive otherwise.  The
    optimizer squares it; Monte Carlo thresholds it at zero.
    """

    kind: str
    radius: float = None
    center: np.ndarray = None
    complement: bool = False
    reference: np.ndarray = None
    functional: str = None
    level: float = None

    def __post_init__(self):
        if self.kind not in ("terminal_ball", "sup_exceed",
                             "functional_threshold"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind in ("terminal_ball", "sup_exceed"):
            if self.radius is None or self.radius < 0:
                raise ValueError(f"{self.kind} needs a non-negative radius")
        if self.kind == "functional_threshold":
            if self.functional not in TRAJECTORY_FUNCTIONALS:
                raise ValueError(
                    f"unknown functional {self.functional!r}; have "
                    f"{sorted(TRAJECTORY_FUNCTIONALS)}")
            if self.level is None:
                raise ValueError("functional_threshold needs a level")

    def _margin(self, traj: Trajectory) -> float:
        """Signed margin, >= 0 exactly when the event occurred."""
        dx = traj.grid.dx
        if self.kind == "terminal_ball":
            diff = traj.states[-1]
            if self.center is not None:
                diff = diff - self.center
            dist = math.sqrt(dx * float(np.sum(diff * diff)))
            return dist - self.radius if self.complement else self.radius - dist
        if self.kind == "sup_exceed":
            states = traj.states
            diff = states if self.reference is None else states - self.reference
            sup = math.sqrt(dx * float(np.max(np.einsum("kdj,kdj->k", diff, diff))))
            return sup - self.radius
        value = TRAJECTORY_FUNCTIONALS[self.functional](traj)
        return value - self.level

    def occurred(self, traj: Trajectory) -> bool:
        return self._margin(traj) >= 0.0

    def shortfall(self, traj: Trajectory) -> float:
        return max(0.0, -self._margin(traj))

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("terminal_ball", "sup_exceed"):
            out["radius"] = self.radius
            out["complement"] = bool(self.complement)
            out["centered"] = self.center is not None or self.reference is not None
        else:
            out["functional"] = self.functional
            out["level"] = self.level
        return out


def rate_functional(control: Control) -> float:
    """I(h) = 1/2 |h|_CM^2, exactly as stored on the control grid."""
    return 0.5 * control.cm_norm_sq()


@dataclass
class RateResult:
    control: Control
    rate: float
    violation: float
    feasible: bool
    stagnated: bool
    trace: list
    n_pen: float
    dt: float
    steps: int

    @property
    def i_star(self) -> float:
        return self.rate

    def to_dict(self) -> dict:
        return {
            "I_star": self.rate,
            "violation": self.violation,
            "feasible": self.feasible,
            "stagnated": self.stagnated,
            "n_pen": self.n_pen,
            "dt": self.dt,
            "steps": self.steps,
            "control_K": self.control.K,
            "control_m": self.control.m,
            "trace": self.trace,
            "control_values": [[float(v) for v in row]
                               for row in self.control.values],
        }


def minimize_rate(coeffs: ModelCoefficients, domain: ConvexDomain,
                  gamma: ObliqueField, u0, event: EventSpec, T: float, K: int,
                  dt: float = None, n_pen: float = EVENT_N_PEN,
                  h0: Control = None,
                  mu_schedule=(1e1, 1e2, 1e3, 1e4), fd_step: float = 1e-4,
                  max_iters: int = 150, armijo_c1: float = 1e-4,
                  stag_rel: float = 1e-8, stag_window: int = 50,
                  feas_tol: float = 1e-3, max_dim: int = 64) -> RateResult:
    """Penalized minimization of the action over controls on an (m, K) grid.

    Gradient descent with numerical gradients is deliberate: it treats the
    solver as a black box, so the same routine works for every event kind
    and every coefficient choice.  The control dimension m * K is capped
    (each gradient costs dim + 1 skeleton solves).

    When no control can realize the event (e.g. sigma = 0), the shortfall
    cannot be driven down and the result comes back feasible=False with
    the shortfall reported; callers must check the flag before quoting
    the rate.
    """
    m = coeffs.m
    dim = m * K
    if dim > max_dim:
        raise ValueError(f"control dimension m*K = {dim} exceeds {max_dim}; "
                         "coarsen the control grid")
    dt_target = dt if dt is not None else T / (4 * K)
    steps, dt_eff = resolve_time_grid(T, dt_target, n_pen, K)

    def shortfall_at(x):
        ctrl = Control(T=T, values=x.reshape(m, K))
        traj = solve_penalized_skeleton(coeffs, domain, gamma, u0, ctrl,
                                        n_pen=n_pen, dt=dt_eff, steps=steps)
        return ctrl, event.shortfall(traj)

    def objective(x, mu):
        ctrl, v = shortfall_at(x)
        return 0.5 * ctrl.cm_norm_sq() + mu * v * v, v

    x = (np.zeros(dim) if h0 is None else
         np.asarray(h0.values, dtype=float).reshape(dim).copy())
    if h0 is not None and (h0.m != m or h0.K != K):
        raise ValueError("warm start control is not on the requested grid")

    trace = []
    stagnated = False
    step0 = 1.0
    for stage, mu in enumerate(mu_schedule):
        fcur, vcur = objective(x, mu)
        stall = 0
        iters_done = 0
        for _ in range(max_iters):
            iters_done += 1
            grad = np.empty(dim)
            for i in range(dim):
                xp = x.copy()
                xp[i] += fd_step
                fp, _ = objective(xp, mu)
                grad[i] = (fp - fcur) / fd_step
            gnorm_sq = float(grad @ grad)
            if gnorm_sq < 1e-24:
                break
            step = step0
            accepted = False
            while step > 1e-14:
                trial = x - step * grad
                ftrial, vtrial = objective(trial, mu)
                if ftrial <= fcur - armijo_c1 * step * gnorm_sq:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            rel_drop = (fcur - ftrial) / max(abs(fcur), 1e-30)
            x, fcur, vcur = trial, ftrial, vtrial
            step0 = min(4.0 * step, 1e3)
            stall = stall + 1 if rel_drop < stag_rel else 0
            if stall >= stag_window:
                stagnated = True
                break
        trace.append({"mu": float(mu), "objective": float(fcur),
                      "shortfall": float(vcur), "iterations": iters_done})
        if vcur <= feas_tol and stage > 0:
            # already feasible at this stiffness; later stages would only
            # re-verify the same point
            break

    ctrl, v_final = shortfall_at(x)
    return RateResult(control=ctrl, rate=rate_functional(ctrl),
                      violation=v_final, feasible=v_final <= feas_tol,
                      stagnated=stagnated, trace=trace, n_pen=n_pen,
                      dt=dt_eff, steps=steps)


# -- Monte Carlo -------------------------------------------------------


@dataclass
class ReplicaRow:
    replica: int
    seed: int
    sup_pen_H: float
    terminal_H_norm: float
    event: int

    CSV_HEADER = "replica,seed,sup_pen_H,terminal_H_norm,event"

    def csv_line(self) -> str:
        return (f"{self.replica},{self.seed},{self.sup_pen_H!r},"
                f"{self.terminal_H_norm!r},{self.event}")


@dataclass
class MCResult:
    p_hat: float
    stderr: float
    hits: int
    replicas: int
    rows: list
    upper_bound: float = None  # 3/R rule when no replica hit the event

    def to_dict(self) -> dict:
        out = {"p_hat": self.p_hat, "stderr": self.stderr, "hits": self.hits,
               "replicas": self.replicas}
        if self.upper_bound is not None:
            out["upper_bound"] = self.upper_bound
        return out


def mc_rows(coeffs, domain, gamma, u0, event: EventSpec, epsilon: float,
            n_pen: float, dt: float, steps: int, plan: ReplicaPlan,
            start: int, stop: int, control: Control = None,
            generator: str = "philox") -> list:
    """Replica rows for indices [start, stop) of the plan.

    Splitting a plan across workers and concatenating the row lists in
    index order reproduces the serial run exactly, because every replica's
    noise depends only on its own plan seed.
    """
    rows = []
    for i in range(start, stop):
        seed = plan.seed_for(i)
        noise = sample_brownian(coeffs.m, steps, dt, seed, generator)
        traj = solve_penalized_spde(coeffs, domain, gamma, u0, n_pen=n_pen,
                                    dt=dt, steps=steps, epsilon=epsilon,
                                    noise=noise, control=control)
        rows.append(ReplicaRow(
            replica=i, seed=seed,
            sup_pen_H=float(np.max(traj.series.pen_h)),
            terminal_H_norm=h_norm(traj.terminal),
            event=int(event.occurred(traj))))
    return rows


def summarize_rows(rows: list, replicas: int) -> MCResult:
    hits = sum(r.event for r in rows)
    p_hat = hits / replicas
    stderr = math.sqrt(p_hat * (1.0 - p_hat) / replicas)
    upper = 3.0 / replicas if hits == 0 else None
    return MCResult(p_hat=p_hat, stderr=stderr, hits=hits, replicas=replicas,
                    rows=rows, upper_bound=upper)


def mc_probability(coeffs, domain, gamma, u0, event: EventSpec,
                   epsilon: float, n_pen: float, dt: float, T: float,
                   plan: ReplicaPlan, control: Control = None,
                   generator: str = "philox") -> MCResult:
    """Estimate P(event) under noise level epsilon by plain Monte Carlo."""
    ctl_K = control.K if control is not None else 1
    steps, dt_eff = resolve_time_grid(T, dt, n_pen, ctl_K)
    rows = mc_rows(coeffs, domain, gamma, u0, event, epsilon, n_pen,
                   dt_eff, steps, plan, 0, plan.count, control, generator)
    return summarize_rows(rows, plan.count)


# -- comparisons across noise levels -----------------------------------


@dataclass
class CompareRow:
    """One noise level of the rate-versus-sampling comparison.

    neg_eps_log_p is NaN when no replica hit the event; such rows are
    kept in the table (the upper bound still carries information) but are
    excluded from any trend assertion.
    """

    epsilon: float
    p_hat: float
    stderr: float
    neg_eps_log_p: float
    i_star: float
    ldp1_prob: float

    CSV_HEADER = "epsilon,p_hat,stderr,neg_eps_log_p,I_star,ldp1_prob"

    def csv_line(self) -> str:
        return (f"{self.epsilon!r},{self.p_hat!r},{self.stderr!r},"
                f"{self.neg_eps_log_p!r},{self.i_star!r},{self.ldp1_prob!r}")


def ldp_compare(coeffs, domain, gamma, u0, event: EventSpec,
                rate: RateResult, epsilons, plan: ReplicaPlan, T: float,
                ldp1_delta_sq: float = None, ldp1_replicas: int = 50,
                generator: str = "philox") -> list:
    """For each noise level: sampled -eps*log P(event) against I*, plus the
    fraction of controlled replicas that stray from the skeleton.

    Uses the rate result's own time grid and penalty level throughout.
    The same replica index reuses the same underlying Brownian increments
    at every epsilon, so the table's trend is not confounded by sampling
    noise between rows.  ldp1_prob estimates
        P( sup|Y^eps - Z|_H^2 + int |Y^eps - Z|_V^2 dt > delta^2 )
    for Y^eps the controlled stochastic solution at the optimizer's h and
    Z = G0(h); it should fall to zero with epsilon.
    """
    n_pen, dt, steps = rate.n_pen, rate.dt, rate.steps
    h_star = rate.control
    skeleton = solve_penalized_skeleton(coeffs, domain, gamma, u0, h_star,
                                        n_pen=n_pen, dt=dt, steps=steps)
    if ldp1_delta_sq is None:
        ldp1_delta_sq = 0.01
    ldp1_plan = ReplicaPlan(base_seed=plan.base_seed + 1, count=ldp1_replicas)

    out = []
    for eps in epsilons:
        rows = mc_rows(coeffs, domain, gamma, u0, event, eps, n_pen, dt,
                       steps, plan, 0, plan.count, None, generator)
        res = summarize_rows(rows, plan.count)
        neg = -eps * math.log(res.p_hat) if res.p_hat > 0 else math.nan
        strays = 0
        for i in range(ldp1_replicas):
            seed = ldp1_plan.seed_for(i)
            noise = sample_brownian(coeffs.m, steps, dt, seed, generator)
            y = solve_penalized_spde(coeffs, domain, gamma, u0, n_pen=n_pen,
                                     dt=dt, steps=steps, epsilon=eps,
                                     noise=noise, control=h_star)
            gh, gv = state_gap(y, skeleton)
            strays += int(gh + gv > ldp1_delta_sq)
        out.append(CompareRow(epsilon=float(eps), p_hat=res.p_hat,
                              stderr=res.stderr, neg_eps_log_p=neg,
                              i_star=rate.rate,
                              ldp1_prob=strays / ldp1_replicas))
    return out


@dataclass
class WeightedTrendRow:
    epsilon: float
    mean_weighted_sup: float
    mean_weighted_int: float

    CSV_HEADER = "epsilon,mean_weighted_sup,mean_weighted_int"

    def csv_line(self) -> str:
        return (f"{self.epsilon!r},{self.mean_weighted_sup!r},"
                f"{self.mean_weighted_int!r}")


def weighted_trend(coeffs, domain, gamma, u0, control: Control, epsilons,
                   plan: ReplicaPlan, lam: float, n_pen: float, dt: float,
                   T: float, generator: str = "philox") -> list:
    """Mean discounted distance between the controlled stochastic solution
    and its skeleton, per noise level (common Brownian paths across
    levels).  The discount rate lam multiplies the accumulated gradient
    energy of both runs; see diagnostics.weighted_distance."""
    steps, dt_eff = resolve_time_grid(T, dt, n_pen, control.K)
    skeleton = solve_penalized_skeleton(coeffs, domain, gamma, u0, control,
                                        n_pen=n_pen, dt=dt_eff, steps=steps)
    out = []
    for eps in epsilons:
        sups = []
        ints = []
        for i in range(plan.count):
            seed = plan.seed_for(i)
            noise = sample_brownian(coeffs.m, steps, dt_eff, seed, generator)
            y = solve_penalized_spde(coeffs, domain, gamma, u0, n_pen=n_pen,
                                     dt=dt_eff, steps=steps, epsilon=eps,
                                     noise=noise, control=control)
            w = weighted_distance(y, skeleton, lam)
            sups.append(w["weighted_sup"])
            ints.append(w["weighted_int"])
        out.append(WeightedTrendRow(
            epsilon=float(eps),
            mean_weighted_sup=math.fsum(sups) / plan.count,
            mean_weighted_int=math.fsum(ints) / plan.count))
    return out


@dataclass
class PenaltyDecayRow:
    n_pen: float
    mean_sup_pen_H: float
    mean_sup_pen_Linf: float
    mean_n_l1_integral: float
    mean_n2_h2_integral: float

    CSV_HEADER = ("n_pen,mean_sup_pen_H,mean_sup_pen_Linf,"
                  "mean_n_l1_integral,mean_n2_h2_integral")

    def csv_line(self) -> str:
        return (f"{self.n_pen!r},{self.mean_sup_pen_H!r},"
                f"{self.mean_sup_pen_Linf!r},{self.mean_n_l1_integral!r},"
                f"{self.mean_n2_h2_integral!r}")


def penetration_decay(coeffs, domain, gamma, u0, ns, dt: float, T: float,
                      epsilon: float = 0.0, plan: ReplicaPlan = None,
                      control: Control = None,
                      generator: str = "philox") -> list:
    """Mean penetration diagnostics per penalty level.

    With epsilon = 0 (or no plan) each level is one deterministic solve;
    otherwise replica means are taken with common Brownian paths across
    levels.  The raw penetration columns should decay roughly like 1/n
    while the n- and n^2-weighted integrals stay bounded.
    """
    ctl_K = control.K if control is not None else 1
    reps = plan.count if (plan is not None and epsilon > 0) else 1
    out = []
    for n in ns:
        steps, dt_eff = resolve_time_grid(T, dt, n, ctl_K)
        sup_h, sup_linf, l1, h2 = [], [], [], []
        for i in range(reps):
            noise = None
            if epsilon > 0 and plan is not None:
                noise = sample_brownian(coeffs.m, steps, dt_eff,
                                        plan.seed_for(i), generator)
            traj = solve_penalized_spde(coeffs, domain, gamma, u0, n_pen=n,
                                        dt=dt_eff, steps=steps,
                                        epsilon=epsilon, noise=noise,
                                        control=control)
            rep = penetration_report(traj)
            sup_h.append(rep["sup_pen_H"])
            sup_linf.append(rep["sup_pen_Linf"])
            l1.append(rep["n_l1_integral"])
            h2.append(rep["n2_h2_integral"])
        out.append(PenaltyDecayRow(
            n_pen=float(n),
            mean_sup_pen_H=math.fsum(sup_h) / reps,
            mean_sup_pen_Linf=math.fsum(sup_linf) / reps,
            mean_n_l1_integral=math.fsum(l1) / reps,
            mean_n2_h2_integral=math.fsum(h2) / reps))
    return out


def decay_slope(rows: list, column: str = "mean_sup_pen_H") -> float:
    """Least-squares slope of log(column) against log(n_pen)."""
    xs = np.log([r.n_pen for r in rows])
    ys = np.log([max(getattr(r, column), 1e-300) for r in rows])
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope)
