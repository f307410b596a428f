"""One-dimensional constrained descent problems with an exact feasible region.

Here the distance to the feasible region is computable, so the step-size
recurrence from :func:`cggd.optim.lemma1_next_eta` can be driven exactly and
the convergence claims can be checked numerically.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .optim import Lemma1Schedule, lemma1_next_eta
from .model import ConfigError

log = logging.getLogger(__name__)

Interval = tuple[float, float]

CONVERGED_STEP = 1e-9
CONVERGED_RUN = 10
MAX_STEPS = 100_000
DIVERGED_AT = 1e6
MERGE_TOL = 1e-3
PROBE_OFFSET = 1e-4


def _horner(coefs: Sequence[float]) -> Callable[[float], float]:
    # coefs highest degree first
    coefs = [float(c) for c in coefs]

    def f(w: float) -> float:
        v = 0.0
        for a in coefs:
            v = v * w + a
        return v
    return f


def _product(roots: Sequence[float], offset: float = 0.0) -> Callable[[float], float]:
    def f(w: float) -> float:
        v = 1.0
        for r in roots:
            v *= w - r
        return v + offset
    return f


@dataclass
class ScalarProblem:
    name: str
    loss: Callable[[float], float]
    loss_grad: Callable[[float], float]
    fr: list[Interval]
    constraint_value: Callable[[float], float] | None = None
    constraint_grad: Callable[[float], float] | None = None
    working_interval: Interval = (0.5, 5.5)

    def __post_init__(self):
        self.fr = [(float(a), float(b)) for a, b in self.fr]
        if not self.fr:
            raise ConfigError("feasible region must be nonempty")
        for (a, b), (c, _) in zip(self.fr, self.fr[1:] + [(math.inf, math.inf)]):
            if not a <= b < c:
                raise ConfigError(f"intervals must be sorted, disjoint and nonempty: {self.fr}")

    def feasible(self, w: float) -> bool:
        return any(a <= w <= b for a, b in self.fr)


EXAMPLE_LOSS_ROOTS = (2.0, 4.0, 3.0, 1.5, 1.0, 2.75, 5.0, 5.0)
EXAMPLE_CONSTRAINT_ROOTS = (1.0, 2.0, 3.0, 4.0)


def paper_problem() -> ScalarProblem:
    """Degree-8 polynomial loss with feasible region [1, 2] u [3, 4].

    The constraint is (w-1)(w-2)(w-3)(w-4) <= 0.
    """
    loss_poly = np.poly1d(EXAMPLE_LOSS_ROOTS, r=True)
    con_poly = np.poly1d(EXAMPLE_CONSTRAINT_ROOTS, r=True)
    return ScalarProblem(
        name="polynomial",
        loss=_product(EXAMPLE_LOSS_ROOTS, 7.0),
        loss_grad=_horner(loss_poly.deriv().c),
        fr=[(1.0, 2.0), (3.0, 4.0)],
        constraint_value=_product(EXAMPLE_CONSTRAINT_ROOTS),
        constraint_grad=_horner(con_poly.deriv().c),
    )


def quadratic_problem() -> ScalarProblem:
    """L(w) = w^2 with FR = [1, 2]; L' is exactly 2-Lipschitz."""
    return ScalarProblem(
        name="quadratic",
        loss=lambda w: w * w,
        loss_grad=lambda w: 2.0 * w,
        fr=[(1.0, 2.0)],
        constraint_value=lambda w: (w - 1.0) * (w - 2.0),
        constraint_grad=lambda w: 2.0 * w - 3.0,
        working_interval=(0.0, 6.0),
    )


# -- feasible-region geometry --------------------------------------------

def fr_dir_and_distance(fr: Sequence[Interval], w: float) -> tuple[int, float]:
    """Sign of the shortest path from FR to ``w`` and its length.

    Equidistant gaps resolve toward the lower interval.
    """
    if not fr:
        raise ConfigError("feasible region must be nonempty")
    best_dir, best_dist = 0, math.inf
    for lo, hi in fr:
        if lo <= w <= hi:
            return 0, 0.0
        d, s = (lo - w, -1) if w < lo else (w - hi, 1)
        if d < best_dist:
            best_dir, best_dist = s, d
    return best_dir, best_dist


def shortest_path_rule(fr: Sequence[Interval]) -> Callable[[float], int]:
    return lambda w: fr_dir_and_distance(fr, w)[0]


def toward_interval_rule(fr: Sequence[Interval], target: Interval) -> Callable[[float], int]:
    """Direction that ignores the nearest interval and always heads for ``target``.

    With FR = [1,2] u [3,4] and target (3, 4) this is -1 for infeasible w < 3
    and +1 for w > 4: a valid but non-shortest choice.
    """
    lo, hi = target

    def rule(w: float) -> int:
        if any(a <= w <= b for a, b in fr):
            return 0
        return -1 if w < lo else 1
    return rule


# -- update maps ----------------------------------------------------------

def fuzzy_update(problem: ScalarProblem, w: float, weight: float = 1.0) -> float:
    """Gradient of L(w) + weight * max(constraint(w), 0)."""
    g = problem.loss_grad(w)
    if weight and problem.constraint_value(w) > 0.0:
        g += weight * problem.constraint_grad(w)
    return g


def cggd_update(problem: ScalarProblem, w: float, rescale: float = 1.5,
                epsilon: float = 0.01, direction: Callable[[float], int] | None = None) -> float:
    """grad + rescale * dir * max(epsilon, |grad|), the bracket of the CGGD step."""
    g = problem.loss_grad(w)
    s = (direction or shortest_path_rule(problem.fr))(w)
    if s == 0:
        return g
    return g + rescale * s * max(epsilon, abs(g))


def lipschitz_estimate(problem: ScalarProblem, interval: Interval | None = None,
                       n: int = 100_001, safety: float = 1.1) -> float:
    """safety * max |L''| on a grid, with L'' from central differences of L'."""
    lo, hi = interval or problem.working_interval
    xs = np.linspace(lo, hi, n)
    h = 1e-5
    g = np.vectorize(problem.loss_grad)
    second = (g(xs + h) - g(xs - h)) / (2 * h)
    return safety * float(np.max(np.abs(second)))


def default_schedule(problem: ScalarProblem, eta0: float = 1e-4, epsilon: float = 0.01,
                     lipschitz: float | None = None) -> Lemma1Schedule:
    return Lemma1Schedule(eta0, lipschitz or lipschitz_estimate(problem), epsilon,
                          partial(fr_dir_and_distance, problem.fr))


# -- trajectories ---------------------------------------------------------

@dataclass
class Trajectory:
    method: str
    w0: float
    ws: list[float]
    etas: list[float]
    converged: bool
    diverged: bool
    shrink_steps: list[int] = field(default_factory=list)  # indices where eta was cut

    @property
    def final(self) -> float:
        return self.ws[-1]

    @property
    def steps(self) -> int:
        return len(self.ws) - 1


def run_scalar(method: str, problem: ScalarProblem, w0: float, schedule=None,
               steps: int = MAX_STEPS, *, rescale: float = 1.5, fuzzy_weight: float = 1.0,
               direction: Callable[[float], int] | None = None,
               trigger: str = "guarded", shrink: bool = True,
               record: bool = True) -> Trajectory:
    """Iterate the CGGD or fuzzy update from ``w0``.

    With a :class:`Lemma1Schedule`, CGGD cuts the step size via
    :func:`lemma1_next_eta` at an infeasible point ``w`` with
    ``d(w, FR) < 1.5 * eta * max(eps, |L'(w)|)``.  With ``trigger="guarded"``
    (default) the cut is skipped when the uncut step already lands in FR;
    ``trigger="always"`` cuts whenever the distance condition holds.
    ``shrink=False`` keeps eta fixed at trigger points (a negative control).
    The fuzzy method uses a constant step (``eta0`` of a lemma schedule).
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if method not in ("cggd", "fuzzy"):
        raise ConfigError(f"unknown scalar method {method!r}")
    if trigger not in ("guarded", "always"):
        raise ConfigError(f"unknown trigger {trigger!r}")
    schedule = schedule or default_schedule(problem)
    lemma = isinstance(schedule, Lemma1Schedule)
    eta = schedule.eta0 if lemma else schedule(0)
    eps = schedule.epsilon if lemma else 0.01
    fr = problem.fr
    rule = direction or shortest_path_rule(fr)
    dist = (schedule.distance or partial(fr_dir_and_distance, fr)) if lemma else None
    gradf = problem.loss_grad

    w = float(w0)
    ws, etas, cuts = [w], [], []
    calm = 0
    g_prev = abs(gradf(w))
    for j in range(steps):
        g = gradf(w)
        if method == "fuzzy":
            u = fuzzy_update(problem, w, fuzzy_weight)
            if not lemma:
                eta = schedule(j)
        else:
            s = rule(w)
            m = max(eps, abs(g))
            u = g + rescale * s * m if s else g
            if lemma:
                _, d = dist(w)
                if d > 0.0 and d < 1.5 * eta * m:
                    lands_outside = trigger == "always" or dist(w - eta * u)[1] > 0.0
                    if lands_outside:
                        cuts.append(j)
                        if shrink:
                            eta = lemma1_next_eta(eta, schedule.lipschitz, eps, abs(g), g_prev)
            else:
                eta = schedule(j)
        w_new = w - eta * u
        if record:
            ws.append(w_new)
            etas.append(eta)
        if not math.isfinite(w_new) or abs(w_new) > DIVERGED_AT:
            if not record:
                ws.append(w_new)
            return Trajectory(method, w0, ws, etas, False, True, cuts)
        calm = calm + 1 if abs(w_new - w) < CONVERGED_STEP else 0
        g_prev = abs(g)
        w = w_new
        if calm >= CONVERGED_RUN:
            break
    if not record:
        ws.append(w)
    return Trajectory(method, w0, ws, etas, calm >= CONVERGED_RUN, False, cuts)


# -- attractors -----------------------------------------------------------

@dataclass
class Attractor:
    location: float
    stable: bool
    basin: list[float]

    def to_dict(self) -> dict:
        return {"location": self.location, "stable": self.stable, "basin": self.basin}


@dataclass
class AttractorReport:
    method: str
    attractors: list[Attractor]
    non_fr_attractors: list[Attractor]
    diverged: list[float]
    unconverged: list[float]
    metadata: dict = field(default_factory=dict)

    @property
    def stable_locations(self) -> list[float]:
        return [a.location for a in self.attractors if a.stable]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "attractors": [a.to_dict() for a in self.attractors],
            "non_fr_attractors": [a.location for a in self.non_fr_attractors],
            "diverged": self.diverged,
            "unconverged": self.unconverged,
            "metadata": self.metadata,
        }


def distance_to_fr(fr: Sequence[Interval], w: float) -> float:
    return fr_dir_and_distance(fr, w)[1]


def classify_attractors(method: str, problem: ScalarProblem, grid: Sequence[float],
                        schedule=None, probes: Sequence[float] = (), **run_kw
                        ) -> AttractorReport:
    """Run from every grid point and group the limits.

    A limit is stable when some start further than the merge tolerance from
    it ends there.  Each of ``probes`` (e.g. candidate stationary points) is
    also run exactly and at +-1e-4; it is reported as an unstable attractor
    when only the exact start stays.
    """
    if not len(grid):
        raise ConfigError("grid must be nonempty")
    schedule = schedule or default_schedule(problem)
    ends: list[tuple[float, float]] = []
    diverged, unconverged = [], []
    for w0 in grid:
        t = run_scalar(method, problem, w0, schedule, record=False, **run_kw)
        if t.diverged:
            diverged.append(float(w0))
            continue
        if not t.converged:
            unconverged.append(float(w0))
        ends.append((t.final, float(w0)))

    clusters: list[list[tuple[float, float]]] = []
    for end in sorted(ends):
        if clusters and end[0] - clusters[-1][-1][0] <= MERGE_TOL:
            clusters[-1].append(end)
        else:
            clusters.append([end])
    attractors = []
    for cl in clusters:
        loc = float(np.median([e for e, _ in cl]))
        basin = sorted(s for _, s in cl)
        stable = any(abs(s - loc) > MERGE_TOL for s in basin)
        attractors.append(Attractor(loc, stable, basin))

    for p in probes:
        p = float(p)
        if any(abs(a.location - p) <= MERGE_TOL and a.stable for a in attractors):
            continue
        exact = run_scalar(method, problem, p, schedule, record=False, **run_kw)
        if exact.diverged or abs(exact.final - p) > MERGE_TOL:
            continue
        stays = []
        for q in (p - PROBE_OFFSET, p + PROBE_OFFSET):
            t = run_scalar(method, problem, q, schedule, record=False, **run_kw)
            stays.append(not t.diverged and abs(t.final - p) <= MERGE_TOL)
        existing = [a for a in attractors if abs(a.location - p) <= MERGE_TOL]
        if existing:
            existing[0].stable = existing[0].stable or any(stays)
        else:
            attractors.append(Attractor(exact.final, any(stays), [p]))
    attractors.sort(key=lambda a: a.location)

    outside = [a for a in attractors if distance_to_fr(problem.fr, a.location) > MERGE_TOL]
    meta = {"grid_points": len(grid), "merge_tol": MERGE_TOL}
    if isinstance(schedule, Lemma1Schedule):
        meta.update(eta0=schedule.eta0, lipschitz=schedule.lipschitz, epsilon=schedule.epsilon)
    if method == "fuzzy":
        meta["fuzzy_weight"] = run_kw.get("fuzzy_weight", 1.0)
    return AttractorReport(method, attractors, outside, diverged, unconverged, meta)


def _bisect(f: Callable[[float], float], a: float, b: float, iters: int = 200) -> float:
    fa = f(a)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if mid in (a, b):
            break
        fm = f(mid)
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def sign_changes(f: Callable[[float], float], lo: float, hi: float, n: int = 100_001
                 ) -> list[tuple[float, str]]:
    """Points where ``f`` changes sign on [lo, hi], refined by bisection.

    Each is tagged ``"up"`` (negative to positive: a descent attractor) or
    ``"down"``.  Jump discontinuities are located the same way as roots.
    """
    xs = np.linspace(lo, hi, n)
    vals = np.array([f(x) for x in xs])
    out = []
    for i in range(n - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            continue
        if b == 0.0 or (a < 0) != (b < 0):
            if b == 0.0:
                root = float(xs[i + 1])
                nxt = vals[i + 2] if i + 2 < n else b
                kind = "up" if a < 0 < nxt else "down" if a > 0 > nxt else "touch"
            else:
                root = _bisect(f, float(xs[i]), float(xs[i + 1]))
                kind = "up" if a < 0 else "down"
            out.append((root, kind))
    return out


def loss_minima(problem: ScalarProblem, lo: float | None = None, hi: float | None = None,
                n: int = 100_001) -> list[float]:
    """Local minima of L: the negative-to-positive roots of L'."""
    wl, wh = problem.working_interval
    return [r for r, k in sign_changes(problem.loss_grad, lo if lo is not None else wl,
                                       hi if hi is not None else wh, n) if k == "up"]


def update_curve(method: str, problem: ScalarProblem, grid: Sequence[float], *,
                 rescale: float = 1.5, epsilon: float = 0.01, fuzzy_weight: float = 1.0
                 ) -> list[tuple[float, float]]:
    if method == "fuzzy":
        return [(float(w), fuzzy_update(problem, w, fuzzy_weight)) for w in grid]
    return [(float(w), cggd_update(problem, w, rescale, epsilon)) for w in grid]


def stationary_candidates(method: str, problem: ScalarProblem, *, rescale: float = 1.5,
                          epsilon: float = 0.01, fuzzy_weight: float = 1.0,
                          n: int = 100_001) -> list[tuple[float, str]]:
    if method == "fuzzy":
        f = partial(fuzzy_update, problem, weight=fuzzy_weight)
    else:
        f = partial(cggd_update, problem, rescale=rescale, epsilon=epsilon)
    lo, hi = problem.working_interval
    return sign_changes(f, lo, hi, n)


# -- lemma harnesses ------------------------------------------------------

@dataclass
class LemmaResult:
    passed: bool
    checks: int
    skipped: int = 0
    failures: int = 0
    log: list[str] = field(default_factory=list)


def verify_lemma1(problem: ScalarProblem, trials: int = 100, *, seed: int = 0,
                  starts: Sequence[float] | None = None, lipschitz: float | None = None,
                  eta0: float = 1e-4, epsilon: float = 0.01, shrink: bool = True,
                  steps: int = 20_000, stop_on_failure: bool = True) -> LemmaResult:
    """Check that the CGGD step outside FR does not grow where eta is cut.

    For each trajectory, at every trigger point ``j+1`` whose predecessor
    ``j`` is also infeasible, asserts ``|step_{j+1}| <= |step_j|``.
    ``shrink=False`` runs the same checks with eta never cut.
    """
    M = lipschitz if lipschitz is not None else lipschitz_estimate(problem)
    sched = Lemma1Schedule(eta0, M, epsilon, partial(fr_dir_and_distance, problem.fr))
    if starts is None:
        rng = random.Random(seed)
        lo, hi = problem.working_interval
        starts = []
        while len(starts) < trials:
            w = rng.uniform(lo, hi)
            if not problem.feasible(w):
                starts.append(w)
    res = LemmaResult(True, 0)
    for w0 in starts:
        t = run_scalar("cggd", problem, w0, sched, steps, shrink=shrink)
        for j in t.shrink_steps:
            if j == 0:
                continue
            x_prev, x = t.ws[j - 1], t.ws[j]
            if problem.feasible(x_prev) or problem.feasible(x):
                res.skipped += 1
                continue
            prev_step = abs(t.ws[j] - t.ws[j - 1])
            step = abs(t.ws[j + 1] - t.ws[j])
            res.checks += 1
            if step > prev_step * (1 + 1e-12):
                res.passed = False
                res.failures += 1
                res.log.append(
                    f"w0={w0!r} step {j}: w={x!r} eta {t.etas[j - 1]!r}->{t.etas[j]!r} "
                    f"|step| {prev_step!r} -> {step!r}")
                if stop_on_failure:
                    return res
    res.log.append(f"{res.checks} checks, {res.skipped} skipped, {res.failures} failures")
    return res


def verify_lemma2(problem: ScalarProblem, trials: int = 1000, *, seed: int = 0,
                  epsilon: float = 0.01, rescale: float = 1.5, tol: float = 1e-12,
                  states: Sequence[tuple[float, float]] | None = None) -> LemmaResult:
    """One-step contraction: if 1.5*eta*m < K = d(w, FR) then d(w', FR) <= K - eta*m/2.

    ``states`` are ``(w, eta)`` pairs; by default points are drawn from the
    working interval until ``trials`` infeasible ones are found (feasible
    draws are skipped), with eta uniform below K / (1.5 m).
    """
    rng = random.Random(seed)
    if states is None:
        lo, hi = problem.working_interval
        states = []
        skipped = 0
        while len(states) < trials:
            w = rng.uniform(lo, hi)
            K = distance_to_fr(problem.fr, w)
            if K == 0.0:
                skipped += 1
                continue
            m = max(epsilon, abs(problem.loss_grad(w)))
            states.append((w, rng.uniform(0.0, K / (1.5 * m))))
    else:
        skipped = 0
    res = LemmaResult(True, 0, skipped)
    for w, eta in states:
        K = distance_to_fr(problem.fr, w)
        m = max(epsilon, abs(problem.loss_grad(w)))
        if not (K > 0 and 1.5 * eta * m < K and eta > 0):
            res.skipped += 1
            continue
        w_new = w - eta * cggd_update(problem, w, rescale, epsilon)
        res.checks += 1
        bound = K - 0.5 * eta * m
        if distance_to_fr(problem.fr, w_new) > bound + tol:
            res.passed = False
            res.failures += 1
            res.log.append(f"w={w!r} eta={eta!r}: d'={distance_to_fr(problem.fr, w_new)!r} > {bound!r}")
    res.log.append(f"{res.checks} checks, {res.skipped} skipped, {res.failures} failures")
    return res


def _box_projection(box: Sequence[Interval], w: np.ndarray) -> np.ndarray:
    return np.array([min(max(x, lo), hi) for x, (lo, hi) in zip(w, box)])


def verify_lemma2_box(trials: int = 1000, *, seed: int = 0, epsilon: float = 0.01,
                      rescale: float = 1.5, tol: float = 1e-12,
                      box: Sequence[Interval] = ((1.0, 2.0), (3.0, 4.0)),
                      sample_box: Sequence[Interval] = ((0.0, 6.0), (0.0, 6.0))) -> LemmaResult:
    """Same contraction check in 2D.

    Loss is L(u) + L(v) with the degree-8 example loss, FR a product of intervals,
    and the direction the unit vector from the projection onto FR.
    """
    gradf = paper_problem().loss_grad
    rng = random.Random(seed)
    res = LemmaResult(True, 0)
    while res.checks < trials:
        w = np.array([rng.uniform(*iv) for iv in sample_box])
        proj = _box_projection(box, w)
        K = float(np.linalg.norm(w - proj))
        if K == 0.0:
            res.skipped += 1
            continue
        g = np.array([gradf(x) for x in w])
        m = max(epsilon, float(np.linalg.norm(g)))
        eta = rng.uniform(0.0, K / (1.5 * m))
        if not eta > 0:
            res.skipped += 1
            continue
        direction = (w - proj) / K
        w_new = w - eta * (g + rescale * direction * m)
        d_new = float(np.linalg.norm(w_new - _box_projection(box, w_new)))
        res.checks += 1
        if d_new > K - 0.5 * eta * m + tol:
            res.passed = False
            res.failures += 1
            res.log.append(f"w={w.tolist()!r} eta={eta!r}: d'={d_new!r} > {K - 0.5 * eta * m!r}")
    res.log.append(f"{res.checks} checks, {res.skipped} skipped, {res.failures} failures")
    return res
