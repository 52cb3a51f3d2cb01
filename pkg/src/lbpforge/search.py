"""Equation search: (1+1)-CMA-ES core and the discovery loop.

The strategy keeps one parent solution, samples one offspring per iteration
through a lower-triangular Cholesky factor of the covariance, adapts the
step size from a smoothed success rate, and updates the factor by a rank-one
Cholesky update on successful steps while the success rate is low.

Discovery takes a pool of candidate equations, enumerates (or continuously
relaxes) operator reassignments, fits the offset ``a`` per candidate with a
full background-subtraction pass as the fitness oracle, and ranks candidates
by (1 - F-score).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bgs import BackgroundModel, BgsParams
from .expr import (
    Expression,
    apply_assignment,
    enumerate_mutations,
    operator_assignment,
    parse,
    render,
)
from .lbp import LbpDescriptor, NeighborhoodSpec
from .metrics import ConfusionCounts, Score, confusion, fitness, score

BASELINE_EQUATIONS = ("g_p - g_c", "(g_p - g_c) + a")


class NumericalError(RuntimeError):
    """Cholesky factor lost positive-definiteness (indicates a bug upstream)."""


class EmptyInputError(ValueError):
    """Discovery needs at least one input equation."""


# ---------------------------------------------------------------------------
# (1+1)-CMA-ES
# ---------------------------------------------------------------------------

def gamma_succ(f_offspring: float, f_parent: float) -> int:
    """Success indicator: 1 iff the offspring is no worse than the parent."""
    return 1 if f_offspring <= f_parent else 0


@dataclass(frozen=True)
class CmaState:
    """Strategy state; the default constants are the published (1+1)-Cholesky
    defaults: d = 1 + n/2, p_target = 2/11, c_p = 1/12, c_cov = 2/(n^2 + 6),
    p_thresh = 0.44."""

    parent: np.ndarray
    sigma: float
    chol: np.ndarray
    p_succ: float
    p_target: float
    c_p: float
    damping: float
    c_cov: float
    p_thresh: float

    @classmethod
    def initial(cls, x0, sigma0: float, chol: np.ndarray | None = None,
                p_target: float = 2.0 / 11.0, c_p: float = 1.0 / 12.0,
                damping: float | None = None, c_cov: float | None = None,
                p_thresh: float = 0.44) -> "CmaState":
        parent = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        n = parent.size
        if sigma0 <= 0:
            raise ValueError("sigma0 must be > 0")
        return cls(
            parent=parent,
            sigma=float(sigma0),
            chol=np.eye(n) if chol is None else np.asarray(chol, dtype=np.float64),
            p_succ=p_target,
            p_target=p_target,
            c_p=c_p,
            damping=1.0 + n / 2.0 if damping is None else damping,
            c_cov=2.0 / (n**2 + 6.0) if c_cov is None else c_cov,
            p_thresh=p_thresh,
        )

    @property
    def n(self) -> int:
        return self.parent.size


def cma_ask(state: CmaState, rng: np.random.Generator):
    """Sample one offspring; returns (offspring, z) with z the generating normal."""
    z = rng.standard_normal(state.n)
    return state.parent + state.sigma * (state.chol @ z), z


def _rank_one_update(chol: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Lower-triangular L' with L'L'^T = L L^T + w w^T, in O(n^2)."""
    L = chol.copy()
    w = w.copy()
    n = L.shape[0]
    for k in range(n):
        d = L[k, k]
        if not np.isfinite(d) or d <= 0:
            raise NumericalError("Cholesky diagonal lost positivity")
        r = math.hypot(d, w[k])
        c = r / d
        s = w[k] / d
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + s * w[k + 1:]) / c
            w[k + 1:] = c * w[k + 1:] - s * L[k + 1:, k]
    return L


def cma_tell(state: CmaState, offspring: np.ndarray, gamma: int,
             z: np.ndarray) -> CmaState:
    """Absorb one evaluation: smooth the success rate, rescale sigma, and on a
    success adopt the offspring (plus a covariance update while progress is
    still unsteady, i.e. p_succ below p_thresh)."""
    p_succ = (1.0 - state.c_p) * state.p_succ + state.c_p * gamma
    sigma = state.sigma * math.exp(
        (p_succ - state.p_target) / (state.damping * (1.0 - state.p_target))
    )
    parent = state.parent
    chol = state.chol
    if gamma == 1:
        parent = np.asarray(offspring, dtype=np.float64)
        if p_succ < state.p_thresh:
            v = state.chol @ z
            chol = _rank_one_update(math.sqrt(1.0 - state.c_cov) * state.chol,
                                    math.sqrt(state.c_cov) * v)
            if not np.isfinite(chol).all() or (np.diag(chol) <= 0).any():
                raise NumericalError("Cholesky update produced an invalid factor")
    return replace(state, parent=parent, sigma=sigma, p_succ=p_succ, chol=chol)


def minimize(f, x0, sigma0: float, budget: int, rng: np.random.Generator,
             chol: np.ndarray | None = None):
    """(1+1)-CMA-ES driver; spends exactly ``budget`` evaluations of ``f``.

    Returns (best_x, best_f).  Best is the first solution attaining the lowest
    value seen (elitist: the parent's fitness never worsens).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    state = CmaState.initial(x0, sigma0, chol=chol)
    f_parent = f(state.parent)
    best_x, best_f = state.parent.copy(), f_parent
    for _ in range(budget - 1):
        offspring, z = cma_ask(state, rng)
        f_off = f(offspring)
        g = gamma_succ(f_off, f_parent)
        state = cma_tell(state, offspring, g, z)
        if g:
            f_parent = f_off
        if f_off < best_f:
            best_x, best_f = offspring.copy(), f_off
    return best_x, best_f


# ---------------------------------------------------------------------------
# Scene fitness
# ---------------------------------------------------------------------------

@dataclass
class SceneEvaluation:
    """A scene plus everything needed to score a descriptor on it.

    Frames before ``burn_in`` are processed (the model learns) but not scored.
    """

    frames: list
    gts: list
    bgs_params: BgsParams = field(default_factory=BgsParams)
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    burn_in: int = 0
    ignore: frozenset | None = None

    def __post_init__(self):
        if len(self.frames) != len(self.gts):
            raise ValueError("frames and ground-truth sequences differ in length")
        if not self.frames:
            raise ValueError("scene has no frames")

    def evaluate_descriptor(self, descriptor: LbpDescriptor) -> Score:
        model = BackgroundModel.for_frame_shape(
            descriptor, self.bgs_params, self.frames[0].shape
        )
        m = descriptor.neighborhood.margin
        total = ConfusionCounts()
        for i, frame in enumerate(self.frames):
            mask = model.process_frame(frame)
            if i >= self.burn_in:
                gt = self.gts[i][m:frame.shape[0] - m, m:frame.shape[1] - m]
                total = total + confusion(mask, gt, self.ignore)
        return score(total)

    def evaluate_expression(self, e: Expression, a: float) -> Score:
        return self.evaluate_descriptor(
            LbpDescriptor(e, a=a, neighborhood=self.neighborhood)
        )


def fit_a(e: Expression, scene: SceneEvaluation,
          bounds: tuple[float, float] = (1e-2, 1e2), budget: int = 8,
          rng: np.random.Generator | None = None):
    """Fit the offset ``a`` for one equation by (1+1)-CMA-ES over log10(a).

    Spends exactly ``budget`` background-subtraction passes; returns the best
    (a, Score) seen (ties keep the earliest).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lo, hi = bounds
    if not (0 < lo < hi):
        raise ValueError("bounds must be positive and increasing")
    rng = rng if rng is not None else np.random.default_rng(0)
    ulo, uhi = math.log10(lo), math.log10(hi)

    best = {}

    def f(u_vec) -> float:
        a = 10.0 ** min(max(float(u_vec[0]), ulo), uhi)
        s = scene.evaluate_expression(e, a)
        loss = fitness(s)
        if "fit" not in best or loss < best["fit"]:
            best.update(fit=loss, a=a, score=s)
        return loss

    minimize(f, [(ulo + uhi) / 2.0], sigma0=(uhi - ulo) / 4.0, budget=budget, rng=rng)
    return best["a"], best["score"]


# ---------------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    mode: str = "exhaustive"            # or "cmaes"
    mutation_cap: int = 1024
    a_bounds: tuple[float, float] = (1e-2, 1e2)
    a_budget: int = 8                   # BGS passes per candidate
    candidate_budget: int | None = None  # global cap on BGS passes
    seed: int = 0
    workers: int = 1
    baseline_fitness: float | None = None  # early-stop once beaten
    inject_baselines: bool = True

    def __post_init__(self):
        if self.mode not in ("exhaustive", "cmaes"):
            raise ValueError("mode must be 'exhaustive' or 'cmaes'")
        if self.mutation_cap < 1:
            raise ValueError("mutation_cap must be >= 1")
        lo, hi = self.a_bounds
        if not (0 < lo < hi):
            raise ValueError("a_bounds must be positive and increasing")
        if self.a_budget < 1:
            raise ValueError("a_budget must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class Candidate:
    equation: str          # canonical text of the (mutated) equation
    source: str            # canonical text of the equation it was mutated from
    assignment: tuple[int, ...]
    a: float
    score: Score
    fitness: float

    def to_row(self) -> dict:
        return {
            "equation": self.equation,
            "source": self.source,
            "assignment": list(self.assignment),
            "a": self.a,
            "precision": self.score.precision,
            "recall": self.score.recall,
            "fscore": self.score.fscore,
            "fitness": self.fitness,
        }


@dataclass(frozen=True)
class DiscoveryResult:
    best: Candidate
    ranked: list[Candidate]
    bgs_passes: int
    stopped_early: bool


_WORKER_SCENE: SceneEvaluation | None = None


def _set_worker_scene(scene: SceneEvaluation):
    global _WORKER_SCENE
    _WORKER_SCENE = scene


def _eval_exhaustive_task(task):
    text, source, seed_tuple, bounds, budget = task
    e = parse(text)
    rng = np.random.default_rng(seed_tuple)
    a, s = fit_a(e, _WORKER_SCENE, bounds=bounds, budget=budget, rng=rng)
    return Candidate(
        equation=render(e), source=source, assignment=operator_assignment(e),
        a=a, score=s, fitness=fitness(s),
    )


def _eval_cmaes_task(task):
    text, seed_tuple, bounds, budget = task
    e = parse(text)
    scene = _WORKER_SCENE
    rng = np.random.default_rng(seed_tuple)
    ulo, uhi = math.log10(bounds[0]), math.log10(bounds[1])
    base_codes = operator_assignment(e)
    eta = len(base_codes)
    x0 = np.array([(ulo + uhi) / 2.0] + [c + 0.5 for c in base_codes])
    scale = np.diag([(uhi - ulo) / 4.0] + [2.0] * eta)

    best = {}

    def decode(x):
        a = 10.0 ** min(max(float(x[0]), ulo), uhi)
        codes = tuple(int(v) for v in np.floor(np.clip(x[1:], 0.0, 4.0 - 1e-9)))
        return a, codes

    def f(x) -> float:
        a, codes = decode(x)
        mutated = apply_assignment(e, codes)
        s = scene.evaluate_expression(mutated, a)
        loss = fitness(s)
        if "fit" not in best or loss < best["fit"]:
            best.update(fit=loss, a=a, codes=codes, score=s)
        return loss

    minimize(f, x0, sigma0=1.0, budget=budget, rng=rng, chol=scale)
    mutated = apply_assignment(e, best["codes"])
    return Candidate(
        equation=render(mutated), source=render(e), assignment=best["codes"],
        a=best["a"], score=best["score"], fitness=best["fit"],
    )


def _run_tasks(tasks, worker_fn, scene, workers):
    if workers <= 1 or len(tasks) <= 1:
        _set_worker_scene(scene)
        return [worker_fn(t) for t in tasks]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_set_worker_scene, initargs=(scene,)
    ) as pool:
        return list(pool.map(worker_fn, tasks))


def resolve_workers(requested: int | None) -> int:
    """Worker count with the LBPFORGE_WORKERS environment cap applied."""
    cap = os.environ.get("LBPFORGE_WORKERS")
    n = requested if requested and requested >= 1 else 1
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            pass
    return n


def discover(equations, scene: SceneEvaluation, cfg: SearchConfig) -> DiscoveryResult:
    """Search the mutation space of every input equation on one scene.

    Exhaustive mode enumerates up to ``mutation_cap`` operator reassignments
    per equation and fits ``a`` for each; cmaes mode runs a joint continuous
    (1+1)-CMA-ES over [log10(a); operator codes] per equation.  Baseline
    descriptors are injected into the pool so the winner can never score
    below them.  Early stop (after a whole source equation, so results do not
    depend on worker count) happens once ``baseline_fitness`` is beaten.
    """
    pool_exprs = []
    seen = set()
    sources = list(BASELINE_EQUATIONS) if cfg.inject_baselines else []
    input_list = list(equations)
    if not input_list:
        raise EmptyInputError("discover needs at least one equation")
    for item in sources + input_list:
        e = parse(item) if isinstance(item, str) else item
        key = render(e)
        if key not in seen:
            seen.add(key)
            pool_exprs.append(e)

    budget_left = cfg.candidate_budget if cfg.candidate_budget is not None else None
    per_candidate = cfg.a_budget
    candidates: list[Candidate] = []
    passes = 0
    stopped = False

    for eq_idx, src in enumerate(pool_exprs):
        src_text = render(src)
        if cfg.mode == "exhaustive":
            tasks = []
            for mut_idx, mutated in enumerate(enumerate_mutations(src, cfg.mutation_cap)):
                if budget_left is not None and budget_left < per_candidate:
                    break
                if budget_left is not None:
                    budget_left -= per_candidate
                tasks.append((render(mutated), src_text,
                              (cfg.seed, eq_idx, mut_idx), cfg.a_bounds, per_candidate))
            results = _run_tasks(tasks, _eval_exhaustive_task, scene, cfg.workers)
        else:
            if budget_left is not None and budget_left < per_candidate:
                results = []
            else:
                if budget_left is not None:
                    budget_left -= per_candidate
                results = _run_tasks(
                    [(src_text, (cfg.seed, eq_idx), cfg.a_bounds, per_candidate)],
                    _eval_cmaes_task, scene, cfg.workers,
                )
        candidates.extend(results)
        passes += len(results) * per_candidate if cfg.mode == "exhaustive" else (
            per_candidate if results else 0
        )
        if budget_left is not None and budget_left < per_candidate:
            break
        if (cfg.baseline_fitness is not None and candidates
                and min(c.fitness for c in candidates) < cfg.baseline_fitness):
            stopped = True
            break

    if not candidates:
        raise ValueError("candidate budget too small to evaluate a single candidate")
    ranked = sorted(candidates, key=lambda c: (c.fitness, c.equation))
    return DiscoveryResult(best=ranked[0], ranked=ranked, bgs_passes=passes,
                           stopped_early=stopped)
