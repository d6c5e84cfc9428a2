"""
RF-chain selection by exhaustive search, greedy deactivation, random draws
and the fully-connected candidate sweep.

Every search evaluates masks with the same fixed-selection design, which is
a deterministic function of the mask, so exhaustive search dominates greedy
search on every instance.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchitectureError, InfeasibleError
from .fd_optimizer import (DesignResult, OptimizerOptions,
                           design_precoder_given_selection)
from .hybrid import (HybridResult, fc_match, hybrid_metrics, refine_digital,
                     sensing_ok)
from .system_model import SelectionMask, SystemConfig

_MAX_BRUTE = 16
_GREEDY_MARGIN = 1e-9


@dataclass(frozen=True)
class MaskEvaluation:
    mask: tuple
    feasible: bool
    ee: float = float("nan")
    rate: float = float("nan")
    power: float = float("nan")


@dataclass
class SearchResult:
    mask: SelectionMask
    design: DesignResult | HybridResult
    evaluations: list = field(default_factory=list)

    @property
    def ee(self) -> float:
        return self.design.ee

    @property
    def n_designs(self) -> int:
        return len(self.evaluations)


def n_chains(cfg: SystemConfig, power_model: str) -> int:
    return cfg.n_tx if power_model == "fd" else cfg.n_rf


class _Evaluator:
    """Caches fixed-selection designs by mask."""

    def __init__(self, cfg, H, power_model, options):
        self.cfg, self.H, self.model = cfg, H, power_model
        self.options = options or OptimizerOptions()
        self.cache = {}
        self.log = []

    def __call__(self, mask: SelectionMask):
        key = mask.key()
        if key in self.cache:
            return self.cache[key]
        try:
            res = design_precoder_given_selection(mask, self.cfg, self.H, self.model,
                                                  self.options)
            ev = MaskEvaluation(key, True, res.ee, res.rate, res.power)
        except InfeasibleError:
            res = None
            ev = MaskEvaluation(key, False)
        self.cache[key] = res
        self.log.append(ev)
        return res


def write_mask_log(evaluations, path) -> None:
    """CSV audit log with one row per evaluated mask."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mask", "feasible", "ee", "rate", "power"])
        for ev in evaluations:
            w.writerow(["".join("1" if b else "0" for b in ev.mask), int(ev.feasible),
                        repr(ev.ee), repr(ev.rate), repr(ev.power)])


def _better(ee, best_ee, mask, best_mask):
    """Exhaustive-search ordering: EE, then fewer chains, then lexicographic."""
    if best_mask is None:
        return True
    tol = 1e-9 * max(abs(best_ee), 1e-300)
    if ee > best_ee + tol:
        return True
    if ee < best_ee - tol:
        return False
    if sum(mask) != sum(best_mask):
        return sum(mask) < sum(best_mask)
    return tuple(mask) < tuple(best_mask)


def brute_force_search(cfg: SystemConfig, H, power_model: str = "fd",
                       options: OptimizerOptions | None = None) -> SearchResult:
    """Best exact EE over every nonempty mask."""
    n = n_chains(cfg, power_model)
    if n > _MAX_BRUTE:
        raise ValueError(f"exhaustive search limited to {_MAX_BRUTE} chains")
    ev = _Evaluator(cfg, H, power_model, options)
    best = best_key = None
    best_ee = -np.inf
    for bits in itertools.product((True, False), repeat=n):
        if not any(bits):
            continue
        res = ev(SelectionMask(np.array(bits)))
        if res is None:
            continue
        if _better(res.ee, best_ee, bits, best_key):
            best, best_key, best_ee = res, bits, res.ee
    if best is None:
        raise InfeasibleError("every selection mask is infeasible")
    return SearchResult(best.mask, best, ev.log)


def greedy_search(cfg: SystemConfig, H, power_model: str = "fd",
                  options: OptimizerOptions | None = None, rng_seed=0) -> SearchResult:
    """Greedy deactivation starting from all chains on.

    Each stage visits the active chains in a fresh random order and keeps the
    first deactivation that strictly raises EE.
    """
    n = n_chains(cfg, power_model)
    rng = np.random.default_rng(rng_seed)
    ev = _Evaluator(cfg, H, power_model, options)
    mask = SelectionMask.all_on(n)
    best = ev(mask)
    if best is None:
        raise InfeasibleError("all-on design is infeasible")
    while mask.count > 1:
        improved = False
        for i in rng.permutation(mask.indices):
            trial = mask.active.copy()
            trial[i] = False
            cand = ev(SelectionMask(trial))
            if cand is not None and cand.ee > best.ee + _GREEDY_MARGIN * abs(best.ee):
                mask, best, improved = SelectionMask(trial), cand, True
                break
        if not improved:
            break
    return SearchResult(mask, best, ev.log)


def random_selection(cfg: SystemConfig, H, power_model: str = "fd",
                     options: OptimizerOptions | None = None, rng_seed=0,
                     max_draws: int = 50) -> SearchResult:
    """Uniformly random mask size, then a uniformly random mask of that size."""
    n = n_chains(cfg, power_model)
    rng = np.random.default_rng(rng_seed)
    ev = _Evaluator(cfg, H, power_model, options)
    for _ in range(max_draws):
        size = int(rng.integers(1, n + 1))
        active = np.zeros(n, dtype=bool)
        active[rng.choice(n, size, replace=False)] = True
        res = ev(SelectionMask(active))
        if res is not None:
            return SearchResult(res.mask, res, ev.log)
    raise InfeasibleError(f"no feasible random mask in {max_draws} draws")


def all_on_design(cfg: SystemConfig, H, power_model: str = "fd",
                  options: OptimizerOptions | None = None) -> SearchResult:
    ev = _Evaluator(cfg, H, power_model, options)
    res = ev(SelectionMask.all_on(n_chains(cfg, power_model)))
    if res is None:
        raise InfeasibleError("all-on design is infeasible")
    return SearchResult(res.mask, res, ev.log)


def fc_candidate(cfg: SystemConfig, H, n_active: int,
                 options: OptimizerOptions | None = None, refine: bool = True) -> HybridResult:
    """Fully-connected design using the first ``n_active`` chains."""
    mask = SelectionMask.first(n_active, cfg.n_rf)
    fd = design_precoder_given_selection(mask, cfg, H, "fc", options)
    m = fc_match(fd.precoder.stacked(), n_active, cfg.n_rf, cfg.n_sub, p_tx=cfg.p_tx_w)
    hp = m.precoder
    if refine:
        hp = refine_digital(hp, cfg, H, options, fd.trace)
    if not sensing_ok(hp, cfg):
        raise InfeasibleError("factorized precoder violates the beam-power floor")
    rate, power = hybrid_metrics(hp, cfg, H)
    return HybridResult(hp, rate, power, m.residual, fd.trace)


def fc_candidate_sweep(cfg: SystemConfig, H, options: OptimizerOptions | None = None,
                       refine: bool = True) -> SearchResult:
    """Try ``n = 1..n_rf`` leading chains and keep the best exact EE."""
    if cfg.architecture != "fc":
        raise ArchitectureError("candidate sweep needs a fully-connected config")
    best = None
    log = []
    for n in range(1, cfg.n_rf + 1):
        mask = SelectionMask.first(n, cfg.n_rf)
        try:
            res = fc_candidate(cfg, H, n, options, refine)
        except InfeasibleError:
            log.append(MaskEvaluation(mask.key(), False))
            continue
        log.append(MaskEvaluation(mask.key(), True, res.ee, res.rate, res.power))
        if best is None or res.ee > best.ee:
            best = res
    if best is None:
        raise InfeasibleError("every candidate is infeasible")
    return SearchResult(best.precoder.mask, best, log)
