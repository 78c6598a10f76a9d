"""Operating characteristics by simulation.

Replication ``r`` of a scenario always uses ``RngStream(root_seed, r)``.
Replications are split into fixed chunks that may run on worker threads; the
per-replication results are reassembled in replication order before any
averaging, so the output does not depend on the thread count or schedule.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .binary import BinaryDesignSpec, solve_cached
from .dist import BetaParams, RngStream, prob_superior_exact
from .monitor import (BackwardInduction, FixedSample, MonitoringDesign, ObrienFleming,
                      PredictiveProbability, thompson_prob_rational)

CHUNK = 500
DEFAULT_COSTS = (1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2)
DEFAULT_DELTAS = (0.0, 0.05, 0.15, 0.25)
#: Monte Carlo draws behind each posterior-probability declaration in the presets
PRESET_DECLARE_DRAWS = 10_000


@dataclass(frozen=True)
class Scenario:
    p0: float
    p1: float
    n_replications: int = 10_000
    root_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p0 <= 1 and 0 <= self.p1 <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")
        if not 0 <= self.root_seed < 2**64:
            raise ValueError("root_seed must be a 64-bit unsigned integer")

    @property
    def delta(self) -> float:
        return self.p1 - self.p0


@dataclass
class OperatingCharacteristics:
    design_label: str
    p0: float
    p1: float
    reps: int
    expected_n_per_arm: float
    declare_rate: float
    mc_se_declare: float
    median_stop_stage: float
    mc_se_n: float

    @property
    def delta(self) -> float:
        return self.p1 - self.p0


def default_threads() -> int:
    env = os.environ.get("SEQTRIAL_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("SEQTRIAL_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def simulate_replications(design: MonitoringDesign, scenario: Scenario,
                          threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-replication ``(n_used, declared)`` arrays in replication order."""
    R = scenario.n_replications
    bounds = [(lo, min(lo + CHUNK, R)) for lo in range(0, R, CHUNK)]

    def run(b):
        gens = [RngStream(scenario.root_seed, r).generator() for r in range(*b)]
        out = design.simulate((scenario.p1, scenario.p0), gens)
        return out.n_used, out.declared

    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(bounds) == 1:
        parts = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, bounds))
    n_used = np.concatenate([p[0] for p in parts])
    declared = np.concatenate([p[1] for p in parts])
    return n_used, declared


def run_oc(design: MonitoringDesign, scenario: Scenario, threads: int | None = None) -> OperatingCharacteristics:
    n_used, declared = simulate_replications(design, scenario, threads)
    R = scenario.n_replications
    d = float(np.mean(declared))
    return OperatingCharacteristics(
        design_label=design.label,
        p0=scenario.p0,
        p1=scenario.p1,
        reps=R,
        expected_n_per_arm=float(np.mean(n_used)),
        declare_rate=d,
        mc_se_declare=math.sqrt(d * (1 - d) / R),
        median_stop_stage=float(np.median(n_used)),
        mc_se_n=float(np.std(n_used) / math.sqrt(R)),
    )


# -- presets --------------------------------------------------------------------

def binary_spec(prior: BetaParams = BetaParams(1, 1), cost: float = 5e-4, horizon: int = 200,
                calibrated: bool = False, gamma: float = 0.975,
                declare_draws: int | None = PRESET_DECLARE_DRAWS) -> BinaryDesignSpec:
    """Symmetric-prior lattice design."""
    return BinaryDesignSpec(prior, prior, cost, horizon, gamma, calibrated, declare_draws)


def comparison_designs(declare_draws: int | None = PRESET_DECLARE_DRAWS) -> list[MonitoringDesign]:
    """Four designs for the p0 = 0.30 comparison: backward induction, predictive
    probability, O'Brien-Fleming and fixed sample."""
    return [
        BackwardInduction(solve_cached(binary_spec(declare_draws=declare_draws))),
        PredictiveProbability(posterior_draws=declare_draws),
        ObrienFleming(),
        FixedSample(),
    ]


def scenarios(deltas: Iterable[float] = DEFAULT_DELTAS, p0: float = 0.30, reps: int = 10_000,
              root_seed: int = 0) -> list[Scenario]:
    return [Scenario(p0, round(p0 + d, 12), reps, root_seed) for d in deltas]


def compare_designs(designs: Sequence[MonitoringDesign], scens: Sequence[Scenario],
                    threads: int | None = None) -> list[OperatingCharacteristics]:
    return [run_oc(d, s, threads) for s in scens for d in designs]


@dataclass
class FrontierPoint:
    cost: float
    delta: float
    expected_n: float
    power: float
    mc_se: float


def power_frontier(costs: Sequence[float] = DEFAULT_COSTS, deltas: Sequence[float] = DEFAULT_DELTAS,
                   reps: int = 5000, root_seed: int = 0, prior: BetaParams = BetaParams(1, 1),
                   p0: float = 0.30, threads: int | None = None,
                   declare_draws: int | None = PRESET_DECLARE_DRAWS) -> list[FrontierPoint]:
    """Calibrated design at each per-stage cost, run over every effect size."""
    out = []
    for c in costs:
        if not 1e-4 <= c <= 1e-2:
            raise ValueError("frontier costs must lie in [1e-4, 1e-2]")
        design = BackwardInduction(solve_cached(binary_spec(prior, c, calibrated=True, declare_draws=declare_draws)))
        for s in scenarios(deltas, p0, reps, root_seed):
            oc = run_oc(design, s, threads)
            out.append(FrontierPoint(c, s.delta, oc.expected_n_per_arm, oc.declare_rate, oc.mc_se_declare))
    return out


@dataclass
class SensitivityRow:
    prior: BetaParams
    delta: float
    expected_n: float
    power: float
    mc_se: float


def prior_sensitivity(priors: Sequence[BetaParams] = (BetaParams(1, 1), BetaParams(0.5, 0.5), BetaParams(3, 7)),
                      deltas: Sequence[float] = DEFAULT_DELTAS, reps: int = 5000, root_seed: int = 0,
                      cost: float = 5e-4, horizon: int = 200, gamma: float = 0.975, p0: float = 0.30,
                      threads: int | None = None,
                      declare_draws: int | None = PRESET_DECLARE_DRAWS) -> list[SensitivityRow]:
    """Calibrated design with the same prior on both arms, per prior and effect size."""
    out = []
    for pr in priors:
        design = BackwardInduction(solve_cached(binary_spec(pr, cost, horizon, True, gamma, declare_draws)))
        for s in scenarios(deltas, p0, reps, root_seed):
            oc = run_oc(design, s, threads)
            out.append(SensitivityRow(pr, s.delta, oc.expected_n_per_arm, oc.declare_rate, oc.mc_se_declare))
    return out


# -- ECMO ---------------------------------------------------------------------

ECMO_SCENARIOS = ((0.8, 0.2), (0.5, 0.2), (0.2, 0.2))


def ecmo_spec(declare_draws: int | None = PRESET_DECLARE_DRAWS) -> BinaryDesignSpec:
    """Calibrated design with a flat treatment prior and an informative Beta(4, 16) control prior."""
    return BinaryDesignSpec(BetaParams(1, 1), BetaParams(4, 16), 1e-3, 100, 0.975, True, declare_draws)


def ecmo_study(root_seed: int = 0, reps: int = 10_000, threads: int | None = None,
               declare_draws: int | None = PRESET_DECLARE_DRAWS) -> dict:
    """Posterior summaries for the 11/11 versus 0/1 ECMO data and the design's
    operating characteristics."""
    trt = BetaParams(1, 1).update(11, 11)
    ctrl = BetaParams(1, 1).update(0, 1)
    ctrl_inf = BetaParams(4, 16).update(0, 1)
    sup = thompson_prob_rational((11, 11), (0, 1))
    report = {
        "posterior_treatment": [trt.alpha, trt.beta],
        "posterior_control": [ctrl.alpha, ctrl.beta],
        "treatment_mean": str(Fraction(int(trt.alpha), int(trt.alpha + trt.beta))),
        "control_mean": str(Fraction(int(ctrl.alpha), int(ctrl.alpha + ctrl.beta))),
        "superiority": str(sup),
        "superiority_float": float(sup),
        "informative_control_posterior": [ctrl_inf.alpha, ctrl_inf.beta],
        "informative_control_mean": str(Fraction(int(ctrl_inf.alpha), int(ctrl_inf.alpha + ctrl_inf.beta))),
        "informative_superiority": prob_superior_exact(trt, ctrl_inf),
        "design": {"prior_treatment": [1, 1], "prior_control": [4, 16], "cost": 1e-3, "horizon": 100,
                   "gamma": 0.975, "declare_draws": declare_draws},
        "operating_characteristics": [],
    }
    design = BackwardInduction(solve_cached(ecmo_spec(declare_draws)), label="ECMO calibrated")
    for p1, p0 in ECMO_SCENARIOS:
        oc = run_oc(design, Scenario(p0, p1, reps, root_seed), threads)
        report["operating_characteristics"].append(asdict(oc))
    return report


# -- output -------------------------------------------------------------------

def oc_csv(rows: Sequence[OperatingCharacteristics], comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append("design,p0,p1,delta,reps,expected_n,declare_rate,mc_se,median_stop")
    for r in rows:
        lines.append(f"{r.design_label},{r.p0:.6g},{r.p1:.6g},{r.delta:.6g},{r.reps},"
                     f"{r.expected_n_per_arm:.4f},{r.declare_rate:.4f},{r.mc_se_declare:.4f},{r.median_stop_stage:g}")
    return "\n".join(lines) + "\n"


def frontier_csv(points: Sequence[FrontierPoint], comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append("cost,delta,expected_n,power")
    for p in points:
        lines.append(f"{p.cost:g},{p.delta:.6g},{p.expected_n:.4f},{p.power:.4f}")
    return "\n".join(lines) + "\n"


def sensitivity_csv(rows: Sequence[SensitivityRow], comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append("prior_alpha,prior_beta,delta,expected_n,power,mc_se")
    for r in rows:
        lines.append(f"{r.prior.alpha:g},{r.prior.beta:g},{r.delta:.6g},{r.expected_n:.4f},{r.power:.4f},{r.mc_se:.4f}")
    return "\n".join(lines) + "\n"


def ecmo_json(report: dict) -> str:
    return json.dumps(report, indent=2)
