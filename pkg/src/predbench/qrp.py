"""Executable questionable-research-practice transformations with audit trails.

Covers the five operations that act on protocols or finished studies:
altering the data-generating process, removing competitors, selective
reporting of conditions, optional stopping, and seed hunting. The remaining
execution QRPs (objective switching, selective tuning, criterion switching,
inclusion-rule fishing) reduce to ordinary protocol-file edits and rerunning;
see the README.

Every transform appends to an explicit audit trail and never mutates stored
raw records; outputs are meant to be published together with their trail.
These tools make manipulations visible and reproducible, not concealable.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .datagen import TweakConfig, parse_scenario_id, validate_tweak
from .engine import (
    ReplicationRecord,
    ScenarioSpec,
    StudyProtocol,
    run_replication,
    run_scenario,
)

QRP_KINDS = ("alter_dgp", "remove_competitor", "optional_stopping", "seed_hunt", "selective_report")


@dataclass
class QrpAction:
    """One applied manipulation, for the audit trail."""

    kind: str
    params: dict
    description: str
    timestamp: float = field(default_factory=time.time)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def apply_alter_dgp(protocol: StudyProtocol, tweak: TweakConfig, audit: list) -> StudyProtocol:
    """E2: return a protocol copy with the tweak attached; original untouched."""
    validate_tweak(tweak)
    new = dataclasses.replace(protocol, tweak=tweak)
    from .engine import _hash_of

    audit.append(QrpAction(
        kind="alter_dgp",
        params={
            "sparsity": tweak.sparsity, "nonlinear": tweak.nonlinear,
            "nonlinear_scale": tweak.nonlinear_scale,
            "old_protocol_hash": _hash_of(protocol),
            "new_protocol_hash": _hash_of(new),
        },
        description=(
            f"altered DGP: sparsity={tweak.sparsity:g}, nonlinear={tweak.nonlinear}, "
            f"scale={tweak.nonlinear_scale:g}"
        ),
    ))
    return new


def apply_remove_competitor(
    records: Iterable[ReplicationRecord],
    methods_to_remove: Sequence[str],
    audit: list,
) -> list:
    """E3: drop competitor methods from downstream analysis (raw records stay)."""
    records = list(records)
    remove = set(methods_to_remove)
    present = {rec.method for rec in records}
    if "AINET" in remove:
        raise ValueError("the baseline AINET cannot be removed")
    unknown = remove - present
    if unknown:
        raise ValueError(f"methods not present in records: {sorted(unknown)}")
    if remove == present:
        raise ValueError("cannot remove every method")
    filtered = [rec for rec in records if rec.method not in remove]
    audit.append(QrpAction(
        kind="remove_competitor",
        params={"removed": sorted(remove), "records_before": len(records),
                "records_after": len(filtered)},
        description=f"removed competitors {sorted(remove)}" if remove else "removed nothing",
    ))
    return filtered


def apply_selective_report(
    records: Iterable[ReplicationRecord],
    condition_predicate: Callable[[dict], bool],
    audit: list,
) -> list:
    """R2: keep only scenarios passing the predicate; count what was hidden."""
    records = list(records)
    all_ids = sorted({rec.scenario_id for rec in records})
    kept_ids = {sid for sid in all_ids if condition_predicate(parse_scenario_id(sid))}
    if not kept_ids:
        raise ValueError("empty report: the predicate suppresses every scenario")
    filtered = [rec for rec in records if rec.scenario_id in kept_ids]
    suppressed = len(all_ids) - len(kept_ids)
    audit.append(QrpAction(
        kind="selective_report",
        params={"scenarios_before": len(all_ids), "scenarios_kept": len(kept_ids),
                "scenarios_suppressed": suppressed},
        description=f"selective reporting: suppressed {suppressed} of {len(all_ids)} scenarios",
    ))
    return filtered


# ---------------------------------------------------------------------------
# objectives monitored by the E7/E8 demonstrations


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str  # diff | mean | indep
    estimand: str
    methods: tuple

    def describe(self) -> str:
        if self.kind == "diff":
            return f"paired {self.estimand} difference {self.methods[0]} - {self.methods[1]}"
        if self.kind == "mean":
            return f"mean {self.estimand} of {self.methods[0]}"
        return (
            f"{self.estimand} difference of {self.methods[0]} between disjoint "
            "replication pairs (true value exactly zero)"
        )


def parse_objective(spec: str) -> ObjectiveSpec:
    """'diff:bs:AINET-EN', 'mean:bs:GLM' or 'indep:bs:GLM'."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"bad objective {spec!r}; expected kind:estimand:methods")
    kind, estimand, methods = parts
    if kind == "diff":
        pair = methods.split("-")
        if len(pair) != 2:
            raise ValueError("diff objective needs two methods, e.g. AINET-EN")
        return ObjectiveSpec("diff", estimand, tuple(pair))
    if kind in ("mean", "indep"):
        return ObjectiveSpec(kind, estimand, (methods,))
    raise ValueError(f"unknown objective kind {kind!r}")


DEFAULT_OBJECTIVE = "diff:bs:AINET-EN"


def objective_units(records: Iterable[ReplicationRecord], obj: ObjectiveSpec) -> np.ndarray:
    """Per-replication objective values (one unit per replication, or per
    disjoint replication pair for the 'indep' null objective)."""
    by_rep: dict = {}
    for rec in records:
        if rec.method in obj.methods and rec.converged and obj.estimand not in rec.flags:
            v = rec.metrics.get(obj.estimand)
            if v is not None and not math.isnan(v):
                by_rep.setdefault(rec.replication, {})[rec.method] = v
    if obj.kind == "diff":
        m1, m2 = obj.methods
        reps = sorted(b for b, d in by_rep.items() if m1 in d and m2 in d)
        return np.array([by_rep[b][m1] - by_rep[b][m2] for b in reps])
    m = obj.methods[0]
    reps = {b: d[m] for b, d in by_rep.items() if m in d}
    if obj.kind == "mean":
        return np.array([reps[b] for b in sorted(reps)])
    # indep: difference between consecutive disjoint replications (2b, 2b+1)
    out = []
    b = 0
    while 2 * b + 1 <= (max(reps) if reps else -1):
        lo, hi = 2 * b, 2 * b + 1
        if lo in reps and hi in reps:
            out.append(reps[lo] - reps[hi])
        b += 1
    return np.array(out)


def _run_first_replications(scenario, protocol, n_reps, workers=1):
    plan = protocol.plan.with_replications(n_reps)
    return run_scenario(scenario, dataclasses.replace(protocol, plan=plan), workers=workers)


@dataclass
class SeedHuntResult:
    trace: list  # (seed, objective value, n_units) in candidate order
    best_seed: Optional[int]
    objective: str
    audit: QrpAction


def seed_hunt(
    scenario: ScenarioSpec,
    protocol: StudyProtocol,
    candidate_seeds: Sequence[int],
    objective: str = DEFAULT_OBJECTIVE,
    small_B: int = 10,
    workers: int = 1,
) -> SeedHuntResult:
    """E8: rerun a small study under each candidate seed and report the full
    objective trace plus the minimizing seed (a seed-sensitivity demonstration)."""
    if small_B < 2:
        raise ValueError("small_B must be at least 2")
    candidates = [int(s) for s in candidate_seeds]
    if not candidates:
        raise ValueError("need at least one candidate seed")
    obj = parse_objective(objective)
    trace = []
    for seed in candidates:
        proto = dataclasses.replace(protocol, master_seed=seed)
        records = _run_first_replications(scenario, proto, small_B, workers=workers)
        units = objective_units(records, obj)
        value = float(np.mean(units)) if len(units) else math.nan
        trace.append((seed, value, len(units)))
    finite = [(v, s) for s, v, _ in trace if not math.isnan(v)]
    best = min(finite)[1] if finite else None
    action = QrpAction(
        kind="seed_hunt",
        params={"scenario": scenario.scenario_id, "candidates": candidates,
                "small_B": small_B, "objective": objective, "best_seed": best},
        description=(
            f"seed hunt over {len(candidates)} candidates at B={small_B} "
            f"minimizing {obj.describe()}"
        ),
    )
    return SeedHuntResult(trace=trace, best_seed=best, objective=objective, audit=action)


@dataclass
class OptionalStoppingResult:
    b_stop: Optional[int]
    trace: list  # dicts: B, n_units, mean, ci_low, ci_high, excludes_zero
    objective: str
    audit: QrpAction
    note: str = (
        "BIASED PRACTICE DEMONSTRATION: growing B until a CI excludes zero "
        "inflates the type I error rate; results must not be interpreted as "
        "evidence."
    )


def optional_stopping_trace(
    scenario: ScenarioSpec,
    protocol: StudyProtocol,
    step: int,
    max_B: int,
    objective: str = DEFAULT_OBJECTIVE,
    level: float = 0.05,
    workers: int = 1,
) -> OptionalStoppingResult:
    """E7: grow the replication set in increments (fixed master seed, earlier
    replications reused) and report the first B whose unadjusted CI excludes
    zero, together with the full trace."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if max_B < step:
        raise ValueError("max_B must be at least step")
    obj = parse_objective(objective)
    reps_per_unit = 2 if obj.kind == "indep" else 1

    looks = [B for B in range(step, max_B + 1, step)]
    records: list = []
    done = 0
    trace = []
    b_stop = None
    pool = None
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(max_workers=workers)
    try:
        for B in looks:
            needed = B * reps_per_unit
            if needed > done:
                new_range = range(done, needed)
                if pool is not None:
                    for recs in pool.map(run_replication, [protocol] * len(new_range),
                                         [scenario] * len(new_range), new_range):
                        records.extend(recs)
                else:
                    for b in new_range:
                        records.extend(run_replication(protocol, scenario, b))
                done = needed
            units = objective_units(records, obj)[:B]
            n = len(units)
            if n >= 2:
                mean = float(np.mean(units))
                half = float(stats.t.ppf(1 - level / 2, n - 1)
                             * np.std(units, ddof=1) / math.sqrt(n))
                lo, hi = mean - half, mean + half
                excludes = bool(lo > 0 or hi < 0)
            else:
                mean, lo, hi, excludes = math.nan, math.nan, math.nan, False
            trace.append({
                "B": B, "n_units": n, "mean": mean, "ci_low": lo, "ci_high": hi,
                "excludes_zero": excludes,
            })
            if excludes and b_stop is None:
                b_stop = B
    finally:
        if pool is not None:
            pool.shutdown()
    action = QrpAction(
        kind="optional_stopping",
        params={"scenario": scenario.scenario_id, "step": step, "max_B": max_B,
                "objective": objective, "level": level, "b_stop": b_stop},
        description=(
            f"optional stopping up to B={max_B} in steps of {step} on "
            f"{obj.describe()}; "
            + (f"stopped at B={b_stop}" if b_stop else "never stopped")
        ),
    )
    return OptionalStoppingResult(b_stop=b_stop, trace=trace, objective=objective, audit=action)
