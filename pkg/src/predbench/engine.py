"""Study execution: replication sizing, per-scenario loops, exception
handling, and deterministic parallel orchestration.

Every replication is a pure function of (protocol, master_seed, scenario,
replication index), so the full record set is identical for any worker count
or scheduling. Failed (method, replication) cells are recorded, never
replaced, and excluded from analysis downstream.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import metrics as metrics_mod
from .datagen import (
    Dataset,
    GridDesign,
    ScenarioSpec,
    TweakConfig,
    build_scenario_grid,
    generate_dataset,
    sample_coefficients,
    validate_tweak,
)
from .forest import fit_random_forest
from .metrics import compute_metric_set, oracle_correct, squared_error_variance
from .penalized import (
    ConvergenceError,
    METHOD_IDS,
    MethodConfig,
    MethodStreams,
    fit_method,
    predict_proba,
)
from .streams import derive_stream

log = logging.getLogger(__name__)

FAILURE_STAGES = ("fit", "cv", "predict", "metric")
FAILURE_FLAG_THRESHOLD = 0.10  # report flag when more than 10% of a cell fails


@dataclass(frozen=True)
class ReplicationPlan:
    """How many replications to run, and the sizing inputs that justify them."""

    B: int
    n_test: int
    V: Optional[float] = None
    target_mcse: Optional[float] = None
    pilot_B: int = 100
    overridden: bool = False

    def __post_init__(self):
        if self.B < 1 or self.n_test < 1 or self.pilot_B < 1:
            raise ValueError("B, n_test and pilot_B must be positive")
        if not self.overridden and self.V is not None and self.target_mcse is not None:
            expected = compute_required_replications(self.V, self.n_test, self.target_mcse)
            if expected != self.B:
                raise ValueError(
                    f"inconsistent plan: B={self.B} but sizing formula gives {expected}"
                )

    @classmethod
    def from_variance(
        cls, V: float, n_test: int, target_mcse: float, pilot_B: int = 100
    ) -> "ReplicationPlan":
        B = compute_required_replications(V, n_test, target_mcse)
        return cls(B=B, n_test=n_test, V=V, target_mcse=target_mcse, pilot_B=pilot_B)

    def with_replications(self, B: int) -> "ReplicationPlan":
        """Explicit desk-scale override; recorded as a deviation in metadata."""
        return dataclasses.replace(self, B=B, overridden=True)


def compute_required_replications(V: float, n_test: int, target_mcse: float) -> int:
    """B = ceil(V / (n_test * target_mcse^2))."""
    if V <= 0 or n_test <= 0 or target_mcse <= 0:
        raise ValueError("V, n_test and target_mcse must all be positive")
    q = V / (n_test * target_mcse**2)
    nearest = round(q)
    if nearest > 0 and abs(q - nearest) < 1e-6 * max(1.0, q):
        return int(nearest)  # guard ceil() against float noise at exact integers
    return int(math.ceil(q))


def round_up_one_significant(v: float) -> float:
    """Round a positive value up to one significant digit (0.25 -> 0.3)."""
    if v < 0:
        raise ValueError("value must be nonnegative")
    if v == 0.0:
        return 0.0
    e = math.floor(math.log10(v))
    m = math.ceil(v / 10.0**e - 1e-9)
    if m == 10:
        m, e = 1, e + 1
    return m * 10.0**e


@dataclass
class ReplicationRecord:
    """One (scenario, replication, method) result row."""

    scenario_id: str
    replication: int
    method: str
    converged: bool
    failure_stage: Optional[str] = None
    metrics: dict = field(default_factory=dict)
    flags: tuple = ()
    seeds: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def sort_key(self):
        return (self.scenario_id, self.replication, self.method)


@dataclass(frozen=True)
class StudyProtocol:
    """The whole study as data: grid, methods, plan, seed, optional tweak."""

    grid: GridDesign
    methods: tuple
    plan: ReplicationPlan
    master_seed: int
    tweak: Optional[TweakConfig] = None
    primary_estimand: str = "bs"
    estimands: tuple = metrics_mod.ESTIMANDS
    redraw_coefficients: bool = True
    method_config: MethodConfig = field(default_factory=MethodConfig)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "estimands", tuple(self.estimands))
        unknown = [m for m in self.methods if m not in METHOD_IDS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; allowed: {METHOD_IDS}")
        if not self.methods:
            raise ValueError("protocol must name at least one method")
        if self.primary_estimand not in self.estimands:
            raise ValueError("primary estimand must be part of the estimand roster")
        bad = [e for e in self.estimands if e not in metrics_mod.ESTIMANDS]
        if bad:
            raise ValueError(f"unknown estimands {bad}")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        if self.tweak is not None:
            validate_tweak(self.tweak)


@dataclass
class StudyResult:
    records: list
    scenarios: list
    metadata: dict
    failure_rows: list


def _failure_record(scenario_id, b, method, stage, seeds, wall_time):
    return ReplicationRecord(
        scenario_id=scenario_id, replication=b, method=method, converged=False,
        failure_stage=stage, metrics={}, flags=(), seeds=seeds, wall_time=wall_time,
    )


def run_replication(
    protocol: StudyProtocol,
    scenario: ScenarioSpec,
    b: int,
    fit_fn: Optional[Callable] = None,
) -> list:
    """Generate data for replication b and evaluate every protocol method."""
    ms = protocol.master_seed
    sid = scenario.scenario_id
    fit = fit_fn or fit_method
    seeds = {"master_seed": ms, "protocol_hash": _hash_of(protocol)}

    coef_rep = b if protocol.redraw_coefficients else 0
    coefs = sample_coefficients(
        derive_stream(ms, sid, coef_rep, "coefficients"), scenario, protocol.tweak
    )
    train = generate_dataset(
        scenario, coefs, derive_stream(ms, sid, b, "train"), scenario.n, "train"
    )
    test = generate_dataset(
        scenario, coefs, derive_stream(ms, sid, b, "test"), protocol.grid.n_test, "test"
    )
    oracle_metrics = compute_metric_set(test.y, test.oracle_prob)

    forest_cache = None
    forest_error = None
    if {"RF", "AINET"} & set(protocol.methods) and fit_fn is None:
        try:
            forest_cache = fit_random_forest(
                train.X, train.y, derive_stream(ms, sid, b, "forest"),
                protocol.method_config.forest,
            )
        except Exception as exc:  # recorded per method below
            forest_error = exc

    records = []
    for method in protocol.methods:
        t0 = time.perf_counter()
        streams = MethodStreams(
            fold_split=derive_stream(ms, sid, b, "fold_split"),
            forest=derive_stream(ms, sid, b, "forest"),
        )
        stage = "fit"
        try:
            if method in ("RF", "AINET") and forest_error is not None:
                raise ConvergenceError(str(forest_error), stage="fit")
            fitted = fit(method, train, streams, protocol.method_config,
                         forest_cache=forest_cache)
            if not fitted.converged:
                records.append(_failure_record(
                    sid, b, method, fitted.failure_stage or "fit", seeds,
                    time.perf_counter() - t0,
                ))
                continue
            stage = "predict"
            probs = predict_proba(fitted, test.X)
            stage = "metric"
            mset = oracle_correct(compute_metric_set(test.y, probs), oracle_metrics)
            values = mset.as_dict()
            values.update({f"{k}_oracle": oracle_metrics.value(k) for k in metrics_mod.ESTIMANDS})
            values["sq_err_var"] = squared_error_variance(test.y, probs)
            records.append(ReplicationRecord(
                scenario_id=sid, replication=b, method=method, converged=True,
                failure_stage=None, metrics=values, flags=tuple(sorted(mset.invalid)),
                seeds=seeds, wall_time=time.perf_counter() - t0,
            ))
        except ConvergenceError as exc:
            records.append(_failure_record(sid, b, method, exc.stage, seeds,
                                           time.perf_counter() - t0))
        except Exception:
            records.append(_failure_record(sid, b, method, stage, seeds,
                                           time.perf_counter() - t0))
    return records


@functools.lru_cache(maxsize=128)
def _hash_of(protocol: StudyProtocol) -> str:
    from . import iohub  # iohub owns canonical serialization

    return iohub.protocol_hash(protocol)


def run_scenario(
    scenario: ScenarioSpec,
    protocol: StudyProtocol,
    sink=None,
    workers: int = 1,
    executor=None,
    fit_fn: Optional[Callable] = None,
) -> list:
    """Run all B replications of one scenario and emit the records.

    A per-(scenario, method) failure proportion above 10% raises a report
    flag (logged and available via failure_report) without aborting.
    """
    B = protocol.plan.B
    records: list = []
    if executor is not None:
        futures = [executor.submit(run_replication, protocol, scenario, b, fit_fn)
                   for b in range(B)]
        for fut in futures:
            records.extend(fut.result())
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(run_replication,
                                 [protocol] * B, [scenario] * B, range(B),
                                 [fit_fn] * B):
                records.extend(recs)
    else:
        for b in range(B):
            records.extend(run_replication(protocol, scenario, b, fit_fn))

    if sink is not None:
        for rec in records:
            sink.append(rec)
    for row in failure_report(records):
        if row["flagged"]:
            log.warning(
                "scenario %s method %s: %.1f%% of replications failed (report flag)",
                row["scenario_id"], row["method"], 100 * row["proportion"],
            )
    return records


def failure_report(records: Iterable[ReplicationRecord]) -> list:
    """Per-(scenario, method) failure proportions with the >10% report flag."""
    totals: dict = {}
    failures: dict = {}
    for rec in records:
        key = (rec.scenario_id, rec.method)
        totals[key] = totals.get(key, 0) + 1
        if not rec.converged:
            failures[key] = failures.get(key, 0) + 1
    rows = []
    for key in sorted(totals):
        n = totals[key]
        f = failures.get(key, 0)
        prop = f / n
        rows.append({
            "scenario_id": key[0], "method": key[1], "n_total": n,
            "n_failed": f, "proportion": prop,
            "flagged": prop > FAILURE_FLAG_THRESHOLD,
        })
    return rows


def run_study(
    protocol: StudyProtocol,
    sink=None,
    workers: int = 1,
    scenario_filter: Optional[Callable[[ScenarioSpec], bool]] = None,
    fit_fn: Optional[Callable] = None,
) -> StudyResult:
    """Execute the protocol over its scenario grid."""
    scenarios = build_scenario_grid(protocol.grid)
    if scenario_filter is not None:
        scenarios = [s for s in scenarios if scenario_filter(s)]
        if not scenarios:
            raise ValueError("scenario filter leaves no scenarios to run")
    started = time.time()
    records: list = []
    executor = None
    try:
        if workers > 1:
            executor = ProcessPoolExecutor(max_workers=workers)
        for scenario in scenarios:
            records.extend(run_scenario(scenario, protocol, sink=sink,
                                        executor=executor, fit_fn=fit_fn))
    finally:
        if executor is not None:
            executor.shutdown()
    from . import __version__

    metadata = {
        "protocol_hash": _hash_of(protocol),
        "master_seed": protocol.master_seed,
        "software_version": __version__,
        "started": started,
        "finished": time.time(),
        "workers": workers,
        "n_scenarios": len(scenarios),
        "replications": protocol.plan.B,
        "replications_overridden": protocol.plan.overridden,
        "tweaked_dgp": protocol.tweak is not None,
    }
    return StudyResult(
        records=records,
        scenarios=scenarios,
        metadata=metadata,
        failure_rows=failure_report(records),
    )


def estimate_worst_case_variance(pilot_records: Iterable[ReplicationRecord]) -> float:
    """Worst per-record variance of squared errors, rounded up to one
    significant digit (the V bound in the sizing formula)."""
    values = [
        rec.metrics["sq_err_var"]
        for rec in pilot_records
        if rec.converged and "sq_err_var" in rec.metrics
    ]
    if not values:
        raise ValueError("pilot contains no converged records")
    return round_up_one_significant(max(values))


def plan_from_pilot(
    pilot_records: Iterable[ReplicationRecord],
    n_test: int,
    target_mcse: float,
    pilot_B: int = 100,
) -> ReplicationPlan:
    """Turn a pilot run into a full replication plan."""
    V = estimate_worst_case_variance(pilot_records)
    if V == 0.0:
        raise ValueError("pilot shows zero variance; sizing formula undefined")
    return ReplicationPlan.from_variance(V, n_test, target_mcse, pilot_B=pilot_B)
