"""Post-run analysis: summaries, baseline-versus-competitor contrasts with
single-step (max-|t|) multiplicity adjustment, p-value ranking, and the
difference-with-CI plot data used for the headline figure.

Contrasts are paired over the replications where both methods converged.
Within one scenario, the family of (at most four) competitor contrasts is
adjusted jointly by simulating the max-|t| distribution from a multivariate
normal with the empirical correlation of the per-replication difference
vectors, drawn from a fixed analysis stream for determinism.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .datagen import parse_scenario_id
from .engine import ReplicationRecord
from .penalized import METHOD_IDS
from .streams import derive_stream

DEFAULT_MC_DRAWS = 100000
SIGNIFICANCE_LEVEL = 0.05


@dataclass
class SummaryRow:
    scenario_id: str
    method_id: str
    estimand: str
    n_converged: int
    mean: float
    median: float
    sd: float
    iqr: float
    ci95_low: float
    ci95_high: float
    flagged: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ContrastRow:
    scenario_id: str
    competitor_id: str
    estimand: str
    mean_diff: float
    se_diff: float
    ci_low: float
    ci_high: float
    p_adjusted: float
    n_pairs: int
    flagged: bool = False
    significant: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _usable_value(rec: ReplicationRecord, estimand: str) -> Optional[float]:
    if not rec.converged or estimand in rec.flags:
        return None
    v = rec.metrics.get(estimand)
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return float(v)


def _group_by_scenario(records: Iterable[ReplicationRecord]) -> dict:
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.scenario_id, []).append(rec)
    return groups


def summarize(records: Iterable[ReplicationRecord], estimand: str) -> list:
    """One row per (scenario, method) over converged, valid replications."""
    cells: dict = {}
    for rec in records:
        v = _usable_value(rec, estimand)
        if v is not None:
            cells.setdefault((rec.scenario_id, rec.method), []).append(v)
    rows = []
    for (sid, method) in sorted(cells):
        vals = np.array(cells[(sid, method)])
        n = len(vals)
        mean = float(vals.mean())
        median = float(np.median(vals))
        if n >= 2:
            sd = float(vals.std(ddof=1))
            q1, q3 = np.percentile(vals, [25, 75])
            half = stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n)
            rows.append(SummaryRow(
                scenario_id=sid, method_id=method, estimand=estimand,
                n_converged=n, mean=mean, median=median, sd=sd,
                iqr=float(q3 - q1), ci95_low=mean - half, ci95_high=mean + half,
                flagged=sd == 0.0,
            ))
        else:
            rows.append(SummaryRow(
                scenario_id=sid, method_id=method, estimand=estimand,
                n_converged=n, mean=mean, median=median, sd=math.nan,
                iqr=math.nan, ci95_low=math.nan, ci95_high=math.nan, flagged=True,
            ))
    return rows


def _method_order(methods: Iterable[str]) -> list:
    known = [m for m in METHOD_IDS if m in methods]
    extra = sorted(set(methods) - set(known))
    return known + extra


def _maxabs_quantile_and_pvalues(R: np.ndarray, t_obs: np.ndarray, scenario_id: str,
                                 level: float, mc_draws: int, seed: int):
    """Simulate max_j |Z_j| for Z ~ N(0, R); return its (1-level) quantile and
    adjusted p-values P(max |Z| >= |t_j|)."""
    k = R.shape[0]
    stream = derive_stream(seed, scenario_id, 0, "analysis")
    try:
        L = np.linalg.cholesky(R + 1e-12 * np.eye(k))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(R)
        L = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
    Z = stream.gen.standard_normal((mc_draws, k)) @ L.T
    M = np.max(np.abs(Z), axis=1)
    c = float(np.quantile(M, 1.0 - level))
    pvals = np.array([float(np.mean(M >= abs(t))) if np.isfinite(t) else math.nan
                      for t in t_obs])
    return c, pvals


def pairwise_contrasts(
    records: Iterable[ReplicationRecord],
    estimand: str = "bs",
    baseline: str = "AINET",
    level: float = SIGNIFICANCE_LEVEL,
    mc_draws: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
) -> list:
    """Baseline-minus-competitor paired contrasts with adjusted CIs.

    For the Brier score a negative difference means the baseline predicts
    better than the competitor.
    """
    records = list(records)
    groups = _group_by_scenario(records)
    methods_present = {rec.method for rec in records}
    if baseline not in methods_present:
        raise ValueError(f"baseline {baseline!r} not present in the records")

    rows: list = []
    for sid in sorted(groups):
        recs = groups[sid]
        base_vals = {rec.replication: _usable_value(rec, estimand)
                     for rec in recs if rec.method == baseline}
        competitors = [m for m in _method_order({r.method for r in recs}) if m != baseline]
        diffs: dict = {}
        for comp in competitors:
            comp_vals = {rec.replication: _usable_value(rec, estimand)
                         for rec in recs if rec.method == comp}
            common = sorted(
                b for b, v in base_vals.items()
                if v is not None and comp_vals.get(b) is not None
            )
            diffs[comp] = {b: base_vals[b] - comp_vals[b] for b in common}

        stats_rows = {}
        family = []
        for comp in competitors:
            d = np.array([diffs[comp][b] for b in sorted(diffs[comp])])
            n_pairs = len(d)
            if n_pairs < 3:
                stats_rows[comp] = (math.nan, math.nan, n_pairs, True)
                continue
            mean_d = float(d.mean())
            se_d = float(d.std(ddof=1)) / math.sqrt(n_pairs)
            stats_rows[comp] = (mean_d, se_d, n_pairs, False)
            family.append(comp)

        if family:
            common_all = sorted(set.intersection(*(set(diffs[c]) for c in family)))
            k = len(family)
            R = np.eye(k)
            if len(common_all) >= 3 and k > 1:
                D = np.array([[diffs[c][b] for b in common_all] for c in family])
                sds = D.std(axis=1, ddof=1)
                ok = sds > 0
                if ok.any():
                    C = np.corrcoef(D[ok])
                    C = np.atleast_2d(C)
                    idx = np.flatnonzero(ok)
                    for a in range(len(idx)):
                        for b_ in range(len(idx)):
                            R[idx[a], idx[b_]] = C[a, b_]
                    np.fill_diagonal(R, 1.0)
            t_obs = []
            for comp in family:
                mean_d, se_d, _, _ = stats_rows[comp]
                if se_d > 0:
                    t_obs.append(mean_d / se_d)
                else:
                    t_obs.append(0.0 if mean_d == 0 else math.inf)
            c, pvals = _maxabs_quantile_and_pvalues(
                R, np.array(t_obs), sid, level, mc_draws, seed
            )
        for comp in competitors:
            mean_d, se_d, n_pairs, flagged = stats_rows[comp]
            if flagged:
                rows.append(ContrastRow(
                    scenario_id=sid, competitor_id=comp, estimand=estimand,
                    mean_diff=mean_d, se_diff=se_d, ci_low=math.nan,
                    ci_high=math.nan, p_adjusted=math.nan, n_pairs=n_pairs,
                    flagged=True, significant=False,
                ))
                continue
            j = family.index(comp)
            p_adj = pvals[j] if math.isfinite(t_obs[j]) else 0.0
            half = c * se_d
            rows.append(ContrastRow(
                scenario_id=sid, competitor_id=comp, estimand=estimand,
                mean_diff=mean_d, se_diff=se_d,
                ci_low=mean_d - half, ci_high=mean_d + half,
                p_adjusted=p_adj, n_pairs=n_pairs, flagged=False,
                significant=bool(p_adj < level),
            ))
    return rows


def rank_by_pvalue(contrasts: Sequence[ContrastRow]) -> list:
    """Ascending adjusted p-value; ties (and flagged rows, last) broken by
    (scenario_id, competitor_id)."""
    def key(row: ContrastRow):
        p = row.p_adjusted
        return (1 if (p is None or math.isnan(p)) else 0,
                p if not math.isnan(p) else math.inf,
                row.scenario_id, row.competitor_id)

    return sorted(contrasts, key=key)


def figure2_table(
    records: Iterable[ReplicationRecord],
    condition_filter: Callable[[dict], bool],
    competitors: Sequence[str],
    estimand: str = "bs",
    baseline: str = "AINET",
    seed: int = 0,
) -> list:
    """Plot data for the difference-with-CI figure: one row per surviving
    (condition, competitor) pair, Brier differences by default."""
    competitors = list(competitors)
    if not competitors:
        raise ValueError("competitor list is empty")
    records = list(records)
    selected_ids = {
        sid for sid in {rec.scenario_id for rec in records}
        if condition_filter(parse_scenario_id(sid))
    }
    if not selected_ids:
        raise ValueError("condition filter selects no scenarios")
    subset = [rec for rec in records if rec.scenario_id in selected_ids]
    contrasts = pairwise_contrasts(subset, estimand=estimand, baseline=baseline, seed=seed)
    rows = []
    for con in contrasts:
        if con.competitor_id not in competitors:
            continue
        fields = parse_scenario_id(con.scenario_id)
        rows.append({
            "condition": f"n={fields['n']}, EPV={fields['epv']:g}",
            "n": fields["n"],
            "epv": fields["epv"],
            "competitor": con.competitor_id,
            "estimand": con.estimand,
            "mean_diff": con.mean_diff,
            "ci_low": con.ci_low,
            "ci_high": con.ci_high,
            "p_adjusted": con.p_adjusted,
            "n_pairs": con.n_pairs,
        })
    rows.sort(key=lambda r: (r["n"], r["epv"], METHOD_IDS.index(r["competitor"])
                             if r["competitor"] in METHOD_IDS else 99))
    return rows
