"""Protocol files, record persistence and result export.

The protocol is data: a TOML document with sections grid / methods / plan /
seed / tweak / report. Parsing fills Appendix-style defaults, rejects unknown
keys (listing all of them), and computes a hash over a canonical
serialization, so comments and whitespace never change the hash. Records are
append-only NDJSON with self-contained lines; every line carries the protocol
hash and master seed so no result can be divorced from its configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.resources
import json
import math
import re
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import metrics as metrics_mod
from .datagen import GridDesign, TweakConfig
from .engine import ReplicationPlan, ReplicationRecord, StudyProtocol
from .forest import ForestParams
from .penalized import DEFAULT_ALPHAS, MethodConfig

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "grid", "methods", "plan", "seed", "tweak", "report"}
_SECTION_KEYS = {
    "grid": {
        "sample_sizes", "epv_values", "correlations", "prevalences",
        "p_min", "p_max", "n_test",
    },
    "methods": {
        "include", "alphas", "n_lambda", "cv_folds", "rule", "gamma",
        "rf_trees", "rf_min_node_size", "rf_mtry",
    },
    "plan": {
        "replications", "worst_case_variance", "target_mcse",
        "pilot_replications", "redraw_coefficients",
    },
    "seed": {"master_seed"},
    "tweak": {"sparsity", "nonlinear", "nonlinear_scale"},
    "report": {"primary_estimand", "estimands"},
}

DEFAULT_MASTER_SEED = 20220314


def bundled_protocol_path() -> Path:
    """Path of the bundled full-scale protocol file."""
    return Path(importlib.resources.files("predbench") / "protocols" / "appendix_a.toml")


def _validate_keys(doc: dict) -> None:
    offenders = []
    for key, value in doc.items():
        if key not in _TOP_KEYS:
            offenders.append(key)
        elif key != "schema_version" and isinstance(value, dict):
            offenders.extend(
                f"{key}.{sub}" for sub in value if sub not in _SECTION_KEYS[key]
            )
    if offenders:
        raise ValueError("unknown protocol keys: " + ", ".join(sorted(offenders)))


def parse_protocol(path: Union[str, Path]) -> StudyProtocol:
    """Read, validate and default-fill a protocol file."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return protocol_from_dict(doc)


def protocol_from_dict(doc: dict) -> StudyProtocol:
    _validate_keys(doc)
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version}")

    g = doc.get("grid", {})
    grid = GridDesign(
        sample_sizes=tuple(g.get("sample_sizes", GridDesign.sample_sizes)),
        epv_values=tuple(g.get("epv_values", GridDesign.epv_values)),
        correlations=tuple(g.get("correlations", GridDesign.correlations)),
        prevalences=tuple(g.get("prevalences", GridDesign.prevalences)),
        p_min=int(g.get("p_min", GridDesign.p_min)),
        p_max=int(g.get("p_max", GridDesign.p_max)),
        n_test=int(g.get("n_test", GridDesign.n_test)),
    )

    m = doc.get("methods", {})
    methods = tuple(m.get("include", ("GLM", "EN", "AEN", "AINET", "RF")))
    mtry = m.get("rf_mtry")
    method_config = MethodConfig(
        alphas=tuple(float(a) for a in m.get("alphas", DEFAULT_ALPHAS)),
        n_lambda=int(m.get("n_lambda", 100)),
        cv_folds=int(m.get("cv_folds", 5)),
        rule=str(m.get("rule", "one_se")),
        gamma=float(m.get("gamma", 1.0)),
        forest=ForestParams(
            n_trees=int(m.get("rf_trees", 500)),
            mtry=int(mtry) if mtry is not None else None,
            min_node_size=int(m.get("rf_min_node_size", 10)),
        ),
    )

    p = doc.get("plan", {})
    V = p.get("worst_case_variance")
    mcse = p.get("target_mcse")
    explicit_b = p.get("replications")
    pilot_B = int(p.get("pilot_replications", 100))
    if explicit_b is not None:
        if V is not None and mcse is not None:
            from .engine import compute_required_replications

            implied = compute_required_replications(float(V), grid.n_test, float(mcse))
            overridden = implied != int(explicit_b)
        else:
            overridden = True
        plan = ReplicationPlan(
            B=int(explicit_b), n_test=grid.n_test,
            V=float(V) if V is not None else None,
            target_mcse=float(mcse) if mcse is not None else None,
            pilot_B=pilot_B, overridden=overridden,
        )
    elif V is not None and mcse is not None:
        plan = ReplicationPlan.from_variance(float(V), grid.n_test, float(mcse), pilot_B=pilot_B)
    else:
        raise ValueError(
            "plan must give either explicit replications or worst_case_variance + target_mcse"
        )

    tweak = None
    if "tweak" in doc:
        t = doc["tweak"]
        tweak = TweakConfig(
            sparsity=float(t.get("sparsity", 1.0)),
            nonlinear=bool(t.get("nonlinear", False)),
            nonlinear_scale=float(t.get("nonlinear_scale", 1.0)),
        )

    r = doc.get("report", {})
    return StudyProtocol(
        grid=grid,
        methods=methods,
        plan=plan,
        master_seed=int(doc.get("seed", {}).get("master_seed", DEFAULT_MASTER_SEED)),
        tweak=tweak,
        primary_estimand=str(r.get("primary_estimand", "bs")),
        estimands=tuple(r.get("estimands", metrics_mod.ESTIMANDS)),
        redraw_coefficients=bool(p.get("redraw_coefficients", True)),
        method_config=method_config,
    )


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        r = repr(v)
        return r if ("." in r or "e" in r or "n" in r) else r + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def protocol_to_dict(protocol: StudyProtocol) -> dict:
    """Canonical nested-dict form of a protocol (the hash input)."""
    grid = protocol.grid
    plan = protocol.plan
    mc = protocol.method_config
    doc = {
        "schema_version": SCHEMA_VERSION,
        "grid": {
            "sample_sizes": list(grid.sample_sizes),
            "epv_values": list(grid.epv_values),
            "correlations": list(grid.correlations),
            "prevalences": list(grid.prevalences),
            "p_min": grid.p_min,
            "p_max": grid.p_max,
            "n_test": grid.n_test,
        },
        "methods": {
            "include": list(protocol.methods),
            "alphas": list(mc.alphas),
            "n_lambda": mc.n_lambda,
            "cv_folds": mc.cv_folds,
            "rule": mc.rule,
            "gamma": mc.gamma,
            "rf_trees": mc.forest.n_trees,
            "rf_min_node_size": mc.forest.min_node_size,
        },
        "plan": {
            "replications": plan.B,
            "pilot_replications": plan.pilot_B,
            "redraw_coefficients": protocol.redraw_coefficients,
        },
        "seed": {"master_seed": protocol.master_seed},
        "report": {
            "primary_estimand": protocol.primary_estimand,
            "estimands": list(protocol.estimands),
        },
    }
    if mc.forest.mtry is not None:
        doc["methods"]["rf_mtry"] = mc.forest.mtry
    if plan.V is not None:
        doc["plan"]["worst_case_variance"] = plan.V
    if plan.target_mcse is not None:
        doc["plan"]["target_mcse"] = plan.target_mcse
    if protocol.tweak is not None:
        doc["tweak"] = {
            "sparsity": protocol.tweak.sparsity,
            "nonlinear": protocol.tweak.nonlinear,
            "nonlinear_scale": protocol.tweak.nonlinear_scale,
        }
    return doc


def serialize_protocol(protocol: StudyProtocol) -> str:
    """Canonical TOML text: sorted keys, shortest-round-trip floats."""
    doc = protocol_to_dict(protocol)
    lines = [f"schema_version = {doc['schema_version']}"]
    for section in sorted(k for k in doc if k != "schema_version"):
        lines.append("")
        lines.append(f"[{section}]")
        for key in sorted(doc[section]):
            lines.append(f"{key} = {_toml_value(doc[section][key])}")
    return "\n".join(lines) + "\n"


def protocol_hash(protocol: StudyProtocol) -> str:
    return hashlib.sha256(serialize_protocol(protocol).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# record persistence


def _sanitize(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def record_to_dict(record: ReplicationRecord) -> dict:
    return {
        "scenario_id": record.scenario_id,
        "replication": record.replication,
        "method": record.method,
        "converged": record.converged,
        "failure_stage": record.failure_stage,
        "metrics": {k: _sanitize(v) for k, v in sorted(record.metrics.items())},
        "flags": list(record.flags),
        "seeds": record.seeds,
        "wall_time": record.wall_time,
    }


def record_from_dict(d: dict) -> ReplicationRecord:
    metrics = {
        k: (math.nan if v is None else float(v)) for k, v in d.get("metrics", {}).items()
    }
    return ReplicationRecord(
        scenario_id=d["scenario_id"],
        replication=int(d["replication"]),
        method=d["method"],
        converged=bool(d["converged"]),
        failure_stage=d.get("failure_stage"),
        metrics=metrics,
        flags=tuple(d.get("flags", ())),
        seeds=d.get("seeds", {}),
        wall_time=float(d.get("wall_time", 0.0)),
    )


def record_line(record: ReplicationRecord, include_wall_time: bool = True) -> str:
    d = record_to_dict(record)
    if not include_wall_time:
        d.pop("wall_time")
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


class RecordSink:
    """Append-only NDJSON sink; one self-contained JSON object per line."""

    def __init__(self, path: Union[str, Path], mode: str = "a"):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, mode, encoding="utf-8")

    def append(self, record: ReplicationRecord) -> None:
        self._fh.write(record_line(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path: Union[str, Path]) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def canonical_record_lines(records: Iterable[ReplicationRecord]) -> list:
    """Sorted record lines with wall time (the one timing-dependent field)
    stripped; byte-identical across reruns of the same protocol and seed."""
    return sorted(record_line(rec, include_wall_time=False) for rec in records)


# ---------------------------------------------------------------------------
# CSV export


def write_csv(path: Union[str, Path], rows: Sequence, metadata: Optional[dict] = None) -> None:
    """Write dict-like rows with '#'-prefixed metadata header lines."""
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dict_rows = [row.as_dict() if hasattr(row, "as_dict") else dict(row) for row in rows]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        if not dict_rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(dict_rows[0].keys()))
        writer.writeheader()
        for row in dict_rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# scenario filter expressions (CLI --scenarios, QRP selective reporting)

_FILTER_FIELDS = ("n", "epv", "rho", "prev", "p")
_CLAUSE_RE = re.compile(
    r"^\s*(n|epv|rho|prev|p)\s*(<=|>=|==|!=|<|>)\s*([0-9.eE+-]+)\s*$"
)
_OPS = {
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}


def parse_filter(expr: str) -> Callable[[dict], bool]:
    """Parse e.g. 'rho==0.95 & prev==0.05' into a predicate over scenario
    fields (n, epv, rho, prev, p); clauses are AND-combined."""
    clauses = []
    for part in re.split(r"[&,]", expr):
        m = _CLAUSE_RE.match(part)
        if m is None:
            raise ValueError(
                f"bad filter clause {part.strip()!r}; expected 'field op value' "
                f"with field in {_FILTER_FIELDS}"
            )
        field_, op, value = m.group(1), m.group(2), float(m.group(3))
        clauses.append((field_, _OPS[op], value))
    if not clauses:
        raise ValueError("empty filter expression")

    def predicate(fields: dict) -> bool:
        return all(op(float(fields[f]), v) for f, op, v in clauses)

    return predicate
