"""Success-ratio and convergence studies driven by a flat ``key = value`` spec file.

A spec file looks like::

    # best rank-1 of random 10x10x10 tensors
    kind = success-ratio
    task = rank1
    generator = gaussian
    dims = 10,10,10
    variants = als/svd, als/ttsvd-best
    runs = 100
    seed = 0

Rank-1 variants are ``algo/init`` (``als/svd``, ``roro/ttsvd-best``). CP
variants are ``als`` or ``paro/SCHEDULE[/INNER]`` (``paro/adaptive:20:1.41421356:5/roro``).
Every variant of a run sees the same tensor and, for CP, the same initial
factors.

A run succeeds when its error is within ``success_threshold`` of the reference
error and fails when it is further than ``failure_threshold``. The reference
is the best error over all variants of that run, or zero when
``reference = zero`` (exact decompositions). Run ``i`` draws its tensor and
initial factors with seed ``seed + i``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .generators import MultTensorSpec, add_noise, mult_tensor, random_init, random_kruskal, stream
from .paro import CPDResult, MuSchedule, cpd_als, epc_init, paro_decompose
from .rank1 import solve_rank1
from .tensor import read_tensor

RAW_COLUMNS = ["run", "variant", "relative_error", "reference", "iterations", "converged", "outcome"]
SUMMARY_COLUMNS = ["variant", "runs", "success_ratio", "failure_ratio", "middle_ratio"]
TRACE_COLUMNS = ["run", "variant", "iter", "relative_error", "mu", "gammaR", "elapsed_ms"]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentSpec:
    kind: str = "success-ratio"
    task: str = "cpd"
    generator: str = "random"
    input: str | None = None
    mult: tuple[int, ...] = (2, 2, 2)
    dims: tuple[int, ...] = (5, 5, 5)
    true_rank: int = 1
    collinear: tuple[float, ...] | None = None
    blocks: tuple[int, ...] | None = None
    snr_db: float = math.inf
    rank: int = 1
    variants: tuple[str, ...] = ("als",)
    runs: int = 100
    seed: int = 0
    max_iters: int = 1000
    tol: float = 1e-12
    stall_tol: float = 1e-12
    epc: bool = True
    success_threshold: float = 1e-6
    failure_threshold: float = 1e-2
    reference: str = "best"
    output: str | None = None

    _PARSERS = {
        "mult": _ints,
        "dims": _ints,
        "collinear": _floats,
        "blocks": _ints,
        "variants": lambda s: tuple(v.strip() for v in s.split(",") if v.strip()),
        "epc": _bool,
    }

    def __post_init__(self):
        if self.kind not in ("success-ratio", "convergence"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.task not in ("rank1", "cpd"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.generator not in ("random", "gaussian", "mult", "file"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.generator == "file" and not self.input:
            raise ValueError("generator = file needs an input path")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not (self.success_threshold > 0 and self.failure_threshold > 0 and self.tol > 0):
            raise ValueError("thresholds and tol must be positive")
        if self.reference not in ("best", "zero"):
            raise ValueError("reference must be 'best' or 'zero'")
        if not self.variants:
            raise ValueError("at least one variant is required")
        for v in self.variants:
            parse_variant(self.task, v)

    @classmethod
    def parse(cls, text: str) -> "ExperimentSpec":
        known = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            if key in cls._PARSERS:
                values[key] = cls._PARSERS[key](value)
            elif known[key].type in ("int",):
                values[key] = int(value)
            elif known[key].type in ("float",):
                values[key] = float(value)
            else:
                values[key] = value
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.parse(Path(path).read_text())


def parse_variant(task: str, text: str) -> dict:
    parts = text.split("/")
    if task == "rank1":
        if len(parts) != 2 or parts[0] not in ("als", "r1lm", "roro"):
            raise ValueError(f"rank-1 variant {text!r} should be algo/init")
        if parts[1] not in ("svd", "ttsvd", "ttsvd-best"):
            raise ValueError(f"unknown init in {text!r}")
        return {"algo": parts[0], "init": parts[1]}
    if parts[0] == "als" and len(parts) == 1:
        return {"algo": "als"}
    if parts[0] == "paro" and len(parts) in (2, 3):
        inner = parts[2] if len(parts) == 3 else "als"
        if inner not in ("als", "r1lm", "roro"):
            raise ValueError(f"unknown inner solver in {text!r}")
        return {"algo": "paro", "schedule": MuSchedule.parse(parts[1]), "inner": inner}
    raise ValueError(f"CP variant {text!r} should be 'als' or 'paro/SCHEDULE[/INNER]'")


def make_tensor(spec: ExperimentSpec, run: int) -> np.ndarray:
    seed = spec.seed + run
    if spec.generator == "mult":
        t = mult_tensor(MultTensorSpec(*spec.mult))
    elif spec.generator == "file":
        t = read_tensor(spec.input)
    elif spec.generator == "gaussian":
        t = stream(seed, 0).standard_normal(spec.dims)
    else:
        _, t = random_kruskal(spec.dims, spec.true_rank, seed, spec.collinear, spec.blocks)
    return add_noise(t, spec.snr_db, seed)


def run_variant(spec: ExperimentSpec, variant: str, t: np.ndarray, run: int):
    """Run one variant on one tensor; returns a rank-1 or CP result."""
    v = parse_variant(spec.task, variant)
    if spec.task == "rank1":
        return solve_rank1(t, v["algo"], v["init"], tol=spec.tol, max_iters=spec.max_iters)
    init = random_init(t.shape, spec.rank, spec.seed + run)
    if v["algo"] == "als":
        return cpd_als(t, spec.rank, init, tol=spec.tol, max_iters=spec.max_iters, stall_tol=spec.stall_tol)
    if spec.epc:
        init = epc_init(t, init)
    return paro_decompose(
        t,
        spec.rank,
        v["schedule"],
        inner=v["inner"],
        init=init,
        tol=spec.tol,
        max_iters=spec.max_iters,
        stall_tol=spec.stall_tol,
        seed=spec.seed + run,
    )


def _iterations(res) -> int:
    return res.iterations


@dataclass
class SuccessTable:
    variants: list[str]
    errors: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    reference: np.ndarray
    success_threshold: float
    failure_threshold: float
    rows: list[dict] = field(default_factory=list)

    def outcome(self, run: int, k: int) -> str:
        gap = abs(self.errors[run, k] - self.reference[run])
        if gap < self.success_threshold:
            return "success"
        if gap > self.failure_threshold:
            return "failure"
        return "middle"

    def ratios(self, variant: str) -> dict[str, float]:
        k = self.variants.index(variant)
        outs = [self.outcome(run, k) for run in range(self.errors.shape[0])]
        n = len(outs)
        return {o: outs.count(o) / n for o in ("success", "failure", "middle")}

    def summary_rows(self) -> list[dict]:
        out = []
        for v in self.variants:
            r = self.ratios(v)
            out.append(
                {
                    "variant": v,
                    "runs": self.errors.shape[0],
                    "success_ratio": r["success"],
                    "failure_ratio": r["failure"],
                    "middle_ratio": r["middle"],
                }
            )
        return out

    def raw_rows(self) -> list[dict]:
        out = []
        for run in range(self.errors.shape[0]):
            for k, v in enumerate(self.variants):
                out.append(
                    {
                        "run": run,
                        "variant": v,
                        "relative_error": repr(float(self.errors[run, k])),
                        "reference": repr(float(self.reference[run])),
                        "iterations": int(self.iterations[run, k]),
                        "converged": int(self.converged[run, k]),
                        "outcome": self.outcome(run, k),
                    }
                )
        return out


def _write_csv(path, columns: list[str], rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def run_success_ratio(spec: ExperimentSpec) -> SuccessTable:
    """Run every variant on every run's tensor and classify each error.

    With ``spec.output`` set, writes ``OUTPUT_raw.csv`` and ``OUTPUT_summary.csv``.
    """
    n_var = len(spec.variants)
    errors = np.zeros((spec.runs, n_var))
    iters = np.zeros((spec.runs, n_var), dtype=int)
    conv = np.zeros((spec.runs, n_var), dtype=bool)
    for run in range(spec.runs):
        t = make_tensor(spec, run)
        for k, v in enumerate(spec.variants):
            res = run_variant(spec, v, t, run)
            errors[run, k] = res.error
            iters[run, k] = _iterations(res)
            conv[run, k] = res.converged
    reference = np.zeros(spec.runs) if spec.reference == "zero" else errors.min(axis=1)
    table = SuccessTable(
        list(spec.variants), errors, iters, conv, reference, spec.success_threshold, spec.failure_threshold
    )
    if spec.output:
        _write_csv(f"{spec.output}_raw.csv", RAW_COLUMNS, table.raw_rows())
        _write_csv(f"{spec.output}_summary.csv", SUMMARY_COLUMNS, table.summary_rows())
    return table


def trace_rows(run: int, variant: str, res) -> list[dict]:
    """Per-iteration rows for either a rank-1 or a CP result."""
    rows = []
    if isinstance(res, CPDResult):
        for tr in res.trace:
            rows.append(
                {
                    "run": run,
                    "variant": variant,
                    "iter": tr.iter,
                    "relative_error": repr(float(tr.relative_error)),
                    "mu": "" if tr.mu is None else repr(float(tr.mu)),
                    "gammaR": "" if tr.gamma_r is None else repr(float(tr.gamma_r)),
                    "elapsed_ms": f"{tr.elapsed_ms:.3f}",
                }
            )
    else:
        for i, err in enumerate(res.trace):
            rows.append(
                {
                    "run": run,
                    "variant": variant,
                    "iter": i,
                    "relative_error": repr(float(err)),
                    "mu": "",
                    "gammaR": "",
                    "elapsed_ms": "",
                }
            )
    return rows


def run_convergence(spec: ExperimentSpec) -> list[dict]:
    """Per-iteration traces of every variant and run; written to ``OUTPUT_trace.csv`` if requested."""
    rows = []
    for run in range(spec.runs):
        t = make_tensor(spec, run)
        for v in spec.variants:
            rows.extend(trace_rows(run, v, run_variant(spec, v, t, run)))
    if spec.output:
        _write_csv(f"{spec.output}_trace.csv", TRACE_COLUMNS, rows)
    return rows


def write_trace(path, rows: list[dict]) -> None:
    _write_csv(path, TRACE_COLUMNS, rows)
