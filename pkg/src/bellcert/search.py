"""Exhaustive/sampled protocol sweeps with resumable JSONL persistence.

A protocol is one (expression, spot setting) pair.  Protocols are laid
out on a deterministic ordinal axis (expression ordinal major, spot
minor), sharded into fixed-size checkpoint units, and processed by a
process pool whose results are written by a single writer in ordinal
order, so sweeps are reproducible record-for-record regardless of worker
count and can resume from the last completed shard byte-identically.

Outputs per protocol: the classical and quantum bounds, per-noise
probability boxes with entropy certificates (optionally flex reports),
and classification flags.  Records are self-describing JSON lines
(schema version ``bef-record/1``); a binary sidecar index maps protocol
ordinals to byte offsets for fast resume and top-k scans.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import certify, entropy as entropy_mod, flex as flex_mod
from .errors import (
    AnsatzError,
    BellcertError,
    CheckpointMismatchError,
    EmptyBoxError,
    InfeasibleError,
    SolverError,
    UnboundedError,
)
from .scenario import (
    CoefficientMatrix,
    Protocol,
    Scenario,
    canonical_key,
    classical_bound,
    expression_from_ordinal,
    total_expressions,
)
from .sdp import DEFAULT_GAP_TOL, DEFAULT_PSD_TOL

__all__ = [
    "SearchConfig",
    "SearchSummary",
    "run_search",
    "iter_records",
    "histogram",
    "write_histogram_csv",
    "select_top",
    "Criterion",
    "Selection",
    "record_field",
    "config_hash",
]

RECORD_VERSION = "bef-record/1"
MANIFEST_VERSION = "bef-manifest/1"

#: B within this margin of the classical bound marks a non-certifying record.
CLASSICAL_MARGIN = 1e-7

#: Certified Shannon entropy below this counts as zero for the
#: non_certifying consistency flag.  With the Bell value pinned to
#: (1-p)B, a non-violating expression still forces an O(p*B*log) sliver
#: of entropy at the smallest noise level, so this margin cannot be
#: pushed to the reporting epsilon.
CLASSIFICATION_EPSILON = 1e-3

_IDX_FORMAT = "<QQ"  # (protocol ordinal, byte offset)


@dataclass(frozen=True)
class SearchConfig:
    """Everything that defines a sweep; hashed into the checkpoint manifest."""

    scenario: Scenario
    output_path: str | os.PathLike
    noise_levels: tuple[float, ...] = (1e-6, 0.1, 0.2)
    level: str = "1+AB"
    spot_settings: Optional[tuple[tuple[int, int], ...]] = None  # None = all (0-based)
    dedupe_symmetries: bool = False
    sample: Optional[tuple[int, int]] = None  # (seed, count) over protocol ordinals
    checkpoint_interval: int = 64
    compute_flex: bool = False
    zero_entropy_epsilon: float = 1e-6
    workers: int = 1
    gap_tol: float = DEFAULT_GAP_TOL

    def __post_init__(self):
        for p in self.noise_levels:
            if not (0.0 <= p < 1.0):
                raise ValueError(f"noise level {p} outside [0, 1)")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be positive")
        if self.spot_settings is not None:
            for (x, y) in self.spot_settings:
                if not (0 <= x < self.scenario.n_alice and 0 <= y < self.scenario.n_bob):
                    raise ValueError(f"spot ({x},{y}) outside scenario {self.scenario}")
        if self.sample is not None:
            seed, count = self.sample
            if count < 1 or count > self.total_protocols():
                raise ValueError("sample count outside [1, total protocols]")

    def spots(self) -> tuple[tuple[int, int], ...]:
        if self.spot_settings is not None:
            return tuple(self.spot_settings)
        return tuple(self.scenario.setting_pairs())

    def total_protocols(self) -> int:
        return total_expressions(self.scenario) * len(self.spots())


def config_hash(config: SearchConfig) -> str:
    """Hash of the semantic sweep parameters (not workers or paths)."""
    payload = {
        "scenario": [config.scenario.n_alice, config.scenario.n_bob],
        "noise_levels": list(config.noise_levels),
        "level": config.level,
        "spots": [list(s) for s in config.spots()],
        "dedupe": config.dedupe_symmetries,
        "sample": list(config.sample) if config.sample else None,
        "checkpoint_interval": config.checkpoint_interval,
        "flex": config.compute_flex,
        "zero_epsilon": config.zero_entropy_epsilon,
        "gap_tol": config.gap_tol,
        "record_version": RECORD_VERSION,
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Per-protocol computation (runs inside worker processes).
# ---------------------------------------------------------------------------


def _protocol_ordinals(config: SearchConfig) -> Iterator[int]:
    """Deterministic stream of protocol ordinals for this config."""
    n_spots = len(config.spots())
    if config.sample is not None:
        seed, count = config.sample
        rng = np.random.default_rng(seed)
        chosen = rng.choice(config.total_protocols(), size=count, replace=False)
        yield from sorted(int(v) for v in chosen)
        return
    if config.dedupe_symmetries:
        for expr_ord in range(1, total_expressions(config.scenario) + 1):
            alpha = expression_from_ordinal(config.scenario, expr_ord)
            if alpha.entries.tobytes() != canonical_key(alpha, include_relabelings=True):
                continue
            base = (expr_ord - 1) * n_spots
            yield from range(base, base + n_spots)
        return
    yield from range(config.total_protocols())


def _split_ordinal(config: SearchConfig, ordinal: int) -> tuple[int, tuple[int, int]]:
    n_spots = len(config.spots())
    expr_ord = ordinal // n_spots + 1
    spot = config.spots()[ordinal % n_spots]
    return expr_ord, spot


@dataclass(frozen=True)
class _Task:
    """One expression with its requested (ordinal, spot) pairs."""

    expr_ordinal: int
    entries: tuple[tuple[int, tuple[int, int]], ...]  # (protocol ordinal, spot)
    n_alice: int
    n_bob: int
    level: str
    noise_levels: tuple[float, ...]
    compute_flex: bool
    gap_tol: float


def _noise_entry(protocol: Protocol, p: float, task: _Task) -> dict:
    try:
        box = certify.probability_box(
            protocol, p, task.level, tsirelson=protocol.tsirelson, gap_tol=task.gap_tol
        )
        report = entropy_mod.certify_entropy(box)
        entry = {
            "p": p,
            "status": "ok",
            "box": box.as_dict(),
            "gap_tol": box.gap_tol,
            "entropy": report.as_dict(),
        }
        if task.compute_flex:
            fr = flex_mod.flex(
                protocol.alpha, protocol.tsirelson, p, task.level, gap_tol=task.gap_tol
            )
            entry["flex"] = fr.as_dict()
        return entry
    except InfeasibleError as exc:
        return {"p": p, "status": "infeasible", "detail": str(exc)}
    except (SolverError, UnboundedError, EmptyBoxError, AnsatzError) as exc:
        return {"p": p, "status": "error", "detail": f"{type(exc).__name__}: {exc}"}


def _compute_task(task: _Task) -> list[str]:
    """Records for one expression, serialized, in protocol-ordinal order."""
    scenario = Scenario(task.n_alice, task.n_bob)
    alpha = expression_from_ordinal(scenario, task.expr_ordinal)
    lines = []
    base = {
        "version": RECORD_VERSION,
        "scenario": [task.n_alice, task.n_bob],
        "alpha": alpha.to_string(),
        "level": task.level,
        "gap_tol": task.gap_tol,
        "psd_tol": DEFAULT_PSD_TOL,
        "classical_bound": classical_bound(alpha),
    }
    try:
        bound = certify.tsirelson_bound(alpha, task.level, gap_tol=task.gap_tol)
    except BellcertError as exc:
        for ordinal, spot in task.entries:
            rec = dict(base)
            rec.update(
                ordinal=ordinal,
                spot=[spot[0] + 1, spot[1] + 1],
                tsirelson=None,
                error=f"{type(exc).__name__}: {exc}",
                noise=[],
            )
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        return lines

    non_certifying = bound <= base["classical_bound"] + CLASSICAL_MARGIN
    for ordinal, spot in task.entries:
        protocol = Protocol(alpha, bound, spot[0], spot[1])
        noise = [_noise_entry(protocol, p, task) for p in task.noise_levels]
        mismatch = None
        if task.noise_levels:
            first = min(range(len(task.noise_levels)), key=lambda i: task.noise_levels[i])
            if noise[first]["status"] == "ok":
                zero = noise[first]["entropy"]["shannon_certified"] <= CLASSIFICATION_EPSILON
                mismatch = bool(zero != non_certifying)
        rec = dict(base)
        rec.update(
            ordinal=ordinal,
            spot=[spot[0] + 1, spot[1] + 1],
            tsirelson=bound,
            non_certifying=bool(non_certifying),
            spot_correlator_nonzero=bool(alpha.entries[spot[0], spot[1]] != 0),
            zero_entropy_mismatch=mismatch,
            error=None,
            noise=noise,
        )
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return lines


# ---------------------------------------------------------------------------
# Sweep driver: sharding, checkpointing, resume.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSummary:
    total: int
    certifying: int
    errors: int
    zero_entropy: dict  # noise -> count of shannon_certified <= epsilon
    zero_entropy_min_entropy: dict  # noise -> count of min_entropy <= epsilon
    max_shannon_certified: dict  # noise -> max over ok records
    max_shannon_ansatz: dict
    epsilon: float
    output_path: str
    shards_done: int
    completed: bool

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "certifying": self.certifying,
            "errors": self.errors,
            "zero_entropy": self.zero_entropy,
            "zero_entropy_min_entropy": self.zero_entropy_min_entropy,
            "max_shannon_certified": self.max_shannon_certified,
            "max_shannon_ansatz": self.max_shannon_ansatz,
            "epsilon": self.epsilon,
            "output_path": self.output_path,
            "shards_done": self.shards_done,
            "completed": self.completed,
        }


def _manifest_path(output_path: Path) -> Path:
    return output_path.with_name(output_path.name + ".manifest.json")


def _index_path(output_path: Path) -> Path:
    return output_path.with_name(output_path.name + ".idx")


def _write_manifest(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=1))
    os.replace(tmp, path)


def _tasks_for_shard(config: SearchConfig, ordinals: Sequence[int]) -> list[_Task]:
    grouped: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    for ordinal in ordinals:
        expr_ord, spot = _split_ordinal(config, ordinal)
        grouped.setdefault(expr_ord, []).append((ordinal, spot))
    return [
        _Task(
            expr_ordinal=expr_ord,
            entries=tuple(entries),
            n_alice=config.scenario.n_alice,
            n_bob=config.scenario.n_bob,
            level=config.level,
            noise_levels=tuple(config.noise_levels),
            compute_flex=config.compute_flex,
            gap_tol=config.gap_tol,
        )
        for expr_ord, entries in sorted(grouped.items())
    ]


def run_search(config: SearchConfig, *, stop_after_shards: Optional[int] = None) -> SearchSummary:
    """Run (or resume) a sweep; returns the summary of the output file.

    ``stop_after_shards`` bounds the *total* number of completed shards,
    which makes interruption at any checkpoint boundary scriptable; a
    later call without the bound finishes the sweep from the checkpoint.
    """
    output_path = Path(config.output_path)
    manifest_path = _manifest_path(output_path)
    index_path = _index_path(output_path)
    digest = config_hash(config)

    ordinals = list(_protocol_ordinals(config))
    n_shards = max(1, math.ceil(len(ordinals) / config.checkpoint_interval))
    shards = [
        ordinals[i * config.checkpoint_interval : (i + 1) * config.checkpoint_interval]
        for i in range(n_shards)
    ]

    shards_done = 0
    bytes_written = 0
    idx_bytes = 0
    records_written = 0
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config_hash") != digest:
            raise CheckpointMismatchError(
                f"manifest {manifest_path} was written under a different config"
            )
        shards_done = int(manifest["shards_done"])
        bytes_written = int(manifest["bytes_written"])
        idx_bytes = int(manifest["idx_bytes"])
        records_written = int(manifest["records_written"])
    elif output_path.exists():
        output_path.unlink()
        index_path.unlink(missing_ok=True)

    # Drop any partial tail beyond the last completed checkpoint.
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.touch()
    index_path.touch()
    with open(output_path, "r+b") as fh:
        fh.truncate(bytes_written)
    with open(index_path, "r+b") as fh:
        fh.truncate(idx_bytes)

    pool = None
    try:
        if config.workers > 1:
            pool = ProcessPoolExecutor(max_workers=config.workers)
        with open(output_path, "ab") as out, open(index_path, "ab") as idx:
            for shard_no in range(shards_done, n_shards):
                if stop_after_shards is not None and shard_no >= stop_after_shards:
                    break
                tasks = _tasks_for_shard(config, shards[shard_no])
                if pool is not None:
                    results = list(pool.map(_compute_task, tasks))
                else:
                    results = [_compute_task(t) for t in tasks]
                for task, lines in zip(tasks, results):
                    for (ordinal, _spot), line in zip(task.entries, lines):
                        data = (line + "\n").encode()
                        idx.write(struct.pack(_IDX_FORMAT, ordinal, bytes_written))
                        out.write(data)
                        bytes_written += len(data)
                        idx_bytes += struct.calcsize(_IDX_FORMAT)
                        records_written += 1
                out.flush()
                idx.flush()
                shards_done = shard_no + 1
                _write_manifest(
                    manifest_path,
                    {
                        "version": MANIFEST_VERSION,
                        "config_hash": digest,
                        "shards_done": shards_done,
                        "total_shards": n_shards,
                        "records_written": records_written,
                        "bytes_written": bytes_written,
                        "idx_bytes": idx_bytes,
                    },
                )
    finally:
        if pool is not None:
            pool.shutdown()

    return summarize(
        iter_records(output_path),
        epsilon=config.zero_entropy_epsilon,
        output_path=str(output_path),
        shards_done=shards_done,
        completed=shards_done >= n_shards,
    )


def iter_records(path: str | os.PathLike) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def summarize(
    records: Iterable[dict],
    *,
    epsilon: float,
    output_path: str = "",
    shards_done: int = 0,
    completed: bool = True,
) -> SearchSummary:
    total = certifying = errors = 0
    zero_sh: dict[float, int] = {}
    zero_me: dict[float, int] = {}
    max_cert: dict[float, float] = {}
    max_ans: dict[float, float] = {}
    for rec in records:
        total += 1
        if rec.get("error"):
            errors += 1
            continue
        if not rec.get("non_certifying", False):
            certifying += 1
        for entry in rec.get("noise", ()):
            if entry.get("status") != "ok":
                continue
            p = entry["p"]
            ent = entry["entropy"]
            if ent["shannon_certified"] <= epsilon:
                zero_sh[p] = zero_sh.get(p, 0) + 1
            if ent["min_entropy_certified"] <= epsilon:
                zero_me[p] = zero_me.get(p, 0) + 1
            max_cert[p] = max(max_cert.get(p, 0.0), ent["shannon_certified"])
            max_ans[p] = max(max_ans.get(p, 0.0), ent["shannon_ansatz"])
    return SearchSummary(
        total=total,
        certifying=certifying,
        errors=errors,
        zero_entropy=zero_sh,
        zero_entropy_min_entropy=zero_me,
        max_shannon_certified=max_cert,
        max_shannon_ansatz=max_ans,
        epsilon=epsilon,
        output_path=output_path,
        shards_done=shards_done,
        completed=completed,
    )


# ---------------------------------------------------------------------------
# Aggregation: histograms and top-k selection.
# ---------------------------------------------------------------------------

_MEASURES = {
    "shannon": "shannon_certified",
    "shannon_certified": "shannon_certified",
    "shannon_ansatz": "shannon_ansatz",
    "min_entropy": "min_entropy_certified",
    "analytic_bound": "analytic_bound",
}


def _noise_match(p: float, q: float) -> bool:
    return math.isclose(p, q, rel_tol=1e-9, abs_tol=1e-15)


def record_field(rec: dict, spec: str) -> Optional[float]:
    """Resolve a field spec like "shannon_ansatz@0.1", "flex@1e-6" or
    "tsirelson" on one record; None when absent or errored."""
    name, _, noise_text = spec.partition("@")
    name = name.strip()
    if not noise_text:
        if name in ("tsirelson", "classical_bound"):
            return rec.get(name)
        raise ValueError(f"field {name!r} needs a noise qualifier like '@0.1'")
    p = float(noise_text)
    for entry in rec.get("noise", ()):
        if _noise_match(entry["p"], p):
            if entry.get("status") != "ok":
                return None
            if name == "flex":
                return entry.get("flex", {}).get("flex")
            if name in _MEASURES:
                return entry["entropy"][_MEASURES[name]]
            raise ValueError(f"unknown per-noise field {name!r}")
    return None


@dataclass(frozen=True)
class Criterion:
    """One filter: record_field(rec, field) OP value (or ~ within eps)."""

    field: str
    op: str  # > >= < <= ~
    value: float
    eps: float = 0.05

    def admits(self, rec: dict) -> bool:
        v = record_field(rec, self.field)
        if v is None:
            return False
        if self.op == ">":
            return v > self.value
        if self.op == ">=":
            return v >= self.value
        if self.op == "<":
            return v < self.value
        if self.op == "<=":
            return v <= self.value
        if self.op == "~":
            return abs(v - self.value) <= self.eps
        raise ValueError(f"unknown operator {self.op!r}")

    @classmethod
    def parse(cls, text: str, eps: float = 0.05) -> "Criterion":
        for op in (">=", "<=", ">", "<", "~"):
            if op in text:
                fld, _, val = text.partition(op)
                return cls(fld.strip(), op, float(val), eps)
        raise ValueError(f"cannot parse filter {text!r}")


@dataclass(frozen=True)
class Selection:
    """Filters plus one objective.

    Objective forms: "max:FIELD", "min:FIELD", or "smoothest[:FIELD]"
    (smoothest = minimal maximum |dH/dp| across the record's noise grid;
    the field defaults to certified Shannon entropy).
    """

    filters: tuple[Criterion, ...] = ()
    objective: str = "max:shannon_certified@0.2"

    def objective_value(self, rec: dict) -> Optional[float]:
        kind, _, fld = self.objective.partition(":")
        if kind in ("max", "min"):
            return record_field(rec, fld)
        if kind == "smoothest":
            measure = _MEASURES.get(fld or "shannon", "shannon_certified")
            points = [
                (e["p"], e["entropy"][measure])
                for e in rec.get("noise", ())
                if e.get("status") == "ok"
            ]
            points.sort()
            if len(points) < 2:
                return None
            return max(
                abs((h2 - h1) / (p2 - p1))
                for (p1, h1), (p2, h2) in zip(points, points[1:])
                if p2 > p1
            )
        raise ValueError(f"unknown objective {self.objective!r}")

    @property
    def ascending(self) -> bool:
        return not self.objective.startswith("max:")


def select_top(
    records: Iterable[dict], selection: Selection, top: Optional[int] = None
) -> list[tuple[dict, float]]:
    """Rank the admissible records by the objective.

    Deterministic tie-break: expression text, then spot, ascending.
    """
    scored = []
    for rec in records:
        if rec.get("error"):
            continue
        if not all(c.admits(rec) for c in selection.filters):
            continue
        value = selection.objective_value(rec)
        if value is None:
            continue
        scored.append((rec, float(value)))
    sign = 1.0 if selection.ascending else -1.0
    scored.sort(key=lambda rv: (sign * rv[1], rv[0]["alpha"], tuple(rv[0]["spot"])))
    return scored[:top] if top is not None else scored


def histogram(
    records: Iterable[dict],
    measure: str,
    noise: float,
    bin_width: float = 0.02,
) -> list[tuple[float, float, int]]:
    """Counts of the certified measure over [0, 2] at one noise level.

    Bin edges are multiples of ``bin_width``; the top edge is closed so
    the counts sum to the number of records carrying an ok entry at this
    noise level.
    """
    if measure not in _MEASURES:
        raise ValueError(f"unknown measure {measure!r}; choose from {sorted(_MEASURES)}")
    key = _MEASURES[measure]
    n_bins = max(1, math.ceil(2.0 / bin_width - 1e-12))
    counts = [0] * n_bins
    seen = 0
    for rec in records:
        if rec.get("error"):
            continue
        for entry in rec.get("noise", ()):
            if _noise_match(entry["p"], noise) and entry.get("status") == "ok":
                v = entry["entropy"][key]
                k = min(int(v / bin_width), n_bins - 1)
                counts[k] += 1
                seen += 1
                break
    if seen == 0:
        raise ValueError(f"no records with an ok entry at noise {noise}")
    return [(i * bin_width, (i + 1) * bin_width, c) for i, c in enumerate(counts)]


def write_histogram_csv(bins, fh, metadata: Optional[dict] = None) -> None:
    if metadata:
        for k in sorted(metadata):
            fh.write(f"# {k}={metadata[k]}\n")
    fh.write("bin_lo,bin_hi,count\n")
    for lo, hi, count in bins:
        fh.write(f"{lo:.6f},{hi:.6f},{count}\n")
