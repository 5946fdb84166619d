"""Event-counting energy/area estimator.

Kernel executions are summarized as per-event tallies (integer MACs, shift
alignments, floating-point accumulations, ...) and converted to relative
energy/area figures. Units are normalized to one INT4xINT4 MAC = 1.0. The
floating-point accumulate constants (67.5x energy, 49.3x area) are published
hardware ratios; the remaining defaults follow a bit-product model - an
NxM-bit integer MAC costs N*M/16 units, so an 8x4 MAC and one 8x4 slice pass
cost 2.0 and a full 16x8 product (four slice passes) costs 8.0. Replace the
table from a JSON file to recalibrate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FileFormatError, ParameterError
from .hgq import HgqGemmStats

EVENT_KINDS = (
    "int4_mac",
    "int8x4_mac",
    "int16x8_slice_pass",
    "fp16_mac",
    "fp_accumulate",
    "int_shift_accumulate",
    "quantize_op",
)

FP_ACCUMULATE_ENERGY = 67.5
FP_ACCUMULATE_AREA = 49.3


@dataclass(frozen=True)
class EventCost:
    energy: float
    area: float


@dataclass(frozen=True)
class CostTable:
    """Per-event unit costs; every entry must be positive."""

    entries: dict[str, EventCost]

    def energy(self, kind: str) -> float:
        return self._get(kind).energy

    def area(self, kind: str) -> float:
        return self._get(kind).area

    def _get(self, kind: str) -> EventCost:
        try:
            return self.entries[kind]
        except KeyError:
            raise ParameterError(f"unknown event kind {kind!r}") from None

    def validate(self) -> None:
        if not self.entries:
            raise DataError("cost table is empty")
        for kind, cost in self.entries.items():
            if not (cost.energy > 0.0 and cost.area > 0.0):
                raise DataError(f"cost table entry {kind!r} must be positive, got {cost}")


def default_cost_table() -> CostTable:
    return CostTable(
        entries={
            "int4_mac": EventCost(1.0, 1.0),
            "int8x4_mac": EventCost(2.0, 2.0),
            "int16x8_slice_pass": EventCost(2.0, 2.0),
            "fp16_mac": EventCost(FP_ACCUMULATE_ENERGY, FP_ACCUMULATE_AREA),
            "fp_accumulate": EventCost(FP_ACCUMULATE_ENERGY, FP_ACCUMULATE_AREA),
            "int_shift_accumulate": EventCost(1.0, 1.0),
            "quantize_op": EventCost(1.0, 1.0),
        }
    )


def load_cost_table(path) -> CostTable:
    """Read a cost table from JSON: {kind: {"energy": e, "area": a}, ...}."""
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise FileFormatError(f"{path}: expected a JSON object at top level")
    entries = {}
    for kind, cost in raw.items():
        try:
            entries[kind] = EventCost(float(cost["energy"]), float(cost["area"]))
        except (TypeError, KeyError) as exc:
            raise FileFormatError(f"{path}: entry {kind!r} needs energy and area ({exc})") from None
    table = CostTable(entries=entries)
    table.validate()
    return table


def dump_cost_table(path, table: CostTable) -> None:
    payload = {k: {"energy": c.energy, "area": c.area} for k, c in table.entries.items()}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class CostCounters:
    """Non-negative event tallies; merge by addition (commutative, associative)."""

    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for kind, n in self.counts.items():
            if n < 0:
                raise ParameterError(f"negative count for {kind!r}: {n}")
        self.counts = {k: int(v) for k, v in self.counts.items() if v}

    def add(self, kind: str, n: int = 1) -> None:
        if n < 0:
            raise ParameterError(f"negative count for {kind!r}: {n}")
        if n:
            self.counts[kind] = self.counts.get(kind, 0) + int(n)

    def get(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    def __add__(self, other: "CostCounters") -> "CostCounters":
        merged = dict(self.counts)
        for kind, n in other.counts.items():
            merged[kind] = merged.get(kind, 0) + n
        return CostCounters(counts=merged)

    def total_events(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> dict[str, int]:
        return {k: self.counts[k] for k in sorted(self.counts)}


@dataclass(frozen=True)
class ScenarioReport:
    """Linear energy/area totals with a per-event breakdown."""

    name: str
    energy: float
    area: float
    breakdown: dict[str, dict[str, float]]
    ratios_vs_baseline: dict[str, float] | None = None

    def as_dict(self) -> dict:
        out = {
            "name": self.name,
            "energy": self.energy,
            "area": self.area,
            "breakdown": {k: dict(v) for k, v in sorted(self.breakdown.items())},
        }
        if self.ratios_vs_baseline is not None:
            out["ratios_vs_baseline"] = dict(self.ratios_vs_baseline)
        return out


def estimate(counters: CostCounters, table: CostTable, name: str = "scenario",
             baseline: "ScenarioReport | None" = None) -> ScenarioReport:
    """Dot product of event counts and unit costs (deterministic, linear)."""
    breakdown = {}
    energy = 0.0
    area = 0.0
    for kind in sorted(counters.counts):
        n = counters.counts[kind]
        e = n * table.energy(kind)
        a = n * table.area(kind)
        breakdown[kind] = {"count": float(n), "energy": e, "area": a}
        energy += e
        area += a
    ratios = None
    if baseline is not None:
        ratios = {
            "energy": energy / baseline.energy if baseline.energy > 0 else float("nan"),
            "area": area / baseline.area if baseline.area > 0 else float("nan"),
        }
    return ScenarioReport(name=name, energy=energy, area=area, breakdown=breakdown,
                          ratios_vs_baseline=ratios)


@dataclass(frozen=True)
class HgqComparison:
    """Ratio report for the hierarchical scheme against a single-level baseline."""

    baseline: ScenarioReport
    hgq: ScenarioReport
    energy_ratio: float
    area_ratio: float
    energy_saving_pct: float
    area_saving_pct: float
    fp_accum_baseline: int
    fp_accum_hgq: int
    fp_accum_ratio: float
    exact_quarter: bool
    workload_match: bool
    flags: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "baseline": self.baseline.as_dict(),
            "hgq": self.hgq.as_dict(),
            "energy_ratio": self.energy_ratio,
            "area_ratio": self.area_ratio,
            "energy_saving_pct": self.energy_saving_pct,
            "area_saving_pct": self.area_saving_pct,
            "fp_accum_baseline": self.fp_accum_baseline,
            "fp_accum_hgq": self.fp_accum_hgq,
            "fp_accum_ratio": self.fp_accum_ratio,
            "exact_quarter": self.exact_quarter,
            "workload_match": self.workload_match,
            "flags": list(self.flags),
        }


def compare_hgq(baseline_g32: CostCounters, hgq_counters: CostCounters, table: CostTable) -> HgqComparison:
    """Energy/area ratios of the hierarchical scheme vs a fine-group baseline.

    On matching workloads with reduction lengths divisible by the base group,
    the hierarchical FP-accumulation count is exactly one quarter of the
    32-element-group baseline count; mismatches are flagged in the report
    rather than raised.
    """
    base_rep = estimate(baseline_g32, table, "baseline_g32")
    hgq_rep = estimate(hgq_counters, table, "hgq", baseline=base_rep)
    flags = []
    workload_match = baseline_g32.get("int4_mac") == hgq_counters.get("int4_mac")
    if not workload_match:
        flags.append(
            f"workload mismatch: int4_mac {baseline_g32.get('int4_mac')} vs {hgq_counters.get('int4_mac')}"
        )
    fp_base = baseline_g32.get("fp_accumulate")
    fp_hgq = hgq_counters.get("fp_accumulate")
    exact_quarter = fp_base == 4 * fp_hgq and fp_base > 0
    if fp_base and not exact_quarter:
        flags.append(f"fp_accumulate ratio is not exactly 1/4: {fp_hgq}/{fp_base}")
    energy_ratio = hgq_rep.energy / base_rep.energy if base_rep.energy > 0 else float("nan")
    area_ratio = hgq_rep.area / base_rep.area if base_rep.area > 0 else float("nan")
    return HgqComparison(
        baseline=base_rep,
        hgq=hgq_rep,
        energy_ratio=energy_ratio,
        area_ratio=area_ratio,
        energy_saving_pct=100.0 * (1.0 - energy_ratio),
        area_saving_pct=100.0 * (1.0 - area_ratio),
        fp_accum_baseline=fp_base,
        fp_accum_hgq=fp_hgq,
        fp_accum_ratio=fp_hgq / fp_base if fp_base else float("nan"),
        exact_quarter=exact_quarter,
        workload_match=workload_match,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class LowRankComparison:
    """Pairwise cost ratios of the three low-rank datapath implementations."""

    fp16: ScenarioReport
    int16_8: ScenarioReport
    mixed: ScenarioReport
    energy_ratio_mixed_vs_int16_8: float | None
    area_ratio_mixed_vs_int16_8: float | None
    energy_ratio_mixed_vs_fp16: float | None
    area_ratio_mixed_vs_fp16: float | None
    energy_ratio_int16_8_vs_fp16: float | None
    ordering_ok: bool
    strict: bool
    flags: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "fp16": self.fp16.as_dict(),
            "int16_8": self.int16_8.as_dict(),
            "mixed": self.mixed.as_dict(),
            "energy_ratio_mixed_vs_int16_8": self.energy_ratio_mixed_vs_int16_8,
            "area_ratio_mixed_vs_int16_8": self.area_ratio_mixed_vs_int16_8,
            "energy_ratio_mixed_vs_fp16": self.energy_ratio_mixed_vs_fp16,
            "area_ratio_mixed_vs_fp16": self.area_ratio_mixed_vs_fp16,
            "energy_ratio_int16_8_vs_fp16": self.energy_ratio_int16_8_vs_fp16,
            "ordering_ok": self.ordering_ok,
            "strict": self.strict,
            "flags": list(self.flags),
        }


def compare_lowrank(fp16: CostCounters, int16_8: CostCounters, mixed: CostCounters,
                    table: CostTable) -> LowRankComparison:
    """Cost ordering mixed <= int16_8 <= fp16 plus pairwise ratios.

    The ordering is strict whenever the workload has at least one narrow
    (non-sensitive) channel; a fully-sensitive layout makes mixed and int16_8
    coincide. Zero-op workloads report undefined ratios.
    """
    rep_fp = estimate(fp16, table, "fp16_lowrank")
    rep_int = estimate(int16_8, table, "int16_8_lowrank")
    rep_mix = estimate(mixed, table, "mixed_lowrank")
    flags = []

    def ratio(num, den):
        if den <= 0.0:
            return None
        return num / den

    r_mi = ratio(rep_mix.energy, rep_int.energy)
    if r_mi is None:
        flags.append("ratios undefined: zero-op workload")
    ordering_ok = rep_mix.energy <= rep_int.energy <= rep_fp.energy
    strict = rep_mix.energy < rep_int.energy < rep_fp.energy
    if ordering_ok and not strict and rep_int.energy > 0:
        flags.append("non-strict ordering: mixed and int16_8 coincide (no narrow channels)")
    if not ordering_ok:
        flags.append("energy ordering violated")
    return LowRankComparison(
        fp16=rep_fp,
        int16_8=rep_int,
        mixed=rep_mix,
        energy_ratio_mixed_vs_int16_8=r_mi,
        area_ratio_mixed_vs_int16_8=ratio(rep_mix.area, rep_int.area),
        energy_ratio_mixed_vs_fp16=ratio(rep_mix.energy, rep_fp.energy),
        area_ratio_mixed_vs_fp16=ratio(rep_mix.area, rep_fp.area),
        energy_ratio_int16_8_vs_fp16=ratio(rep_int.energy, rep_fp.energy),
        ordering_ok=ordering_ok,
        strict=strict,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Counter builders
# ---------------------------------------------------------------------------
#
# Event counts are deterministic functions of workload shape. Online
# activation quantization is charged one quantize_op per element; offline
# weight quantization is free.


def hgq_gemm_counters(stats: HgqGemmStats, quantized_act_elems: int = 0) -> CostCounters:
    """Counters for one fused group-quantized GEMM."""
    c = CostCounters()
    c.add("int4_mac", stats.int_mac_count)
    c.add("int_shift_accumulate", stats.shift_alignments)
    c.add("fp_accumulate", stats.fp_accumulations)
    c.add("quantize_op", quantized_act_elems)
    return c


def mixed_gemm_counters(rows: int, n_sensitive: int, n_narrow: int, n_out: int) -> CostCounters:
    """Counters for one mixed-width GEMM (sensitive wide, rest narrow)."""
    c = CostCounters()
    c.add("int16x8_slice_pass", 4 * rows * n_sensitive * n_out)
    c.add("int8x4_mac", rows * n_narrow * n_out)
    c.add("fp_accumulate", rows * n_out)
    c.add("quantize_op", rows * (n_sensitive + n_narrow))
    return c


def lowrank_path_counters(rows: int, d_in: int, k: int, d_out: int,
                          ns_l1: int, ns_l2: int) -> CostCounters:
    """Counters for the two-stage mixed-width low-rank path."""
    return mixed_gemm_counters(rows, ns_l1, d_in - ns_l1, k) + mixed_gemm_counters(
        rows, ns_l2, k - ns_l2, d_out
    )


def fp16_lowrank_counters(rows: int, d_in: int, k: int, d_out: int) -> CostCounters:
    """Counters for a floating-point low-rank path (every MAC is FP)."""
    c = CostCounters()
    c.add("fp16_mac", rows * k * (d_in + d_out))
    return c


def scenario_mse(y: np.ndarray, ref: np.ndarray) -> float:
    """Mean squared error against a reference output, in float64."""
    d = y.astype(np.float64) - ref.astype(np.float64)
    return float(np.mean(d * d))


def scenario_max_rel_err(y: np.ndarray, ref: np.ndarray) -> float:
    """Max absolute error normalized by the reference max magnitude."""
    d = np.abs(y.astype(np.float64) - ref.astype(np.float64)).max()
    denom = np.abs(ref.astype(np.float64)).max()
    if denom == 0.0:
        return 0.0 if d == 0.0 else float("inf")
    return float(d / denom)
