"""Inference benchmark across fp32, int8-static, and int8-dynamic models.

Latency numbers are wall-clock and hardware-dependent; they are reported
but carry no correctness claims. The op counters and top-1 agreement are
deterministic and are what tests assert on.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .quantize import QuantizedModel, forward_quantized
from .tensor import OpCounters, argmax, forward_fp32

PRECISION_ORDER = ("fp32", "int8-static", "int8-dynamic")

CSV_COLUMNS = ("precision", "run", "sample", "latency_ms",
               "int_mul_adds", "float_mul_adds", "range_scans")


class BenchmarkError(ValueError):
    """Benchmark inputs are unusable (mismatched models, bad run count)."""


@dataclass(frozen=True)
class BenchmarkInput:
    """One contender: its manifest, loaded model, and serialized size."""

    manifest: object
    model: object
    byte_size: int


@dataclass
class PrecisionResult:
    precision: str
    runs: int
    samples_per_run: int
    latencies_ms: list = field(default_factory=list)  # row-major (run, sample)
    int_mul_adds: int = 0  # totals over all runs*samples inferences
    float_mul_adds: int = 0
    range_scans: int = 0
    model_bytes: int = 0
    top1_agreement: float = 1.0

    def __post_init__(self):
        if self.runs < 1:
            raise BenchmarkError("runs must be >= 1")
        if not 0.0 <= self.top1_agreement <= 1.0:
            raise BenchmarkError("top-1 agreement must lie in [0, 1]")

    @property
    def inferences(self) -> int:
        return self.runs * self.samples_per_run

    @property
    def mean_latency_ms(self) -> float:
        return sum(self.latencies_ms) / len(self.latencies_ms)

    @property
    def min_latency_ms(self) -> float:
        return min(self.latencies_ms)

    @property
    def max_latency_ms(self) -> float:
        return max(self.latencies_ms)


@dataclass
class BenchmarkReport:
    results: dict  # precision -> PrecisionResult, in PRECISION_ORDER

    def to_csv(self) -> str:
        """Rows hold per-inference numbers; totals are their sums.

        Size and agreement have no per-row home, so they ride in comment
        lines ahead of the header and survive the round-trip that way.
        """
        out = io.StringIO()
        for r in self.results.values():
            out.write(f"# model_bytes,{r.precision},{r.model_bytes}\n")
            out.write(f"# top1_agreement,{r.precision},{r.top1_agreement!r}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.results.values():
            per = r.inferences
            for run in range(r.runs):
                for sample in range(r.samples_per_run):
                    i = run * r.samples_per_run + sample
                    writer.writerow([
                        r.precision, run, sample, repr(r.latencies_ms[i]),
                        r.int_mul_adds // per, r.float_mul_adds // per,
                        r.range_scans // per,
                    ])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BenchmarkReport":
        meta: dict = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, precision, value = line[1:].strip().split(",")
                meta.setdefault(precision, {})[key] = value
            elif line:
                rows.append(line)
        parsed = list(csv.reader(rows))
        if not parsed or tuple(parsed[0]) != CSV_COLUMNS:
            raise BenchmarkError("unrecognized benchmark CSV header")
        by_precision: dict = {}
        for precision, run, sample, lat, imq, fmq, rs in parsed[1:]:
            entry = by_precision.setdefault(
                precision, {"lat": [], "runs": 0, "samples": 0,
                            "int": 0, "float": 0, "scans": 0})
            entry["lat"].append(float(lat))
            entry["runs"] = max(entry["runs"], int(run) + 1)
            entry["samples"] = max(entry["samples"], int(sample) + 1)
            entry["int"] += int(imq)
            entry["float"] += int(fmq)
            entry["scans"] += int(rs)
        results = {}
        for precision, entry in by_precision.items():
            extra = meta.get(precision, {})
            results[precision] = PrecisionResult(
                precision=precision,
                runs=entry["runs"],
                samples_per_run=entry["samples"],
                latencies_ms=entry["lat"],
                int_mul_adds=entry["int"],
                float_mul_adds=entry["float"],
                range_scans=entry["scans"],
                model_bytes=int(extra.get("model_bytes", 0)),
                top1_agreement=float(extra.get("top1_agreement", 1.0)),
            )
        return cls(results=results)

    def table(self) -> str:
        headers = ["precision", "runs", "mean ms", "min ms", "max ms",
                   "int MACs/inf", "float MACs/inf", "scans/inf",
                   "size bytes", "top-1 vs fp32"]
        rows = []
        for r in self.results.values():
            per = r.inferences
            rows.append([
                r.precision, str(r.runs),
                f"{r.mean_latency_ms:.3f}", f"{r.min_latency_ms:.3f}",
                f"{r.max_latency_ms:.3f}",
                str(r.int_mul_adds // per), str(r.float_mul_adds // per),
                str(r.range_scans // per), str(r.model_bytes),
                f"{r.top1_agreement:.3f}",
            ])
        widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
                  for i, h in enumerate(headers)]
        def fmt(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        lines = [fmt(headers), fmt(["-" * w for w in widths])]
        lines.extend(fmt(row) for row in rows)
        return "\n".join(lines)


def _check_compatible(inputs: dict):
    shapes = set()
    labels = set()
    for precision, entry in inputs.items():
        m = entry.manifest
        if m.precision != precision:
            raise BenchmarkError(
                f"bundle offered as {precision} declares precision {m.precision}"
            )
        shapes.add(tuple(m.input_shape))
        labels.add(tuple(m.labels))
    if len(shapes) != 1 or len(labels) != 1:
        raise BenchmarkError(
            "benchmark bundles must share input shape and labels "
            f"(shapes {sorted(shapes)}, labels {sorted(labels)})"
        )


def _forward(model, x: np.ndarray):
    counters = OpCounters()
    if isinstance(model, QuantizedModel):
        return forward_quantized(model, x, counters)
    return forward_fp32(model, x, counters)


def run_benchmark(inputs: dict, dataset: list, runs: int = 50) -> BenchmarkReport:
    """Time `runs` passes over `dataset` for each precision.

    `inputs` maps precision -> BenchmarkInput and must contain "fp32";
    agreement for the quantized entries is top-1 match against the fp32
    predictions, computed once per sample (forwards are deterministic).
    """
    if runs < 1:
        raise BenchmarkError("runs must be >= 1")
    if not dataset:
        raise BenchmarkError("benchmark dataset is empty")
    if "fp32" not in inputs:
        raise BenchmarkError("benchmark needs an fp32 baseline bundle")
    unknown = set(inputs) - set(PRECISION_ORDER)
    if unknown:
        raise BenchmarkError(f"unknown precisions {sorted(unknown)}")
    _check_compatible(inputs)

    baseline = [argmax(_forward(inputs["fp32"].model, x)[0]) for x in dataset]

    results: dict = {}
    for precision in PRECISION_ORDER:
        if precision not in inputs:
            continue
        entry = inputs[precision]
        latencies = []
        totals = OpCounters()
        for _ in range(runs):
            for x in dataset:
                start = time.perf_counter()
                _, counters = _forward(entry.model, x)
                latencies.append((time.perf_counter() - start) * 1000.0)
                totals.float_mul_adds += counters.float_mul_adds
                totals.int_mul_adds += counters.int_mul_adds
                totals.range_scans += counters.range_scans
        predictions = [argmax(_forward(entry.model, x)[0]) for x in dataset]
        agreement = sum(p == b for p, b in zip(predictions, baseline)) / len(dataset)
        results[precision] = PrecisionResult(
            precision=precision,
            runs=runs,
            samples_per_run=len(dataset),
            latencies_ms=latencies,
            int_mul_adds=totals.int_mul_adds,
            float_mul_adds=totals.float_mul_adds,
            range_scans=totals.range_scans,
            model_bytes=entry.byte_size,
            top1_agreement=agreement,
        )
    return BenchmarkReport(results=results)
