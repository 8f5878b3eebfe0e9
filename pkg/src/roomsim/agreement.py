"""Cross-engine agreement analysis.

Evaluation results from a reference dataset (measured, or a trusted
engine) are paired with candidate-engine results on the shared
(room, condition, source, receiver) key, then summarized per candidate
engine x algorithm x metric as Pearson correlation and RMSE, with
per-point scatter exports for plotting.  Sentinel (+infinity) values
are excluded pairwise and counted; zero-variance series are refused
rather than silently scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError
from .results import check_unique

REFERENCE_LINE = {"slope": 1.0, "intercept": 0.0}  # perfect-match y = x
POOLED = "pooled"


@dataclass(frozen=True)
class PairedSeries:
    """Aligned reference/candidate value series for one report cell."""

    x: np.ndarray  # reference values
    y: np.ndarray  # candidate values
    keys: tuple  # aligned (room_id, condition_id, source_id, receiver_id)
    n_excluded: int = 0  # sentinel pairs dropped
    unmatched_reference: tuple = ()
    unmatched_candidate: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        object.__setattr__(self, "keys", tuple(self.keys))
        if not (len(self.x) == len(self.y) == len(self.keys)):
            raise ValueError("x, y and keys must be aligned")
        if len(self.x) < 2:
            raise DegenerateDataError("fewer than 2 matched pairs")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("paired series must be finite (sentinels out)")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def mean_x(self) -> float:
        return float(self.x.mean())

    @property
    def mean_y(self) -> float:
        return float(self.y.mean())


def pair_results(reference, candidate, algorithm: str, metric: str) -> PairedSeries:
    """Inner-join two result sets on (room, condition, source, receiver).

    Both sets are first filtered to the requested algorithm and metric.
    Unmatched keys are reported on the returned series; pairs where
    either side carries the +infinity sentinel are excluded and counted.
    Ordering is deterministic (sorted by join key) regardless of input
    row order.
    """
    reference = list(reference)
    candidate = list(candidate)
    if not reference or not candidate:
        raise ValueError("result sets must be non-empty")

    def select(rows, label):
        out = {}
        for r in rows:
            if r.algorithm != algorithm or r.metric != metric:
                continue
            if r.pair_key in out:
                raise ValueError(
                    f"{label} set has duplicate key {r.pair_key} for "
                    f"{algorithm}/{metric}"
                )
            out[r.pair_key] = r.value
        return out

    ref = select(reference, "reference")
    cand = select(candidate, "candidate")
    matched = sorted(ref.keys() & cand.keys())
    unmatched_ref = tuple(sorted(ref.keys() - cand.keys()))
    unmatched_cand = tuple(sorted(cand.keys() - ref.keys()))

    xs, ys, keys = [], [], []
    n_excluded = 0
    for k in matched:
        if math.isinf(ref[k]) or math.isinf(cand[k]):
            n_excluded += 1
            continue
        xs.append(ref[k])
        ys.append(cand[k])
        keys.append(k)
    if len(xs) < 2:
        raise DegenerateDataError(
            f"fewer than 2 matched pairs for {algorithm}/{metric} "
            f"({len(matched)} matched, {n_excluded} sentinel-excluded)"
        )
    return PairedSeries(
        x=np.array(xs),
        y=np.array(ys),
        keys=tuple(keys),
        n_excluded=n_excluded,
        unmatched_reference=unmatched_ref,
        unmatched_candidate=unmatched_cand,
    )


def pearson(series: PairedSeries) -> float:
    """Pearson correlation coefficient of the paired series.

    Zero variance in either series leaves the coefficient undefined;
    that raises rather than fabricating an agreement number.
    """
    dx = series.x - series.mean_x
    dy = series.y - series.mean_y
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateDataError(
            "zero variance in a paired series: correlation undefined"
        )
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def rmse(series: PairedSeries) -> float:
    """Root mean squared error between the paired series."""
    d = series.x - series.y
    return math.sqrt(float(d @ d) / series.n)


# --------------------------------------------------------------------------
# Report assembly


@dataclass(frozen=True)
class ReportRow:
    engine: str
    algorithm: str
    metric: str
    dataset: str  # room_id, or 'pooled'
    n: int
    n_excluded: int
    rho: float | None
    rmse: float | None
    error: str | None = None


@dataclass(frozen=True)
class AgreementReport:
    rows: tuple
    reference_engines: tuple
    pooled: bool
    # (engine, algorithm, metric, dataset) -> tuple of (x, y, key-string)
    scatter: dict = field(default_factory=dict)


def _cell(reference, candidate, engine, algorithm, metric, dataset):
    try:
        series = pair_results(reference, candidate, algorithm, metric)
        row = ReportRow(
            engine=engine,
            algorithm=algorithm,
            metric=metric,
            dataset=dataset,
            n=series.n,
            n_excluded=series.n_excluded,
            rho=pearson(series),
            rmse=rmse(series),
        )
        points = tuple(
            (float(x), float(y), "/".join(k))
            for x, y, k in zip(series.x, series.y, series.keys)
        )
        return row, points
    except (DegenerateDataError, ValueError) as exc:
        row = ReportRow(
            engine=engine,
            algorithm=algorithm,
            metric=metric,
            dataset=dataset,
            n=0,
            n_excluded=0,
            rho=None,
            rmse=None,
            error=str(exc),
        )
        return row, ()


def build_report(reference, candidates, pool: bool = True) -> AgreementReport:
    """One report row per candidate engine x algorithm x metric.

    ``candidates`` is a sequence of result-row lists (one per candidate
    store); engines are read from the rows themselves.  With
    ``pool=False`` rows are additionally split per room_id (the dataset
    axis), labeled by that room_id instead of 'pooled'.  Failed cells
    (too few pairs, zero variance) are kept in the report with their
    error message; building fails only if every cell fails.
    """
    reference = list(reference)
    if not reference:
        raise DegenerateDataError("empty reference result set")
    flat = []
    for rows in candidates:
        flat.extend(rows)
    if not flat:
        raise DegenerateDataError("empty candidate result set")
    check_unique(reference)
    check_unique(flat)

    engines = sorted({r.engine for r in flat})
    ref_engines = tuple(sorted({r.engine for r in reference}))
    out_rows = []
    scatter = {}
    for engine in engines:
        cand = [r for r in flat if r.engine == engine]
        combos = sorted({(r.algorithm, r.metric) for r in cand})
        for algorithm, metric in combos:
            if pool:
                row, points = _cell(
                    reference, cand, engine, algorithm, metric, POOLED
                )
                out_rows.append(row)
                if points:
                    scatter[(engine, algorithm, metric, POOLED)] = points
            else:
                rooms = sorted({r.room_id for r in cand})
                for room in rooms:
                    ref_r = [r for r in reference if r.room_id == room]
                    cand_r = [r for r in cand if r.room_id == room]
                    if not ref_r or not cand_r:
                        out_rows.append(
                            ReportRow(
                                engine=engine,
                                algorithm=algorithm,
                                metric=metric,
                                dataset=room,
                                n=0,
                                n_excluded=0,
                                rho=None,
                                rmse=None,
                                error=f"no reference rows for room {room}",
                            )
                        )
                        continue
                    row, points = _cell(
                        ref_r, cand_r, engine, algorithm, metric, room
                    )
                    out_rows.append(row)
                    if points:
                        scatter[(engine, algorithm, metric, room)] = points

    if all(r.error is not None for r in out_rows):
        raise DegenerateDataError(
            "no report row could be computed: " + str(out_rows[0].error)
        )
    return AgreementReport(
        rows=tuple(out_rows),
        reference_engines=ref_engines,
        pooled=pool,
        scatter=scatter,
    )


# --------------------------------------------------------------------------
# Serialization


def report_to_dict(report: AgreementReport) -> dict:
    """JSON-ready dict; floats kept raw (repr round-trips them)."""
    return {
        "reference_engines": list(report.reference_engines),
        "pooled": report.pooled,
        "reference_line": dict(REFERENCE_LINE),
        "rows": [
            {
                "engine": r.engine,
                "algorithm": r.algorithm,
                "metric": r.metric,
                "dataset": r.dataset,
                "n": r.n,
                "n_excluded": r.n_excluded,
                "rho": r.rho,
                "rmse": r.rmse,
                "error": r.error,
            }
            for r in report.rows
        ],
    }


def report_from_dict(data: dict) -> AgreementReport:
    """Inverse of :func:`report_to_dict`; scatter data is not stored in
    the dict, so it comes back empty."""
    rows = tuple(
        ReportRow(
            engine=r["engine"],
            algorithm=r["algorithm"],
            metric=r["metric"],
            dataset=r["dataset"],
            n=int(r["n"]),
            n_excluded=int(r["n_excluded"]),
            rho=None if r["rho"] is None else float(r["rho"]),
            rmse=None if r["rmse"] is None else float(r["rmse"]),
            error=r["error"],
        )
        for r in data["rows"]
    )
    return AgreementReport(
        rows=rows,
        reference_engines=tuple(data["reference_engines"]),
        pooled=bool(data["pooled"]),
        scatter={},
    )


def _fmt(v: float | None) -> str:
    return "--" if v is None else f"{v:.3f}"


def report_to_text(report: AgreementReport) -> str:
    """Fixed-width table: engines as rows, algorithm x metric columns
    with rho / RMSE / N sub-columns; failed cells footnoted."""
    combos = sorted({(r.algorithm, r.metric) for r in report.rows})
    datasets = sorted({r.dataset for r in report.rows})
    cell = {(r.engine, r.algorithm, r.metric, r.dataset): r for r in report.rows}
    engines = sorted({r.engine for r in report.rows})

    head1 = f"{'engine':<10} {'dataset':<10}"
    head2 = f"{'':<10} {'':<10}"
    for alg, met in combos:
        label = f"{alg}/{met}"
        head1 += f" {label:<24}"
        head2 += f" {'rho':>7} {'rmse':>8} {'N':>4}   "
    lines = [head1.rstrip(), head2.rstrip(), "-" * max(len(head1), len(head2))]

    footnotes = []
    for engine in engines:
        for dataset in datasets:
            row_cells = [
                cell.get((engine, alg, met, dataset)) for alg, met in combos
            ]
            if all(c is None for c in row_cells):
                continue
            line = f"{engine:<10} {dataset:<10}"
            for c in row_cells:
                if c is None:
                    line += f" {'':<24}"
                elif c.error is not None:
                    line += f" {'--':>7} {'--':>8} {0:>4}   "
                    footnotes.append(
                        f"  [{engine}/{c.algorithm}/{c.metric}/{dataset}] "
                        f"{c.error}"
                    )
                else:
                    line += (
                        f" {_fmt(c.rho):>7} {_fmt(c.rmse):>8} {c.n:>4}   "
                    )
            lines.append(line.rstrip())
    if footnotes:
        lines.append("")
        lines.append("failed cells:")
        lines.extend(footnotes)
    lines.append("")
    lines.append(
        f"reference engines: {', '.join(report.reference_engines)}; "
        f"mode: {'pooled' if report.pooled else 'per-dataset'}; "
        "perfect match lies on y = x"
    )
    return "\n".join(lines) + "\n"


def scatter_to_csv(points) -> str:
    """Per-point scatter export with the y = x reference line noted."""
    lines = [
        "# reference line: y = x (slope=1.0 intercept=0.0)",
        "x,y,key",
    ]
    for x, y, key in points:
        lines.append(f"{x!r},{y!r},{key}")
    return "\n".join(lines) + "\n"


def render_scatter_svg(points, title: str = "") -> str:
    """Minimal static scatter plot: points plus dotted y = x line."""
    size, margin = 480, 48
    span = size - 2 * margin
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    lo = min(min(xs), min(ys))
    hi = max(max(xs), max(ys))
    pad = 0.05 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.05
    lo, hi = lo - pad, hi + pad

    def sx(v: float) -> float:
        return margin + (v - lo) / (hi - lo) * span

    def sy(v: float) -> float:
        return size - margin - (v - lo) / (hi - lo) * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" '
        f'y2="{size - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{size - margin}" stroke="black"/>',
        # the perfect-match diagonal
        f'<line x1="{sx(lo):.1f}" y1="{sy(lo):.1f}" x2="{sx(hi):.1f}" '
        f'y2="{sy(hi):.1f}" stroke="red" stroke-dasharray="4 4"/>',
        f'<text x="{margin}" y="{margin - 16}" font-size="14">{title}</text>',
        f'<text x="{margin}" y="{size - margin + 28}" font-size="11">'
        f"{lo:.3g}</text>",
        f'<text x="{size - margin - 20}" y="{size - margin + 28}" '
        f'font-size="11">{hi:.3g}</text>',
    ]
    for x, y, key in points:
        parts.append(
            f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" '
            f'fill="steelblue" fill-opacity="0.7"><title>{key}</title>'
            "</circle>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
