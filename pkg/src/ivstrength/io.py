"""CSV ingestion and report emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .model import Dataset
from .procedure import TestResult
from .simulate import SimResult

VERDICT_REJECT = "reject H0: evidence of strong instruments"
VERDICT_KEEP = "fail to reject H0: consistent with many weak instruments"


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a data file.

    ``endogenous`` and ``instruments`` are either explicit column lists or a
    name prefix (every header starting with it, in file order).
    """

    outcome: str = "y"
    endogenous: str | Sequence[str] = "Y"
    instruments: str | Sequence[str] = "Z"
    delimiter: str = ","

    def resolve(self, header: list[str]) -> tuple[int, list[int], list[int]]:
        if len(set(header)) != len(header):
            dup = sorted({h for h in header if header.count(h) > 1})
            raise DataFormatError(f"duplicate column names: {dup}", line=1)
        if self.outcome not in header:
            raise DataFormatError(f"missing outcome column {self.outcome!r}", line=1)

        def pick(spec, role):
            if isinstance(spec, str):
                cols = [h for h in header if h.startswith(spec) and h != self.outcome]
                if not cols:
                    raise DataFormatError(f"no {role} columns with prefix {spec!r}", line=1)
                return cols
            missing = [c for c in spec if c not in header]
            if missing:
                raise DataFormatError(f"missing {role} column(s) {missing}", line=1)
            return list(spec)

        endo = pick(self.endogenous, "endogenous")
        inst = pick(self.instruments, "instrument")
        if isinstance(self.endogenous, str) and isinstance(self.instruments, str):
            # overlapping prefixes (e.g. "Z" and "Z1"): the longer prefix wins
            if self.instruments.startswith(self.endogenous):
                endo = [c for c in endo if c not in inst]
            elif self.endogenous.startswith(self.instruments):
                inst = [c for c in inst if c not in endo]
        overlap = set(endo) & set(inst) | ({self.outcome} & (set(endo) | set(inst)))
        if overlap:
            raise ConfigurationError(f"column sets overlap: {sorted(overlap)}")
        if len(inst) <= len(endo):
            raise ConfigurationError(
                f"need more instruments than endogenous regressors, got K={len(inst)}, p={len(endo)}"
            )
        idx = {h: i for i, h in enumerate(header)}
        return idx[self.outcome], [idx[c] for c in endo], [idx[c] for c in inst]


def _parse_cell(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"non-numeric value {text!r} in column {column!r}", line=line, column=column) from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite value {text!r} in column {column!r}", line=line, column=column)
    return value


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset`, preserving row order.

    Line numbers in errors count the header as line 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file: a header row is required", line=1) from None
        iy, iY, iZ = schema.resolve(header)
        wanted = [iy, *iY, *iZ]
        rows = []
        for record in reader:
            line = reader.line_num
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, found {len(record)}", line=line)
            rows.append([_parse_cell(record[j].strip(), line, header[j]) for j in wanted])
    if not rows:
        raise DataFormatError("no data rows", line=2)
    arr = np.array(rows, dtype=np.float64)
    p, K = len(iY), len(iZ)
    n = arr.shape[0]
    if K >= n:
        raise ConfigurationError(
            f"K = {K} instruments with only n = {n} rows; the test needs the subsample size "
            f"r = n - round(lambda*n) to exceed K, so n must be well above K"
        )
    data = Dataset(y=arr[:, 0], Y=arr[:, 1:1 + p], Z=arr[:, 1 + p:])
    data.validate()
    return data


def write_csv(path: str | Path, data: Dataset, delimiter: str = ",") -> None:
    """Write ``data`` with columns ``y, Y1.., Z1..`` using shortest round-trip floats."""
    header = ["y", *(f"Y{j + 1}" for j in range(data.p)), *(f"Z{k + 1}" for k in range(data.K))]
    body = np.column_stack([data.y, data.Y, data.Z])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for row in body:
            w.writerow([repr(float(v)) for v in row])


# --- reports --------------------------------------------------------------


def _g(x: float) -> str:
    return f"{x:.6g}"


def report_dict(result: TestResult) -> dict:
    cfg = result.config
    return {
        "statistic": result.statistic,
        "df": result.df,
        "p_value": result.p_value,
        "reject": result.reject,
        "critical_value": result.critical_value,
        "level": cfg.level,
        "lambda": cfg.lam,
        "n": result.n,
        "K": result.K,
        "d": result.d,
        "r": result.r,
        "m": result.m,
        "m_capped": result.cov.m_capped,
        "seed": cfg.seed,
        "scaling": cfg.scaling.value,
        "scale": result.scale,
        "theta_source": cfg.theta_source.value,
        "theta": np.asarray(result.theta).tolist(),
        "theta_full": np.asarray(result.theta_full).tolist(),
        "cov": np.asarray(result.cov.matrix).tolist(),
        "n_failed": result.cov.n_failed,
        "warnings": list(result.warnings),
    }


def sim_report_dict(result: SimResult) -> dict:
    return {
        "kind": result.kind,
        "c_n": result.c_n,
        "config": result.config.to_dict(),
        "metadata": result.metadata,
        "points": [pr.to_dict() for pr in result.points],
    }


def _dumps(obj: dict) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def load_report(blob: bytes | str) -> dict:
    """Parse a JSON report back into its field dictionary (arrays as ndarrays)."""
    out = json.loads(blob)
    for key in ("theta", "theta_full", "cov"):
        out[key] = np.asarray(out[key], dtype=np.float64)
    return out


def _verdict(result: TestResult) -> str:
    return VERDICT_REJECT if result.reject else VERDICT_KEEP


def _test_text(result: TestResult) -> str:
    cfg = result.config
    lines = [
        "Test of many weak vs many strong instruments",
        f"  n = {result.n}, K = {result.K}, p = {result.df}",
        f"  lambda = {_g(cfg.lam)}, d = {result.d}, r = {result.r}, m = {result.m}, seed = {cfg.seed}",
        f"  scaling = {cfg.scaling.value}, theta source = {cfg.theta_source.value}",
        f"  theta = [{', '.join(_g(v) for v in np.ravel(result.theta))}]",
        f"  statistic = {_g(result.statistic)} (chi-square, df = {result.df})",
        f"  critical value at level {_g(cfg.level)} = {_g(result.critical_value)}",
        f"  p-value = {_g(result.p_value)}",
    ]
    if result.cov.n_failed:
        lines.append(f"  degenerate subsamples redrawn: {result.cov.n_failed}")
    lines += [f"  warning: {w}" for w in result.warnings]
    lines.append(_verdict(result))
    return "\n".join(lines) + "\n"


def _ratio_label(ratio) -> str:
    num = "" if ratio.numerator == 1 else str(ratio.numerator)
    den = "" if ratio.denominator == 1 else f"/{ratio.denominator}"
    return f"K/n = {num}(1-lambda){den}"


def _table(rows: list[list[str]], groups: list[tuple[str, int, int]] = ()) -> str:
    """Right-aligned columns; ``groups`` are ``(label, first column, span)`` headers centred above."""
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    for label, start, span in groups:
        # spread any missing width over the spanned columns
        room = sum(widths[start:start + span]) + 2 * (span - 1)
        for k in range(max(0, len(label) - room)):
            widths[start + k % span] += 1
    lines = []
    if groups:
        head, col = "", 0
        for label, start, span in groups:
            head += " " * (sum(widths[col:start]) + 2 * (start - col))
            room = sum(widths[start:start + span]) + 2 * (span - 1)
            head += ("  " if start else "") + label.center(room)
            col = start + span
        lines.append(head.rstrip())
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines)


def _rejection_text(result: SimResult) -> str:
    cfg = result.config
    title = "Empirical sizes" if result.kind == "size" else "Empirical powers"
    out = [f"{title} (%) with lambda = {_g(cfg.lam)}, c_n = {_g(result.c_n)}, reps = {cfg.reps}"]
    by_key = {(pr.point.rho, pr.point.p, pr.point.error_family, pr.point.ratio, pr.point.K): pr
              for pr in result.points}
    cols = [(p, fam, lv) for p in cfg.p_values for fam in cfg.error_families for lv in cfg.levels]
    for rho in cfg.rhos:
        nlv = len(cfg.levels)
        groups = [(f"p={p} {fam.value}", 2 + g * nlv, nlv)
                  for g, (p, fam) in enumerate((p, fam) for p in cfg.p_values for fam in cfg.error_families)]
        rows = [["", "K"] + [f"{lv * 100:g}%" for _, _, lv in cols]]
        for ratio in cfg.ratios:
            for i, K in enumerate(cfg.K_values):
                row = [_ratio_label(ratio) if i == 0 else "", str(K)]
                for p, fam, lv in cols:
                    pr = by_key.get((rho, p, fam, ratio, K))
                    if pr is None or pr.skipped:
                        row.append("-")
                    else:
                        row.append(_g(100 * pr.rejection_rates[lv]))
                rows.append(row)
        out.append(f"rho = {_g(rho)}")
        out.append(_table(rows, groups))
    skipped = [pr for pr in result.points if pr.skipped]
    out += [f"skipped {pr.point.key()}: {pr.skipped}" for pr in skipped]
    return "\n".join(out) + "\n"


def _jsve_text(result: SimResult) -> str:
    cfg = result.config
    out = [f"Bias and RMSE of the JSVE with lambda = {_g(cfg.lam)}, c_n = {_g(result.c_n)}, reps = {cfg.reps}"]
    by_key = {(pr.point.rho, pr.point.error_family, pr.point.ratio, pr.point.K): pr for pr in result.points}
    fields = [("Bias", "subsample_mae"), ("RMSE", "subsample_rmse"),
              ("Bias (full sample)", "bias"), ("RMSE (full sample)", "rmse")]
    for rho in cfg.rhos:
        for fam in cfg.error_families:
            nK = len(cfg.K_values)
            groups = [(_ratio_label(ratio), 1 + g * nK, nK) for g, ratio in enumerate(cfg.ratios)]
            rows = [["K"] + [str(K) for _ in cfg.ratios for K in cfg.K_values]]
            for label, key in fields:
                row = [label]
                for ratio in cfg.ratios:
                    for K in cfg.K_values:
                        pr = by_key.get((rho, fam, ratio, K))
                        row.append("-" if pr is None or pr.skipped else _g(pr.jsve[key]))
                rows.append(row)
            out.append(f"rho = {_g(rho)}, errors = {fam.value}")
            out.append(_table(rows, groups))
    out.append("Bias: mean |(r/n) est - sigma^2(K/r)|; full sample: signed mean(est) - sigma^2(K/n)")
    return "\n".join(out) + "\n"


def emit_report(result: TestResult | SimResult, fmt: str = "text") -> bytes:
    """Serialize a result as stable-ordered JSON or human-readable text."""
    if fmt not in ("json", "text"):
        raise ConfigurationError(f"unknown report format {fmt!r}")
    if isinstance(result, TestResult):
        return _dumps(report_dict(result)) if fmt == "json" else _test_text(result).encode("utf-8")
    if isinstance(result, SimResult):
        if fmt == "json":
            return _dumps(sim_report_dict(result))
        text = _jsve_text(result) if result.kind == "jsve" else _rejection_text(result)
        return text.encode("utf-8")
    raise ConfigurationError(f"cannot report on {type(result).__name__}")
