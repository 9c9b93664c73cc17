"""Per-institution yearly loss statistics from consortium summary tables.

Three CSV fixtures are shipped with the package: six-year category totals of
event counts and of losses (€-Millions), each split by banking business line,
and yearly totals of events, losses (€-Billions) and contributing
institutions. The pipeline turns them into per-institution yearly series by
risk category and derives the statistics used as calibration targets.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

log = logging.getLogger(__name__)

CATEGORIES = ("IF", "EF", "EPWS", "CPBP", "DPS", "TIF", "EDPM")
CATEGORY_NAMES = {
    "IF": "Internal Fraud",
    "EF": "External Fraud",
    "EPWS": "Employment Practices, Workplace Safety",
    "CPBP": "Clients, Products, Business Practices",
    "DPS": "Disasters and Public Safety",
    "TIF": "Technology and Infrastructure Failure",
    "EDPM": "Execution, Delivery and Process Management",
}
BUSINESS_LINES = ("Retail Banking", "Private Banking", "Commercial Banking")

FIXTURES = {
    "frequency": "orx_frequency.csv",
    "severity": "orx_severity.csv",
    "yearly": "orx_yearly.csv",
}
FIXTURE_SHA256 = {
    "frequency": "bb4cebcc0e7de407c8e93ceb453d1553ef07d8965c6d9047b6351a9ee41b543a",
    "severity": "66f0fba5f15b942289bec24d4af2eeccf0da580b44ecffe823f313ef4c0901cd",
    "yearly": "df153ce7c997b6a4725f0aa05a95740b2bcabb1d0d31d9a0388a4ab898692cbb",
}

# published reference value that the pipeline does not reproduce
EDPM_PRINTED_MEAN = 1.26
SEVERITY_UNIT_FACTOR = 1000.0


class OrxLoadError(ValueError):
    """Fixture missing, malformed, tampered with, or internally inconsistent."""


@dataclass
class RawConsortium:
    categories: tuple
    freq_lines: np.ndarray
    freq_totals: np.ndarray
    freq_grand: float
    sev_lines: np.ndarray
    sev_totals: np.ndarray
    sev_grand: float
    years: np.ndarray
    events: np.ndarray
    losses_bn: np.ndarray
    institutions: np.ndarray
    bank_share_freq: float
    bank_share_sev: float
    printed_pct_freq: np.ndarray
    printed_pct_sev: np.ndarray
    checksums: dict = field(default_factory=dict)


@dataclass
class YearlySeries:
    years: np.ndarray
    freq: np.ndarray
    sev: np.ndarray

    def rows(self):
        for y, f, s in zip(self.years, self.freq, self.sev):
            yield int(y), float(f), float(s)


@dataclass
class CategoryStats:
    """Per-category statistics of the average institution.

    Frequencies are events per year. Severity is the year-averaged loss per
    event in €-Millions multiplied by SEVERITY_UNIT_FACTOR, which is the scale
    of the published reference column.
    """

    categories: tuple
    p_freq: np.ndarray
    p_sev: np.ndarray
    freq_mean: np.ndarray
    freq_var: np.ndarray
    freq_cov: np.ndarray
    severity: np.ndarray
    sev_cov: np.ndarray
    total_freq_mean: float
    total_freq_var: float
    warnings: list = field(default_factory=list)

    def index(self, name: str) -> int:
        return self.categories.index(name)

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "p_freq": self.p_freq.tolist(),
            "p_sev": self.p_sev.tolist(),
            "freq_mean": self.freq_mean.tolist(),
            "freq_var": self.freq_var.tolist(),
            "freq_cov": self.freq_cov.tolist(),
            "severity": self.severity.tolist(),
            "severity_units": f"EUR-Millions per event x {SEVERITY_UNIT_FACTOR:g}",
            "sev_cov": self.sev_cov.tolist(),
            "total_freq_mean": self.total_freq_mean,
            "total_freq_var": self.total_freq_var,
            "grand_averages": grand_averages(self),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CategoryStats":
        return cls(
            categories=tuple(d["categories"]),
            p_freq=np.asarray(d["p_freq"], float),
            p_sev=np.asarray(d["p_sev"], float),
            freq_mean=np.asarray(d["freq_mean"], float),
            freq_var=np.asarray(d["freq_var"], float),
            freq_cov=np.asarray(d["freq_cov"], float),
            severity=np.asarray(d["severity"], float),
            sev_cov=np.asarray(d["sev_cov"], float),
            total_freq_mean=float(d["total_freq_mean"]),
            total_freq_var=float(d["total_freq_var"]),
            warnings=list(d.get("warnings", [])),
        )


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def default_fixtures() -> dict:
    """Paths of the shipped fixtures."""
    base = resources.files("oprisk_windows") / "data"
    return {k: Path(str(base / v)) for k, v in FIXTURES.items()}


def _num(s: str, where: str) -> float:
    s = s.strip()
    try:
        if s.endswith("%"):
            return float(s[:-1]) / 100.0
        return float(s)
    except ValueError:
        raise OrxLoadError(f"{where}: cannot parse {s!r}") from None


def _read_rows(path: Path, name: str):
    if not path.is_file():
        raise OrxLoadError(f"missing {name} fixture: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise OrxLoadError(f"{name} fixture is empty: {path}")
    return rows


def _read_category_table(path: Path, name: str, unit: float):
    rows = _read_rows(path, name)
    header = [h.strip() for h in rows[0]]
    if tuple(header[1:8]) != CATEGORIES or header[8] != "Totals":
        raise OrxLoadError(f"{name}: header must be ,{','.join(CATEGORIES)},Totals")
    by_label = {r[0].strip(): r for r in rows[1:]}
    need = list(BUSINESS_LINES) + ["Totals", "% of Total from Bank Loss", "% Bank Losses to Gross"]
    for lab in need:
        if lab not in by_label:
            raise OrxLoadError(f"{name}: missing row {lab!r}")
    lines = np.array([[_num(c, f"{name}/{lab}") for c in by_label[lab][1:9]] for lab in BUSINESS_LINES])
    tot = np.array([_num(c, f"{name}/Totals") for c in by_label["Totals"][1:9]])
    pct = np.array([_num(c, f"{name}/%") for c in by_label["% of Total from Bank Loss"][1:8]])
    share = _num(by_label["% Bank Losses to Gross"][1], f"{name}/share")
    # printed values carry half a unit of rounding each
    for j, cat in enumerate(CATEGORIES + ("Totals",)):
        tol = 0.5 * unit * (lines.shape[0] + 1) + 1e-9
        if abs(lines[:, j].sum() - tot[j]) > tol:
            raise OrxLoadError(f"{name}: column {cat} sums to {lines[:, j].sum():g}, Totals row says {tot[j]:g}")
    labels = list(BUSINESS_LINES) + ["Totals"]
    for i, row in enumerate(np.vstack([lines, tot])):
        tol = 0.5 * unit * 8 + 1e-9
        if abs(row[:7].sum() - row[7]) > tol:
            raise OrxLoadError(f"{name}: row {labels[i]!r} sums to {row[:7].sum():g}, Totals column says {row[7]:g}")
    return lines[:, :7], tot[:7], float(tot[7]), pct, share


def _read_yearly(path: Path):
    rows = _read_rows(path, "yearly")
    if rows[0][0].strip() != "Year":
        raise OrxLoadError("yearly: first row must start with 'Year'")
    years = np.array([int(_num(c, "yearly/Year")) for c in rows[0][1:]])
    by_label = {r[0].strip(): r for r in rows[1:]}
    keys = {"events": "Total # Events", "losses": "Total Losses (€-Billion)", "inst": "Total # Institutions"}
    out = {}
    for k, lab in keys.items():
        if lab not in by_label:
            raise OrxLoadError(f"yearly: missing row {lab!r}")
        vals = np.array([_num(c, f"yearly/{lab}") for c in by_label[lab][1:]])
        if vals.shape != years.shape:
            raise OrxLoadError(f"yearly: row {lab!r} has {vals.size} values for {years.size} years")
        if np.any(vals <= 0):
            raise OrxLoadError(f"yearly: row {lab!r} must be positive")
        out[k] = vals
    return years, out["events"], out["losses"], out["inst"]


def load_raw(paths: Optional[Mapping[str, str]] = None, expected: Optional[Mapping[str, str]] = None) -> RawConsortium:
    """Read and validate the three fixtures.

    Args:
        paths: mapping with keys ``frequency``, ``severity``, ``yearly``;
            defaults to the shipped fixtures.
        expected: SHA-256 digests to enforce. Defaults to the digests of the
            shipped fixtures when ``paths`` is None; pass an empty mapping to
            skip the check.

    Raises:
        OrxLoadError: on a missing file, checksum mismatch, parse failure or a
            total that disagrees with its parts beyond source rounding.
    """
    if paths is None:
        paths = default_fixtures()
        if expected is None:
            expected = FIXTURE_SHA256
    paths = {k: Path(v) for k, v in paths.items()}
    for k in FIXTURES:
        if k not in paths:
            raise OrxLoadError(f"no path given for the {k} fixture")
        if not paths[k].is_file():
            raise OrxLoadError(f"missing {k} fixture: {paths[k]}")
    sums = {k: sha256(paths[k]) for k in FIXTURES}
    for k, want in (expected or {}).items():
        if sums.get(k) != want:
            raise OrxLoadError(f"checksum mismatch for {k} fixture {paths[k]}: {sums.get(k)} != {want}")
    fl, ft, fg, fp, fs = _read_category_table(paths["frequency"], "frequency", 1.0)
    sl, st, sg, sp, ss = _read_category_table(paths["severity"], "severity", 0.1)
    years, ev, loss, inst = _read_yearly(paths["yearly"])
    return RawConsortium(
        categories=CATEGORIES,
        freq_lines=fl,
        freq_totals=ft,
        freq_grand=fg,
        sev_lines=sl,
        sev_totals=st,
        sev_grand=sg,
        years=years,
        events=ev,
        losses_bn=loss,
        institutions=inst,
        bank_share_freq=fs,
        bank_share_sev=ss,
        printed_pct_freq=fp,
        printed_pct_sev=sp,
        checksums=sums,
    )


def per_institution_yearly(raw: RawConsortium) -> YearlySeries:
    """Banking-only event count and loss (€M) per institution for each year."""
    freq = raw.events * raw.bank_share_freq / raw.institutions
    sev = raw.losses_bn * 1000.0 * raw.bank_share_sev / raw.institutions
    return YearlySeries(years=raw.years.copy(), freq=freq, sev=sev)


def proportions(totals: np.ndarray) -> np.ndarray:
    t = np.asarray(totals, dtype=float)
    p = t / t.sum()
    # absorb the last-ulp residue so the shares sum to exactly 1
    p[np.argmax(p)] += 1.0 - p.sum()
    return p


def category_stats(yearly: YearlySeries, raw: RawConsortium) -> CategoryStats:
    """Category means, variances, covariance matrices and per-event severity."""
    p = proportions(raw.freq_totals)
    q = proportions(raw.sev_totals)
    fy, sy = yearly.freq, yearly.sev
    s2 = float(np.var(fy, ddof=1))
    s2_sev = float(np.var(sy, ddof=1))
    mean = p * fy.mean()
    cov = np.outer(p, p) * s2
    var = np.diag(cov).copy()
    sev = np.array([np.mean((q[j] * sy) / (p[j] * fy)) for j in range(p.size)]) * SEVERITY_UNIT_FACTOR
    notes = []
    cats = tuple(raw.categories)
    if "EDPM" in cats:
        j = cats.index("EDPM")
        msg = (
            f"EDPM frequency mean is {mean[j]:.4g} events/yr; the published value {EDPM_PRINTED_MEAN} "
            "is not reproducible from the tables and is likely a misprint"
        )
        log.warning(msg)
        notes.append(msg)
    notes.append(
        f"severity is reported as EUR-Millions per event x {SEVERITY_UNIT_FACTOR:g} to match the published scale"
    )
    return CategoryStats(
        categories=cats,
        p_freq=p,
        p_sev=q,
        freq_mean=mean,
        freq_var=var,
        freq_cov=cov,
        severity=sev,
        sev_cov=np.outer(q, q) * s2_sev,
        total_freq_mean=float(fy.mean()),
        total_freq_var=s2,
        warnings=notes,
    )


def grand_averages(stats: CategoryStats) -> dict:
    """Overall yearly frequency and the unweighted mean of category severities."""
    return {"freq": float(stats.total_freq_mean), "severity": float(np.mean(stats.severity))}


def run(paths=None, expected=None) -> CategoryStats:
    raw = load_raw(paths, expected)
    return category_stats(per_institution_yearly(raw), raw)


def _write_matrix(path: Path, labels, m: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, m):
            w.writerow([lab] + [repr(float(v)) for v in row])


def write_outputs(stats: CategoryStats, yearly: YearlySeries, out_dir) -> dict:
    """Write category_stats.json, yearly series and covariance matrices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "category_stats": out / "category_stats.json",
        "yearly": out / "yearly_per_institution.csv",
        "freq_cov": out / "freq_cov.csv",
        "sev_cov": out / "sev_cov.csv",
    }
    files["category_stats"].write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(files["yearly"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "freq_per_institution", "loss_eur_m_per_institution"])
        for y, f, s in yearly.rows():
            w.writerow([y, repr(f), repr(s)])
    _write_matrix(files["freq_cov"], stats.categories, stats.freq_cov)
    _write_matrix(files["sev_cov"], stats.categories, stats.sev_cov)
    return {k: str(v) for k, v in files.items()}
