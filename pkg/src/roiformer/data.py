"""Subject ingestion, phenotype encoding, segmentation, splits, synthesis.

On disk a dataset is a directory of per-subject series files plus one
phenotypic table.  A series file is delimited numeric text (tab, comma, or
whitespace), one row per scan time point and one column per ROI, with an
optional single header line.  The phenotypic table is a delimited file with
named columns ``subject_id site dx gender age handedness full4_iq`` in any
order (extra columns ignored); empty cells and ``NA`` mean missing.
Diagnostic codes: 0 is the control class and 1-3 are positive subtypes.
Gender is 0/1, handedness is 0-3 (2 ambidextrous, 3 unknown), and IQ uses
-999 as a recorded-error sentinel that must never reach the model unflagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .rng import RngStreams


class DataError(Exception):
    """Dataset files missing, malformed, or mutually inconsistent."""


IQ_ERROR_VALUE = -999.0
PHENO_COLUMNS = ("subject_id", "site", "dx", "gender", "age", "handedness",
                 "full4_iq")
PHENO_DIM = 5


# -- domain types ---------------------------------------------------------------


@dataclass(frozen=True)
class RoiTimeSeries:
    """One subject's full scan: rows are time points, columns are ROIs."""

    subject_id: str
    values: np.ndarray
    template_name: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"{self.subject_id}: series must be 2-D, "
                            f"got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.subject_id}: series contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def t_full(self) -> int:
        return self.values.shape[0]

    @property
    def n_rois(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PhenotypicRecord:
    subject_id: str
    site: str
    dx: int
    gender: int | None
    age: float | None
    handedness: int | None
    full4_iq: float | None


@dataclass(frozen=True)
class SubjectData:
    """A series paired with its phenotypic row."""

    series: RoiTimeSeries
    record: PhenotypicRecord

    def __post_init__(self):
        if self.series.subject_id != self.record.subject_id:
            raise DataError(f"series {self.series.subject_id!r} paired with "
                            f"phenotype row {self.record.subject_id!r}")

    @property
    def subject_id(self) -> str:
        return self.series.subject_id

    @property
    def label(self) -> int:
        return binarize_label(self.record.dx)


@dataclass(frozen=True)
class SubjectSample:
    """Model-facing unit: a cropped segment, an encoded phenotype vector
    (sentinel-free), and a binary label."""

    segment: np.ndarray  # (segment_len, n_rois)
    pheno: np.ndarray    # (PHENO_DIM,)
    label: int

    def __post_init__(self):
        object.__setattr__(self, "segment",
                           np.asarray(self.segment, dtype=np.float64))
        object.__setattr__(self, "pheno",
                           np.asarray(self.pheno, dtype=np.float64))
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")
        if IQ_ERROR_VALUE in self.pheno:
            raise DataError("sentinel value leaked into an encoded phenotype")


def binarize_label(dx: int) -> int:
    """Diagnostic code to binary target: 0 stays 0, subtypes 1-3 become 1."""
    if dx == 0:
        return 0
    if dx in (1, 2, 3):
        return 1
    raise DataError(f"diagnostic code must be 0-3, got {dx}")


# -- parsing -------------------------------------------------------------------


def _split_line(line: str) -> list[str]:
    if "\t" in line:
        return [c.strip() for c in line.rstrip("\n").split("\t")]
    if "," in line:
        return [c.strip() for c in line.rstrip("\n").split(",")]
    return line.split()


def _missing(token: str) -> bool:
    return token == "" or token.upper() == "NA"


def _opt_int(token: str, what: str, where: str) -> int | None:
    if _missing(token):
        return None
    try:
        return int(token)
    except ValueError:
        raise DataError(f"{where}: {what} must be an integer, got {token!r}") from None


def _opt_float(token: str, what: str, where: str) -> float | None:
    if _missing(token):
        return None
    try:
        return float(token)
    except ValueError:
        raise DataError(f"{where}: {what} must be a number, got {token!r}") from None


def _all_numeric(cells: list[str]) -> bool:
    try:
        for c in cells:
            float(c)
    except ValueError:
        return False
    return len(cells) > 0


def load_subject_series(path, template_name: str = "") -> RoiTimeSeries:
    """Read one subject's series file; the subject id is the file stem.

    The first line is treated as a header and skipped when any of its cells
    is non-numeric."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"series file not found: {path}")
    rows: list[list[float]] = []
    width = None
    first_content_line = True
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            cells = _split_line(line)
            if first_content_line:
                first_content_line = False
                if not _all_numeric(cells):
                    continue  # header row
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, "
                                f"got {len(cells)}")
            try:
                row = [float(c) for c in cells]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in row):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RoiTimeSeries(subject_id=path.stem,
                         values=np.asarray(rows, dtype=np.float64),
                         template_name=template_name)


def load_phenotypic_table(path) -> list[PhenotypicRecord]:
    """Parse the phenotypic table; columns are matched by name, extra columns
    are ignored, and missing values stay missing for downstream flagging."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"phenotypic table not found: {path}")
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty phenotypic table")
    header = _split_line(lines[0])
    absent = [c for c in PHENO_COLUMNS if c not in header]
    if absent:
        raise DataError(f"{path}: missing required columns {absent}; "
                        f"header has {header}")
    col = {name: header.index(name) for name in PHENO_COLUMNS}
    records: list[PhenotypicRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        where = f"{path}:{lineno}"
        cells = _split_line(line)
        if len(cells) != len(header):
            raise DataError(f"{where}: expected {len(header)} fields, "
                            f"got {len(cells)}")
        sid = cells[col["subject_id"]]
        if not sid:
            raise DataError(f"{where}: empty subject_id")
        if sid in seen:
            raise DataError(f"{where}: duplicate subject_id {sid!r}")
        seen.add(sid)
        dx = _opt_int(cells[col["dx"]], "dx", where)
        if dx is None:
            raise DataError(f"{where}: dx is required")
        if dx not in (0, 1, 2, 3):
            raise DataError(f"{where}: dx must be 0-3, got {dx}")
        gender = _opt_int(cells[col["gender"]], "gender", where)
        if gender is not None and gender not in (0, 1):
            raise DataError(f"{where}: gender must be 0 or 1, got {gender}")
        age = _opt_float(cells[col["age"]], "age", where)
        handedness = _opt_int(cells[col["handedness"]], "handedness", where)
        if handedness is not None and handedness not in (0, 1, 2, 3):
            raise DataError(f"{where}: handedness must be 0-3, got {handedness}")
        iq = _opt_float(cells[col["full4_iq"]], "full4_iq", where)
        records.append(PhenotypicRecord(subject_id=sid, site=cells[col["site"]],
                                        dx=dx, gender=gender, age=age,
                                        handedness=handedness, full4_iq=iq))
    if not records:
        raise DataError(f"{path}: no subject rows")
    return records


def load_dataset(series_dir, pheno_path,
                 min_length: int | None = None) -> list[SubjectData]:
    """All subjects, sorted by id.  Every phenotype row must have a matching
    ``<subject_id>.tsv`` series file and vice versa; column counts must agree
    across the dataset; series shorter than ``min_length`` are rejected."""
    series_dir = Path(series_dir)
    if not series_dir.is_dir():
        raise DataError(f"series directory not found: {series_dir}")
    records = {r.subject_id: r for r in load_phenotypic_table(pheno_path)}
    files = {p.stem: p for p in sorted(series_dir.glob("*.tsv"))}
    missing_series = sorted(set(records) - set(files))
    if missing_series:
        raise DataError(f"no series file for subjects: {missing_series}")
    missing_pheno = sorted(set(files) - set(records))
    if missing_pheno:
        raise DataError(f"no phenotype row for series files: {missing_pheno}")
    subjects = []
    n_rois = None
    for sid in sorted(records):
        series = load_subject_series(files[sid])
        if n_rois is None:
            n_rois = series.n_rois
        elif series.n_rois != n_rois:
            raise DataError(f"{files[sid]}: {series.n_rois} ROIs but earlier "
                            f"subjects have {n_rois}")
        if min_length is not None and series.t_full < min_length:
            raise DataError(f"{files[sid]}: series has {series.t_full} time "
                            f"points, fewer than segment length {min_length}")
        subjects.append(SubjectData(series=series, record=records[sid]))
    return subjects


# -- phenotype encoding --------------------------------------------------------


@dataclass(frozen=True)
class PhenoStats:
    """Normalization constants, computed from training subjects only."""

    age_mean: float
    age_std: float
    iq_mean: float
    iq_std: float

    def to_dict(self) -> dict:
        return {"age_mean": self.age_mean, "age_std": self.age_std,
                "iq_mean": self.iq_mean, "iq_std": self.iq_std}

    @classmethod
    def from_dict(cls, d) -> "PhenoStats":
        return cls(age_mean=float(d["age_mean"]), age_std=float(d["age_std"]),
                   iq_mean=float(d["iq_mean"]), iq_std=float(d["iq_std"]))


def _iq_missing(iq: float | None) -> bool:
    return iq is None or iq == IQ_ERROR_VALUE


def compute_pheno_stats(records) -> PhenoStats:
    ages = np.array([r.age for r in records if r.age is not None])
    iqs = np.array([r.full4_iq for r in records if not _iq_missing(r.full4_iq)])

    def mean_std(vals: np.ndarray) -> tuple[float, float]:
        if vals.size == 0:
            return 0.0, 1.0
        std = float(vals.std())
        return float(vals.mean()), (std if std > 0 else 1.0)

    age_mean, age_std = mean_std(ages)
    iq_mean, iq_std = mean_std(iqs)
    return PhenoStats(age_mean, age_std, iq_mean, iq_std)


_HANDEDNESS_CODE = {0: 0.0, 1: 1.0, 2: 0.5, 3: 0.5, None: 0.5}


def encode_phenotype(record: PhenotypicRecord, stats: PhenoStats) -> np.ndarray:
    """Fixed 5-vector: gender (missing 0.5), z-scored age (missing 0),
    handedness (ambidextrous/unknown/missing 0.5), z-scored IQ (missing or
    recorded-error 0), and an IQ-missing indicator."""
    gender = 0.5 if record.gender is None else float(record.gender)
    age = 0.0 if record.age is None else (record.age - stats.age_mean) / stats.age_std
    handed = _HANDEDNESS_CODE[record.handedness]
    missing_iq = _iq_missing(record.full4_iq)
    iq = 0.0 if missing_iq else (record.full4_iq - stats.iq_mean) / stats.iq_std
    return np.array([gender, age, handed, iq, 1.0 if missing_iq else 0.0])


# -- segmentation and splits -----------------------------------------------------


def _series_values(series) -> np.ndarray:
    if isinstance(series, RoiTimeSeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


def random_segment(series, length: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous rows [t0, t0+length) with t0 uniform on [0, T_full-length]."""
    values = _series_values(series)
    t_full = values.shape[0]
    if length > t_full:
        raise DataError(f"segment length {length} exceeds series length {t_full}")
    start = int(rng.integers(0, t_full - length + 1))
    return values[start:start + length].copy()


def center_segment(series, length: int) -> np.ndarray:
    """Rows [floor((T_full-length)/2), same + length); deterministic."""
    values = _series_values(series)
    t_full = values.shape[0]
    if length > t_full:
        raise DataError(f"segment length {length} exceeds series length {t_full}")
    start = (t_full - length) // 2
    return values[start:start + length].copy()


def split_train_val(subject_ids, frac: float,
                    seed: int | np.random.Generator) -> tuple[list[str], list[str]]:
    """Disjoint split by subject; validation gets round(frac * n) subjects."""
    if not 0.0 < frac < 1.0:
        raise ValueError(f"validation fraction must be in (0, 1), got {frac}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = sorted(subject_ids)
    n_val = int(round(frac * len(ids)))
    if n_val == 0 or n_val == len(ids):
        raise ValueError(f"split leaves an empty side: {len(ids)} subjects "
                         f"at fraction {frac}")
    order = rng.permutation(len(ids))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val


# -- synthetic data ----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a labeled synthetic dataset.

    Background is Gaussian noise; positive-label subjects additionally carry
    one low-frequency sinusoid (period and phase drawn per subject) scaled by
    ``effect_size`` on every ROI in ``signal_rois``, so those ROIs co-vary.
    With effect_size 0 the classes are indistinguishable."""

    n_subjects: int = 200
    t_full: int = 90
    n_rois: int = 20
    balance: float = 0.5
    signal_rois: tuple[int, ...] = (0, 1, 2)
    effect_size: float = 2.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "signal_rois",
                           tuple(int(r) for r in self.signal_rois))
        if self.n_subjects < 1 or self.t_full < 1 or self.n_rois < 1:
            raise ValueError("n_subjects, t_full, and n_rois must be >= 1")
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError("balance must be in [0, 1]")
        bad = [r for r in self.signal_rois if not 0 <= r < self.n_rois]
        if bad:
            raise ValueError(f"signal ROI indices {bad} outside [0, {self.n_rois})")
        if len(set(self.signal_rois)) != len(self.signal_rois):
            raise ValueError("signal ROI indices must be distinct")
        if self.effect_size < 0:
            raise ValueError("effect_size must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple)
                         else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "signal_rois" in kwargs:
            kwargs["signal_rois"] = tuple(kwargs["signal_rois"])
        return cls(**kwargs)


_SITES = ("site_a", "site_b", "site_c", "site_d")


def generate_synthetic(spec: SyntheticSpec
                       ) -> tuple[list[RoiTimeSeries], list[PhenotypicRecord]]:
    """In-memory dataset drawn from ``spec``; generation is bit-reproducible."""
    streams = RngStreams(spec.seed)
    labels = (streams.stream("synth_labels").random(spec.n_subjects)
              < spec.balance).astype(int)
    signal = list(spec.signal_rois)

    series_list: list[RoiTimeSeries] = []
    records: list[PhenotypicRecord] = []
    for i in range(spec.n_subjects):
        sid = f"sub{i:04d}"
        rng = streams.stream("synth_series", i)
        values = rng.normal(0.0, spec.noise_std, size=(spec.t_full, spec.n_rois))
        if labels[i] == 1 and signal:
            period = rng.uniform(12.0, 30.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = np.sin(2.0 * np.pi * np.arange(spec.t_full) / period + phase)
            values[:, signal] += spec.effect_size * wave[:, None]
        series_list.append(RoiTimeSeries(subject_id=sid, values=values,
                                         template_name="synthetic"))

        prng = streams.stream("synth_pheno", i)
        dx = int(prng.integers(1, 4)) if labels[i] == 1 else 0
        gender = int(prng.integers(0, 2))
        age = round(float(prng.uniform(7.0, 20.0)), 2)
        handedness = int(prng.choice([0, 1, 1, 1, 2, 3]))
        iq = round(float(prng.normal(110.0, 15.0)), 1)
        if prng.random() < 0.05:
            iq = IQ_ERROR_VALUE
        records.append(PhenotypicRecord(subject_id=sid, site=_SITES[i % len(_SITES)],
                                        dx=dx, gender=gender, age=age,
                                        handedness=handedness, full4_iq=iq))
    return series_list, records


# -- writers ---------------------------------------------------------------------


def write_series_file(path, values: np.ndarray) -> None:
    """Inverse of load_subject_series: time-major rows with a header line."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("\t".join(f"roi_{j}" for j in range(values.shape[1])) + "\n")
        for row in values:
            fh.write("\t".join("%.17g" % v for v in row) + "\n")


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_pheno_table(path, records) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(PHENO_COLUMNS) + "\n")
        for r in records:
            fh.write("\t".join([r.subject_id, r.site, _fmt(r.dx), _fmt(r.gender),
                                _fmt(r.age), _fmt(r.handedness),
                                _fmt(r.full4_iq)]) + "\n")


def write_dataset(out_dir, series_list, records) -> tuple[Path, Path]:
    """Write per-subject series files plus the phenotypic table; returns
    (series_dir, pheno_path)."""
    out_dir = Path(out_dir)
    series_dir = out_dir / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    for series in series_list:
        write_series_file(series_dir / f"{series.subject_id}.tsv", series.values)
    pheno_path = out_dir / "phenotypes.tsv"
    write_pheno_table(pheno_path, records)
    return series_dir, pheno_path
