"""CSV ingestion/emission and provenance metadata.

The on-disk cohort format is two files:

``subjects.csv``
    one row per subject: ``subject_id, gender, race, site, smoking_status,
    elix_score, insulin, bmi0, a1c0, surgery_month, surgery_type,
    event_month, censor_month, censor_reason`` (empty cell = absent).

``measurements.csv``
    long format: ``subject_id, month, measure, value`` with
    ``measure in {bmi, a1c}``.

All artifacts are written atomically (temp file + rename) and carry a
provenance JSON with the config hash and tool version, so identical
configs rerun to byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .cohort import Cohort
from .domain import (
    CENSOR_REASONS,
    DataDictionary,
    SMOKING_LEVELS,
    SURGERY_TYPES,
)
from .errors import DataError

SUBJECT_COLUMNS = [
    "subject_id",
    "gender",
    "race",
    "site",
    "smoking_status",
    "elix_score",
    "insulin",
    "bmi0",
    "a1c0",
    "surgery_month",
    "surgery_type",
    "event_month",
    "censor_month",
    "censor_reason",
]
MEASUREMENT_COLUMNS = ["subject_id", "month", "measure", "value"]


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, payload: dict) -> None:
    atomic_write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_dataframe(path: Path, frame: pd.DataFrame) -> None:
    atomic_write_text(Path(path), frame.to_csv(index=False))


def provenance(config: dict, **extra) -> dict:
    payload = {
        "tool": "seqtte",
        "version": __version__,
        "config_hash": config_hash(config),
        "config": config,
    }
    payload.update(extra)
    return payload


# -- cohort emission ---------------------------------------------------------


def cohort_frames(cohort: Cohort) -> tuple[pd.DataFrame, pd.DataFrame]:
    dic = cohort.dictionary
    k = cohort.n_subjects
    smoking = np.full(k, "never", dtype="U8")
    smoking[cohort.baseline_column("smoking_former") > 0.5] = "former"
    smoking[cohort.baseline_column("smoking_current") > 0.5] = "current"

    def levels(codes, labels):
        return np.asarray(labels, dtype=object)[codes.astype(int)]

    def optional(values):
        return pd.array(
            [None if v < 0 else int(v) for v in values], dtype="Int64"
        )

    subjects = pd.DataFrame(
        {
            "subject_id": cohort.subject_ids,
            "gender": cohort.baseline_column("gender").astype(int),
            "race": levels(cohort.baseline_column("race"), dic.race_levels),
            "site": levels(cohort.baseline_column("site"), dic.site_levels),
            "smoking_status": smoking,
            "elix_score": cohort.baseline_column("elix_score"),
            "insulin": cohort.baseline_column("insulin").astype(int),
            "bmi0": cohort.baseline_column("bmi0"),
            "a1c0": cohort.baseline_column("a1c0"),
            "surgery_month": optional(cohort.surgery_month),
            "surgery_type": [
                ("rygb" if r == 1 else "vsg") if s >= 0 else None
                for s, r in zip(cohort.surgery_month, cohort.surgery_rygb)
            ],
            "event_month": optional(cohort.event_month),
            "censor_month": optional(cohort.censor_month),
            "censor_reason": [
                str(r) if m >= 0 else None
                for m, r in zip(cohort.censor_month, cohort.censor_reason)
            ],
        }
    )

    parts = []
    for measure, arr in (("bmi", cohort.bmi), ("a1c", cohort.a1c)):
        rows, cols = np.nonzero(~np.isnan(arr))
        parts.append(
            pd.DataFrame(
                {
                    "subject_id": cohort.subject_ids[rows],
                    "month": cols,
                    "measure": measure,
                    "value": arr[rows, cols],
                }
            )
        )
    measurements = pd.concat(parts, ignore_index=True)
    measurements = measurements.sort_values(
        ["subject_id", "month", "measure"], kind="stable"
    ).reset_index(drop=True)
    return subjects, measurements


def write_cohort(out_dir: Path, cohort: Cohort) -> dict[str, Path]:
    out_dir = Path(out_dir)
    subjects, measurements = cohort_frames(cohort)
    paths = {
        "subjects": out_dir / "subjects.csv",
        "measurements": out_dir / "measurements.csv",
    }
    write_dataframe(paths["subjects"], subjects)
    write_dataframe(paths["measurements"], measurements)
    return paths


# -- cohort ingestion --------------------------------------------------------


def _code(values, labels, column):
    lookup = {label: i for i, label in enumerate(labels)}
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        key = str(v)
        if key not in lookup:
            raise DataError(f"{column}: undeclared level {key!r}")
        out[i] = lookup[key]
    return out


def read_cohort(
    in_dir: Path, t_max: int, dictionary: DataDictionary | None = None
) -> Cohort:
    in_dir = Path(in_dir)
    dictionary = dictionary or DataDictionary()
    subjects = pd.read_csv(in_dir / "subjects.csv", dtype={"race": str, "site": str})
    measurements = pd.read_csv(in_dir / "measurements.csv")
    missing = set(SUBJECT_COLUMNS) - set(subjects.columns)
    if missing:
        raise DataError(f"subjects.csv missing columns: {sorted(missing)}")
    missing = set(MEASUREMENT_COLUMNS) - set(measurements.columns)
    if missing:
        raise DataError(f"measurements.csv missing columns: {sorted(missing)}")

    k = len(subjects)
    smoking = subjects["smoking_status"].tolist()
    for level in smoking:
        if level not in SMOKING_LEVELS:
            raise DataError(f"smoking_status: undeclared level {level!r}")
    former = np.array([s == "former" for s in smoking], dtype=float)
    current = np.array([s == "current" for s in smoking], dtype=float)
    baseline = np.column_stack(
        [
            subjects["gender"].to_numpy(float),
            _code(subjects["race"], dictionary.race_levels, "race").astype(float),
            _code(subjects["site"], dictionary.site_levels, "site").astype(float),
            former,
            current,
            subjects["insulin"].to_numpy(float),
            subjects["elix_score"].to_numpy(float),
            subjects["bmi0"].to_numpy(float),
            subjects["a1c0"].to_numpy(float),
        ]
    )

    def optional_int(column):
        vals = subjects[column]
        return np.where(vals.isna(), -1, vals.fillna(-1)).astype(np.int64)

    surgery = optional_int("surgery_month")
    stype = subjects["surgery_type"]
    rygb = np.full(k, -1, dtype=np.int64)
    for i in range(k):
        if surgery[i] >= 0:
            label = stype.iloc[i]
            if pd.isna(label) or label not in SURGERY_TYPES:
                raise DataError(
                    f"subject {subjects['subject_id'].iloc[i]}: surgery_month set "
                    f"with missing/undeclared surgery_type {label!r}"
                )
            rygb[i] = 1 if label == "rygb" else 0

    reason = np.full(k, "", dtype="U16")
    censor = optional_int("censor_month")
    for i in range(k):
        if censor[i] >= 0:
            label = subjects["censor_reason"].iloc[i]
            if pd.isna(label):
                label = "other"
            if label not in CENSOR_REASONS:
                raise DataError(f"censor_reason: undeclared level {label!r}")
            reason[i] = label

    id_to_row = {int(s): i for i, s in enumerate(subjects["subject_id"])}
    if len(id_to_row) != k:
        raise DataError("subjects.csv has duplicate subject_id values")
    bmi = np.full((k, t_max), np.nan)
    a1c = np.full((k, t_max), np.nan)
    target = {"bmi": bmi, "a1c": a1c}
    for sid, month, measure, value in measurements[MEASUREMENT_COLUMNS].itertuples(
        index=False
    ):
        if measure not in target:
            raise DataError(f"measurements.csv: unknown measure {measure!r}")
        if int(sid) not in id_to_row:
            raise DataError(f"measurements.csv: unknown subject_id {sid}")
        month = int(month)
        if not 0 <= month < t_max:
            raise DataError(f"measurements.csv: month {month} outside [0, {t_max})")
        # ties within a month: last-loaded record wins (stable file order)
        target[measure][id_to_row[int(sid)], month] = float(value)

    return Cohort(
        subject_ids=subjects["subject_id"].to_numpy(np.int64),
        baseline=baseline,
        bmi=bmi,
        a1c=a1c,
        surgery_month=surgery,
        surgery_rygb=rygb,
        event_month=optional_int("event_month"),
        censor_month=censor,
        censor_reason=reason,
        t_max=t_max,
        dictionary=dictionary,
    )
