"""Patient-record schema, line-delimited JSON ingestion, vocabulary and folds."""

from __future__ import annotations

import io
import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embedding import Vocabulary
from .errors import (
    DuplicatePatientError,
    MalformedLineError,
    TooFewVisitsError,
    ValidationError,
    VisitOrderError,
)

log = logging.getLogger(__name__)

MIN_VISITS = 2
VISIT_KEYS = {"time", "diseases", "treatments", "unplanned", "label"}
RECORD_KEYS = {"patient_id", "visits"}


@dataclass(frozen=True)
class Visit:
    time: int
    diseases: tuple = ()
    treatments: tuple = ()
    unplanned: bool = False
    label: Optional[int] = None

    def to_dict(self):
        return {
            "time": self.time,
            "diseases": list(self.diseases),
            "treatments": list(self.treatments),
            "unplanned": self.unplanned,
            "label": self.label,
        }


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    visits: tuple

    def __len__(self):
        return len(self.visits)

    def prefix(self, t):
        """The record truncated to its first ``t`` visits (no validation)."""
        return PatientRecord(self.patient_id, self.visits[:t])

    @property
    def final_label(self):
        return self.visits[-1].label if self.visits else None

    def to_dict(self):
        return {"patient_id": self.patient_id, "visits": [v.to_dict() for v in self.visits]}


@dataclass
class Cohort:
    records: list
    vocabulary: Vocabulary
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, patient_id):
        for r in self.records:
            if r.patient_id == patient_id:
                return r
        raise KeyError(patient_id)

    def subset(self, records):
        return Cohort(list(records), self.vocabulary, dict(self.provenance))


def truncate_icd10(code):
    """Reduce an ICD-10 code to chapter letter plus two-digit category.

    >>> truncate_icd10("f32.1")
    'F32'
    """
    if not isinstance(code, str) or not code.strip():
        raise ValidationError("ICD-10 code must be a nonempty string")
    return code.strip().upper().split(".", 1)[0][:3]


def derive_labels(record, window=365):
    """Label each visit 1 if an unplanned visit follows within ``window`` days.

    Visits that already carry a label keep it.
    """
    visits = record.visits
    out = []
    for t, v in enumerate(visits):
        if v.label is not None:
            out.append(v)
            continue
        y = 0
        for nxt in visits[t + 1:]:
            if nxt.time - v.time > window:
                break
            if nxt.unplanned:
                y = 1
                break
        out.append(Visit(v.time, v.diseases, v.treatments, v.unplanned, y))
    return PatientRecord(record.patient_id, tuple(out))


def _check_keys(obj, allowed, where, strict, line_no):
    extra = set(obj) - allowed
    if extra:
        msg = f"{where}: unknown keys {sorted(extra)}"
        if strict:
            raise MalformedLineError(line_no, msg)
        log.warning("line %d: %s", line_no, msg)


def _parse_codes(value, field_name, line_no, truncate):
    if not isinstance(value, list) or not all(isinstance(c, str) and c for c in value):
        raise MalformedLineError(line_no, f"{field_name} must be a list of nonempty strings")
    return tuple(truncate_icd10(c) for c in value) if truncate else tuple(value)


def parse_record(obj, line_no=0, strict=True, truncate=False):
    """Validate one decoded JSON object and build a :class:`PatientRecord`.

    ``truncate`` applies :func:`truncate_icd10` to disease codes.
    """
    if not isinstance(obj, dict):
        raise MalformedLineError(line_no, "record must be a JSON object")
    _check_keys(obj, RECORD_KEYS, "record", strict, line_no)
    pid = obj.get("patient_id")
    if not isinstance(pid, str) or not pid:
        raise MalformedLineError(line_no, "patient_id must be a nonempty string")
    raw_visits = obj.get("visits")
    if not isinstance(raw_visits, list):
        raise MalformedLineError(line_no, "visits must be a list")
    visits = []
    for k, rv in enumerate(raw_visits):
        if not isinstance(rv, dict):
            raise MalformedLineError(line_no, f"visit {k} must be an object")
        _check_keys(rv, VISIT_KEYS, f"visit {k}", strict, line_no)
        time = rv.get("time")
        if isinstance(time, bool) or not isinstance(time, int):
            raise MalformedLineError(line_no, f"visit {k}: time must be an integer")
        diseases = _parse_codes(rv.get("diseases", []), "diseases", line_no, truncate)
        treatments = _parse_codes(rv.get("treatments", []), "treatments", line_no, False)
        if not diseases and not treatments:
            raise ValidationError(f"line {line_no}: visit {k} has neither diseases nor treatments")
        unplanned = rv.get("unplanned", False)
        if not isinstance(unplanned, bool):
            raise MalformedLineError(line_no, f"visit {k}: unplanned must be a boolean")
        label = rv.get("label")
        if label is not None and (isinstance(label, bool) or label not in (0, 1)):
            raise MalformedLineError(line_no, f"visit {k}: label must be 0, 1 or null")
        visits.append(Visit(time, diseases, treatments, unplanned, label))
    if len(visits) < MIN_VISITS:
        raise TooFewVisitsError(
            f"line {line_no}: patient {pid!r} has {len(visits)} visit(s); "
            f"each record needs at least {MIN_VISITS} hospital visits")
    for a, b in zip(visits, visits[1:]):
        if b.time < a.time:
            raise VisitOrderError(f"line {line_no}: patient {pid!r} has decreasing visit times")
    return PatientRecord(pid, tuple(visits))


def build_vocab(records):
    """Collect disease and treatment codes into two sorted namespaces."""
    diseases, treatments = set(), set()
    for r in records:
        for v in r.visits:
            diseases.update(v.diseases)
            treatments.update(v.treatments)
    return Vocabulary.from_codes(diseases, treatments)


def parse_cohort(stream, strict=True, truncate=False, label_window=None, provenance=None):
    """Read a line-delimited JSON cohort.

    ``stream`` is a text file object, a string, or an iterable of lines.
    Blank lines are skipped.  With ``label_window`` set, missing labels are
    derived from later unplanned visits.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records, seen = [], set()
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLineError(line_no, f"invalid JSON ({exc.msg})") from None
        rec = parse_record(obj, line_no, strict=strict, truncate=truncate)
        if rec.patient_id in seen:
            raise DuplicatePatientError(f"line {line_no}: duplicate patient_id {rec.patient_id!r}")
        seen.add(rec.patient_id)
        if label_window is not None:
            rec = derive_labels(rec, label_window)
        records.append(rec)
    return Cohort(records, build_vocab(records), dict(provenance or {}))


def load_cohort(path, **options):
    with open(path, encoding="utf-8") as fh:
        prov = {"source": str(path)}
        return parse_cohort(fh, provenance=prov, **options)


def serialize_record(record):
    return json.dumps(record.to_dict(), separators=(",", ":"))


def write_cohort(cohort_or_records, path_or_stream):
    records = cohort_or_records.records if isinstance(cohort_or_records, Cohort) else cohort_or_records
    text = "".join(serialize_record(r) + "\n" for r in records)
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        with open(path_or_stream, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def stable_hash(text):
    """Platform-independent 32-bit hash used to derive per-patient seeds."""
    return zlib.crc32(text.encode("utf-8"))


def kfold_split(cohort, k=5, seed=0):
    """Stratified patient-level partition into ``k`` folds.

    Records are grouped by final-visit label (unlabeled treated as
    negative), each group is shuffled, and the concatenation is dealt
    round-robin, so fold sizes differ by at most one.
    """
    records = list(cohort.records if isinstance(cohort, Cohort) else cohort)
    if k < 2:
        raise ValidationError("k must be at least 2")
    if k > len(records):
        raise ValidationError(f"cannot split {len(records)} records into {k} folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6B666F6C]))
    pos = [r for r in records if r.final_label == 1]
    neg = [r for r in records if r.final_label != 1]
    order = [pos[i] for i in rng.permutation(len(pos))] + [neg[i] for i in rng.permutation(len(neg))]
    folds = [[] for _ in range(k)]
    for i, r in enumerate(order):
        folds[i % k].append(r)
    return folds
