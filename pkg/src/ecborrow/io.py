"""File formats: dataset CSVs, operating-characteristic CSVs, manifests.

Dataset files carry a header ``outcome,treatment,<cov1>,...`` with binary
outcome/treatment and numeric covariates.  A manifest is a small JSON file
listing the studies of a collection with their roles; relative paths are
resolved against the manifest's own directory.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np
from scipy.special import expit

from .data import Dataset, StudyCollection, validate_collection
from .errors import ParseError, SchemaError
from .oc import OcRow
from .resample import ROLE_EXTERNAL, ROLE_SOURCE, DataCollectionManifest, ManifestStudy
from .streams import substream

__all__ = [
    "read_dataset_csv",
    "write_dataset_csv",
    "read_collection_csv",
    "write_oc_csv",
    "read_oc_csv",
    "write_manifest",
    "read_manifest",
    "load_manifest_data",
    "synth_data",
    "SYNTH_COVARIATES",
]

OC_HEADER = (
    "key",
    "method",
    "effect",
    "rejection_rate",
    "bias",
    "rmse",
    "reps",
    "mc_se",
    "failure_rate",
)


def _binary_field(token: str, path: str, lineno: int, name: str) -> int:
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: non-numeric {name} value {token!r}") from None
    if v not in (0.0, 1.0):
        raise ValueError(f"{path}:{lineno}: {name} must be 0 or 1, got {token!r}")
    return int(v)


def read_dataset_csv(path: str) -> tuple[tuple[str, ...], np.ndarray, np.ndarray, np.ndarray]:
    """Parse one study file into (covariate_names, x, treatment, outcome)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[:2] != ["outcome", "treatment"]:
            raise SchemaError(
                f"{path}: header must start with outcome,treatment; got {','.join(header[:2])}"
            )
        names = tuple(header[2:])
        ys, ts, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            ys.append(_binary_field(row[0], path, lineno, "outcome"))
            ts.append(_binary_field(row[1], path, lineno, "treatment"))
            try:
                xs.append([float(v) for v in row[2:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric covariate value") from None
    x = np.asarray(xs, dtype=float).reshape(len(ys), len(names))
    return names, x, np.asarray(ts, dtype=np.int64), np.asarray(ys, dtype=np.int64)


def _fmt(v: float) -> str:
    return np.format_float_positional(v, trim="-")


def write_dataset_csv(path: str, d: Dataset, names: tuple[str, ...]) -> None:
    if len(names) != d.q:
        raise ValueError(f"{d.q} covariate columns but {len(names)} names")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("outcome", "treatment") + tuple(names))
        for i in range(d.n):
            w.writerow(
                [int(d.outcome[i]), int(d.treatment[i])] + [_fmt(v) for v in d.x[i]]
            )


def read_collection_csv(paths: list[str]) -> StudyCollection:
    """Read one CSV per study, first file the RCT, and validate the result."""
    if not paths:
        raise ValueError("need at least one dataset file")
    datasets = []
    names = None
    for k, p in enumerate(paths):
        nm, x, t, y = read_dataset_csv(p)
        if k == 0:
            names = nm
        elif nm != names:
            raise SchemaError(
                f"{p}: covariate columns ({','.join(nm)}) do not match "
                f"the RCT file ({','.join(names)})"
            )
        datasets.append(Dataset(k + 1, x, t, y, is_rct=(k == 0)))
    c = StudyCollection(tuple(datasets), names)
    report = validate_collection(c)
    if not report.ok:
        raise ValueError("invalid collection: " + "; ".join(report.violations))
    return c


def write_oc_csv(rows: list[OcRow], path: str) -> None:
    """Fixed 6-decimal formatting; row order is taken as given."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OC_HEADER)
        for r in rows:
            w.writerow(
                [
                    r.key,
                    r.method,
                    r.effect,
                    f"{r.rejection_rate:.6f}",
                    f"{r.bias:.6f}",
                    f"{r.rmse:.6f}",
                    r.reps,
                    f"{r.mc_se:.6f}",
                    f"{r.failure_rate:.6f}",
                ]
            )


def read_oc_csv(path: str) -> list[OcRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != OC_HEADER:
            raise SchemaError(f"{path}: unexpected header {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(OC_HEADER):
                raise ParseError(f"{path}:{lineno}: expected {len(OC_HEADER)} fields")
            try:
                rows.append(
                    OcRow(
                        key=row[0],
                        method=row[1],
                        effect=row[2],
                        rejection_rate=float(row[3]),
                        bias=float(row[4]),
                        rmse=float(row[5]),
                        reps=int(row[6]),
                        mc_se=float(row[7]),
                        failure_rate=float(row[8]),
                    )
                )
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed numeric field") from None
    return rows


def write_manifest(manifest: DataCollectionManifest, path: str) -> None:
    payload = {
        "studies": [
            {"label": s.label, "path": s.path, "size": s.size, "role": s.role}
            for s in manifest.studies
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_manifest(path: str) -> DataCollectionManifest:
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    entries = payload.get("studies")
    if not isinstance(entries, list) or not entries:
        raise SchemaError(f"{path}: manifest needs a non-empty 'studies' list")
    studies = []
    for k, e in enumerate(entries):
        missing = [key for key in ("label", "path", "size", "role") if key not in e]
        if missing:
            raise SchemaError(f"{path}: study entry {k} missing {', '.join(missing)}")
        p = e["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        studies.append(ManifestStudy(e["label"], p, int(e["size"]), e["role"]))
    return DataCollectionManifest(tuple(studies))


def load_manifest_data(
    manifest: DataCollectionManifest,
) -> tuple[Dataset, tuple[Dataset, ...], tuple[str, ...]]:
    """Load the manifest's files: (source pool, externals, covariate names).

    Every record must be control-therapy; sizes must match the manifest.
    """
    names = None
    loaded: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for s in manifest.studies:
        nm, x, t, y = read_dataset_csv(s.path)
        if names is None:
            names = nm
        elif nm != names:
            raise SchemaError(
                f"{s.path}: covariate columns ({','.join(nm)}) differ across the manifest"
            )
        if len(y) != s.size:
            raise ValueError(
                f"study {s.label!r}: manifest says {s.size} records, file has {len(y)}"
            )
        if (t != 0).any():
            raise ValueError(f"study {s.label!r} contains treated records")
        loaded[s.label] = (x, t, y)
    sx, st, sy = loaded[manifest.source.label]
    source = Dataset(1, sx, st, sy, is_rct=True)
    externals = tuple(
        Dataset(j + 2, *loaded[s.label], is_rct=False)
        for j, s in enumerate(manifest.externals)
    )
    return source, externals, names


SYNTH_COVARIATES = ("age", "sex", "kps", "mgmt", "resection")

_SYNTH_SIZES = (458, 16, 29, 663)
_SYNTH_LABELS = ("phase3_synth", "pilot_a_synth", "pilot_b_synth", "dfci_synth")
_KPS_LEVELS = (60.0, 70.0, 80.0, 90.0, 100.0)
_KPS_PROBS = (0.1, 0.15, 0.25, 0.3, 0.2)


def synth_data(
    out_dir: str,
    seed: int = 0,
    sizes: tuple[int, ...] = _SYNTH_SIZES,
    labels: tuple[str, ...] = _SYNTH_LABELS,
    shift_study: str | None = None,
    shift: float = 0.0,
) -> DataCollectionManifest:
    """Write a control-only multi-study fixture and its manifest.

    Outcomes follow a logistic law in mgmt status and sex; ``shift_study``
    moves that study's response probabilities by ``shift`` (clipped) so a
    deliberately mismatched study is available for swap experiments.  The
    first study is the source candidate.
    """
    if len(sizes) != len(labels):
        raise ValueError("sizes and labels must have equal length")
    if shift_study is not None and shift_study not in labels:
        raise ValueError(f"shift_study {shift_study!r} is not one of the labels")
    os.makedirs(out_dir, exist_ok=True)
    studies = []
    for k, (n, label) in enumerate(zip(sizes, labels)):
        rng = substream(seed, "synth", label)
        age = np.round(np.clip(rng.normal(58.0, 10.0, n), 18.0, 85.0), 1)
        sex = (rng.random(n) < 0.4).astype(float)
        kps = rng.choice(_KPS_LEVELS, size=n, p=_KPS_PROBS)
        mgmt = (rng.random(n) < 0.45).astype(float)
        resection = (rng.random(n) < 0.7).astype(float)
        p = expit(-0.4 + 0.5 * mgmt - 0.5 * sex)
        if label == shift_study:
            p = np.clip(p + shift, 0.01, 0.99)
        y = (rng.random(n) < p).astype(np.int64)
        d = Dataset(
            k + 1,
            np.column_stack([age, sex, kps, mgmt, resection]),
            np.zeros(n, dtype=np.int64),
            y,
            is_rct=(k == 0),
        )
        fname = f"{label}.csv"
        write_dataset_csv(os.path.join(out_dir, fname), d, SYNTH_COVARIATES)
        studies.append(
            ManifestStudy(label, fname, n, ROLE_SOURCE if k == 0 else ROLE_EXTERNAL)
        )
    write_manifest(DataCollectionManifest(tuple(studies)), os.path.join(out_dir, "manifest.json"))
    return read_manifest(os.path.join(out_dir, "manifest.json"))
