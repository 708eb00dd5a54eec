"""JSON/CSV export of detection reports, segmentation scores and epoch logs.

CSV headers are fixed:

* epoch logs: ``epoch,train_loss,train_acc,val_loss,val_acc,lr,val_metric,val_jaccard``
* detection summary: ``tp,tn,fp,fn,accuracy,precision,recall,f1``
* segmentation scores: ``image,jaccard,dice``

Floats are written with ``repr`` so they parse back bit-exactly.  Undefined
rates are written as empty CSV cells and JSON ``null``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

EPOCH_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "val_metric", "val_jaccard")
DET_HEADER = ("tp", "tn", "fp", "fn", "accuracy", "precision", "recall", "f1")
SEG_HEADER = ("image", "jaccard", "dice")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    val_metric: float  # the value the callbacks monitor (higher is better)
    val_jaccard: Optional[float] = None  # segmenter only


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt_float(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def write_epoch_logs(path, logs: Sequence[EpochLog]) -> Path:
    path = Path(path)
    _write_csv(path, EPOCH_HEADER, [[getattr(l, f) for f in EPOCH_HEADER] for l in logs])
    return path


def read_epoch_logs(path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != EPOCH_HEADER:
            raise ValueError(f"unexpected epoch-log header {header}")
        return [EpochLog(int(row[0]), *(float(x) for x in row[1:7]), _opt_float(row[7])) for row in r]


def export_report(obj, out_dir, stem: str = "report", extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.json`` (full detail) and ``<stem>.csv`` (summary).

    ``obj`` is a DetReport, a list of (image name, SegScores) pairs, or a list
    of EpochLog records.
    """
    from ..metrics import DetReport

    out_dir = Path(out_dir)
    jpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
    if isinstance(obj, DetReport):
        doc = {"type": "detection", **obj.to_dict()}
        c = obj.counts
        rows = [[c.tp, c.tn, c.fp, c.fn, obj.accuracy, obj.precision, obj.recall, obj.f1]]
        header = DET_HEADER
    elif obj and all(isinstance(x, EpochLog) for x in obj):
        doc = {"type": "epochs", "epochs": [asdict(x) for x in obj]}
        rows = [[getattr(x, f) for f in EPOCH_HEADER] for x in obj]
        header = EPOCH_HEADER
    else:
        items = list(obj)
        doc = {"type": "segmentation", "images": [{"image": name, **asdict(s)} for name, s in items]}
        rows = [[name, s.jaccard, s.dice] for name, s in items]
        header = SEG_HEADER
    if extra:
        doc.update(extra)
    _write_json(jpath, doc)
    _write_csv(cpath, header, rows)
    return jpath, cpath


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def read_csv_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return list(r.fieldnames or []), list(r)


def parse_det_csv(path) -> dict:
    header, rows = read_csv_rows(path)
    if tuple(header) != DET_HEADER:
        raise ValueError(f"unexpected detection header {header}")
    row = rows[0]
    out = {k: int(row[k]) for k in DET_HEADER[:4]}
    out.update({k: _opt_float(row[k]) for k in DET_HEADER[4:]})
    return out


__all__ = [
    "DET_HEADER",
    "EPOCH_HEADER",
    "SEG_HEADER",
    "EpochLog",
    "export_report",
    "parse_det_csv",
    "read_csv_rows",
    "read_epoch_logs",
    "read_report",
    "write_epoch_logs",
]
