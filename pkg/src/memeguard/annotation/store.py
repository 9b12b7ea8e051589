"""Persistence for the annotation service: a single-file sqlite store with an
append-only annotation log.

Annotation records are never updated or deleted; finalization recomputes
majority votes from the log, so running it twice is idempotent. The "day"
used for submission caps rolls over at midnight in the configured timezone.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Sequence
from zoneinfo import ZoneInfo

from memeguard.corpus import PostRecord, STAGE1_LABELS, STAGE2_ASSIGNABLE
from memeguard.evalmetrics import AgreementReport, fleiss_kappa, majority_vote

DEFAULT_DAILY_CAP = 50

_SCHEMA = """
CREATE TABLE IF NOT EXISTS annotators (
    id TEXT PRIMARY KEY,
    handle TEXT NOT NULL,
    daily_cap INTEGER NOT NULL,
    active INTEGER NOT NULL DEFAULT 1
);
CREATE TABLE IF NOT EXISTS samples (
    id TEXT PRIMARY KEY,
    image_path TEXT NOT NULL DEFAULT '',
    title TEXT NOT NULL DEFAULT '',
    tags TEXT NOT NULL DEFAULT '[]',
    ocr_text TEXT NOT NULL DEFAULT '',
    gt_summary TEXT,
    stage1_final TEXT,
    stage2_final TEXT
);
CREATE TABLE IF NOT EXISTS batches (
    id TEXT PRIMARY KEY,
    stage TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS assignments (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    batch_id TEXT NOT NULL,
    sample_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    stage TEXT NOT NULL,
    UNIQUE (sample_id, annotator_id, stage)
);
CREATE TABLE IF NOT EXISTS annotations (
    sample_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    stage TEXT NOT NULL,
    label TEXT NOT NULL,
    submitted_at TEXT NOT NULL,
    UNIQUE (sample_id, annotator_id, stage)
);
CREATE TABLE IF NOT EXISTS ratings (
    sample_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    completeness INTEGER NOT NULL,
    fluency INTEGER NOT NULL,
    grammar INTEGER NOT NULL,
    UNIQUE (sample_id, annotator_id)
);
"""

ASSIGNABLE = {"I": set(STAGE1_LABELS), "II": set(STAGE2_ASSIGNABLE)}


class StoreError(Exception):
    pass


class StoreConflict(StoreError):
    """Duplicate submission or other uniqueness violation."""


@dataclass(frozen=True)
class AnnotatorProfile:
    id: str
    handle: str
    daily_cap: int = DEFAULT_DAILY_CAP
    active: bool = True

    def __post_init__(self) -> None:
        if self.daily_cap < 1:
            raise ValueError("daily_cap must be >= 1")
        if "@" in self.handle or "/" in self.handle:
            raise ValueError("handle must not look like a platform username")


class AnnotationStore:
    def __init__(
        self,
        path: str | Path,
        timezone: str = "UTC",
        now_fn: Callable[[], datetime] | None = None,
    ):
        self.path = Path(path)
        self.tz = ZoneInfo(timezone)
        self.now_fn = now_fn or (lambda: datetime.now(self.tz))
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        self._conn.close()

    def _now(self) -> datetime:
        now = self.now_fn()
        if now.tzinfo is None:
            now = now.replace(tzinfo=self.tz)
        return now.astimezone(self.tz)

    def _today(self) -> str:
        return self._now().date().isoformat()

    # ------------------------------------------------------------ annotators

    def add_annotator(self, profile: AnnotatorProfile) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO annotators (id, handle, daily_cap, active) VALUES (?, ?, ?, ?)",
                (profile.id, profile.handle, profile.daily_cap, int(profile.active)),
            )

    def get_annotator(self, annotator_id: str) -> AnnotatorProfile:
        row = self._conn.execute(
            "SELECT * FROM annotators WHERE id = ?", (annotator_id,)
        ).fetchone()
        if row is None:
            raise StoreError(f"unknown annotator {annotator_id!r}")
        return AnnotatorProfile(
            id=row["id"], handle=row["handle"],
            daily_cap=row["daily_cap"], active=bool(row["active"]),
        )

    # ------------------------------------------------------------ samples

    def add_sample(
        self,
        sample_id: str,
        image_path: str = "",
        title: str = "",
        tags: Sequence[str] = (),
        ocr_text: str = "",
        gt_summary: str | None = None,
    ) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO samples (id, image_path, title, tags, ocr_text, gt_summary) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (sample_id, image_path, title, json.dumps(list(tags)), ocr_text, gt_summary),
            )

    def add_post(self, rec: PostRecord, image_path: str | None = None) -> None:
        self.add_sample(
            rec.id,
            image_path=image_path or rec.image_path,
            title=rec.title,
            tags=rec.tags,
            ocr_text=rec.ocr_text,
        )

    def get_sample(self, sample_id: str) -> sqlite3.Row:
        row = self._conn.execute("SELECT * FROM samples WHERE id = ?", (sample_id,)).fetchone()
        if row is None:
            raise StoreError(f"unknown sample {sample_id!r}")
        return row

    def set_gt_summary(self, sample_id: str, text: str) -> None:
        self.get_sample(sample_id)
        with self._lock, self._conn:
            self._conn.execute("UPDATE samples SET gt_summary = ? WHERE id = ?", (text, sample_id))

    # ------------------------------------------------------------ batches

    def create_batch(
        self,
        stage: str,
        assignments: Sequence[tuple[str, Sequence[str]]],
        batch_id: str | None = None,
    ) -> dict:
        """Queue (sample, 3 distinct annotators) tasks.

        Stage II samples must already be finalized toxic. Returns the batch id
        plus the even-load check (max minus min task count per annotator).
        """
        if stage not in ("I", "II"):
            raise StoreError(f"bad stage {stage!r}")
        loads: dict[str, int] = {}
        for sample_id, annotators in assignments:
            if len(annotators) != 3 or len(set(annotators)) != 3:
                raise StoreError(f"sample {sample_id}: need exactly 3 distinct annotators")
            sample = self.get_sample(sample_id)
            if stage == "II" and sample["stage1_final"] != "toxic":
                raise StoreError(f"sample {sample_id}: stage II requires a toxic stage I label")
            for annotator_id in annotators:
                self.get_annotator(annotator_id)
                loads[annotator_id] = loads.get(annotator_id, 0) + 1
        batch_id = batch_id or f"batch-{stage}-{uuid.uuid4().hex[:12]}"
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO batches (id, stage, created_at) VALUES (?, ?, ?)",
                (batch_id, stage, self._now().isoformat()),
            )
            for sample_id, annotators in assignments:
                for annotator_id in annotators:
                    try:
                        self._conn.execute(
                            "INSERT INTO assignments (batch_id, sample_id, annotator_id, stage) "
                            "VALUES (?, ?, ?, ?)",
                            (batch_id, sample_id, annotator_id, stage),
                        )
                    except sqlite3.IntegrityError as exc:
                        raise StoreConflict(
                            f"sample {sample_id} already assigned to {annotator_id} for stage {stage}"
                        ) from exc
        return {
            "batch_id": batch_id,
            "n_tasks": sum(loads.values()),
            "load_spread": (max(loads.values()) - min(loads.values())) if loads else 0,
        }

    # ------------------------------------------------------------ task flow

    def submitted_today(self, annotator_id: str) -> int:
        rows = self._conn.execute(
            "SELECT submitted_at FROM annotations WHERE annotator_id = ?", (annotator_id,)
        ).fetchall()
        today = self._today()
        count = 0
        for row in rows:
            stamp = datetime.fromisoformat(row["submitted_at"])
            if stamp.astimezone(self.tz).date().isoformat() == today:
                count += 1
        return count

    def remaining_total(self, annotator_id: str) -> int:
        row = self._conn.execute(
            "SELECT COUNT(*) AS n FROM assignments a WHERE a.annotator_id = ? AND NOT EXISTS ("
            " SELECT 1 FROM annotations x WHERE x.sample_id = a.sample_id"
            " AND x.annotator_id = a.annotator_id AND x.stage = a.stage)",
            (annotator_id,),
        ).fetchone()
        return row["n"]

    def next_task(self, annotator_id: str) -> dict | None:
        """Oldest unanswered assigned task, or None with a reason.

        The payload carries only what annotators need to judge the meme:
        image reference, title, tags, OCR text. No platform URLs or user
        handles ever leave the store.
        """
        profile = self.get_annotator(annotator_id)
        if not profile.active:
            raise StoreError(f"annotator {annotator_id!r} is not active")
        if self.submitted_today(annotator_id) >= profile.daily_cap:
            return {"task": None, "reason": "cap reached"}
        row = self._conn.execute(
            "SELECT a.sample_id, a.stage, s.title, s.tags, s.ocr_text FROM assignments a "
            "JOIN samples s ON s.id = a.sample_id "
            "WHERE a.annotator_id = ? AND NOT EXISTS ("
            " SELECT 1 FROM annotations x WHERE x.sample_id = a.sample_id"
            " AND x.annotator_id = a.annotator_id AND x.stage = a.stage) "
            "ORDER BY a.seq LIMIT 1",
            (annotator_id,),
        ).fetchone()
        if row is None:
            return {"task": None, "reason": "no tasks assigned"}
        stage = row["stage"]
        return {
            "task": {
                "sample_id": row["sample_id"],
                "stage": stage,
                "title": row["title"],
                "tags": json.loads(row["tags"]),
                "ocr_text": row["ocr_text"],
                "allowed_labels": sorted(ASSIGNABLE[stage]),
            },
            "reason": None,
        }

    def submit_annotation(self, annotator_id: str, sample_id: str, stage: str, label: str) -> dict:
        profile = self.get_annotator(annotator_id)
        if label not in ASSIGNABLE.get(stage, ()):
            raise StoreError(
                f"label {label!r} is not annotator-assignable in stage {stage}"
            )
        assigned = self._conn.execute(
            "SELECT 1 FROM assignments WHERE sample_id = ? AND annotator_id = ? AND stage = ?",
            (sample_id, annotator_id, stage),
        ).fetchone()
        if assigned is None:
            raise StoreError(f"sample {sample_id} is not assigned to {annotator_id} for stage {stage}")
        if self.submitted_today(annotator_id) >= profile.daily_cap:
            raise StoreError("daily cap reached")
        with self._lock, self._conn:
            try:
                self._conn.execute(
                    "INSERT INTO annotations (sample_id, annotator_id, stage, label, submitted_at) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (sample_id, annotator_id, stage, label, self._now().isoformat()),
                )
            except sqlite3.IntegrityError as exc:
                raise StoreConflict(
                    f"{annotator_id} already annotated {sample_id} in stage {stage}"
                ) from exc
        return {"sample_id": sample_id, "stage": stage, "label": label}

    # ------------------------------------------------------------ finalization

    def _stage_annotations(self, stage: str) -> dict[str, list[str]]:
        rows = self._conn.execute(
            "SELECT sample_id, label FROM annotations WHERE stage = ? ORDER BY rowid", (stage,)
        ).fetchall()
        grouped: dict[str, list[str]] = {}
        for row in rows:
            grouped.setdefault(row["sample_id"], []).append(row["label"])
        return grouped

    def finalize(self, stage: str) -> dict:
        """Majority-vote every sample with assignments in this stage.

        Blocked unless every assigned sample has exactly 3 annotations.
        Stage II three-way splits land in "undecided" and are excluded from
        detection eligibility downstream.
        """
        assigned = [
            row["sample_id"]
            for row in self._conn.execute(
                "SELECT DISTINCT sample_id FROM assignments WHERE stage = ? ORDER BY sample_id",
                (stage,),
            )
        ]
        grouped = self._stage_annotations(stage)
        incomplete = [s for s in assigned if len(grouped.get(s, [])) != 3]
        if incomplete:
            raise StoreError(
                f"finalization blocked; samples without exactly 3 annotations: {incomplete}"
            )
        finalized: dict[str, str] = {}
        undecided: list[str] = []
        column = "stage1_final" if stage == "I" else "stage2_final"
        with self._lock, self._conn:
            for sample_id in assigned:
                label = majority_vote(grouped[sample_id], stage)
                finalized[sample_id] = label
                if label == "undecided":
                    undecided.append(sample_id)
                self._conn.execute(
                    f"UPDATE samples SET {column} = ? WHERE id = ?", (label, sample_id)
                )
        return {"finalized": finalized, "undecided": undecided}

    def agreement(self, stage: str) -> AgreementReport:
        grouped = self._stage_annotations(stage)
        complete = {s: labels for s, labels in grouped.items() if len(labels) == 3}
        if not complete:
            raise StoreError(f"no fully annotated samples for stage {stage}")
        categories = sorted(ASSIGNABLE[stage])
        matrix = []
        for sample_id in sorted(complete):
            row = [0] * len(categories)
            for label in complete[sample_id]:
                row[categories.index(label)] += 1
            matrix.append(row)
        return fleiss_kappa(matrix)

    # ------------------------------------------------------------ ratings

    def rate_summary(
        self, annotator_id: str, sample_id: str,
        completeness: int, fluency: int, grammar: int,
    ) -> dict:
        self.get_annotator(annotator_id)
        sample = self.get_sample(sample_id)
        if sample["gt_summary"] is None:
            raise StoreError(f"sample {sample_id} has no summary to rate")
        for name, score in (("completeness", completeness), ("fluency", fluency), ("grammar", grammar)):
            if not 1 <= score <= 10:
                raise StoreError(f"{name} score {score} out of range [1, 10]")
        with self._lock, self._conn:
            try:
                self._conn.execute(
                    "INSERT INTO ratings (sample_id, annotator_id, completeness, fluency, grammar) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (sample_id, annotator_id, completeness, fluency, grammar),
                )
            except sqlite3.IntegrityError as exc:
                raise StoreConflict(f"{annotator_id} already rated {sample_id}") from exc
        return {"sample_id": sample_id}

    def rating_report(self) -> dict:
        rows = self._conn.execute("SELECT completeness, fluency, grammar FROM ratings").fetchall()
        if not rows:
            return {"n_ratings": 0, "completeness": None, "fluency": None, "grammar": None}
        n = len(rows)
        return {
            "n_ratings": n,
            "completeness": sum(r["completeness"] for r in rows) / n,
            "fluency": sum(r["fluency"] for r in rows) / n,
            "grammar": sum(r["grammar"] for r in rows) / n,
        }
