"""
Best-effort journal of command invocations.

Database trouble is logged and swallowed: it never changes exit codes or
result files.
"""

import logging
from typing import Iterable, Optional

from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

from mechanisms.models import AuditRecord, ExperimentRun
from mechanisms.schemas import AuditReport
from mechanisms.utils import round_floats

logger = logging.getLogger(__name__)


def recording_enabled() -> bool:
    return bool(getattr(settings, "COSTSHARE_RECORD_RUNS", True))


def start_run(command: str, config_hash: str = "", seed: Optional[int] = None, mode: str = "", output_dir: str = "") -> Optional[ExperimentRun]:
    if not recording_enabled():
        return None
    try:
        return ExperimentRun.objects.create(
            command=command,
            config_hash=config_hash,
            seed=seed,
            mode=mode,
            output_dir=str(output_dir),
        )
    except DatabaseError as e:
        logger.warning(f"Could not journal {command} run: {e}")
        return None


def finish_run(
    run: Optional[ExperimentRun],
    status: str,
    summary: Optional[dict] = None,
    reports: Iterable[AuditReport] = (),
    error: Optional[str] = None,
) -> None:
    if run is None:
        return
    try:
        run.status = status
        run.summary = round_floats(summary) if summary is not None else None
        run.error_message = error
        run.completed_at = timezone.now()
        run.save(update_fields=["status", "summary", "error_message", "completed_at"])
        AuditRecord.objects.bulk_create([
            AuditRecord(run=run, name=r.name, passed=r.passed, hard=r.hard, report=round_floats(r.model_dump()))
            for r in reports
        ])
    except DatabaseError as e:
        logger.warning(f"Could not update journal entry {run.pk}: {e}")
