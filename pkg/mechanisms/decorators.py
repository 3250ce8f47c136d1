import logging
from functools import wraps

from django.core.management.base import CommandError

from .exceptions import AuditFailure, ConfigError, IncompatibleMode, MechanismError
from .models import ExperimentRun
from .services.journal import finish_run

logger = logging.getLogger(__name__)

EXIT_AUDIT_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_INCOMPATIBLE = 3


def exit_code_for(error: Exception) -> int:
    if isinstance(error, AuditFailure):
        return EXIT_AUDIT_FAILED
    if isinstance(error, IncompatibleMode):
        return EXIT_INCOMPATIBLE
    if isinstance(error, (ConfigError, ValueError)):
        return EXIT_CONFIG_ERROR
    return EXIT_AUDIT_FAILED


def command_exit_codes(handle):
    """
    Turn domain errors raised by a command's handle() into CommandError exit codes.

    A journal entry stored on ``self.journal`` is closed as failed first.
    """
    @wraps(handle)
    def _wrapped(self, *args, **options):
        try:
            return handle(self, *args, **options)
        except MechanismError as e:
            code = exit_code_for(e)
            finish_run(getattr(self, "journal", None), ExperimentRun.Status.FAILED, error=str(e))
            logger.info(f"{type(e).__name__} -> exit {code}")
            raise CommandError(str(e), returncode=code) from e
    return _wrapped
