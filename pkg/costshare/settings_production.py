"""
Batch settings for costshare.
Used on shared compute hosts: runs are journaled to Postgres and logs are JSON.
"""

from .settings import *
import dj_database_url

DEBUG = env.bool("DEBUG", default=False)

SECRET_KEY = env("SECRET_KEY")

# Shared run journal
DATABASES = {
    "default": dj_database_url.config(
        default=env("DATABASE_URL"),
        conn_max_age=600,
        conn_health_checks=True,
    )
}

# Worker count defaults to the host's cores unless pinned
COSTSHARE_JOBS = env.int("COSTSHARE_JOBS", default=os.cpu_count() or 1)

# Logging for batch hosts
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "json": {
            "format": "%(asctime)s %(name)s %(levelname)s %(message)s",
            "class": "pythonjsonlogger.jsonlogger.JsonFormatter",
        },
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "json",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "INFO",
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": env("DJANGO_LOG_LEVEL", default="WARNING"),
            "propagate": False,
        },
        "mechanisms": {
            "handlers": ["console"],
            "level": env("COSTSHARE_LOG_LEVEL"),
            "propagate": False,
        },
    },
}
