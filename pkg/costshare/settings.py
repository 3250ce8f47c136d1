"""
Django settings for the costshare project.

The project hosts no web surface: Django provides configuration, logging,
the ORM used to journal experiment runs, management commands and the test
runner. All domain code lives in the ``mechanisms`` app.
"""

from pathlib import Path
import os

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Prefer the file named by ENV_FILE, otherwise a local .env if present
_env_file = os.environ.get("ENV_FILE")
if _env_file and os.path.exists(_env_file):
    environ.Env.read_env(_env_file)
else:
    env_dev = os.path.join(BASE_DIR, ".env")
    if os.path.exists(env_dev):
        environ.Env.read_env(env_dev)

env = environ.Env(
    # set casting, default value
    DEBUG=(bool, True),
    COSTSHARE_JOBS=(int, 1),
    COSTSHARE_ENUMERATION_CAP=(int, 10**6),
    COSTSHARE_OUTPUT_DIR=(str, str(BASE_DIR / "results")),
    COSTSHARE_RECORD_RUNS=(bool, True),
    COSTSHARE_CHUNK_ROWS=(int, 10_000),
    COSTSHARE_CHUNK_CELLS=(int, 2_000_000),
    COSTSHARE_LOG_LEVEL=(str, "INFO"),
)

SECRET_KEY = env("SECRET_KEY", default="dev-secret")

DEBUG = env("DEBUG")

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "mechanisms",
]

MIDDLEWARE = []


# Database
# Runs are journaled to sqlite unless DATABASE_URL points elsewhere.
# Note: default must be a URL string for django-environ, not a dict
DATABASES = {
    "default": env.db(
        "DATABASE_URL",
        default="sqlite:///" + str(BASE_DIR / "db.sqlite3"),
    )
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Experiment harness
COSTSHARE_JOBS = env("COSTSHARE_JOBS")
COSTSHARE_ENUMERATION_CAP = env("COSTSHARE_ENUMERATION_CAP")
COSTSHARE_OUTPUT_DIR = Path(env("COSTSHARE_OUTPUT_DIR"))
COSTSHARE_RECORD_RUNS = env("COSTSHARE_RECORD_RUNS")
COSTSHARE_CHUNK_ROWS = env("COSTSHARE_CHUNK_ROWS")
COSTSHARE_CHUNK_CELLS = env("COSTSHARE_CHUNK_CELLS")


# Logging configuration
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": "WARNING",
            "propagate": False,
        },
        "mechanisms": {
            "handlers": ["console"],
            "level": env("COSTSHARE_LOG_LEVEL"),
            "propagate": False,
        },
    },
}
