#!/usr/bin/env python
"""Command-line entry point for the costshare experiment harness.

    python manage.py run --config example_data/configs/public_excludable_log_h.yaml
    python manage.py audit --config ...
    python manage.py lowerbound --h 16 --n 1024
    python manage.py sweep --config ... --grid h=4,16,64
"""
import os
import sys


def main():
    """Dispatch to the management commands of the mechanisms app."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "costshare.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages in requirements.txt "
            "into the active environment before running experiments."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
