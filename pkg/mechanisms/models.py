from django.db import models


class ExperimentRun(models.Model):
    """Journal entry for one management-command invocation"""

    class Status(models.TextChoices):
        RUNNING = 'running', 'Running'
        COMPLETED = 'completed', 'Completed'
        FAILED = 'failed', 'Failed'
        SKIPPED = 'skipped', 'Skipped'

    command = models.CharField(max_length=20)
    config_hash = models.CharField(max_length=64, blank=True)
    seed = models.BigIntegerField(null=True, blank=True)
    mode = models.CharField(max_length=20, blank=True)
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.RUNNING)
    summary = models.JSONField(null=True, blank=True)
    output_dir = models.CharField(max_length=1024, blank=True)
    error_message = models.TextField(null=True, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    completed_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        indexes = [
            models.Index(fields=['config_hash'], name='run_config_hash_idx'),
            models.Index(fields=['command', 'status'], name='run_command_status_idx'),
            models.Index(fields=['created_at'], name='run_created_at_idx'),
        ]

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} seed={self.seed} - {self.status}"

    @property
    def is_complete(self):
        return self.status in [self.Status.COMPLETED, self.Status.FAILED, self.Status.SKIPPED]


class AuditRecord(models.Model):
    """One AuditReport produced during a run"""
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='audits')
    name = models.CharField(max_length=64)
    passed = models.BooleanField()
    hard = models.BooleanField(default=True)
    report = models.JSONField()

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        indexes = [
            models.Index(fields=['run', 'name'], name='audit_run_name_idx'),
        ]

    def __str__(self):
        return f"{self.name} ({'pass' if self.passed else 'fail'})"
