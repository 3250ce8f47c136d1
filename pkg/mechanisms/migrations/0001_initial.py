# Generated by Django 5.2.5 on 2026-10-17 03:41

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=20)),
                ('config_hash', models.CharField(blank=True, max_length=64)),
                ('seed', models.BigIntegerField(blank=True, null=True)),
                ('mode', models.CharField(blank=True, max_length=20)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed'), ('skipped', 'Skipped')], default='running', max_length=20)),
                ('summary', models.JSONField(blank=True, null=True)),
                ('output_dir', models.CharField(blank=True, max_length=1024)),
                ('error_message', models.TextField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('completed_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'indexes': [models.Index(fields=['config_hash'], name='run_config_hash_idx'), models.Index(fields=['command', 'status'], name='run_command_status_idx'), models.Index(fields=['created_at'], name='run_created_at_idx')],
            },
        ),
        migrations.CreateModel(
            name='AuditRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=64)),
                ('passed', models.BooleanField()),
                ('hard', models.BooleanField(default=True)),
                ('report', models.JSONField()),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='audits', to='mechanisms.experimentrun')),
            ],
            options={
                'indexes': [models.Index(fields=['run', 'name'], name='audit_run_name_idx')],
            },
        ),
    ]
