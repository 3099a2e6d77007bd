# Generated by Django 4.2.7 on 2026-10-17 09:12

import django.core.validators
from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('variant', models.CharField(choices=[('base', 'PVT base'), ('dsenc', 'PVT + DS Enc'), ('dsencres', 'PVT + DS Enc + Res'), ('full', 'PVT + DS Enc + Res + Adapter')], max_length=10)),
                ('seed', models.IntegerField(default=0)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('stopped', 'Stopped early'), ('failed', 'Failed')], default='running', max_length=10)),
                ('data_root', models.CharField(blank=True, max_length=500)),
                ('out_dir', models.CharField(blank=True, max_length=500)),
                ('config', models.JSONField(default=dict)),
                ('epochs_run', models.PositiveIntegerField(default=0)),
                ('best_epoch', models.PositiveIntegerField(default=0)),
                ('best_val_dice', models.FloatField(blank=True, null=True)),
                ('error_message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'verbose_name': 'Training Run',
                'verbose_name_plural': 'Training Runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EpochRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('train_loss', models.FloatField()),
                ('val_loss', models.FloatField()),
                ('val_dice', models.FloatField()),
                ('val_iou', models.FloatField()),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='training.trainingrun')),
            ],
            options={
                'verbose_name': 'Epoch Record',
                'verbose_name_plural': 'Epoch Records',
                'ordering': ['run', 'epoch'],
                'unique_together': {('run', 'epoch')},
            },
        ),
    ]
