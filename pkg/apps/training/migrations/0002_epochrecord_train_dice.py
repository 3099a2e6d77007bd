# Generated by Django 4.2.7 on 2026-10-17 14:03

from django.db import migrations, models


class Migration(migrations.Migration):

    dependencies = [
        ('training', '0001_initial'),
    ]

    operations = [
        migrations.AddField(
            model_name='epochrecord',
            name='train_dice',
            field=models.FloatField(blank=True, null=True),
        ),
    ]
