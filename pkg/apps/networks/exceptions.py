from django.core.exceptions import ValidationError


class ConfigError(ValidationError):
    """Inconsistent architecture configuration or parameter state"""
