from django.core.exceptions import ValidationError


class DatasetError(ValidationError):
    """Missing image/mask pair, empty index or inconsistent split settings"""


class ImageFormatError(DatasetError):
    """Malformed image header, truncated payload or unsupported sample depth"""
