from decouple import config
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='django-insecure-fallback-key')
DEBUG = config('DEBUG', default=True, cast=bool)
ALLOWED_HOSTS = ['localhost', '127.0.0.1', '0.0.0.0']

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'apps.tensors',
    'apps.networks',
    'apps.datasets',
    'apps.training',
]

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Logging
LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
            'stream': 'ext://sys.stderr',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
}

# Tensor engine
TENSOR_PRECISION = config('TENSOR_PRECISION', default='float32')  # float32 or float64
TENSOR_CHECK_FINITE = config('TENSOR_CHECK_FINITE', default=True, cast=bool)

# Segmentation runs
SEGMENTATION_DEFAULT_SEED = config('SEGMENTATION_DEFAULT_SEED', default=0, cast=int)
SEGMENTATION_IMAGE_SIZE = config('SEGMENTATION_IMAGE_SIZE', default=256, cast=int)
SEGMENTATION_DATA_ROOT = Path(config('SEGMENTATION_DATA_ROOT', default=str(BASE_DIR / 'data')))
SEGMENTATION_RUNS_ROOT = Path(config('SEGMENTATION_RUNS_ROOT', default=str(BASE_DIR / 'runs')))
SEGMENTATION_PREFETCH = config('SEGMENTATION_PREFETCH', default=2, cast=int)

# Celery Configuration
CELERY_BROKER_URL = config('CELERY_BROKER_URL', default='redis://localhost:6379/0')
CELERY_RESULT_BACKEND = config('CELERY_RESULT_BACKEND', default='redis://localhost:6379/0')
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = TIME_ZONE
CELERY_ENABLE_UTC = True

# Celery Task Routes
CELERY_TASK_ROUTES = {
    'apps.training.tasks.run_training': {'queue': 'training'},
    'apps.training.tasks.run_ablation': {'queue': 'training'},
}

# Celery Task Settings
CELERY_TASK_ALWAYS_EAGER = config('CELERY_TASK_ALWAYS_EAGER', default=False, cast=bool)
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TASK_IGNORE_RESULT = False
