"""
Django settings for the intentmatch project.

There is no web surface: the project is driven through management commands
(see core/management/commands). Settings only carry process-wide knobs;
per-run hyperparameters come from the run configuration file.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Required by Django even without sessions or signing.
SECRET_KEY = config('SECRET_KEY', default='intentmatch-local-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'corpus',
    'embeddings',
    'diffcore',
    'encoder',
    'regularizers',
    'matching',
    'classifier',
    'episodes',
    'evaluation',
    'trainer',
    'core',
]

# No models, no database.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Run artifacts
INTENTMATCH_OUTPUT_DIR = Path(config('INTENTMATCH_OUTPUT_DIR', default=str(BASE_DIR / 'runs')))
INTENTMATCH_THREADS = config('INTENTMATCH_THREADS', default=1, cast=int)
TORCH_NUM_THREADS = config('TORCH_NUM_THREADS', default=1, cast=int)

# Logging
LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
}
