"""
Django settings for the DialogueTagger project.

The project has no web surface: Django provides the management-command CLI,
the logging configuration and the test runner. The only environment
variable read is TAGGER_LOG_LEVEL.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

TAGGER_LOG_LEVEL = os.getenv('TAGGER_LOG_LEVEL', 'INFO').upper()

# Nothing is signed; Django still expects a value.
SECRET_KEY = 'dialogue-tagger-unused'

DEBUG = False

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'tagger',
]

# No models, no database.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Logging goes to stderr; stdout carries command results.
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'timestamped': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'timestamped',
        },
    },
    'loggers': {
        'tagger': {
            'handlers': ['console'],
            'level': TAGGER_LOG_LEVEL,
            'propagate': False,
        },
    },
}
