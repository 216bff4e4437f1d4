"""
Configuración de Django para el rasterizador de gráficos vectoriales suaves.

El proyecto no expone HTTP: Django aloja la app `raster`, sus comandos de
gestión (render, stats, validate) y los serializers de DRF que validan las
escenas.

Lista completa de opciones y sus valores:
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path

# Rutas dentro del proyecto: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Solo la usa Django internamente; aquí no se firma ni se sirve nada.
SECRET_KEY = 'smooth-raster-local-only'

DEBUG = False

ALLOWED_HOSTS = []


# Definición de la aplicación

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'config.raster',
]

# Sin modelos: el motor lee archivos y escribe archivos.
DATABASES = {}

USE_TZ = True

TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ---- Django REST Framework ----
# Los serializers se usan sueltos (lectura de escenas y listados de depuración).
REST_FRAMEWORK = {
    'COERCE_DECIMAL_TO_STRING': False,
    'UNICODE_JSON': True,
}

# ---- Logging ----
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'console': {
            'format': '{levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'console',
        },
    },
    'loggers': {
        'config.raster': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}

# ---- Valores por defecto del rasterizador ----
# La escena los sobrescribe; las opciones de línea de comandos sobrescriben ambos.
SMOOTH_RASTER = {
    'DEFAULT_RESOLUTION': (256, 256),
    'BAND_WIDTH': 3.0,
    'RESIDUAL_TARGET': 1e-5,
    'ITERATIONS': 10000,
    'MULTIGRID_LEVELS': 4,
    'OVERLAP_MODE': 'average',
}
