"""Valores por defecto del motor, leídos de forma perezosa de ``settings.SMOOTH_RASTER``."""
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

DEFAULTS = {
    'DEFAULT_RESOLUTION': (256, 256),
    'BAND_WIDTH': 3.0,
    'RESIDUAL_TARGET': 1e-5,
    'ITERATIONS': 10000,
    'MULTIGRID_LEVELS': 4,
    'OVERLAP_MODE': 'average',
}


def raster_settings():
    user = getattr(settings, 'SMOOTH_RASTER', {})
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ImproperlyConfigured(f"Unknown SMOOTH_RASTER keys: {sorted(unknown)}")
    return {**DEFAULTS, **user}


def setting(name):
    return raster_settings()[name]
