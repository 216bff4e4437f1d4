import logging
import os
from pathlib import Path

import django
import pytest

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')
django.setup()

SCENES = Path(__file__).resolve().parent / 'scenes'


@pytest.fixture
def scene_path():
    def path(name):
        return str(SCENES / f'{name}.json')
    return path


@pytest.fixture
def raster_logs(caplog, monkeypatch):
    """caplog sobre el logger del motor, que no propaga hacia la raíz."""
    monkeypatch.setattr(logging.getLogger('config.raster'), 'propagate', True)
    caplog.set_level(logging.INFO, logger='config.raster')
    return caplog


@pytest.fixture
def load_fixture():
    from config.raster.scene import load_scene

    def load(name, **overrides):
        return load_scene(SCENES / f'{name}.json').with_settings(**overrides)
    return load
