from django.apps import AppConfig


class RasterConfig(AppConfig):
    name = 'config.raster'
    label = 'raster'
    verbose_name = 'Smooth vector graphics rasterizer'
