from django.apps import AppConfig


class DiffcoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'diffcore'
