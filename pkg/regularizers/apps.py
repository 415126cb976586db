from django.apps import AppConfig


class RegularizersConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'regularizers'
