# 暴露 settings / configure_logging
from .settings import settings, configure_logging  # noqa: F401
