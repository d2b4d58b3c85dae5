from .config import AppConfig, DEFAULT_DISCLAIMER, load_config
from .service import create_app, serve
from .store import SessionStore

__all__ = [
    "AppConfig",
    "DEFAULT_DISCLAIMER",
    "SessionStore",
    "create_app",
    "load_config",
    "serve",
]
