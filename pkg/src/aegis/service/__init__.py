from .runtime import AegisRuntime, Alert, AlertStatus, OperationMode
from .app import create_app

__all__ = ["AegisRuntime", "Alert", "AlertStatus", "OperationMode", "create_app"]
