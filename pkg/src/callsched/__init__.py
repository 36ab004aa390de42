"""Dynamic scheduling laboratory for multiclass many-server queues."""

__version__ = "0.1.0"
