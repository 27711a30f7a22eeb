"""Force- and vision-feedback manipulation skills on a deterministic simulated robot."""

__version__ = "0.1.0"
