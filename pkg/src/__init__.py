"""
corss-stream - streaming blind source separation for multichannel EMG.
Потоковое слепое разделение источников для многоканальной ЭМГ.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("corss-stream")
except PackageNotFoundError:
    __version__ = "0.0.0.dev0"

__all__ = [
    "__version__",
]
