"""Root reconstruction for a GC-biased 4-state broadcast channel on d-ary trees."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
