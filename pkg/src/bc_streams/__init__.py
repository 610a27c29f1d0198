"""
Historical Streams in Bibliographic-Coupling Networks

Builds bibliographic-coupling networks from time-stamped publication
corpora, partitions them by weighted modularity, links the per-window
communities into streams and compares the resulting temporal partitions.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("bc-streams")
except PackageNotFoundError:
    __version__ = "0.0.0+unknown"
