# ABOUTME: qlrnn package initialization
# ABOUTME: Exposes version information from package metadata

"""qlrnn - QL-LSTM recurrent sequence models with LSTM/GRU/BiLSTM baselines."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("qlrnn")
except PackageNotFoundError:
    # Package not installed (running from source without install)
    __version__ = "0.0.0.dev"

__all__ = ["__version__"]
