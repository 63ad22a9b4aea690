"""Digital twins of manufacturing lines on a GALS (globally asynchronous,
locally synchronous) execution kernel."""
from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path of a file shipped in ``galstwin/data``."""
    return Path(str(resources.files(__name__).joinpath("data", name)))
