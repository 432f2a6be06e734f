__version__ = "0.1.0"


def get_lewis_version():
    """Returns the toolkit version."""
    return __version__
