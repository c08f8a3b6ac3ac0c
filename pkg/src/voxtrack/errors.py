"""Error types shared across the package."""


class ConfigurationError(Exception):
    """Invalid configuration: bad calibration, missing weights, mismatched shapes
    between a camera and its depth image, malformed config files."""


class DataError(Exception):
    """Invalid or missing input data at run time (frames, records, scene files)."""
