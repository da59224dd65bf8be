"""Shared error types; the CLI maps these onto exit codes."""


class DataError(ValueError):
    """Invalid or inconsistent input data (exit code 2)."""


class EmptySceneError(DataError):
    """Thresholding left no occupied voxels."""
