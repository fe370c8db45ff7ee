"""Exception hierarchy. The CLI maps each class to a process exit code."""


class TriageError(Exception):
    """Base class for every error raised by the pipeline."""

    exit_code = 3


class ConfigError(TriageError):
    """Invalid configuration file, option or argument."""

    exit_code = 1


class DataError(TriageError):
    """Input data violates a documented schema or invariant."""

    exit_code = 2


class NotFoundError(DataError):
    pass


class SchemaMismatchError(DataError):
    """Feature columns differ from the columns a model was trained on."""

    def __init__(self, missing, extra):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = []
        if self.missing:
            parts.append(f"missing columns: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"extra columns: {', '.join(self.extra)}")
        super().__init__("Feature schema mismatch (" + "; ".join(parts) + ")")


class SingleClassError(DataError):
    """Training labels contain a single class."""


class InsufficientFollowUpError(DataError):
    """The store does not extend far enough past a date to observe outcomes."""

    def __init__(self, needed_until, extraction_date):
        self.shortfall_days = (needed_until - extraction_date).days
        super().__init__(
            f"Store ends {extraction_date.isoformat()}, outcomes need data through "
            f"{needed_until.isoformat()} ({self.shortfall_days} days short)"
        )
