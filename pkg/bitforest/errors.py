# bitforest/errors.py
from typing import Optional


class BitforestError(Exception):
    """Base class for every error raised by bitforest."""


class ParameterError(BitforestError, ValueError):
    pass


class ConfigError(BitforestError, ValueError):
    pass


class SchemaError(BitforestError, ValueError):
    """A record or feature refers to a dimension the schema does not know."""


class RegistrationError(BitforestError):
    pass


class IngestionError(BitforestError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FeatureLookupError(BitforestError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown feature"


class StateError(BitforestError):
    pass


class TokenError(BitforestError):
    pass


class EncodingError(TokenError, ValueError):
    pass


class PersistenceError(BitforestError):
    pass


class IntegrityError(PersistenceError):
    pass
