"""State-augmented primal-dual power control for interference networks."""

from sarrm.errors import ConfigError, DomainError, NumericError, SarrmError, StateError

__all__ = ["ConfigError", "DomainError", "NumericError", "SarrmError", "StateError"]
__version__ = "0.1.0"
