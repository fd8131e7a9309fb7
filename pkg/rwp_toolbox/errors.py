"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class RwpError(Exception):
    """Base class for every error raised by rwp-toolbox."""

    exit_code = 1


class ConfigurationError(RwpError):
    """A model, dataset, rule or experiment description is invalid.

    *field* names the offending setting (``train.batch_size``,
    ``layer_sizes`` ...) when one is known.
    """

    exit_code = 2

    def __init__(self, message: str, *, field: str | None = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericError(RwpError):
    """A NaN or infinity showed up in an activation, loss or update."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        *,
        layer_index: int | None = None,
        side: str | None = None,
    ) -> None:
        self.layer_index = layer_index
        self.side = side
        parts = [message]
        if layer_index is not None:
            parts.append(f"layer {layer_index}")
        if side is not None:
            parts.append(f"evaluation {side}")
        super().__init__(" | ".join(parts))


class DegenerateGradientError(RwpError):
    """The gradient norm is too small to define an ascent direction."""

    def __init__(self, norm: float, tol: float) -> None:
        self.norm = norm
        self.tol = tol
        super().__init__(f"gradient norm {norm:.3e} <= {tol:.1e}")


class IngestionError(RwpError):
    """A data or checkpoint file could not be parsed."""

    exit_code = 4


class EvaluationError(RwpError):
    """One of the two concurrent gradient evaluations failed."""

    def __init__(self, side: str, cause: BaseException) -> None:
        self.side = side
        self.cause = cause
        super().__init__(f"gradient evaluation {side} failed: {cause!r}")
