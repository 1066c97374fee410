"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GsplatMPMError(Exception):
    """Base class for every error raised by gsplatmpm."""


# -- input / parsing ---------------------------------------------------------


class PlyError(GsplatMPMError, ValueError):
    """Malformed or unsupported PLY data."""


class PlyHeaderError(PlyError):
    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"PLY header line {line_no} ({line!r}): {reason}")


class PlyLengthError(PlyError):
    pass


class PlySchemaError(PlyError):
    def __init__(self, missing: list[str], message: str | None = None):
        self.missing = list(missing)
        if message is None:
            message = "missing required vertex properties: " + ", ".join(self.missing)
        super().__init__(message)


class ValidationError(GsplatMPMError, ValueError):
    """A value violates a documented invariant."""


# -- simulation runtime ------------------------------------------------------


class SimulationError(GsplatMPMError, RuntimeError):
    """Raised from inside a simulation step. The step is rolled back first."""

    def __init__(self, message: str, particle: int | None = None, step: int | None = None):
        self.particle = particle
        self.step = step
        self.reason = message
        super().__init__(self._format())

    def _format(self) -> str:
        parts = [self.reason]
        if self.particle is not None:
            parts.append(f"particle={self.particle}")
        if self.step is not None:
            parts.append(f"step={self.step}")
        return " ".join(parts) if len(parts) == 1 else f"{parts[0]} ({', '.join(parts[1:])})"

    def at_step(self, step: int) -> "SimulationError":
        self.step = step
        self.args = (self._format(),)
        return self


class DomainEscapeError(SimulationError):
    pass


class InvertedElementError(SimulationError):
    pass


class CFLViolationError(SimulationError):
    pass


# -- 4D sequences ------------------------------------------------------------


class SequenceError(GsplatMPMError):
    pass


class FormatVersionError(SequenceError):
    pass
