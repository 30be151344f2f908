"""Exception hierarchy shared across the library.

The CLI maps these onto process exit codes: usage errors (plain ValueError)
exit 1, CcnError subclasses below exit 2, DivergenceError exits 3.
"""


class CcnError(Exception):
    """Base class for library errors."""


class ShapeError(CcnError):
    """Tensor dimensions do not line up for the requested operation."""


class VocabError(CcnError):
    """A token id falls outside the model vocabulary."""


class MaskError(CcnError):
    """An attention query row has no allowed key (softmax over empty support)."""


class DataError(CcnError):
    """Corpus/batch level problem: empty input, misaligned files, oversized sentence."""


class DeterminismError(CcnError):
    """A function handed to the gradient checker returned different values on repeat evaluation."""


class DivergenceError(CcnError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
