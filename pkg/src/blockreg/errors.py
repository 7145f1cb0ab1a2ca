"""Exception types raised across the registration engine."""


class BlockregError(Exception):
    """Base class for all errors raised by blockreg."""


class GeometryError(BlockregError):
    """Invalid grid geometry, singular matrices, mismatched grids."""


class ParseError(BlockregError):
    """Malformed input file; the message names the offending field or line."""


class RankError(BlockregError):
    """Degenerate point configuration: a fit is underdetermined."""


class StageError(BlockregError):
    """A registration stage could not produce a usable result."""


class ValidationError(BlockregError):
    """Invalid configuration; collects every problem found, not just the first."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
