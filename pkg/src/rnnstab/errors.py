"""Exception hierarchy shared by all rnnstab modules."""


class RnnStabError(Exception):
    """Base class for every error raised by this package."""


class AssumptionViolated(RnnStabError):
    """A sigmoid fails the monotone / 1-Lipschitz / bounded premise."""


class NonConvergence(RnnStabError):
    pass


class BracketingFailure(RnnStabError):
    pass


class CertificationFailed(RnnStabError):
    """A sector inequality could not be certified.

    The failing :class:`~rnnstab.sigmoid.CertReport` is attached as ``report``
    so callers can inspect the witness point.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DimensionMismatch(RnnStabError, ValueError):
    pass


class ParseError(RnnStabError, ValueError):
    pass


class EigenFailure(RnnStabError):
    pass


class NotSchur(RnnStabError, ValueError):
    pass


class Infeasible(RnnStabError):
    """An LMI program has no solution at the strictness margin.

    ``lemma`` names the structural result explaining the infeasibility
    (``"Lemma 2"``, ``"Lemma 5"``, ``"Lemma 6"``) when one applies.
    """

    def __init__(self, message, lemma=None, result=None):
        super().__init__(message)
        self.lemma = lemma
        self.result = result


class NumericalFailure(RnnStabError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class NoFeasibleUpperBound(RnnStabError):
    pass


class UnsupportedObjective(RnnStabError):
    pass


class IllConditioned(RnnStabError):
    pass


class EchoStateViolation(RnnStabError):
    pass
