"""Exception hierarchy shared by all modules.

Every error carries a ``module`` tag so the command line can print
module-tagged diagnostics and pick an exit code.
"""

from __future__ import annotations


class ForgeError(Exception):
    module = "core"
    hard = True


# logic
class LogicError(ForgeError):
    module = "logic"


class ParseError(LogicError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class NotACode(LogicError):
    pass


class NotWellFormed(LogicError):
    pass


class NotEncodable(LogicError):
    pass


class NotPi01(LogicError):
    pass


class UnassignedVariable(LogicError):
    pass


class PrecisionExhausted(LogicError):
    pass


# schedule
class ScheduleError(ForgeError):
    module = "schedule"


class RelaxedViolation(ScheduleError):
    hard = False

    def __init__(self, failed: list[str]):
        super().__init__("relaxed requirements failed: " + ", ".join(failed))
        self.failed = list(failed)


class InconsistentOverride(ScheduleError):
    pass


class GrowthTooSlow(ScheduleError):
    pass


class PremiseViolated(ScheduleError):
    pass


# words
class WordsError(ForgeError):
    module = "odometer_words"


class SearchExhausted(WordsError):
    def __init__(self, attempts: int, best_deviation):
        super().__init__(f"no valid substitution after {attempts} attempts "
                         f"(best deviation {best_deviation})")
        self.attempts = attempts
        self.best_deviation = best_deviation


class CapacityExceeded(WordsError):
    pass


class SubordinationImpossible(WordsError):
    pass


class PreconditionViolated(WordsError):
    pass


# circular
class CircularError(ForgeError):
    module = "circular"


class NotCoprime(CircularError):
    pass


class LengthMismatch(CircularError):
    pass


# symbolic
class SymbolicError(ForgeError):
    module = "symbolic"


class NotParseable(SymbolicError):
    pass


class AmbiguousParse(SymbolicError):
    pass


class ClosureViolated(SymbolicError):
    pass


class Undeterminable(SymbolicError):
    pass


# torus
class TorusError(ForgeError):
    module = "torus"


class CountMismatch(TorusError):
    pass


class GateUnreachable(TorusError):
    def __init__(self, message: str, achieved):
        super().__init__(message)
        self.achieved = achieved


class PrecisionMismatch(TorusError):
    pass


# cli
class MissingArtifact(ForgeError):
    module = "cli"
