"""Exception hierarchy shared across the engine."""


class VLMTeamError(Exception):
    """Base class for every error raised by this package."""


class ParseError(VLMTeamError):
    pass


class ValidationError(VLMTeamError):
    pass


class UnknownObject(VLMTeamError, KeyError):
    pass


class EmptyIntersection(VLMTeamError):
    pass


class OutOfBounds(VLMTeamError):
    pass


class TransportError(VLMTeamError):
    pass


class ReplayMiss(VLMTeamError):
    pass


class OracleError(VLMTeamError):
    pass


class ParseExhausted(VLMTeamError):
    def __init__(self, role, attempts, last_error):
        super().__init__(f"{role}: {attempts} malformed replies, last error: {last_error}")
        self.role = role
        self.attempts = attempts
        self.last_error = last_error


class StageOrderViolation(VLMTeamError):
    pass


class PlanNotApproved(VLMTeamError):
    def __init__(self, last_feedback):
        super().__init__(f"plan not approved; last feedback: {last_feedback}")
        self.last_feedback = last_feedback


class NotApproved(VLMTeamError):
    pass


class GroundingExhausted(VLMTeamError):
    """Raised when a target's grounding loop runs out of budget.

    ``state`` carries the best box found so far with ``approved=False``.
    """

    def __init__(self, target, state, reason="max_iters reached"):
        super().__init__(f"grounding of {target!r} exhausted: {reason}")
        self.target = target
        self.state = state
        self.reason = reason


class PointOutsideBox(VLMTeamError):
    pass


class MissingActionPoint(VLMTeamError):
    pass


class CalibrationError(VLMTeamError):
    pass


class GoalInsideObject(VLMTeamError):
    pass


class UnknownBinding(VLMTeamError):
    pass


class NotACircle(VLMTeamError):
    pass


class PlacementFailure(VLMTeamError):
    pass


class NoPath(VLMTeamError):
    pass


class StartOrGoalBlocked(VLMTeamError):
    pass


class Unreachable(VLMTeamError):
    pass


class UnknownSetting(VLMTeamError):
    pass


class UnlabeledFixture(VLMTeamError):
    pass


class ConfigError(VLMTeamError):
    pass
