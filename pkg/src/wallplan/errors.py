"""Exception hierarchy shared across the planner."""


class PlanningError(Exception):
    """Base class for every error raised by wallplan."""


class InvalidMission(PlanningError, ValueError):
    pass


class EmptyWall(InvalidMission):
    pass


class NoEligibleAgent(InvalidMission):
    pass


class UnknownAction(PlanningError, KeyError):
    pass


class BadWeights(PlanningError, ValueError):
    pass


class BadDelta(PlanningError, ValueError):
    pass


class EmptyAgentSet(PlanningError, ValueError):
    pass


class InfeasibleTask(PlanningError):
    pass


class InfeasibleDimensions(PlanningError, ValueError):
    pass


class NotComplexlyRedundant(PlanningError, ValueError):
    pass


class TooFewAgents(PlanningError, ValueError):
    pass


class Deadlock(PlanningError):
    def __init__(self, message: str, blocked=(), cycle=()):
        super().__init__(message)
        self.blocked = tuple(blocked)
        self.cycle = tuple(cycle)


class CoordinationTimeout(PlanningError):
    pass


class TooLarge(PlanningError, ValueError):
    pass


class UnsupportedJointTask(PlanningError, ValueError):
    pass
