import pytest

from wallplan import reference_mission_path
from wallplan.mission import AgentKind, AgentSpec, Brick, Color, MissionSpec, load_mission


def brick(bid, color=Color.BLUE, layer=0, x=0.0, supports=(), pile=(5.0, 0.0), length=0.6, y=5.0):
    return Brick(bid, color, length, 0.2, 0.2, pile, (x, y, 0.1 + 0.2 * layer, 0.0), layer, tuple(supports))


def uav(aid="uav1", speed=2.0, rate=1.0):
    return AgentSpec(aid, AgentKind.UAV, speed, rate)


def ugv(aid="ugv1", speed=0.5, rate=0.2, reach=1.5):
    return AgentSpec(aid, AgentKind.UGV, speed, rate, reach_height=reach)


@pytest.fixture
def stacked():
    """Two blue bricks on top of each other, one UAV."""
    return MissionSpec((brick("B1.1"), brick("B2.1", layer=1, supports=("B1.1",))), (uav(),))


@pytest.fixture
def orange_spec():
    b1 = brick("B1.1", Color.ORANGE, length=1.2, pile=(2.0, 0.0), y=4.0)
    b2 = brick("B1.2", Color.BLUE, x=1.2, pile=(0.0, -2.0), y=4.0)
    return MissionSpec((b1, b2), (uav("uav1", 2.0), uav("uav2", 1.5), ugv(reach=1.0)))


@pytest.fixture(scope="session")
def reference_spec():
    return load_mission(reference_mission_path())
