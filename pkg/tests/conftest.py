import numpy as np
import pytest

from driftcorner.planner import plan_pretrajectory
from driftcorner.track import build_library_track


@pytest.fixture(scope="session")
def uturn():
    return build_library_track("uturn")


@pytest.fixture(scope="session")
def right_angle():
    return build_library_track("right_angle")


@pytest.fixture(scope="session")
def all_tracks(uturn, right_angle):
    return {
        "uturn": uturn,
        "right_angle": right_angle,
        "turn_135": build_library_track("turn_135"),
    }


@pytest.fixture(scope="session")
def uturn_pretraj(uturn):
    return plan_pretrajectory(uturn)


@pytest.fixture(scope="session")
def uturn_preview8(uturn, uturn_pretraj):
    """Non-drift preview: path tracker capped at 8 m/s, matched plant."""
    import dataclasses

    from driftcorner.baseline import BaselineTracker
    from driftcorner.fusion import generate_preview
    from driftcorner.plant import TireParams, VehicleParams

    slow = dataclasses.replace(uturn_pretraj,
                               v_d=np.minimum(uturn_pretraj.v_d, 8.0))
    tracker = BaselineTracker(uturn, slow)
    return generate_preview(tracker, VehicleParams(), TireParams(),
                            uturn, uturn_pretraj, v_ini=8.0,
                            track_id="uturn")


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
