import numpy as np
import pytest

from crossfield.channel import sample_paths
from crossfield.geometry import PlacedArray, Pose, build_wsms, wavelength_from_ghz

LAMBDA = wavelength_from_ghz(300.0)


def random_scene(seed, tx_geo, rx_geo, distance=None, n_nlos=1):
    """Rx facing the Tx from a random direction, scatterers beside the link."""
    rng = np.random.default_rng(seed)
    distance = rng.uniform(0.5, 20.0) if distance is None else distance
    az, el = rng.uniform(-0.6, 0.6), rng.uniform(-0.3, 0.3)
    c, s = np.cos(az), np.sin(az)
    ry = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    c, s = np.cos(-el), np.sin(-el)
    rx_ = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    rot = ry @ rx_
    origin = rot @ np.array([0.0, 0.0, distance])
    tx_pose = Pose.identity()
    rx_pose = Pose(origin, rot @ np.diag([-1.0, 1.0, -1.0]))
    mid = origin / 2
    box = (mid + distance * np.array([0.1, -0.1, -0.25]), mid + distance * np.array([0.4, 0.1, 0.25]))
    paths = sample_paths(seed, n_nlos, tx_pose, rx_pose, box)
    return PlacedArray(tx_geo, tx_pose), PlacedArray(rx_geo, rx_pose), paths


@pytest.fixture
def small_wsms():
    # 2x2 subarrays of 4x4 elements
    return build_wsms(2, 2, 4, 4, 0.5, 8.0, LAMBDA)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
