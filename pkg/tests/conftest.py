import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_plane(extent=10.0, spacing=0.1, z=0.0):
    """Regular xy grid at constant height, (n, 3)."""
    g = np.arange(0.0, extent + 1e-9, spacing)
    x, y = np.meshgrid(g, g)
    return np.column_stack([x.ravel(), y.ravel(), np.full(x.size, z)])


def box_scene_points(seed=0, density=30.0):
    """Random samples on a 20 m ground square and four boxes of different
    sizes; the asymmetric layout pins down every rigid degree of freedom."""
    rng = np.random.default_rng(seed)
    parts = []

    def rect(o, u, v):
        n = int(np.linalg.norm(u) * np.linalg.norm(v) * density)
        a, b = rng.random((2, n))
        parts.append(o + a[:, None] * u + b[:, None] * v)

    rect(np.zeros(3), np.array([20.0, 0, 0]), np.array([0, 20.0, 0]))
    for x, y, w, d, h in [(2, 3, 4, 3, 3), (12, 4, 3, 5, 6), (6, 13, 6, 3, 2), (15, 14, 2, 2, 4)]:
        o = np.array([x, y, 0.0])
        ex, ey, ez = np.array([w, 0, 0.0]), np.array([0, d, 0.0]), np.array([0, 0, float(h)])
        rect(o, ex, ez)
        rect(o + ey, ex, ez)
        rect(o, ey, ez)
        rect(o + ex, ey, ez)
        rect(o + ez, ex, ey)
    return np.vstack(parts)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(lines):
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else ""))
