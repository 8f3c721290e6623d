import numpy as np
import pytest

from shapemip.geometry import TriMesh, farthest_point_sampling, geodesic_distances
from shapemip.model import ProblemData
from shapemip.polyhedra import build_polyhedra
from shapemip.shapes import blob


def self_match_data(u=4, mesh=None, single_point=True, mask=None, seed=0):
    """X = Y with identical FPS control points; polyhedra on the same mesh."""
    m = blob(1) if mesh is None else mesh
    ctrl = farthest_point_sampling(m.graph, u, seed=seed)
    polys = build_polyhedra(m, ctrl, single_point=single_point)
    g = geodesic_distances(m.graph, ctrl)[:, ctrl]
    return ProblemData(m, ctrl, polys, mask, g, g)


def one_face_data():
    m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    polys = build_polyhedra(m, np.array([0]), single_point=True)
    return ProblemData(m, np.array([0]), polys)


@pytest.fixture
def small_self_match():
    return self_match_data(4)


# ------------------------------------------------------------- acceptance report

ACCEPTANCE = {}  # criterion number -> one-line detail, filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            name = getattr(rep, "nodeid", "").split("::")[-1]
            if not name.startswith("test_criterion_") or (status != "error" and rep.when != "call"):
                continue
            n = int(name.split("_")[2])
            lines[n] = "PASS" if status == "passed" else "FAIL"
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(f"criterion {n}: {lines[n]}  {ACCEPTANCE.get(n, '')}")
