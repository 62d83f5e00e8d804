#!/usr/bin/env python3
"""Smoke test for the nsmech_py extension module.

Expects the bindings to be built already:

    cargo build -p nsmech-py

The script copies the shared object into a temp directory under its import
name and exercises each binding once.
"""

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

MASS = [[1.0, 0.0], [0.0, 1.0]]
JAC = [[-1.0, 1.0]]

SCENARIO = """
t_end = 0.9

[model]
name = "bouncing_ball"

[model.params]
gravity = 10.0
restitution = 0.5

[integrator]
method = "rk4"
step_size = 1e-3
"""


def find_lib():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libnsmech_py.so", "nsmech_py.so", "libnsmech_py.dylib")
    ]
    for path in candidates:
        if path.exists():
            return path
    raise SystemExit("bindings not built; run: cargo build -p nsmech-py")


def check_impact(nm):
    # Head-on elastic impact of equal masses: the velocities swap.
    res = nm.resolve_impact(mass=MASS, jacobian=JAC, qdot_minus=[1.0, 0.0], restitution=1.0)
    assert abs(res.qdot_plus[0]) < 1e-12, res.qdot_plus
    assert abs(res.qdot_plus[1] - 1.0) < 1e-12, res.qdot_plus
    assert abs(res.gamma - 1.0) < 1e-9
    assert res.multipliers_unique
    assert res.feasible is None  # scalar law carries no certificate


def check_operators(nm):
    ops = nm.projection_operators(mass=MASS, jacobian=JAC)
    assert ops.rank == 1
    p = ops.p
    # Idempotent, and annihilates the constraint row.
    pp = [[sum(p[i][k] * p[k][j] for k in range(2)) for j in range(2)] for i in range(2)]
    assert all(abs(pp[i][j] - p[i][j]) < 1e-12 for i in range(2) for j in range(2))
    a_p = [sum(JAC[0][i] * p[i][j] for i in range(2)) for j in range(2)]
    assert all(abs(x) < 1e-12 for x in a_p)


def check_feasibility(nm):
    rep = nm.check_restitution(mass=MASS, jacobian=JAC, restitution_matrix=[[1.2]])
    assert not rep.feasible
    assert abs(rep.qmi_eigenvalue - 0.22) < 1e-12, rep.qmi_eigenvalue
    assert abs(rep.q[0][0] - 0.5) < 1e-9, rep.q

    try:
        nm.resolve_impact(
            mass=MASS, jacobian=JAC, qdot_minus=[1.0, 0.0], restitution_matrix=[[1.2]]
        )
    except ValueError as e:
        assert "energetic consistency" in str(e), e
    else:
        raise AssertionError("overshooting restitution matrix must be refused")

    forced = nm.resolve_impact(
        mass=MASS,
        jacobian=JAC,
        qdot_minus=[1.0, 0.0],
        restitution_matrix=[[1.2]],
        allow_inconsistent=True,
    )
    assert forced.feasible is False
    assert forced.w_loss > 0.0  # the forced law pumps energy in


def check_scenario(nm):
    run = nm.run_scenario(SCENARIO)
    assert abs(run.t_final - 0.9) < 1e-9
    assert run.impacts >= 1
    assert run.total_w_loss < 0.0
    assert len(run.q_final) == 1 and len(run.qdot_final) == 1


def check_verify(nm):
    ok, report = nm.verify("impacts", seed=3, count=50)
    assert ok, report
    assert "PASS" in report


def main():
    lib = find_lib()
    with tempfile.TemporaryDirectory() as td:
        shutil.copy2(lib, Path(td) / "nsmech_py.so")
        sys.path.insert(0, td)
        import nsmech_py as nm

        check_impact(nm)
        check_operators(nm)
        check_feasibility(nm)
        check_scenario(nm)
        check_verify(nm)
    print("smoke test passed")


if __name__ == "__main__":
    main()
