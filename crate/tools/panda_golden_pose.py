"""Chained-transform oracle for the Panda model file.

Multiplies the modified-DH link transforms symbolically (sympy), one joint at
a time, then substitutes a joint vector and prints the end-effector pose.
Used to freeze golden poses into the Rust test-suite.

    python3 tools/panda_golden_pose.py [q0 ... q6]
"""
import sys

import sympy as sp

try:
    import tomllib
except ImportError:  # pragma: no cover
    import tomli as tomllib


def rot_x(a):
    return sp.Matrix([[1, 0, 0, 0], [0, sp.cos(a), -sp.sin(a), 0], [0, sp.sin(a), sp.cos(a), 0], [0, 0, 0, 1]])


def rot_z(a):
    return sp.Matrix([[sp.cos(a), -sp.sin(a), 0, 0], [sp.sin(a), sp.cos(a), 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])


def trans(x, y, z):
    return sp.Matrix([[1, 0, 0, x], [0, 1, 0, y], [0, 0, 1, z], [0, 0, 0, 1]])


def main():
    with open("models/panda.toml", "rb") as fh:
        model = tomllib.load(fh)
    joints = model["joints"]
    qs = sp.symbols(f"q0:{len(joints)}")
    chain = sp.eye(4)
    for row, q in zip(joints, qs):
        link = rot_x(sp.nsimplify(row["alpha"], [sp.pi], tolerance=1e-12)) * trans(
            sp.nsimplify(row["a"]), 0, 0
        ) * rot_z(q + row["theta_offset"]) * trans(0, 0, sp.nsimplify(row["d"]))
        chain = chain * link
    chain = chain * sp.Matrix(model["tool"]["matrix"])
    values = [float(v) for v in sys.argv[1:]] or [0.0] * len(joints)
    pose = chain.subs(dict(zip(qs, values))).evalf(20)
    for r in range(3):
        print(" ".join(f"{float(pose[r, c]):.15e}" for c in range(4)))


if __name__ == "__main__":
    main()
