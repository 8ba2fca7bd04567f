"""The shipped regression suite, built with the case stack."""

from __future__ import annotations

from harness.caseengine import CaseStack, define_case, generate_suite

BASE_CASE = {
    "m": 16, "n": 16, "p": 16,
    "num_equations": 8,
    "t_steps": 6,
    "cfl": 0.3,
    "velocity_x": 1.0, "velocity_y": 0.5, "velocity_z": 0.25,
}


def _base(stack: CaseStack):
    stack.push("3D advection", BASE_CASE)


def alter_grids(stack):
    _base(stack)
    for m, n, p in [(8, 8, 8), (16, 16, 16), (24, 24, 24), (32, 16, 8), (8, 16, 32)]:
        yield define_case(stack, f"grid={m}x{n}x{p}", {"m": m, "n": n, "p": p})
    stack.pop()


def alter_equations(stack):
    _base(stack)
    for neq in (1, 2, 4, 10):
        yield define_case(stack, f"num_equations={neq}", {"num_equations": neq})
    stack.pop()


def alter_velocity(stack):
    _base(stack)
    variants = [
        ("+x", (1.0, 0.0, 0.0)),
        ("-y", (0.0, -1.0, 0.0)),
        ("+z", (0.0, 0.0, 1.0)),
        ("diagonal", (1.0, 1.0, 1.0)),
        ("-diagonal", (-1.0, -0.5, -0.75)),
        ("at rest", (0.0, 0.0, 0.0)),
    ]
    for label, (vx, vy, vz) in variants:
        yield define_case(stack, f"velocity {label}",
                          {"velocity_x": vx, "velocity_y": vy, "velocity_z": vz})
    stack.pop()


def alter_ranks(stack):
    _base(stack)
    for grid in (16, 24):
        stack.push(f"grid={grid}^3", {"m": grid, "n": grid, "p": grid})
        for nranks in (1, 2, 8):
            yield define_case(stack, f"nranks={nranks}", {"nranks": nranks})
        stack.pop()
    stack.pop()


def alter_time_stepping(stack):
    _base(stack)
    for cfl in (0.1, 0.2):
        stack.push(f"cfl={cfl}", {"cfl": cfl})
        for steps in (1, 12):
            yield define_case(stack, f"t_steps={steps}", {"t_steps": steps})
        stack.pop()
    stack.pop()


def alter_build_options(stack):
    _base(stack)
    stack.push("case optimization", {"case_optimization": True})
    yield define_case(stack, "8 equations", {})
    yield define_case(stack, "4 equations", {"num_equations": 4})
    stack.pop()
    yield define_case(stack, "rdma_mpi", {"rdma_mpi": True, "nranks": 8})
    stack.pop()


DEFAULT_REGISTRY = [
    alter_grids,
    alter_equations,
    alter_velocity,
    alter_ranks,
    alter_time_stepping,
    alter_build_options,
]


def default_suite(echo=None):
    return generate_suite(DEFAULT_REGISTRY, echo=echo)
