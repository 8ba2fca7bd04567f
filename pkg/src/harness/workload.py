"""Reference workload: multi-field 3D linear advection on a periodic unit cube.

First-order upwind finite volumes in space, three-stage SSP Runge-Kutta in
time. The global grid is block-decomposed over simulated ranks that each
carry a one-cell halo, refreshed by a bulk-synchronous exchange before every
right-hand-side evaluation.

Per-cell arithmetic depends only on the cell and its halo-filled neighbors,
so fields are bitwise identical for every decomposition. Global reductions
run on the gathered field in a fixed order.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from harness.goldens import GoldenFile
from harness.scaling import balanced_decomposition

RHS_EVALS_PER_STEP = 3
# SSP-RK3 stage weights in u0 + w*(u + dt*L(u) - u0) form; first stage is forward Euler
RK3_WEIGHTS = (1.0, 0.25, 2.0 / 3.0)
VELOCITY_EPS = 1e-30
PROBES_PER_AXIS = 8
DEFAULT_EQUATIONS = 8

_TRUE = {"t", "true", "1", "yes"}
_FALSE = {"f", "false", "0", "no"}


class WorkloadConfigError(ValueError):
    pass


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        if value.strip().lower() in _TRUE:
            return True
        if value.strip().lower() in _FALSE:
            return False
    raise WorkloadConfigError(f"cannot interpret {value!r} as a boolean")


@dataclass(frozen=True)
class WorkloadCase:
    m: int = 32
    n: int = 32
    p: int = 32
    num_equations: int = DEFAULT_EQUATIONS
    t_steps: int = 10
    cfl: float = 0.3
    velocity: tuple[float, float, float] = (1.0, 0.5, 0.25)
    decomposition: tuple[int, int, int] = (1, 1, 1)
    rdma_mpi: bool = False
    case_optimization: bool = False

    def __post_init__(self):
        for name in ("m", "n", "p", "num_equations"):
            if getattr(self, name) < 1:
                raise WorkloadConfigError(f"{name} must be positive")
        if self.t_steps < 0:
            raise WorkloadConfigError("t_steps must be nonnegative")
        if not 0.0 < self.cfl < 1.0:
            raise WorkloadConfigError(f"cfl must lie in (0, 1), got {self.cfl}")
        if len(self.velocity) != 3 or len(self.decomposition) != 3:
            raise WorkloadConfigError("velocity and decomposition need three components")
        if min(self.decomposition) < 1:
            raise WorkloadConfigError("decomposition factors must be positive")
        for cells, parts, axis in zip(self.grid, self.decomposition, "xyz"):
            if cells % parts:
                raise WorkloadConfigError(
                    f"{parts} ranks along {axis} do not divide {cells} cells"
                )

    @property
    def grid(self) -> tuple[int, int, int]:
        return (self.m, self.n, self.p)

    @property
    def nranks(self) -> int:
        px, py, pz = self.decomposition
        return px * py * pz

    @property
    def cells(self) -> int:
        return self.m * self.n * self.p

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (1.0 / self.m, 1.0 / self.n, 1.0 / self.p)

    def dt(self) -> float:
        vmax = max(max(abs(v) for v in self.velocity), VELOCITY_EPS)
        return self.cfl * min(self.spacing) / vmax

    def with_ranks(self, nranks: int) -> "WorkloadCase":
        return self.replace(decomposition=balanced_decomposition(nranks))

    def replace(self, **changes) -> "WorkloadCase":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return WorkloadCase(**values)

    @classmethod
    def from_mapping(cls, data) -> "WorkloadCase":
        """Build a case from the flat case-file mapping.

        Velocity comes from ``velocity_x/y/z``; the decomposition from
        ``px/py/pz`` or, failing that, ``nranks`` via the balanced split.
        """
        data = dict(data)
        kwargs = {}
        try:
            for key in ("m", "n", "p", "num_equations", "t_steps"):
                if key in data:
                    kwargs[key] = _as_int(data.pop(key), key)
            if "cfl" in data:
                kwargs["cfl"] = float(data.pop("cfl"))
            default = cls.velocity
            if any(f"velocity_{a}" in data for a in "xyz"):
                kwargs["velocity"] = tuple(
                    float(data.pop(f"velocity_{a}", d)) for a, d in zip("xyz", default)
                )
            for key in ("rdma_mpi", "case_optimization"):
                if key in data:
                    kwargs[key] = parse_bool(data.pop(key))
            nranks = _as_int(data.pop("nranks"), "nranks") if "nranks" in data else None
            if any(k in data for k in ("px", "py", "pz")):
                decomp = tuple(_as_int(data.pop(k, 1), k) for k in ("px", "py", "pz"))
                if nranks is not None and nranks != decomp[0] * decomp[1] * decomp[2]:
                    raise WorkloadConfigError(f"nranks={nranks} disagrees with decomposition {decomp}")
                kwargs["decomposition"] = decomp
            elif nranks is not None:
                if nranks < 1:
                    raise WorkloadConfigError("nranks must be positive")
                kwargs["decomposition"] = balanced_decomposition(nranks)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, WorkloadConfigError):
                raise
            raise WorkloadConfigError(str(exc)) from None
        if data:
            raise WorkloadConfigError(f"unknown case parameters: {', '.join(sorted(data))}")
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        vx, vy, vz = self.velocity
        px, py, pz = self.decomposition
        return {
            "m": self.m, "n": self.n, "p": self.p,
            "num_equations": self.num_equations,
            "t_steps": self.t_steps,
            "cfl": self.cfl,
            "velocity_x": vx, "velocity_y": vy, "velocity_z": vz,
            "px": px, "py": py, "pz": pz,
            "rdma_mpi": self.rdma_mpi,
            "case_optimization": self.case_optimization,
        }


def _as_int(value, key) -> int:
    if isinstance(value, bool):
        raise WorkloadConfigError(f"{key} must be an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise WorkloadConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    return int(value)


@dataclass
class RankState:
    coords: tuple[int, int, int]
    offset: tuple[int, int, int]
    shape: tuple[int, int, int]
    q: np.ndarray  # (equations, mx+2, my+2, mz+2) with a one-cell halo

    @property
    def interior(self) -> np.ndarray:
        return self.q[:, 1:-1, 1:-1, 1:-1]


def bump_centers(num_equations: int) -> list[tuple[float, float, float]]:
    return [((0.3 + 0.05 * e) % 1.0, 0.5, 0.5) for e in range(num_equations)]


def initial_block(case: WorkloadCase, offset, shape) -> np.ndarray:
    axes = [
        (np.arange(o, o + s) + 0.5) / cells
        for o, s, cells in zip(offset, shape, case.grid)
    ]
    x = axes[0][:, None, None]
    y = axes[1][None, :, None]
    z = axes[2][None, None, :]
    out = np.empty((case.num_equations,) + tuple(shape))
    for e, (cx, cy, cz) in enumerate(bump_centers(case.num_equations)):
        out[e] = np.exp(-100.0 * ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2))
    return out


def rank_coords(decomposition):
    px, py, pz = decomposition
    return [(i, j, k) for i in range(px) for j in range(py) for k in range(pz)]


def init_state(case: WorkloadCase) -> list[RankState]:
    local = tuple(c // d for c, d in zip(case.grid, case.decomposition))
    states = []
    for coords in rank_coords(case.decomposition):
        offset = tuple(c * s for c, s in zip(coords, local))
        q = np.zeros((case.num_equations,) + tuple(s + 2 for s in local))
        q[:, 1:-1, 1:-1, 1:-1] = initial_block(case, offset, local)
        states.append(RankState(coords, offset, local, q))
    return states


def gather(states: list[RankState], grid) -> np.ndarray:
    neq = states[0].q.shape[0]
    out = np.empty((neq,) + tuple(grid))
    for s in states:
        (i, j, k), (mx, my, mz) = s.offset, s.shape
        out[:, i:i + mx, j:j + my, k:k + mz] = s.interior
    return out


def scatter(states: list[RankState], global_field: np.ndarray) -> None:
    for s in states:
        (i, j, k), (mx, my, mz) = s.offset, s.shape
        s.interior[...] = global_field[:, i:i + mx, j:j + my, k:k + mz]


def _layer(axis: int, index) -> tuple:
    sl = [slice(None)] * 4
    sl[axis + 1] = index
    return tuple(sl)


def halo_exchange(states: list[RankState]) -> None:
    """Fill all halo cells from periodic neighbors, corners included.

    Axes are exchanged in order x, y, z over the full extent of the other
    axes, so edge and corner halos pick up values relayed through faces.
    Each axis is one bulk step: every rank packs, then every rank unpacks.
    """
    by_coords = {s.coords: s for s in states}
    dims = [max(c[a] for c in by_coords) + 1 for a in range(3)]
    for axis in range(3):
        sends = {
            s.coords: (s.q[_layer(axis, 1)].copy(), s.q[_layer(axis, -2)].copy())
            for s in states
        }
        for s in states:
            lo = list(s.coords)
            hi = list(s.coords)
            lo[axis] = (lo[axis] - 1) % dims[axis]
            hi[axis] = (hi[axis] + 1) % dims[axis]
            s.q[_layer(axis, 0)] = sends[tuple(lo)][1]
            s.q[_layer(axis, -1)] = sends[tuple(hi)][0]


def _face_slices(axis: int):
    """(left, right) cell slices around every face along ``axis``."""
    left = [slice(None), slice(1, -1), slice(1, -1), slice(1, -1)]
    right = list(left)
    left[axis + 1] = slice(None, -1)
    right[axis + 1] = slice(1, None)
    return tuple(left), tuple(right)


def _diff_slices(axis: int):
    hi = [slice(None)] * 4
    lo = [slice(None)] * 4
    hi[axis + 1] = slice(1, None)
    lo[axis + 1] = slice(None, -1)
    return tuple(hi), tuple(lo)


def rhs(q: np.ndarray, velocity, spacing) -> np.ndarray:
    """Upwind flux divergence -div(v q) on the interior of a halo'd block."""
    tend = np.zeros((q.shape[0],) + tuple(s - 2 for s in q.shape[1:]))
    for axis in range(3):
        v = float(velocity[axis])
        vp, vm = max(v, 0.0), min(v, 0.0)
        left, right = _face_slices(axis)
        flux = vp * q[left] + vm * q[right]
        hi, lo = _diff_slices(axis)
        tend -= (flux[hi] - flux[lo]) / spacing[axis]
    return tend


class SpecializedKernel:
    """Same arithmetic as :func:`rhs`, with buffers fixed at construction.

    Bitwise identical to the generic path; only allocation differs.
    """

    def __init__(self, block_shape, velocity, spacing):
        self.block_shape = tuple(block_shape)
        neq, *halo = self.block_shape
        interior = tuple(s - 2 for s in halo)
        self.tend = np.empty((neq,) + interior)
        self.coeffs = []
        self.flux = []
        self.tmp = []
        self.delta = np.empty_like(self.tend)
        for axis in range(3):
            v = float(velocity[axis])
            self.coeffs.append((max(v, 0.0), min(v, 0.0), spacing[axis]))
            fshape = list((neq,) + interior)
            fshape[axis + 1] += 1
            self.flux.append(np.empty(fshape))
            self.tmp.append(np.empty(fshape))

    def __call__(self, q: np.ndarray) -> np.ndarray:
        tend, delta = self.tend, self.delta
        tend.fill(0.0)
        for axis in range(3):
            vp, vm, h = self.coeffs[axis]
            flux, tmp = self.flux[axis], self.tmp[axis]
            left, right = _face_slices(axis)
            np.multiply(vp, q[left], out=flux)
            np.multiply(vm, q[right], out=tmp)
            np.add(flux, tmp, out=flux)
            hi, lo = _diff_slices(axis)
            np.subtract(flux[hi], flux[lo], out=delta)
            np.divide(delta, h, out=delta)
            np.subtract(tend, delta, out=tend)
        return tend


def select_kernel(case: WorkloadCase) -> str:
    if case.case_optimization:
        return f"specialized[num_equations={case.num_equations}]"
    return "generic"


def rk3_stage(u0: np.ndarray, u: np.ndarray, tend: np.ndarray, dt: float, weight: float) -> np.ndarray:
    if weight == 1.0:
        return u + dt * tend
    return u0 + weight * (u + dt * tend - u0)


def ssp_rk3_step(f, u, dt):
    """One SSP-RK3 step of ``u' = f(u)`` for array or scalar ``u``."""
    u0 = u
    for weight in RK3_WEIGHTS:
        u = rk3_stage(u0, u, f(u), dt, weight)
    return u


@dataclass
class RunResult:
    wall_ns: int
    compute_ns: int
    comm_ns: int
    cells: int
    equations: int
    steps: int
    samples: GoldenFile
    conserved_totals: tuple[float, ...]
    rhs_evals_per_step: int = RHS_EVALS_PER_STEP
    total_rhs_evals: int = 0
    halo_exchanges: int = 0
    nranks: int = 1
    kernel: str = "generic"
    rdma_mpi: bool = False

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("samples")
        out["conserved_totals"] = list(self.conserved_totals)
        return out


class Solver:
    """Owns the rank states of one case and advances them in time."""

    def __init__(self, case: WorkloadCase, workers: int = 1):
        self.case = case
        self.states = init_state(case)
        self.kernel = select_kernel(case)
        if case.case_optimization:
            self._kernels = [
                SpecializedKernel(s.q.shape, case.velocity, case.spacing) for s in self.states
            ]
        else:
            self._kernels = [
                (lambda q, v=case.velocity, h=case.spacing: rhs(q, v, h)) for _ in self.states
            ]
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self.rhs_evals = 0
        self.halo_exchanges = 0
        self.compute_ns = 0
        self.comm_ns = 0

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def exchange(self):
        t0 = time.perf_counter_ns()
        halo_exchange(self.states)
        self.comm_ns += time.perf_counter_ns() - t0
        self.halo_exchanges += 1

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(*item) for item in items]
        return list(self._pool.map(lambda item: fn(*item), items))

    def step(self, dt: float):
        """One SSP-RK3 step: three halo exchanges and three RHS evaluations."""
        u0 = [s.interior.copy() for s in self.states]
        for weight in RK3_WEIGHTS:
            self.exchange()
            t0 = time.perf_counter_ns()

            def advance(state, kernel, base):
                tend = kernel(state.q)
                state.interior[...] = rk3_stage(base, state.interior, tend, dt, weight)

            self._map(advance, list(zip(self.states, self._kernels, u0)))
            self.compute_ns += time.perf_counter_ns() - t0
            self.rhs_evals += 1

    def run(self, steps: int | None = None, dt: float | None = None) -> int:
        """Advance ``steps`` steps; returns elapsed wall nanoseconds."""
        steps = self.case.t_steps if steps is None else steps
        dt = self.case.dt() if dt is None else dt
        t0 = time.perf_counter_ns()
        for _ in range(steps):
            self.step(dt)
        return time.perf_counter_ns() - t0

    def global_field(self) -> np.ndarray:
        return gather(self.states, self.case.grid)

    def set_global_field(self, values: np.ndarray) -> None:
        scatter(self.states, np.asarray(values, dtype=np.float64))

    def conserved_totals(self) -> tuple[float, ...]:
        g = self.global_field()
        return tuple(float(g[e].sum()) for e in range(g.shape[0]))


def probe_indices(cells: int) -> list[int]:
    return [a * cells // PROBES_PER_AXIS for a in range(PROBES_PER_AXIS)]


def sample_field(global_field: np.ndarray) -> GoldenFile:
    neq, m, n, p = global_field.shape
    ix, iy, iz = probe_indices(m), probe_indices(n), probe_indices(p)
    probes = global_field[:, ix][:, :, iy][:, :, :, iz]
    golden = GoldenFile()
    for e in range(neq):
        golden.add(f"q{e}", probes[e].ravel(order="F"))
    golden.add("conserved", [global_field[e].sum() for e in range(neq)])
    return golden


def sample_outputs(states: list[RankState], grid) -> GoldenFile:
    return sample_field(gather(states, grid))


def run_case(case: WorkloadCase, nranks: int | None = None, workers: int = 1) -> RunResult:
    if nranks is not None and nranks != case.nranks:
        raise WorkloadConfigError(
            f"nranks={nranks} does not match decomposition {case.decomposition}"
        )
    with Solver(case, workers=workers) as solver:
        # timed region excludes initialization above and sampling below
        wall_ns = solver.run()
        samples = sample_outputs(solver.states, case.grid)
        return RunResult(
            wall_ns=wall_ns,
            compute_ns=solver.compute_ns,
            comm_ns=solver.comm_ns,
            cells=case.cells,
            equations=case.num_equations,
            steps=case.t_steps,
            samples=samples,
            conserved_totals=tuple(samples["conserved"].tolist()),
            total_rhs_evals=solver.rhs_evals,
            halo_exchanges=solver.halo_exchanges,
            nranks=case.nranks,
            kernel=solver.kernel,
            rdma_mpi=case.rdma_mpi,
        )
