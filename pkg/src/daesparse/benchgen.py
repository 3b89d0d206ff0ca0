"""Synthetic benchmark systems with known structure, and recovery metrics.

Three families are provided: enzyme reaction networks reduced to
Michaelis-Menten form, a swing-equation power network, and single and double
pendulums observed in Cartesian coordinates.  All integrations use scipy's
adaptive Runge-Kutta solvers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations_with_replacement
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from .dynfinder import DiscoveredModel, OdeEquation, VariableRoles
from .errors import ConfigError, IntegratorFailure, ModelError
from .termlib import AlgebraicRelation, Term, complexity_score, grid_state_names, term_gcd
from .timeseries import TimeSeriesTable, inject_noise, inject_snr_noise

RTOL = 1e-10
ATOL = 1e-12


def _integrate(rhs, y0, t_eval, method="DOP853", rtol=RTOL, atol=ATOL, op="simulate"):
    # cap the step at the sample spacing: samples then land on or near step
    # ends, where the error is controlled, not deep inside the dense interpolant
    max_step = float(np.min(np.diff(t_eval))) if len(t_eval) > 1 else np.inf
    sol = solve_ivp(rhs, (t_eval[0], t_eval[-1]), np.asarray(y0, dtype=float), method=method,
                    t_eval=t_eval, rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise IntegratorFailure(sol.message, module="benchgen", op=op)
    return sol.y.T


def _stack_segments(parts: Sequence[tuple[np.ndarray, np.ndarray]], names) -> TimeSeriesTable:
    times = np.concatenate([t for t, _ in parts])
    values = np.vstack([v for _, v in parts])
    seg = np.concatenate([np.full(len(t), k) for k, (t, _) in enumerate(parts)])
    return TimeSeriesTable(times, tuple(names), values, seg)


# ---------------------------------------------------------------------------
# reaction networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrnSpec:
    """Enzyme kinetics ``A + E1 <-> AE1 -> B + E1`` (and ``B + E2 <-> BE2 -> C + E2``).

    ``initial`` holds one substrate dict per segment; missing species start
    at zero.
    """

    k1: float = 2.0
    k2: float = 1.0
    k3: float = 1.5
    e1_tot: float = 1.0
    k4: float = 1.5
    k5: float = 0.5
    k6: float = 1.0
    e2_tot: float = 0.8
    initial: tuple = ({"A": 1.0}, {"A": 2.0}, {"A": 4.0}, {"A": 6.0}, {"A": 8.0})

    def __post_init__(self):
        rates = (self.k1, self.k2, self.k3, self.k4, self.k5, self.k6)
        if min(rates) <= 0 or self.e1_tot <= 0 or self.e2_tot <= 0:
            raise ConfigError("rates and enzyme totals must be positive", module="benchgen", op="CrnSpec")
        object.__setattr__(self, "initial", tuple(dict(d) for d in self.initial))
        for d in self.initial:
            if any(v < 0 for v in d.values()):
                raise ConfigError("initial concentrations must be non-negative", module="benchgen", op="CrnSpec")
        if not self.initial:
            raise ConfigError("at least one initial condition is required", module="benchgen", op="CrnSpec")


CRN_STATES = {"crn1": ("A", "B", "E1", "AE1"), "crn2": ("A", "B", "C", "E1", "AE1", "E2", "BE2")}


def _mm(k_on, k_off, k_cat, e_tot, s):
    return k_on * e_tot * s / (k_off + k_cat + k_on * s)


def simulate_crn(spec: CrnSpec, network: str = "crn1", horizon: float = 10.0,
                 samples: int = 400) -> TimeSeriesTable:
    """Integrate the quasi-steady reduced network, one segment per initial condition.

    Substrates and products are integrated; enzyme complexes follow from the
    quasi-steady expression and free enzymes from conservation.
    """
    if network not in CRN_STATES:
        raise ConfigError(f"unknown network {network!r}", module="benchgen", op="simulate_crn")
    if samples < 10 or horizon <= 0:
        raise ConfigError("need samples >= 10 and horizon > 0", module="benchgen", op="simulate_crn")
    t = np.linspace(0.0, horizon, samples)
    s = spec

    def rhs(_, y):
        ae1 = _mm(s.k1, s.k2, s.k3, s.e1_tot, y[0])
        if network == "crn1":
            return [-s.k3 * ae1, s.k3 * ae1]
        be2 = _mm(s.k4, s.k5, s.k6, s.e2_tot, y[1])
        return [-s.k3 * ae1, s.k3 * ae1 - s.k6 * be2, s.k6 * be2]

    parts = []
    for ic in s.initial:
        dyn = ("A", "B") if network == "crn1" else ("A", "B", "C")
        y = _integrate(rhs, [ic.get(n, 0.0) for n in dyn], t, op="simulate_crn")
        ae1 = _mm(s.k1, s.k2, s.k3, s.e1_tot, y[:, 0])
        cols = [y[:, 0], y[:, 1]]
        if network == "crn1":
            cols += [s.e1_tot - ae1, ae1]
        else:
            be2 = _mm(s.k4, s.k5, s.k6, s.e2_tot, y[:, 1])
            cols += [y[:, 2], s.e1_tot - ae1, ae1, s.e2_tot - be2, be2]
        parts.append((t.copy(), np.column_stack(cols)))
    return _stack_segments(parts, CRN_STATES[network])


def crn_truth(spec: CrnSpec, network: str = "crn1") -> DiscoveredModel:
    """Mass-action model with conservation and quasi-steady relations."""
    T = Term.parse
    s = spec
    rels = [
        AlgebraicRelation({T("[E1]"): 1.0, T("[AE1]"): 1.0, T("1"): -s.e1_tot}, T("[E1]")),
        AlgebraicRelation({T("[A]*[E1]"): s.k1, T("[AE1]"): -(s.k2 + s.k3)}, T("[A]*[E1]")),
    ]
    odes = {
        "A": {T("[A]*[E1]"): -s.k1, T("[AE1]"): s.k2},
        "B": {T("[AE1]"): s.k3},
    }
    alg = ("E1", "AE1")
    if network == "crn2":
        rels += [
            AlgebraicRelation({T("[E2]"): 1.0, T("[BE2]"): 1.0, T("1"): -s.e2_tot}, T("[E2]")),
            AlgebraicRelation({T("[B]*[E2]"): s.k4, T("[BE2]"): -(s.k5 + s.k6)}, T("[B]*[E2]")),
        ]
        odes["B"] = {T("[AE1]"): s.k3, T("[B]*[E2]"): -s.k4, T("[BE2]"): s.k5}
        odes["C"] = {T("[BE2]"): s.k6}
        alg = ("E1", "AE1", "E2", "BE2")
    states = CRN_STATES[network]
    dif = tuple(x for x in states if x not in alg)
    roles = VariableRoles(dif, alg, {}, tuple((a,) for a in alg))
    return DiscoveredModel(states, tuple(rels), {k: OdeEquation(k, v) for k, v in odes.items()}, roles)


# ---------------------------------------------------------------------------
# power grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Network of swing-equation generators and first-order loads.

    Node ``i`` (1-based) obeys ``M_i phi_i'' + D_i phi_i' = P_i - Pe_i`` for a
    generator (``M_i = 2 H_i / omega_r``) and ``D_i phi_i' = P_i - Pe_i``
    for a load, with ``Pe_i = sum_j V_i V_j Y_ij sin(phi_i - phi_j)``.
    ``power`` holds the injections ``P_i`` (mechanical power for
    generators, negative load demand for loads).  ``perturbations`` lists
    ``(time, node, dphi)`` phase kicks.
    """

    n_nodes: int
    generators: tuple[int, ...]
    inertia: tuple[float, ...]
    damping: tuple[float, ...]
    power: tuple[float, ...]
    admittance: tuple[tuple[float, ...], ...]
    voltage: tuple[float, ...] = ()
    omega_r: float = 1.0
    perturbations: tuple[tuple[float, int, float], ...] = ()

    def __post_init__(self):
        n = self.n_nodes
        op = "GridSpec"
        Y = np.asarray(self.admittance, dtype=float)
        if n < 2 or Y.shape != (n, n):
            raise ConfigError("admittance must be an N x N matrix with N >= 2", module="benchgen", op=op)
        if not np.allclose(Y, Y.T) or np.any(np.diag(Y) != 0) or np.any(Y < 0):
            raise ConfigError("admittance must be symmetric, non-negative, zero diagonal", module="benchgen", op=op)
        for name in ("inertia", "damping", "power"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} must have one entry per node", module="benchgen", op=op)
        if not self.voltage:
            object.__setattr__(self, "voltage", (1.0,) * n)
        if len(self.voltage) != n:
            raise ConfigError("voltage must have one entry per node", module="benchgen", op=op)
        if any(not 1 <= g <= n for g in self.generators):
            raise ConfigError("generator index out of range", module="benchgen", op=op)
        if any(self.inertia[g - 1] <= 0 for g in self.generators):
            raise ConfigError("generators need positive inertia", module="benchgen", op=op)
        if any(d <= 0 for d in self.damping):
            raise ConfigError("damping must be positive", module="benchgen", op=op)
        if abs(sum(self.power)) > 1e-9 * max(1.0, max(abs(p) for p in self.power)):
            raise ConfigError("injections must balance (sum P = 0)", module="benchgen", op=op)
        pert = tuple(sorted((float(t), int(i), float(d)) for t, i, d in self.perturbations))
        if any(not 1 <= i <= n for _, i, _ in pert):
            raise ConfigError("perturbation node out of range", module="benchgen", op=op)
        object.__setattr__(self, "perturbations", pert)
        object.__setattr__(self, "generators", tuple(sorted(int(g) for g in self.generators)))

    @property
    def coupling(self) -> np.ndarray:
        V = np.asarray(self.voltage, dtype=float)
        return np.outer(V, V) * np.asarray(self.admittance, dtype=float)

    @property
    def adjacency(self) -> np.ndarray:
        return self.coupling > 0

    @property
    def loads(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.n_nodes + 1) if i not in self.generators)

    def mass(self, i: int) -> float:
        return 2.0 * self.inertia[i - 1] / self.omega_r


def electrical_power(K: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``Pe_i = sum_j K_ij sin(phi_i - phi_j)`` for ``phi`` of shape (N,) or (T, N)."""
    d = phi[..., :, None] - phi[..., None, :]
    return np.sum(K * np.sin(d), axis=-1)


def grid_steady_state(spec: GridSpec) -> np.ndarray:
    """Phases solving the power flow ``Pe(phi) = P`` with ``phi_1 = 0``."""
    K, P = spec.coupling, np.asarray(spec.power, dtype=float)

    def f(x):
        phi = np.concatenate([[0.0], x])
        return electrical_power(K, phi)[1:] - P[1:]

    x, info, ier, msg = fsolve(f, np.zeros(spec.n_nodes - 1), full_output=True, xtol=1e-14)
    if ier != 1 or np.max(np.abs(f(x))) > 1e-9:
        raise ModelError(f"power flow has no solution: {msg}", module="benchgen", op="grid_steady_state")
    return np.concatenate([[0.0], x])


def demo_grid_spec(n_nodes: int = 6, n_generators: int = 2, n_kicks: int = 20, horizon: float = 60.0,
                   kick: float = 0.6, seed: int = 0) -> GridSpec:
    """Ring-plus-chords network with random but reproducible parameters."""
    rng = np.random.default_rng(seed)
    n = n_nodes
    Y = np.zeros((n, n))
    for i in range(n):
        Y[i, (i + 1) % n] = Y[(i + 1) % n, i] = rng.uniform(1.5, 3.0)
    for i in range(0, n - 2, 3):
        j = i + 2
        Y[i, j] = Y[j, i] = rng.uniform(1.0, 2.0)
    gens = tuple(range(1, n_generators + 1))
    power = np.zeros(n)
    power[:n_generators] = rng.uniform(0.8, 1.2, n_generators)
    loads = rng.uniform(0.5, 1.0, n - n_generators)
    power[n_generators:] = -loads / loads.sum() * power[:n_generators].sum()
    inertia = [rng.uniform(2.0, 4.0) if i + 1 in gens else 0.0 for i in range(n)]
    damping = rng.uniform(0.8, 1.5, n)
    return GridSpec(n, gens, tuple(inertia), tuple(damping), tuple(power), tuple(map(tuple, Y)),
                    perturbations=kick_schedule(n, n_kicks, horizon, kick, seed + 1))


def kick_schedule(n_nodes: int, n_kicks: int, horizon: float, magnitude: float,
                  seed: int = 0) -> tuple[tuple[float, int, float], ...]:
    """Evenly spaced phase kicks at random nodes with random sign and size."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, n_kicks + 1)[:-1]
    nodes = rng.integers(1, n_nodes + 1, n_kicks)
    mags = magnitude * rng.uniform(0.5, 1.0, n_kicks) * rng.choice([-1.0, 1.0], n_kicks)
    return tuple((float(t), int(i), float(d)) for t, i, d in zip(times, nodes, mags))


def simulate_grid(spec: GridSpec, horizon: float, samples: int, snr_db: float | None = None,
                  seed: int = 0, max_freq: float = 50.0) -> TimeSeriesTable:
    """Integrate the network from its steady state, applying the kick schedule.

    Each kick starts a new segment.  ``samples`` is the total sample count,
    split evenly over segments.  Output columns are ``Pe_i``, ``phi_i`` and
    ``dphi_i`` with ``Pe`` computed from the exact phases.  A frequency
    above ``max_freq`` counts as loss of synchrony and truncates the output.
    """
    n = spec.n_nodes
    K, P = spec.coupling, np.asarray(spec.power, dtype=float)
    gens = [g - 1 for g in spec.generators]
    loads = [i - 1 for i in spec.loads]
    M = np.array([spec.mass(g + 1) for g in gens])
    D = np.asarray(spec.damping, dtype=float)

    def rates(phi, omega_g):
        pe = electrical_power(K, phi)
        dphi = np.empty(n)
        dphi[gens] = omega_g
        dphi[loads] = (P[loads] - pe[loads]) / D[loads]
        domega = (P[gens] - D[gens] * omega_g - pe[gens]) / M
        return pe, dphi, domega

    def rhs(_, y):
        _, dphi, domega = rates(y[:n], y[n:])
        return np.concatenate([dphi, domega])

    kicks = [k for k in spec.perturbations if 0.0 <= k[0] < horizon]
    starts = sorted({0.0} | {k[0] for k in kicks})
    bounds = starts + [horizon]
    per = max(samples // len(starts), 10)
    phi = grid_steady_state(spec)
    omega = np.zeros(len(gens))
    parts = []
    pe_cols, phi_cols, dphi_cols = grid_state_names(n)
    for s, (t0, t1) in enumerate(zip(bounds[:-1], bounds[1:])):
        for (tk, node, dp) in kicks:
            if tk == t0:
                phi = phi.copy()
                phi[node - 1] += dp
        t = np.linspace(t0, t1, per, endpoint=(s == len(starts) - 1))
        if s < len(starts) - 1:
            t_int = np.append(t, t1)
        else:
            t_int = t
        y = _integrate(rhs, np.concatenate([phi, omega]), t_int, op="simulate_grid")
        ph, om = y[:, :n], y[:, n:]
        out = np.empty((len(t_int), 3 * n))
        for r in range(len(t_int)):
            pe, dphi, _ = rates(ph[r], om[r])
            out[r] = np.concatenate([pe, ph[r], dphi])
        lost = np.flatnonzero(np.any(np.abs(out[:, 2 * n:]) > max_freq, axis=1))
        if lost.size:
            parts.append((t_int[:lost[0]], out[:lost[0]]))
            break
        parts.append((t, out[:len(t)]))
        phi, omega = ph[-1], om[-1]
    parts = [p for p in parts if len(p[0])]
    table = _stack_segments(parts, pe_cols + phi_cols + dphi_cols)
    if snr_db is not None:
        table = inject_snr_noise(table, snr_db, seed)
    return table


def grid_truth(spec: GridSpec) -> DiscoveredModel:
    """Power-flow relations and node dynamics.

    Generator ``i`` is written as ``d^2(phi_i)/dt^2 = (P_i - D_i dphi_i - Pe_i) / M_i``
    and load ``i`` as ``d(phi_i)/dt = (P_i - Pe_i) / D_i``.
    """
    n = spec.n_nodes
    pe, phi, dphi = grid_state_names(n)
    K = spec.coupling
    rels = []
    for i in range(n):
        c = {Term.state(pe[i]): -1.0}
        for j in range(n):
            if j != i and K[i, j] > 0:
                c[Term.trig("sin", phi[i], phi[j])] = K[i, j]
        rels.append(AlgebraicRelation(c, Term.state(pe[i])))
    odes = {}
    one = Term()
    for i in range(n):
        P, D = spec.power[i], spec.damping[i]
        if i + 1 in spec.generators:
            M = spec.mass(i + 1)
            odes[phi[i]] = OdeEquation(phi[i], {one: P / M, Term.state(dphi[i]): -D / M,
                                                Term.state(pe[i]): -1.0 / M}, order=2)
        else:
            odes[phi[i]] = OdeEquation(phi[i], {one: P / D, Term.state(pe[i]): -1.0 / D}, order=1)
    roles = VariableRoles(tuple(phi), tuple(pe), {}, tuple((p,) for p in pe))
    return DiscoveredModel(tuple(pe + phi + dphi), tuple(rels), odes, roles)


# ---------------------------------------------------------------------------
# pendulums
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PendulumSpec:
    """Single or double pendulum; angles are measured from the downward vertical.

    ``initial`` is a tuple of per-segment initial states
    ``(theta, dtheta)`` or ``(theta1, theta2, dtheta1, dtheta2)``.
    """

    l1: float = 1.0
    m1: float = 1.0
    l2: float = 1.0
    m2: float = 1.0
    alpha: float = 0.0
    g: float = 9.81
    initial: tuple = ((2.0, 0.0),)

    def __post_init__(self):
        if min(self.l1, self.l2, self.m1, self.m2, self.g) <= 0 or self.alpha < 0:
            raise ConfigError("lengths, masses and g must be positive, alpha >= 0", module="benchgen",
                              op="PendulumSpec")
        object.__setattr__(self, "initial", tuple(tuple(float(v) for v in ic) for ic in self.initial))
        if not self.initial:
            raise ConfigError("at least one initial condition is required", module="benchgen", op="PendulumSpec")


def _double_rhs(spec: PendulumSpec):
    m1, m2, l1, l2, g, a = spec.m1, spec.m2, spec.l1, spec.l2, spec.g, spec.alpha

    def rhs(_, y):
        t1, t2, w1, w2 = y
        d = t1 - t2
        # mass matrix of the Lagrangian equations
        A = np.array([[(m1 + m2) * l1 ** 2, m2 * l1 * l2 * math.cos(d)],
                      [m2 * l1 * l2 * math.cos(d), m2 * l2 ** 2]])
        b = np.array([
            -m2 * l1 * l2 * w2 ** 2 * math.sin(d) - (m1 + m2) * g * l1 * math.sin(t1) - a * w1,
            m2 * l1 * l2 * w1 ** 2 * math.sin(d) - m2 * g * l2 * math.sin(t2) - a * w2,
        ])
        acc = np.linalg.solve(A, b)
        return [w1, w2, acc[0], acc[1]]

    return rhs


def simulate_pendulum(spec: PendulumSpec, variant: str = "single", horizon: float = 10.0,
                      samples: int = 1000, noise_pct: float = 0.0, seed: int = 0,
                      include_angles: bool = False) -> TimeSeriesTable:
    """Cartesian trajectories ``x, y`` (single) or ``x1, y1, x2, y2`` (double).

    ``y`` points up, so the rest position is ``(0, -l)``.  With
    ``include_angles`` the angle and angular-velocity columns are appended.
    Noise is added with :func:`inject_noise` to the Cartesian columns only.
    """
    if variant not in ("single", "double"):
        raise ConfigError(f"unknown pendulum variant {variant!r}", module="benchgen", op="simulate_pendulum")
    if samples < 10 or horizon <= 0:
        raise ConfigError("need samples >= 10 and horizon > 0", module="benchgen", op="simulate_pendulum")
    t = np.linspace(0.0, horizon, samples)
    s = spec
    parts = []
    for ic in s.initial:
        if variant == "single":
            if len(ic) != 2:
                raise ConfigError("single pendulum initial state is (theta, dtheta)", module="benchgen",
                                  op="simulate_pendulum")
            rhs = lambda _, y: [y[1], -s.alpha / (s.m1 * s.l1 ** 2) * y[1] - s.g / s.l1 * math.sin(y[0])]
            y = _integrate(rhs, ic, t, op="simulate_pendulum")
            th, w = y[:, 0], y[:, 1]
            cols = [s.l1 * np.sin(th), -s.l1 * np.cos(th)]
            if include_angles:
                cols += [th, w]
        else:
            if len(ic) != 4:
                raise ConfigError("double pendulum initial state is (theta1, theta2, dtheta1, dtheta2)",
                                  module="benchgen", op="simulate_pendulum")
            y = _integrate(_double_rhs(s), ic, t, op="simulate_pendulum")
            t1, t2 = y[:, 0], y[:, 1]
            x1, y1 = s.l1 * np.sin(t1), -s.l1 * np.cos(t1)
            cols = [x1, y1, x1 + s.l2 * np.sin(t2), y1 - s.l2 * np.cos(t2)]
            if include_angles:
                cols += [t1, t2, y[:, 2], y[:, 3]]
        parts.append((t.copy(), np.column_stack(cols)))
    if variant == "single":
        names = ["x", "y"] + (["theta", "dtheta"] if include_angles else [])
        cart = ["x", "y"]
    else:
        names = ["x1", "y1", "x2", "y2"] + (["theta1", "theta2", "dtheta1", "dtheta2"] if include_angles else [])
        cart = ["x1", "y1", "x2", "y2"]
    table = _stack_segments(parts, names)
    if noise_pct:
        table = inject_noise(table, noise_pct, seed, columns=cart)
    return table


def pendulum_truth(spec: PendulumSpec, variant: str = "single") -> DiscoveredModel:
    """Constraints in expanded polynomial form; no ODEs (the angles are not states)."""
    T = Term.parse
    if variant == "single":
        rels = (AlgebraicRelation({T("[x]^2"): 1.0, T("[y]^2"): 1.0, T("1"): -spec.l1 ** 2}, T("[y]^2")),)
        states, alg = ("x", "y"), ("y",)
    else:
        l1, l2 = spec.l1, spec.l2
        rels = (
            AlgebraicRelation({T("[x1]^2"): 1.0, T("[y1]^2"): 1.0, T("1"): -l1 ** 2}, T("[y1]^2")),
            AlgebraicRelation({T("[x1]^2"): 1.0, T("[x1]*[x2]"): -2.0, T("[x2]^2"): 1.0,
                               T("[y1]^2"): 1.0, T("[y1]*[y2]"): -2.0, T("[y2]^2"): 1.0, T("1"): -l2 ** 2},
                              T("[y2]^2")),
        )
        states, alg = ("x1", "y1", "x2", "y2"), ("y1", "y2")
    dif = tuple(s for s in states if s not in alg)
    roles = VariableRoles(dif, alg, {}, tuple((a,) for a in alg))
    return DiscoveredModel(states, rels, {}, roles)


# ---------------------------------------------------------------------------
# recovery metrics
# ---------------------------------------------------------------------------

def _monomials(states: Sequence[str], max_degree: int) -> list[Term]:
    out = [Term()]
    for d in range(1, max_degree + 1):
        out += [Term(tuple((s, 1) for s in c)) for c in combinations_with_replacement(sorted(states), d)]
    return out


def _max_cx(coeffs) -> int:
    return max(complexity_score(t) for t in coeffs)


def _min_cx(coeffs) -> int:
    return min(complexity_score(t) for t in coeffs)


def span_residual(target: Mapping[Term, float], relations: Sequence[AlgebraicRelation]) -> float:
    """Relative distance of ``target`` from the span of monomial multiples of ``relations``.

    Multipliers range over monomials that keep every product within the
    highest complexity present in ``target`` or in any relation, so that
    combinations whose leading terms cancel are included.
    """
    if not relations:
        return 1.0
    top = max([_max_cx(target)] + [_max_cx(r.coefficients) for r in relations])
    states = sorted({s for r in relations for s in r.states} | {s for t in target for s in t.states})
    gens = []
    for r in relations:
        room = top - _max_cx(r.coefficients)
        if room < 0:
            continue
        for u in _monomials(states, room):
            gens.append({u * t: c for t, c in r.coefficients.items()})
    if not gens:
        return 1.0
    basis = sorted({t for g in gens for t in g} | set(target), key=lambda t: t.encoding)
    idx = {t: k for k, t in enumerate(basis)}
    A = np.zeros((len(basis), len(gens)))
    for j, g in enumerate(gens):
        for t, c in g.items():
            A[idx[t], j] = c
        A[:, j] /= np.linalg.norm(A[:, j])
    b = np.zeros(len(basis))
    for t, c in target.items():
        b[idx[t]] = c
    b /= np.linalg.norm(b)
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(np.linalg.norm(b - A @ x))


def reduce_modulo(expr: Mapping[Term, float], relations: Sequence[AlgebraicRelation],
                  keep: Sequence[Term] | None = None, drop_tol: float = 1e-9,
                  max_rounds: int = 200) -> dict:
    """Rewrite ``expr`` with each relation solved for its pivot.

    A term divisible by a relation's pivot (and not in ``keep``) is replaced
    by the rest of that relation times the cofactor.  Relations are tried in
    discovery order until no term can be rewritten.  Rewrites that would
    create a term more complex than anything in ``expr`` or ``relations``
    are skipped, which bounds the work when relations rewrite into each
    other.  Coefficients below ``drop_tol`` times the largest magnitude are
    dropped.
    """
    keep = set(keep or ())
    out = {t: float(c) for t, c in expr.items()}
    if not out:
        return out
    cap = max([_max_cx(out)] + [_max_cx(r.coefficients) for r in relations])

    def admissible(rel, t):
        if t in keep or rel.pivot.is_constant or out[t] == 0 or not rel.pivot.divides(t):
            return False
        u = t / rel.pivot
        return all(complexity_score(u * s) <= cap for s in rel.coefficients)

    for _ in range(max_rounds):
        hit = next(((rel, t) for rel in relations for t in out if admissible(rel, t)), None)
        if hit is None:
            break
        rel, t = hit
        u = t / rel.pivot
        c = out.pop(t) / rel.coefficients[rel.pivot]
        for s, cs in rel.coefficients.items():
            if s != rel.pivot:
                v = u * s
                out[v] = out.get(v, 0.0) - c * cs
    big = max((abs(c) for c in out.values()), default=0.0)
    return {t: c for t, c in out.items() if abs(c) > drop_tol * big}


def _gcd_reduced(coeffs: Mapping[Term, float]) -> frozenset:
    g = term_gcd(coeffs)
    return frozenset(t / g for t in coeffs)


def recovery_metrics(model: DiscoveredModel, truth: DiscoveredModel, tol: float = 1e-6,
                     drop_tol: float = 1e-6) -> dict:
    """Compare a discovered model with a reference model.

    Returns
    -------
    dict with
      ``algebraic_recovery_pct`` -- share of true relations inside the span
      of monomial multiples of the discovered ones (relative residual
      ``<= tol``);
      ``algebraic_support_pct`` -- share of true relations whose support,
      after rewriting with the discovered relations found before some
      discovered relation, equals that relation's support rewritten the
      same way;
      ``ode_support_exact`` -- per state, whether the discovered support
      equals the true right-hand side rewritten onto the discovered library
      (true relations are used for the rewriting, discovered ones only for
      terms the true relations cannot remove);
      ``coefficient_max_rel_err`` -- largest relative coefficient error over
      the true supports of all ODEs.
    """
    if set(truth.states) - set(model.states):
        raise ModelError("reference model has states the discovered model lacks", module="benchgen",
                         op="recovery_metrics")
    rels = list(model.algebraic)
    n_true = len(truth.algebraic)
    matched = [span_residual(g.coefficients, rels) <= tol for g in truth.algebraic]
    disc_supports = []
    for k, r in enumerate(rels):
        red = reduce_modulo(r.coefficients, rels[:k], drop_tol=drop_tol)
        disc_supports.append(_gcd_reduced(red) if red else frozenset())
    support_hits = []
    for g in truth.algebraic:
        hit = False
        for k, h in enumerate(disc_supports):
            red = reduce_modulo(g.coefficients, rels[:k], drop_tol=drop_tol)
            if red and _gcd_reduced(red) == h:
                hit = True
                break
        support_hits.append(hit)
    lib = set(model.library)
    # true right-hand sides are rewritten with the true relations first (most complex pivot first, so a
    # term equal to a pivot is replaced in one step), then with the discovered ones for anything left
    reducers = sorted(truth.algebraic, key=lambda r: -complexity_score(r.pivot)) + rels
    ode_exact, rel_errs, reduced_truth = {}, [], {}
    for s, e_true in truth.odes.items():
        target = dict(e_true.coefficients)
        if rels:
            target = reduce_modulo(target, reducers, keep=lib, drop_tol=drop_tol)
        reduced_truth[s] = target
        e = model.odes.get(s)
        found = dict(e.coefficients) if e is not None else {}
        if rels and found:
            found = reduce_modulo(found, reducers, keep=lib, drop_tol=drop_tol)
        ode_exact[s] = set(found) == set(target)
        for t in set(found) | set(target):
            ct = target.get(t, 0.0)
            cd = found.get(t, 0.0)
            rel_errs.append(abs(cd - ct) / abs(ct) if ct != 0 else math.inf)
    return {
        "algebraic_recovery_pct": 100.0 * sum(matched) / n_true if n_true else 100.0,
        "algebraic_support_pct": 100.0 * sum(support_hits) / n_true if n_true else 100.0,
        "algebraic_matched": matched,
        "n_relations_found": len(rels),
        "n_relations_true": n_true,
        "ode_support_exact": ode_exact,
        "coefficient_max_rel_err": max(rel_errs) if rel_errs else 0.0,
        "reduced_truth": {s: {t.encoding: c for t, c in v.items()} for s, v in reduced_truth.items()},
    }


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------

def spec_to_dict(spec) -> dict:
    kind = {CrnSpec: "crn", GridSpec: "grid", PendulumSpec: "pendulum"}[type(spec)]
    d = asdict(spec)
    d["kind"] = kind
    return json.loads(json.dumps(d))


def spec_from_dict(d: Mapping):
    d = dict(d)
    kind = d.pop("kind", None)
    cls = {"crn": CrnSpec, "grid": GridSpec, "pendulum": PendulumSpec}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown spec kind {kind!r}", module="benchgen", op="spec_from_dict")
    if cls is GridSpec:
        for key in ("generators", "inertia", "damping", "power", "voltage"):
            if key in d:
                d[key] = tuple(d[key])
        d["admittance"] = tuple(tuple(r) for r in d["admittance"])
        d["perturbations"] = tuple(tuple(p) for p in d.get("perturbations", ()))
    elif cls is PendulumSpec and "initial" in d:
        d["initial"] = tuple(tuple(ic) for ic in d["initial"])
    elif cls is CrnSpec and "initial" in d:
        d["initial"] = tuple(d["initial"])
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} spec: {exc}", module="benchgen", op="spec_from_dict") from None
