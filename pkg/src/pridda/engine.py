"""Private distributed dual averaging with node sampling.

Each round a gossip matrix picks the active nodes. Active nodes draw one
local sample and a Gaussian perturbation, mix their perturbed dual
variables with their neighbours and recover a primal point from the mixed
dual; inactive nodes keep their state. The simulator additionally tracks the
consensus iterate obtained from the exact node-average dual, which is not
available to any node.

Randomness is keyed: the sample and noise of node ``i`` at round ``t`` come
from a counter-based stream addressed by ``(seed, i, t)``, and the gossip
matrices from a separate stream of the same seed. Runs with the same seed
therefore see the same data draws and noise directions whatever the
sampling strategy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import numpy as np

from . import metrics
from .errors import InvalidArgument, InvalidSchedule
from .privacy import NoiseCalibration, privacy_loss_at
from .problems import ProblemInstance, objective_value
from .prox import prox
from .schedules import Schedule, check_positive_modulus
from .topology import GossipMatrix

_NODE_TAG = 0x6E6F6465
_TOPOLOGY_TAG = 0x746F706F
MEAN_DUAL_TOL = 1e-9


class NodeStreams:
    """Counter-based random streams addressed by (node, round)."""

    def __init__(self, seed: int):
        self.seed = seed
        self._key = np.random.SeedSequence([seed, _NODE_TAG]).generate_state(2, np.uint64)

    def __call__(self, node: int, t: int) -> np.random.Generator:
        counter = np.array([0, 0, t, node], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))


def topology_rng(seed: int) -> np.random.Generator:
    key = np.random.SeedSequence([seed, _TOPOLOGY_TAG]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Reference:
    f_star: float
    x_star: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class RunConfig:
    problem: ProblemInstance
    schedule: Schedule
    sampler: Any
    horizon: int
    seed: int = 0
    trace_stride: int = 1
    calibration: Optional[NoiseCalibration] = None
    reference: Optional[Reference] = None
    beta: Optional[float] = None
    keep_snapshots: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidArgument("horizon must be positive")
        if self.trace_stride < 1:
            raise InvalidArgument("trace_stride must be positive")
        if self.sampler.n != self.problem.n:
            raise InvalidArgument(
                f"sampler has {self.sampler.n} nodes, problem has {self.problem.n}"
            )
        reg = self.problem.regularizer
        if not math.isclose(self.schedule.mu, reg.modulus, rel_tol=1e-12, abs_tol=0.0):
            raise InvalidSchedule(
                f"schedule mu={self.schedule.mu} differs from the regularizer modulus {reg.modulus}"
            )
        check_positive_modulus(self.schedule, self.iota)
        cal = self.calibration
        if cal is not None:
            b = cal.budget
            if not math.isclose(b.iota, self.iota, rel_tol=1e-12):
                raise InvalidArgument(f"calibration iota {b.iota} != sampling ratio {self.iota}")
            if b.horizon != self.horizon:
                raise InvalidArgument("calibration horizon differs from the run horizon")
            if b.samples_per_node > self.problem.min_samples:
                raise InvalidArgument("calibration q exceeds the smallest local dataset")
            if b.lipschitz < self.problem.lipschitz * (1 - 1e-12):
                raise InvalidArgument("calibration L is below the problem's Lipschitz constant")

    @property
    def iota(self) -> float:
        return self.sampler.iota

    @property
    def sigma(self) -> float:
        return self.calibration.sigma if self.calibration is not None else 0.0

    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        analytic = getattr(self.sampler, "analytic_beta", lambda: None)()
        if analytic is not None:
            return analytic
        from .topology import estimate_beta

        return estimate_beta(self.sampler, self.sampler.n, 10_000, topology_rng(self.seed + 1)).value

    def bound_params(self) -> metrics.BoundParams:
        ref = self.reference
        d = metrics.d_of(ref.x_star) if ref is not None and ref.x_star is not None else math.nan
        return metrics.BoundParams(
            L=self.problem.lipschitz,
            beta=self.resolved_beta(),
            iota=self.iota,
            mu=self.schedule.mu,
            sigma=self.sigma,
            m=self.problem.dimension,
            d_xstar=d,
            schedule=self.schedule,
        )


@dataclass
class NodeState:
    z: np.ndarray
    x: np.ndarray
    ergodic_num: np.ndarray
    weight: float = 0.0

    @property
    def ergodic(self) -> np.ndarray:
        return self.ergodic_num / self.weight


class _LocalData:
    """Flat CSR views of each node's data for the per-round sampling loop."""

    def __init__(self, problem: ProblemInstance):
        self.m = problem.dimension
        self.indptr = [d.matrix.indptr for d in problem.locals]
        self.indices = [d.matrix.indices for d in problem.locals]
        self.data = [d.matrix.data for d in problem.locals]
        self.labels = [d.labels for d in problem.locals]
        self.q = [len(d) for d in problem.locals]

    def perturbed_subgradients(self, X, active_idx, t, sigma, streams):
        """Rows zeta_i = g_i + nu_i for active nodes, zero elsewhere."""
        zeta = np.zeros_like(X)
        for i in active_idx:
            rng = streams(int(i), t)
            j = int(rng.integers(self.q[i]))
            lo, hi = self.indptr[i][j], self.indptr[i][j + 1]
            cols = self.indices[i][lo:hi]
            vals = self.data[i][lo:hi]
            y = self.labels[i][j]
            if 1.0 - y * float(vals @ X[i, cols]) > 0.0:
                zeta[i, cols] = -y * vals
            if sigma > 0.0:
                zeta[i] += sigma * rng.standard_normal(self.m)
        return zeta


def _mix(W: GossipMatrix, Z, messages):
    """Z_new = W @ messages, touching only rows of W that differ from identity."""
    w = W.entries
    n = w.shape[0]
    moving = np.flatnonzero(np.any(w != np.eye(n), axis=1) | W.active)
    out = Z.copy()
    if moving.size:
        cols = np.flatnonzero(np.any(w[moving] != 0.0, axis=0))
        out[moving] = w[np.ix_(moving, cols)] @ messages[cols]
    return out


def _advance(Z, X, W, t, config, data, streams):
    """One round: returns (Z_next, X_next, theta)."""
    sched = config.schedule
    idx = np.flatnonzero(W.active)
    zeta = data.perturbed_subgradients(X, idx, t, config.sigma, streams)
    a_t = sched.a(t)
    Z_next = _mix(W, Z, Z + a_t * zeta)
    X_next = X.copy()
    if idx.size:
        X_next[idx] = prox(
            Z_next[idx],
            config.iota * sched.A(t + 1),
            sched.gamma_at(t + 1),
            config.problem.regularizer,
        )
    theta = zeta.sum(axis=0) / Z.shape[0]
    return Z_next, X_next, theta


def initial_states(config: RunConfig) -> List[NodeState]:
    n, m = config.problem.n, config.problem.dimension
    sched = config.schedule
    x1 = prox(np.zeros(m), config.iota * sched.A(1), sched.gamma_at(1), config.problem.regularizer)
    return [NodeState(np.zeros(m), x1.copy(), sched.a(1) * x1, sched.A(1)) for _ in range(n)]


def step(states: List[NodeState], W: GossipMatrix, t: int, config: RunConfig,
         streams: Optional[NodeStreams] = None) -> List[NodeState]:
    """Advance every node by round ``t``; inactive nodes are returned unchanged."""
    if t < 1 or t > config.horizon:
        raise InvalidArgument(f"round {t} outside [1, {config.horizon}]")
    streams = streams or NodeStreams(config.seed)
    Z = np.array([s.z for s in states])
    X = np.array([s.x for s in states])
    Z_next, X_next, _ = _advance(Z, X, W, t, config, _LocalData(config.problem), streams)
    a_next = config.schedule.a(t + 1)
    return [
        NodeState(Z_next[i], X_next[i], s.ergodic_num + a_next * X_next[i], s.weight + a_next)
        for i, s in enumerate(states)
    ]


def auxiliary_y(mean_z: np.ndarray, t: int, config: RunConfig) -> np.ndarray:
    """Consensus iterate: primal recovery from the exact average dual."""
    sched = config.schedule
    return prox(mean_z, config.iota * sched.A(t), sched.gamma_at(t), config.problem.regularizer)


@dataclass
class RunTrace:
    t: np.ndarray
    objective_mean_ergodic: np.ndarray
    objective_y_ergodic: np.ndarray
    consensus_err: np.ndarray
    consensus_err_ergodic: np.ndarray
    dist_sq_ergodic: Optional[np.ndarray]
    eps_hat: np.ndarray
    thm2_envelope: np.ndarray
    lemma4_envelope: np.ndarray
    A: np.ndarray
    f_star: float
    mean_dual_max_residual: float
    final_ergodic: np.ndarray
    final_y_ergodic: np.ndarray
    beta: float
    sigma: float
    iota: float
    snapshots: Optional[Dict[str, Any]] = field(default=None, repr=False)

    @property
    def subopt_mean_ergodic(self) -> np.ndarray:
        return self.objective_mean_ergodic - self.f_star

    @property
    def subopt_y_ergodic(self) -> np.ndarray:
        return self.objective_y_ergodic - self.f_star

    def __len__(self):
        return len(self.t)


def _relative_residual(before, after, increment):
    scale = 1.0 + max(np.abs(before).max(), np.abs(after).max(), np.abs(increment).max())
    return float(np.abs(after - before - increment).max() / scale)


def run(config: RunConfig) -> RunTrace:
    """Execute the algorithm for ``config.horizon`` rounds.

    Rows are recorded at every multiple of ``trace_stride``; the ergodic
    averages at row ``t`` use the iterates of rounds ``1..t``.
    """
    problem, sched = config.problem, config.schedule
    n, m, T = problem.n, problem.dimension, config.horizon
    iota = config.iota
    data = _LocalData(problem)
    streams = NodeStreams(config.seed)
    topo = topology_rng(config.seed)
    params = config.bound_params()
    ref = config.reference
    x_star = ref.x_star if ref is not None else None
    f_star = ref.f_star if ref is not None else math.nan
    eps_target = config.calibration.budget.epsilon if config.calibration is not None else None

    rows = np.arange(config.trace_stride, T + 1, config.trace_stride)
    # gamma_t = 0 removes the d(x*) term, so that envelope needs no reference.
    thm2_params = replace(params, d_xstar=0.0) if sched.kind == "strongly_convex" else params
    thm2 = metrics.theorem2_series(thm2_params, T)
    lemma4_mean, _ = metrics.lemma4_series(params, rows)

    Z = np.zeros((n, m))
    X = np.repeat(initial_states(config)[0].x[None, :], n, axis=0)
    erg_x = np.zeros((n, m))
    erg_y = np.zeros(m)
    out = {k: np.empty(len(rows)) for k in ("fx", "fy", "cons", "cons_erg", "dist", "eps")}
    max_residual = 0.0
    snaps = {"mean_z": [], "theta": [], "a": [], "x": [], "ergodic": {}} if config.keep_snapshots else None
    r = 0

    for t in range(1, T + 1):
        a_t = sched.a(t)
        A_t = sched.A(t)
        mean_z = Z.mean(axis=0)
        y = auxiliary_y(mean_z, t, config)
        erg_x += a_t * X
        erg_y += a_t * y

        if r < len(rows) and rows[r] == t:
            x_tilde = erg_x / A_t
            y_tilde = erg_y / A_t
            f = objective_value(problem, np.vstack([x_tilde.mean(axis=0), y_tilde]))
            out["fx"][r], out["fy"][r] = f[0], f[1]
            out["cons"][r] = np.linalg.norm(X - y, axis=1).mean()
            out["cons_erg"][r] = np.linalg.norm(x_tilde - y_tilde, axis=1).mean()
            out["dist"][r] = (
                (np.linalg.norm(x_tilde - x_star, axis=1) ** 2).mean() if x_star is not None else math.nan
            )
            out["eps"][r] = privacy_loss_at(t, T, eps_target) if eps_target is not None else math.inf
            if snaps is not None:
                snaps["ergodic"][t] = x_tilde.copy()
            r += 1

        W = config.sampler(topo)
        Z_next, X_next, theta = _advance(Z, X, W, t, config, data, streams)
        mean_next = Z_next.mean(axis=0)
        max_residual = max(max_residual, _relative_residual(mean_z, mean_next, a_t * theta))
        if snaps is not None:
            snaps["mean_z"].append(mean_z)
            snaps["theta"].append(theta)
            snaps["a"].append(a_t)
            snaps["x"].append(X.copy())
        Z, X = Z_next, X_next

    if snaps is not None:
        snaps["mean_z"].append(Z.mean(axis=0))
        for key in ("mean_z", "theta", "a", "x"):
            snaps[key] = np.array(snaps[key])

    A_T = sched.A(T)
    return RunTrace(
        t=rows,
        objective_mean_ergodic=out["fx"],
        objective_y_ergodic=out["fy"],
        consensus_err=out["cons"],
        consensus_err_ergodic=out["cons_erg"],
        dist_sq_ergodic=out["dist"] if x_star is not None else None,
        eps_hat=out["eps"],
        thm2_envelope=thm2[rows - 1] if len(rows) else np.zeros(0),
        lemma4_envelope=np.asarray(lemma4_mean, dtype=float).reshape(-1),
        A=sched.A(rows.astype(float)) if len(rows) else np.zeros(0),
        f_star=f_star,
        mean_dual_max_residual=max_residual,
        final_ergodic=erg_x / A_T,
        final_y_ergodic=erg_y / A_T,
        beta=params.beta,
        sigma=config.sigma,
        iota=iota,
        snapshots=snaps,
    )


def mean_dual_recursion_check(trace: RunTrace, tol: float = MEAN_DUAL_TOL) -> bool:
    """Does the node-average dual obey zbar(t+1) = zbar(t) + a_t theta(t)?

    Residuals are relative to ``1 + max |entry|`` of the quantities involved,
    since the duals grow like A_t.
    """
    s = trace.snapshots
    if s is None:
        return trace.mean_dual_max_residual <= tol
    worst = 0.0
    for k in range(len(s["a"])):
        worst = max(worst, _relative_residual(s["mean_z"][k], s["mean_z"][k + 1], s["a"][k] * s["theta"][k]))
    return worst <= tol
