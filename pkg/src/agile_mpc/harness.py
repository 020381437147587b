"""Closed-loop Monte-Carlo runs and tracking metrics.

Each run owns a fresh plant and controller.  Run ``i`` draws its sensor noise
from seed ``base_seed + i``, so results do not depend on how runs are spread
over worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attitude import error_angle, quat_canonical, quat_conjugate, quat_error, quat_mul
from .controllers import WEIGHTS, AugmentedCLMPC, CLMPC, LmpcConfig, ULMPC, feedforward_torque
from .nmpc import NMPC, NmpcConfig
from .plant import INERTIA, ActuatorLimits, Measurement, NoiseConfig, Plant, PlantState, saturate_torque
from .scenario import PHASES, Scenario, load_scenario, reference_horizon, reference_table

log = logging.getLogger(__name__)

CONTROLLERS = ("ulmpc", "clmpc", "aclmpc", "nmpc")
RATE_SOURCES = ("attitude", "gyro")
THRESHOLD = 0.8022  # deg, swath half angle
PHASE1_STEADY = 15.0  # s, tail of each Phase-I window
SETTLE_CAP = 20.0  # s


@dataclass(frozen=True)
class RunConfig:
    controller: str = "aclmpc"
    n_runs: int = 10
    seed: int = 0
    scenario: str | None = None  # path; None selects the bundled default
    ts: float = 2.0
    duration: float = 600.0
    noise: bool = True
    horizon: int = 10
    nmpc_preview: bool = True
    rate_source: str = "attitude"

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {', '.join(CONTROLLERS)}")
        if self.rate_source not in RATE_SOURCES:
            raise ValueError(f"unknown rate source {self.rate_source!r}; choose from {', '.join(RATE_SOURCES)}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if self.ts <= 0 or self.duration <= 0:
            raise ValueError("ts and duration must be positive")
        steps = self.duration / self.ts
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration must be a multiple of ts")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.ts)) + 1


@dataclass
class TrajectoryLog:
    """Per-step record of one run; sample ``k`` is taken at ``t = k ts`` before the control is applied."""

    t: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    h_rw: np.ndarray
    q_t: np.ndarray
    error_deg: np.ndarray
    T_c: np.ndarray
    T_applied: np.ndarray
    status: list
    iterations: np.ndarray
    solve_time: np.ndarray
    controller: str = ""
    run_index: int = 0
    seed: int = 0

    def __len__(self):
        return len(self.t)


@dataclass
class ReferenceData:
    """Target attitudes precomputed for one scenario and time grid."""

    scenario: Scenario
    t: np.ndarray
    q_t: np.ndarray
    horizons: np.ndarray | None = None  # (K, N+1, 4)


def build_reference(cfg: RunConfig, scenario: Scenario | None = None, horizons: bool = False) -> ReferenceData:
    scenario = scenario or load_scenario(cfg.scenario)
    t = np.arange(cfg.n_samples) * cfg.ts
    q_t, _ = reference_table(scenario, t)
    hz = None
    if horizons:
        hz = np.stack([reference_horizon(tk, cfg.horizon, cfg.ts, scenario.schedule, scenario.orbit) for tk in t])
    return ReferenceData(scenario, t, q_t, hz)


def make_controller(name: str, ts: float = 2.0, horizon: int = 10, limits: ActuatorLimits | None = None,
                    preview: bool = True):
    limits = limits or ActuatorLimits()
    if name == "nmpc":
        return NMPC(NmpcConfig(N=horizon, weight=WEIGHTS["nmpc"], limits=limits, ts=ts, preview=preview))
    cls = {"ulmpc": ULMPC, "clmpc": CLMPC, "aclmpc": AugmentedCLMPC}.get(name)
    if cls is None:
        raise ValueError(f"unknown controller {name!r}")
    return cls(LmpcConfig(Np=horizon, Nc=horizon, weight=WEIGHTS[name], limits=limits, ts=ts))


class RateEstimator:
    """Body-rate estimate from two consecutive attitude samples and the known wheel torque.

    The attitude measurement is exact, so the mean rate over the last interval
    follows from the rotation between samples.  Correcting it by half an
    interval of the predicted acceleration gives the rate at the current
    sample.  The gyro reading is used only before two attitude samples exist.
    With ``use_gyro=False`` the gyro reading is passed through unchanged.
    """

    def __init__(self, ts: float, J=INERTIA, limits: ActuatorLimits | None = None, use_gyro: bool = False):
        self.ts = ts
        self.J = np.asarray(J, float)
        self.J_inv = np.linalg.inv(self.J)
        self.limits = limits or ActuatorLimits()
        self.passthrough = use_gyro
        self.reset()

    def reset(self):
        self._q = None
        self._h = None
        self._torque = None

    def __call__(self, m: Measurement) -> np.ndarray:
        if self.passthrough or self._q is None:
            return np.asarray(m.omega_meas, float).copy()
        dq = quat_canonical(quat_mul(quat_conjugate(self._q), m.q_meas))
        v = dq[1:]
        s = np.linalg.norm(v)
        angle = 2.0 * np.arctan2(s, dq[0])
        w_bar = v * (angle / (s * self.ts)) if s > 1e-15 else 2.0 * v / self.ts
        h_mid = self._h - 0.5 * self.ts * self._torque
        w_dot = self.J_inv @ (self._torque - np.cross(w_bar, self.J @ w_bar + h_mid))
        return w_bar + 0.5 * self.ts * w_dot

    def record(self, m: Measurement, torque_cmd) -> None:
        """Remember the sample and the torque the wheels will deliver for it."""
        self._q = np.asarray(m.q_meas, float).copy()
        self._h = np.asarray(m.h_rw_meas, float).copy()
        self._torque = saturate_torque(torque_cmd, self._h, self.ts, self.limits)


def _iterations(ctrl) -> int:
    if isinstance(ctrl, NMPC):
        return ctrl.sqp_iterations
    sol = getattr(ctrl, "last_solution", None)
    return 0 if sol is None else sol.iterations


def run_closed_loop(cfg: RunConfig, run_index: int = 0, ref: ReferenceData | None = None,
                    initial: PlantState | None = None) -> TrajectoryLog:
    """Simulate one run of ``cfg.controller`` on the scenario.

    The satellite starts at rest on the first target attitude unless
    ``initial`` is given.
    """
    is_nmpc = cfg.controller == "nmpc"
    if ref is None or (is_nmpc and cfg.nmpc_preview and ref.horizons is None):
        ref = build_reference(cfg, horizons=is_nmpc and cfg.nmpc_preview)
    seed = cfg.seed + run_index
    noise = NoiseConfig(seed=seed) if cfg.noise else NoiseConfig.off(seed)
    ctrl = make_controller(cfg.controller, cfg.ts, cfg.horizon, preview=cfg.nmpc_preview)
    plant = Plant(initial or PlantState(q=ref.q_t[0]), noise=noise)
    rates = RateEstimator(cfg.ts, plant.J, plant.limits, use_gyro=cfg.rate_source == "gyro")

    K = len(ref.t)
    q = np.empty((K, 4))
    omega = np.empty((K, 3))
    h_rw = np.empty((K, 3))
    err = np.empty(K)
    T_c = np.empty((K, 3))
    T_app = np.empty((K, 3))
    iters = np.zeros(K, dtype=int)
    wall = np.empty(K)
    status = []
    for k in range(K):
        s = plant.state
        q[k], omega[k], h_rw[k] = s.q, s.omega, s.h_rw
        err[k] = error_angle(quat_error(s.q, ref.q_t[k]))
        m = plant.measure()
        w_hat = rates(m)
        t0 = time.perf_counter()
        if is_nmpc:
            target = ref.horizons[k] if cfg.nmpc_preview else ref.q_t[k]
            cmd = ctrl.step(m.q_meas, w_hat, m.h_rw_meas, target)
            tc = cmd
        else:
            q_e = quat_error(m.q_meas, ref.q_t[k])
            tc = ctrl.step(q_e, w_hat, m.h_rw_meas)
            cmd = feedforward_torque(tc, w_hat, m.h_rw_meas, plant.J)
        wall[k] = time.perf_counter() - t0
        rates.record(m, cmd)
        T_c[k] = tc
        status.append(ctrl.status)
        iters[k] = _iterations(ctrl)
        # the final sample closes the window; its command is logged but not applied
        T_app[k] = plant.step(cmd, cfg.ts) if k < K - 1 else plant.saturate(cmd, cfg.ts)
    return TrajectoryLog(ref.t.copy(), q, omega, h_rw, ref.q_t.copy(), err, T_c, T_app, status, iters, wall,
                         cfg.controller, run_index, seed)


def _run_one(args):
    cfg, run_index, ref = args
    return run_closed_loop(cfg, run_index, ref)


def run_monte_carlo(cfg: RunConfig, jobs: int | None = 1, ref: ReferenceData | None = None) -> list[TrajectoryLog]:
    """All ``cfg.n_runs`` runs in run-index order; ``jobs > 1`` spreads them over processes."""
    if ref is None or (cfg.controller == "nmpc" and cfg.nmpc_preview and ref.horizons is None):
        ref = build_reference(cfg, horizons=cfg.controller == "nmpc" and cfg.nmpc_preview)
    jobs = jobs or os.cpu_count() or 1
    tasks = [(cfg, i, ref) for i in range(cfg.n_runs)]
    if jobs <= 1 or cfg.n_runs == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, cfg.n_runs)) as pool:
        return list(pool.map(_run_one, tasks))


# ---------------------------------------------------------------- metrics

def _window_index(t, a, b, last):
    tol = 1e-9
    upper = t <= b + tol if last else t < b - tol
    return np.flatnonzero((t >= a - tol) & upper)


def _windows(schedule, phase, t):
    end = t[-1]
    return [(a, b, _window_index(t, a, b, abs(b - end) < 1e-9)) for a, b in schedule.windows(phase)]


def window_transition_time(t, err, a, b, threshold=THRESHOLD) -> float:
    """Time from ``a`` until ``err`` drops below ``threshold`` for good within ``[a, b)``.

    The crossing instant is interpolated linearly between samples.  A window
    that never settles counts its full length.
    """
    idx = _window_index(t, a, b, False)
    if idx.size == 0:
        return 0.0
    e = err[idx]
    above = np.flatnonzero(e > threshold)
    if above.size == 0:
        return 0.0
    j = above[-1]
    if j == idx.size - 1:
        return float(b - a)
    t0, t1, e0, e1 = t[idx[j]], t[idx[j + 1]], e[j], e[j + 1]
    return float(t0 + (e0 - threshold) / (e0 - e1) * (t1 - t0) - a)


def transition_times(log: TrajectoryLog, schedule, phase: str, threshold=THRESHOLD) -> list[float]:
    return [window_transition_time(log.t, log.error_deg, a, b, threshold) for a, b in schedule.windows(phase)]


def transition_time(log: TrajectoryLog, schedule, phase: str, threshold=THRESHOLD) -> float:
    """Mean transition time over the command windows of ``phase``."""
    tts = transition_times(log, schedule, phase, threshold)
    return float(np.mean(tts)) if tts else 0.0


def steady_mask(log: TrajectoryLog, schedule, phase: str, threshold=THRESHOLD) -> np.ndarray:
    """Samples in the steady-state period of ``phase``.

    Phase I uses the last 15 s of each command window; every other phase
    starts its steady period once the error settles, or 20 s into the window
    if that comes first.
    """
    t = log.t
    mask = np.zeros(len(t), dtype=bool)
    for a, b, idx in _windows(schedule, phase, t):
        if phase == "phase1":
            start = b - PHASE1_STEADY
        else:
            start = a + min(window_transition_time(t, log.error_deg, a, b, threshold), SETTLE_CAP)
        mask[idx[t[idx] >= start - 1e-9]] = True
    return mask


def phase_mask(log: TrajectoryLog, schedule, phase: str) -> np.ndarray:
    mask = np.zeros(len(log.t), dtype=bool)
    for _, _, idx in _windows(schedule, phase, log.t):
        mask[idx] = True
    return mask


def steady_state_metrics(log: TrajectoryLog, schedule, phase: str, threshold=THRESHOLD):
    """``(SSE, MSE)``: mean and mean square of the error angle over the steady period."""
    e = log.error_deg[steady_mask(log, schedule, phase, threshold)]
    if e.size == 0:
        return 0.0, 0.0
    return float(e.mean()), float(np.mean(e * e))


def observability(log: TrajectoryLog, schedule, threshold=THRESHOLD) -> dict:
    """Per phase: percent of observable samples, per-window observable seconds and sample counts."""
    ts = float(log.t[1] - log.t[0]) if len(log.t) > 1 else 0.0
    ok = log.error_deg <= threshold
    out = {}
    for phase in PHASES:
        wins = _windows(schedule, phase, log.t)
        mask = phase_mask(log, schedule, phase)
        steady = steady_mask(log, schedule, phase, threshold)
        n = int(mask.sum())
        out[phase] = {
            "observability_pct": 100.0 * float(ok[mask].sum()) / n if n else 0.0,
            "steady_observability_pct": 100.0 * float(ok[steady].sum()) / int(steady.sum()) if steady.any() else 0.0,
            "area_observable_s": [ts * float(ok[idx].sum()) for _, _, idx in wins],
            "steps": n,
        }
    return out


def cumulative_loss_energy(log: TrajectoryLog, schedule, phase: str, threshold=THRESHOLD) -> dict:
    """Loss (sum of squared error angle, deg^2) and energy (sum of |T_applied|^2) per sub-period."""
    mask = phase_mask(log, schedule, phase)
    steady = steady_mask(log, schedule, phase, threshold)
    transient = mask & ~steady
    e2 = log.error_deg**2
    u2 = np.sum(log.T_applied**2, axis=1)
    return {
        "loss": {"transient": float(e2[transient].sum()), "steady": float(e2[steady].sum())},
        "energy": {"transient": float(u2[transient].sum()), "steady": float(u2[steady].sum())},
    }


def run_metrics(log: TrajectoryLog, schedule, threshold=THRESHOLD) -> dict:
    obs = observability(log, schedule, threshold)
    out = {}
    for phase in PHASES:
        tts = transition_times(log, schedule, phase, threshold)
        sse, mse = steady_state_metrics(log, schedule, phase, threshold)
        m = {"tt_s": float(np.mean(tts)) if tts else 0.0, "sse_deg": sse, "mse_deg2": mse}
        m.update(obs[phase])
        m.update(cumulative_loss_energy(log, schedule, phase, threshold))
        m["fallback_steps"] = int(sum(s != "optimal" for s, inside in zip(log.status, phase_mask(log, schedule, phase)) if inside))
        out[phase] = m
    return out


def _mean(values):
    first = values[0]
    if isinstance(first, dict):
        return {k: _mean([v[k] for v in values]) for k in first}
    if isinstance(first, list):
        return [_mean([v[i] for v in values]) for i in range(len(first))]
    return float(np.mean(values))


def aggregate(reports: list[dict]) -> dict:
    """Arithmetic mean of every metric over the runs (nested structure preserved)."""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    return _mean(reports)


def runtime_stats(logs: list[TrajectoryLog]) -> dict:
    wall = np.concatenate([lg.solve_time for lg in logs])
    return {"mean_s": float(wall.mean()), "max_s": float(wall.max()), "steps": int(wall.size)}


def metrics_document(cfg: RunConfig, logs: list[TrajectoryLog], scenario: Scenario) -> dict:
    """Deterministic metrics: run-to-run means keyed by phase plus the per-run values.

    Wall-clock figures are kept out so that repeated invocations produce
    identical documents; see :func:`runtime_stats`.
    """
    per_run = [run_metrics(lg, scenario.schedule) for lg in logs]
    doc = {
        "controller": cfg.controller,
        "scenario": scenario.name,
        "n_runs": cfg.n_runs,
        "base_seed": cfg.seed,
        "noise": cfg.noise,
        "rate_source": cfg.rate_source,
        "ts": cfg.ts,
        "threshold_deg": THRESHOLD,
    }
    doc.update(aggregate(per_run))
    doc["per_run"] = [{"run": lg.run_index, "seed": lg.seed, **m} for lg, m in zip(logs, per_run)]
    return doc


# ---------------------------------------------------------------- output

CSV_COLUMNS = (
    ["t", "q0", "q1", "q2", "q3", "w1", "w2", "w3", "h1", "h2", "h3", "qt0", "qt1", "qt2", "qt3", "error_deg"]
    + ["Tc1", "Tc2", "Tc3", "Ta1", "Ta2", "Ta3", "status", "iterations"]
)


def _g(x) -> str:
    return f"{float(x):.9g}"


def write_csv(log: TrajectoryLog, path) -> None:
    """One row per step, 9 significant digits.  Wall time is excluded for reproducibility."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(len(log)):
            row = [_g(log.t[k])]
            row += [_g(v) for v in log.q[k]] + [_g(v) for v in log.omega[k]] + [_g(v) for v in log.h_rw[k]]
            row += [_g(v) for v in log.q_t[k]] + [_g(log.error_deg[k])]
            row += [_g(v) for v in log.T_c[k]] + [_g(v) for v in log.T_applied[k]]
            row += [log.status[k], str(int(log.iterations[k]))]
            w.writerow(row)


def dump_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def output_paths(out_dir, cfg: RunConfig) -> dict:
    out = Path(out_dir)
    name = cfg.controller
    return {
        "csv": [out / f"{name}_run{i:02d}.csv" for i in range(cfg.n_runs)],
        "metrics": out / f"{name}_metrics.json",
    }


def existing_outputs(paths: dict) -> list[Path]:
    return [p for p in paths["csv"] + [paths["metrics"]] if p.exists()]


def write_outputs(out_dir, cfg: RunConfig, logs: list[TrajectoryLog], scenario: Scenario) -> dict:
    """Write per-run CSVs and the metrics JSON; returns the metrics document."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    paths = output_paths(out_dir, cfg)
    for lg, p in zip(logs, paths["csv"]):
        write_csv(lg, p)
    doc = metrics_document(cfg, logs, scenario)
    dump_json(doc, paths["metrics"])
    return doc


TABLE_ROWS = [("TT [s]", "tt_s"), ("SSE [deg]", "sse_deg"), ("MSE [deg^2]", "mse_deg2"),
              ("Obs [%]", "observability_pct")]
TABLE_PHASES = ("phase1", "phase2", "phase3")


def format_table(results: dict, runtime: dict | None = None) -> str:
    """Aligned plain-text table: one row per metric, phases I-III under each controller.

    ``runtime`` maps controller names to :func:`runtime_stats` output and adds
    a mean per-step wall time row.
    """
    names = list(results)
    label_w = max(len(r[0]) for r in TABLE_ROWS) + 2
    col_w = 9
    group = " ".join(f"{p:>{col_w}}" for p in ("I", "II", "III"))
    group_w = len(group)
    lines = [" " * label_w + " | ".join(f"{n.upper():^{group_w}}" for n in names),
             f"{'Phase':<{label_w}}" + " | ".join(group for _ in names)]
    lines.append("-" * len(lines[1]))
    for label, key in TABLE_ROWS:
        cells = []
        for n in names:
            cells.append(" ".join(f"{results[n][p][key]:>{col_w}.3f}" for p in TABLE_PHASES))
        lines.append(f"{label:<{label_w}}" + " | ".join(cells))
    if runtime:
        cells = [f"{runtime[n]['mean_s']:>{group_w}.4f}" for n in names]
        lines.append(f"{'Step [s]':<{label_w}}" + " | ".join(cells))
    return "\n".join(lines) + "\n"


def format_summary(doc: dict, runtime: dict | None = None) -> str:
    lines = [f"controller {doc['controller']}  runs {doc['n_runs']}  seed {doc['base_seed']}",
             f"{'phase':<8}{'TT[s]':>9}{'SSE[deg]':>10}{'MSE[deg2]':>11}{'Obs[%]':>9}{'loss':>12}{'energy':>12}"]
    for p in PHASES:
        m = doc[p]
        loss = m["loss"]["transient"] + m["loss"]["steady"]
        energy = m["energy"]["transient"] + m["energy"]["steady"]
        lines.append(f"{p:<8}{m['tt_s']:>9.2f}{m['sse_deg']:>10.3f}{m['mse_deg2']:>11.3f}"
                     f"{m['observability_pct']:>9.1f}{loss:>12.4g}{energy:>12.4g}")
    if runtime:
        lines.append(f"step time: mean {runtime['mean_s']:.4f} s, max {runtime['max_s']:.4f} s")
    return "\n".join(lines) + "\n"
