"""Experiment orchestration: closed-loop episodes, push sweeps and reports.

An :class:`Episode` couples the simulator, the gait state machine and one
controller at a 1 kHz control rate.  Push sweeps walk in place until the push
trigger, snapshot that state once, and replay every impulse from the
snapshot, so runs at different impulses share an identical history.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import _kernels, sim, wsmap
from .exceptions import NumericalBlowup
from .model import RobotModel, reference_model, standing_q
from .planner import Command, GaitState, PlannerConfig
from .wbc import ControllerKind, WbcConfig, WholeBodyController

RESULT_SCHEMA = 1


class ConfigError(ValueError):
    """The experiment configuration is malformed."""


# -- configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryCriterion:
    window: float = 3.0
    height_band: float = 0.30
    fall_fraction: float = 0.50
    min_steps: int = 2


@dataclass(frozen=True)
class SweepGrid:
    heights: tuple = (0.38, 0.40, 0.42, 0.44, 0.46)
    impulse_start: float = 3.0
    impulse_step: float = 0.1
    impulse_max: float = 40.0
    search: str = "linear"
    coarse_step: float = 1.0

    def __post_init__(self):
        if self.impulse_step <= 0 or self.coarse_step <= 0:
            raise ConfigError("impulse steps must be positive")
        if self.search not in ("linear", "bracket"):
            raise ConfigError("search must be 'linear' or 'bracket'")


@dataclass(frozen=True)
class ExperimentSpec:
    model: str = "reference"
    polyhedron: str | None = None
    controllers: tuple = ("SA", "MFT")
    height: float = 0.40
    speed: float = 0.0
    duration: float = 10.0
    stand_time: float = 0.3
    settle_time: float = 2.0
    lti_min: float = 0.7
    resolution: float = wsmap.DEFAULT_RESOLUTION
    planner: dict = field(default_factory=dict)
    wbc: dict = field(default_factory=dict)
    contact: dict = field(default_factory=dict)
    terrain_mu: float = 0.8
    push_spread: float = 0.01
    sweep: SweepGrid = field(default_factory=SweepGrid)
    recovery: RecoveryCriterion = field(default_factory=RecoveryCriterion)
    workers: int = 1
    output: str = "runs"

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "sweep" in d:
                sw = dict(d["sweep"])
                if "heights" in sw:
                    sw["heights"] = tuple(float(h) for h in sw["heights"])
                d["sweep"] = SweepGrid(**sw)
            if "recovery" in d:
                d["recovery"] = RecoveryCriterion(**d["recovery"])
            if "controllers" in d:
                d["controllers"] = tuple(str(c).upper() for c in d["controllers"])
            spec = cls(**d)
            PlannerConfig.from_dict(spec.planner)
            WbcConfig.from_dict(spec.wbc)
            sim.ContactParams(**spec.contact)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        for c in spec.controllers:
            if c not in ("MFT", "SA"):
                raise ConfigError(f"unknown controller kind {c!r}")
        if spec.duration <= 0 or spec.height <= 0:
            raise ConfigError("duration and height must be positive")
        return spec

    @classmethod
    def load(cls, path: str | Path) -> ExperimentSpec:
        try:
            d = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from exc
        return cls.from_dict(d or {})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep"]["heights"] = list(d["sweep"]["heights"])
        d["controllers"] = list(d["controllers"])
        return d


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def run_config(spec: ExperimentSpec, kind: str, height: float, impulse: float) -> dict:
    """Effective configuration of one run; kinds differ only in the ``controller`` entry."""
    d = spec.to_dict()
    for k in ("controllers", "sweep", "workers", "output", "height"):
        d.pop(k)
    d.update(controller=kind, height=height, impulse=impulse)
    return d


# -- resources -----------------------------------------------------------------------

def load_model(ref: str) -> RobotModel:
    return reference_model() if ref in ("reference", "", None) else RobotModel.load(ref)


@lru_cache(maxsize=4)
def _workspace(model_hash: str, model_ref: str, resolution: float, lti_min: float) -> wsmap.WorkspaceMap:
    return wsmap.build(load_model(model_ref), resolution=resolution, lti_min=lti_min)


def controller_resources(spec: ExperimentSpec, model: RobotModel):
    """Stacked polyhedron and passive-joint bounds for the two controllers."""
    wm = _workspace(model.model_hash, spec.model, spec.resolution, spec.lti_min)
    poly = wm.polyhedron
    if spec.polyhedron:
        leg = wsmap.load_polyhedron(spec.polyhedron, model.model_hash)
        poly = wsmap.stack_legs([leg, leg]) if leg.dimension == 2 else leg
    bounds = (np.tile(wm.q_passive_min, 2), np.tile(wm.q_passive_max, 2))
    return poly, bounds


# -- episodes ------------------------------------------------------------------------

@dataclass
class EpisodeStats:
    tick_times: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    faults: int = 0
    max_eps: float = 0.0


class Episode:
    """One closed-loop run; deep-copyable for snapshots."""

    def __init__(self, model: RobotModel, kind: str, height: float, spec: ExperimentSpec,
                 speed: float = 0.0, log: bool = False):
        self.model = model
        self.spec = spec
        self.command = Command(height, speed)
        poly, bounds = controller_resources(spec, model)
        self.controller = WholeBodyController(model, WbcConfig.from_dict(spec.wbc), ControllerKind(kind),
                                              poly, bounds)
        self.controller.log_enabled = log
        q = standing_q(model, height)
        terrain = sim.Terrain.flat(spec.terrain_mu)
        contact = sim.ContactParams(**spec.contact)
        q = sim.settle_on_ground(model, q, terrain, contact)
        self.sim = sim.Simulator(model, sim.SimState(q, np.zeros_like(q)), terrain, contact)
        self.gait = GaitState(PlannerConfig.from_dict(spec.planner), model.gravity)
        self.gait.stand(self.feet()[0])
        self.tick = 0
        self.stats = EpisodeStats()
        self.push_force = 0.0
        self.push_steps_left = 0
        self.push_time: float | None = None
        self.traj = sim.TrajectoryLog() if log else None
        self.last_tick = None

    @property
    def state(self) -> sim.SimState:
        return self.sim.state

    def feet(self):
        s = self.state
        pos, vel, _, _ = _kernels.foot_terms(s.q, s.qd, self.model.limb_array)
        return pos, vel

    def com(self):
        s = self.state
        c = _kernels.center_of_mass(s.q, self.model.limb_array, self.model.torso_array)
        M = _kernels.crba(s.q, self.model.limb_array, self.model.torso_array)
        return c, M[0:2] @ s.qd / self.model.total_mass

    def start_push(self, impulse: float) -> None:
        steps = int(round(self.spec.push_spread / self.sim.dt))
        self.push_force = impulse / (steps * self.sim.dt)
        self.push_steps_left = steps
        self.push_time = self.state.t

    def step(self) -> None:
        """One control tick followed by the physics steps it spans."""
        s = self.state
        dt_ctl = self.sim.dt * sim.CONTROL_DECIMATION
        if not self.gait.walking and s.t >= self.spec.stand_time - 1e-12:
            self.gait.start_walking(s.t, self.feet()[0], 0)
        pos, _ = self.feet()
        c, cv = self.com()
        self.gait.update(s.t, dt_ctl, s.f_c, pos, c, cv, self.command)
        refs = self.gait.references(self.command)
        r = self.controller.control_tick(s.q, s.qd, refs, s.t)
        self.last_tick = r
        st = self.stats
        st.tick_times.append(r.tick_time)
        st.iterations.append(r.iterations)
        st.faults += int(r.fault)
        st.max_eps = max(st.max_eps, float(np.max(np.abs(r.eps))))
        n_push = min(self.push_steps_left, sim.CONTROL_DECIMATION)
        push = self.push_force if n_push else 0.0
        self.sim.advance(r.tau, sim.CONTROL_DECIMATION, push, n_push)
        self.push_steps_left -= n_push
        self.tick += 1
        if self.traj is not None:
            self.traj.record(s, push)

    def run_until(self, t_end: float, stop=None) -> None:
        while self.state.t < t_end - 1e-9:
            self.step()
            if stop is not None and stop(self):
                return


def _walk_to_trigger(model, kind, height, spec) -> Episode:
    """Step in place for ``settle_time`` and stop at the next lift-off."""
    ep = Episode(model, kind, height, spec)
    ep.run_until(spec.settle_time)
    ep.run_until(spec.settle_time + 5.0, stop=lambda e: e.gait.liftoff_event)
    return ep


def recovery_verdict(ep: Episode, crit: RecoveryCriterion) -> str:
    """Run the post-push window and classify the outcome."""
    ref = ep.command.height
    t_end = ep.push_time + crit.window
    steps0 = ep.gait.step_count
    try:
        while ep.state.t < t_end - 1e-9:
            ep.step()
            z = ep.state.q[1]
            if z < crit.fall_fraction * ref or abs(z - ref) > crit.height_band * ref:
                return "Fell"
    except NumericalBlowup:
        return "Diverged"
    if ep.gait.step_count - steps0 < crit.min_steps:
        return "Fell"
    return "Recovered"


# -- push sweep ------------------------------------------------------------------------

def _trial(snapshot: Episode, impulse: float, crit: RecoveryCriterion) -> str:
    ep = copy.deepcopy(snapshot)
    ep.start_push(impulse)
    return recovery_verdict(ep, crit)


@dataclass
class SeriesResult:
    height: float
    controller: str
    I_max: float | None
    verdicts: dict
    config_hash: str
    wall_time: float


@dataclass
class SweepResult:
    series: list
    heights: list
    controllers: list
    spec: dict
    schema_version: int = RESULT_SCHEMA

    def i_max(self, height: float, controller: str) -> float | None:
        for s in self.series:
            if math.isclose(s.height, height) and s.controller == controller:
                return s.I_max
        return None

    def increase(self, height: float) -> float | None:
        return percentage_increase(self.i_max(height, "SA"), self.i_max(height, "MFT"))

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "heights": self.heights,
                "controllers": self.controllers, "spec": self.spec,
                "series": [{**asdict(s), "verdicts": {repr(k): v for k, v in s.verdicts.items()}}
                           for s in self.series]}

    @classmethod
    def from_dict(cls, d: dict) -> SweepResult:
        if d.get("schema_version") != RESULT_SCHEMA:
            raise ConfigError("unsupported result schema")
        series = [SeriesResult(s["height"], s["controller"], s["I_max"],
                               {float(k): v for k, v in s["verdicts"].items()}, s["config_hash"],
                               s["wall_time"]) for s in d["series"]]
        return cls(series, list(d["heights"]), list(d["controllers"]), d["spec"], d["schema_version"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> SweepResult:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot read results: {exc}") from exc


def percentage_increase(sa: float | None, mft: float | None) -> float | None:
    if sa is None or mft is None or sa == 0:
        return None
    return 100.0 * (mft - sa) / sa


def _impulse_grid(start: float, step: float, k: int) -> float:
    # integer multiples keep the swept values exact in decimal
    return round(start + k * step, 10)


def sweep_series(spec: ExperimentSpec, kind: str, height: float) -> SeriesResult:
    """Largest recovered impulse for one (height, controller) pair."""
    t0 = time.perf_counter()
    model = load_model(spec.model)
    grid = spec.sweep
    crit = spec.recovery
    verdicts: dict[float, str] = {}

    def verdict(I):
        if I not in verdicts:
            verdicts[I] = _trial(snap, I, crit)
        return verdicts[I]

    try:
        snap = _walk_to_trigger(model, kind, height, spec)
    except NumericalBlowup:
        return SeriesResult(height, kind, None, {}, config_hash(run_config(spec, kind, height, 0.0)),
                            time.perf_counter() - t0)
    best = None
    if grid.search == "linear":
        k = 0
        while True:
            I = _impulse_grid(grid.impulse_start, grid.impulse_step, k)
            if I > grid.impulse_max or verdict(I) != "Recovered":
                break
            best = I
            k += 1
    else:
        # coarse bracket, then the fine grid inside the bracket
        ratio = max(1, int(round(grid.coarse_step / grid.impulse_step)))
        k = 0
        while True:
            I = _impulse_grid(grid.impulse_start, grid.impulse_step, k)
            if I > grid.impulse_max or verdict(I) != "Recovered":
                break
            best = I
            k += ratio
        lo = 0 if best is None else k - ratio
        for j in range(lo + 1, k):
            I = _impulse_grid(grid.impulse_start, grid.impulse_step, j)
            if verdict(I) != "Recovered":
                break
            best = I
    h = config_hash(run_config(spec, kind, height, 0.0))
    return SeriesResult(height, kind, best, dict(sorted(verdicts.items())), h, time.perf_counter() - t0)


def _series_job(args):
    spec_dict, kind, height = args
    return sweep_series(ExperimentSpec.from_dict(spec_dict), kind, height)


def run_push_sweep(spec: ExperimentSpec, progress=None) -> SweepResult:
    jobs = [(spec.to_dict(), kind, h) for h in spec.sweep.heights for kind in spec.controllers]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            series = list(ex.map(_series_job, jobs))
    else:
        series = []
        for j in jobs:
            series.append(_series_job(j))
            if progress:
                progress(series[-1])
    series.sort(key=lambda s: (s.height, s.controller))
    return SweepResult(series, list(spec.sweep.heights), list(spec.controllers), spec.to_dict())


def audit_i_max(spec: ExperimentSpec, kind: str, height: float, i_max: float) -> tuple[str, str]:
    """Re-run at ``I_max`` and one step above from a fresh snapshot."""
    model = load_model(spec.model)
    snap = _walk_to_trigger(model, kind, height, spec)
    return (_trial(snap, i_max, spec.recovery),
            _trial(snap, round(i_max + spec.sweep.impulse_step, 10), spec.recovery))


# -- walking ----------------------------------------------------------------------

@dataclass
class WalkSummary:
    controller: str
    duration: float
    mean_speed: float
    mean_abs_speed: float
    height_error_mean: float
    height_error_max: float
    pitch_error_max: float
    steps: int
    faults: int
    max_eps: float
    tick_mean_ms: float
    tick_max_ms: float
    mean_iterations: float

    def to_dict(self) -> dict:
        return asdict(self)


def run_walk(spec: ExperimentSpec, kind: str | None = None, log: bool = False,
             measure_from: float | None = None) -> tuple[WalkSummary, Episode]:
    """Closed-loop walk at the commanded speed; statistics over ``t >= measure_from``."""
    model = load_model(spec.model)
    kind = kind or spec.controllers[-1]
    ep = Episode(model, kind, spec.height, spec, spec.speed, log)
    t_meas = spec.stand_time + 2.0 if measure_from is None else measure_from
    if t_meas >= spec.duration:
        t_meas = 0.0
    xs, zs, ths, ts = [], [], [], []
    while ep.state.t < spec.duration - 1e-9:
        ep.step()
        s = ep.state
        if s.t >= t_meas:
            xs.append(s.qd[0]); zs.append(s.q[1]); ths.append(s.q[2]); ts.append(s.t)
    tt = np.array(ep.stats.tick_times) * 1e3
    xs, zs, ths = np.array(xs), np.array(zs), np.array(ths)
    summ = WalkSummary(kind, spec.duration, float(xs.mean()), float(np.abs(xs).mean()),
                       float(np.abs(zs - spec.height).mean()), float(np.abs(zs - spec.height).max()),
                       float(np.abs(ths).max()), ep.gait.step_count, ep.stats.faults, ep.stats.max_eps,
                       float(tt.mean()), float(tt.max()), float(np.mean(ep.stats.iterations)))
    return summ, ep


# -- reports ----------------------------------------------------------------------

def report(result: SweepResult) -> str:
    """Table with I_max per controller and the percentage increase per height."""
    if not result.series or all(s.I_max is None for s in result.series):
        return "no data"

    def fmt(v, nd=1):
        return "-" if v is None else f"{v:.{nd}f}"

    heights = result.heights
    w = 8
    lines = ["height [m]".ljust(26) + "".join(f"{h:>{w}.2f}" for h in heights)]
    for c, label in (("SA", "I_max SA-WBC [Ns]"), ("MFT", "I_max MFT-WBC [Ns]")):
        if c in result.controllers:
            lines.append(label.ljust(26) + "".join(f"{fmt(result.i_max(h, c)):>{w}}" for h in heights))
    if {"SA", "MFT"} <= set(result.controllers):
        lines.append("increase [%]".ljust(26) + "".join(f"{fmt(result.increase(h)):>{w}}" for h in heights))
    return "\n".join(lines)


def make_run_dir(base: str | Path, name: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    d = Path(base) / f"{name}-{stamp}"
    i = 1
    while d.exists():
        d = Path(base) / f"{name}-{stamp}-{i}"
        i += 1
    d.mkdir(parents=True)
    return d


def write_manifest(run_dir: Path, spec: ExperimentSpec, files: list, extra: dict | None = None) -> None:
    (run_dir / "config.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=True))
    manifest = {"config_hash": config_hash(spec.to_dict()), "files": sorted(files),
                "created": time.strftime("%Y-%m-%dT%H:%M:%S"), **(extra or {})}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
