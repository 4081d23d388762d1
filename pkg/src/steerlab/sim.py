"""Kinematic vehicle with a lagged actuator, pure-pursuit expert, and the
closed-loop evaluation protocol (crash when >2 m from the expert trajectory,
respawn 2 s further down the road).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .track import DS, Fork, PolylineTracker, Track, point_at

log = logging.getLogger(__name__)

_command_clamp_count = 0


def command_clamp_count() -> int:
    return _command_clamp_count


def reset_command_clamp_count() -> None:
    global _command_clamp_count
    _command_clamp_count = 0


# ---------------------------------------------------------------------------
# vehicle


@dataclass(frozen=True)
class VehicleParams:
    wheelbase_m: float = 2.79
    steering_ratio: float = 15.0  # steering-wheel deg per front-wheel deg
    wheel_limit_deg: float = 500.0  # mechanical steering-wheel limit
    tau_s: float = 0.15  # actuator first-order lag
    rate_limit_deg_s: float = 400.0  # steering-wheel rate limit
    dt_s: float = 0.1


@dataclass
class VehicleState:
    x: float
    y: float
    heading: float  # rad, unwrapped
    speed: float  # m/s, >= 0
    front_wheel_rad: float
    command_deg: float = 0.0  # last commanded steering-wheel angle

    @property
    def front_wheel_deg(self) -> float:
        return math.degrees(self.front_wheel_rad)


def step_vehicle(state: VehicleState, command_deg: float, dt: float,
                 params: VehicleParams) -> VehicleState:
    """One kinematic-bicycle step; the actuator rate-limits then lags the command."""
    global _command_clamp_count
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    limit = params.wheel_limit_deg
    if abs(command_deg) > limit:
        _command_clamp_count += 1
        log.warning("command %.1f deg beyond mechanical limit %.1f, clamped",
                    command_deg, limit)
        command_deg = math.copysign(limit, command_deg)

    target = math.radians(command_deg / params.steering_ratio)
    max_delta = math.radians(params.rate_limit_deg_s / params.steering_ratio) * dt
    limited = np.clip(target - state.front_wheel_rad, -max_delta, max_delta)
    gain = min(dt / params.tau_s, 1.0)
    wheel = state.front_wheel_rad + gain * float(limited)

    heading_rate = state.speed * math.tan(wheel) / params.wheelbase_m
    return VehicleState(
        x=state.x + state.speed * math.cos(state.heading) * dt,
        y=state.y + state.speed * math.sin(state.heading) * dt,
        heading=state.heading + heading_rate * dt,
        speed=state.speed,
        front_wheel_rad=wheel,
        command_deg=command_deg,
    )


def effective_wheel_series(commands_deg: np.ndarray, dt: float,
                           params: VehicleParams, initial_rad: float = 0.0) -> np.ndarray:
    """Actuator response (steering-wheel-equivalent deg) to a command sequence."""
    out = np.empty(len(commands_deg))
    state = VehicleState(0.0, 0.0, 0.0, 0.0, initial_rad)
    for i, cmd in enumerate(commands_deg):
        state = step_vehicle(state, float(cmd), dt, params)
        out[i] = state.front_wheel_deg * params.steering_ratio
    return out


# ---------------------------------------------------------------------------
# expert


@dataclass(frozen=True)
class ExpertParams:
    v_max_mps: float = 14.0
    v_min_mps: float = 3.0
    a_lat_max: float = 2.0  # lateral accel cap -> curve speed
    accel_max: float = 2.0  # longitudinal slew on the speed profile
    lookahead_time_s: float = 1.2
    lookahead_min_m: float = 5.0


@dataclass(frozen=True)
class CommittedPath:
    """Reference polyline the expert follows: main line, or main spliced into a branch."""

    xy: np.ndarray
    arc: np.ndarray
    speed: np.ndarray
    branch_index: int | None = None


def _polyline_curvature(xy: np.ndarray) -> np.ndarray:
    headings = np.arctan2(np.diff(xy[:, 1]), np.diff(xy[:, 0]))
    turn = np.diff(headings)
    turn = (turn + math.pi) % (2.0 * math.pi) - math.pi
    kappa = np.zeros(len(xy))
    kappa[1:-1] = turn / DS
    kappa[0], kappa[-1] = kappa[1], kappa[-2]
    return kappa


def _speed_profile(xy: np.ndarray, params: ExpertParams) -> np.ndarray:
    kappa = np.abs(_polyline_curvature(xy))
    # smooth, then govern by the sharpest curvature in the next 25 m
    win = int(15 / DS)
    kernel = np.ones(win) / win
    smooth = np.convolve(kappa, kernel, mode="same")
    ahead = int(25 / DS)
    governed = np.array([smooth[i:i + ahead].max() for i in range(len(smooth))])
    v = np.sqrt(params.a_lat_max / np.maximum(governed, 1e-9))
    v = np.clip(v, params.v_min_mps, params.v_max_mps)
    for i in range(1, len(v)):  # accel-limited forward pass
        v[i] = min(v[i], math.sqrt(v[i - 1] ** 2 + 2 * params.accel_max * DS))
    for i in range(len(v) - 2, -1, -1):  # decel-limited backward pass
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2 * params.accel_max * DS))
    return v


def build_committed_path(track: Track, branch_index: int | None,
                         params: ExpertParams) -> CommittedPath:
    if branch_index is None:
        xy = track.xy
    else:
        fork = track.forks[branch_index]
        xy = np.concatenate([track.xy[:fork.attach_index + 1], fork.xy[1:]], axis=0)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    return CommittedPath(xy, arc, _speed_profile(xy, params), branch_index)


def choose_commitment(track: Track, rng: np.random.Generator, p_side: float) -> int | None:
    """First fork the expert turns onto, Bernoulli(p_side) each, else None."""
    for i in range(len(track.forks)):
        if rng.random() < p_side:
            return i
    return None


class ExpertLost(RuntimeError):
    """Expert has no usable path point; the episode is aborted."""


class Expert:
    """Pure-pursuit steering toward a speed-scaled lookahead point on the path."""

    def __init__(self, path: CommittedPath, vehicle: VehicleParams,
                 params: ExpertParams | None = None):
        self.path = path
        self.vehicle = vehicle
        self.params = params or ExpertParams()
        self.tracker = PolylineTracker(path.xy, path.arc)

    def command(self, state: VehicleState) -> tuple[float, float, bool]:
        """(steering-wheel deg, target speed m/s, path-finished flag)."""
        s_here, _, dist = self.tracker.project((state.x, state.y))
        if dist > 5.0:
            raise ExpertLost(f"vehicle {dist:.2f} m from path at s={s_here:.1f}")
        lookahead = max(self.params.lookahead_min_m,
                        self.params.lookahead_time_s * state.speed)
        if s_here + lookahead >= self.path.arc[-1]:
            return 0.0, 0.0, True
        tx, ty, _ = point_at(self.path.xy, self.path.arc, s_here + lookahead)
        dx, dy = tx - state.x, ty - state.y
        cos_h, sin_h = math.cos(state.heading), math.sin(state.heading)
        xe = cos_h * dx + sin_h * dy
        ye = -sin_h * dx + cos_h * dy
        if xe <= 0.1:
            raise ExpertLost("lookahead point behind the vehicle")
        kappa = 2.0 * ye / (xe * xe + ye * ye)
        front = math.atan(self.vehicle.wheelbase_m * kappa)
        cmd = math.degrees(front) * self.vehicle.steering_ratio
        cmd = float(np.clip(cmd, -self.vehicle.wheel_limit_deg, self.vehicle.wheel_limit_deg))
        speed = float(np.interp(s_here, self.path.arc, self.path.speed))
        return cmd, speed, False


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class ObservationSpec:
    preview_points: int = 24
    horizon_m: float = 40.0
    noise_std_m: float = 0.0

    @property
    def main_count(self) -> int:
        return 2 * self.preview_points // 3

    @property
    def branch_count(self) -> int:
        return self.preview_points - self.main_count

    @property
    def dim(self) -> int:
        return 2 * self.preview_points + 1


class ObservationBuilder:
    """Ego-frame road preview: points from every drivable branch within the
    horizon, sorted by longitudinal x and zero-padded to a fixed count. The
    committed branch is never marked, so forks look genuinely ambiguous.
    """

    def __init__(self, track: Track, spec: ObservationSpec,
                 rng: np.random.Generator | None = None):
        self.track = track
        self.spec = spec
        self.rng = rng
        self.main_tracker = PolylineTracker(track.xy, track.s)
        self.branch_trackers = [PolylineTracker(f.xy, f.arc) for f in track.forks]
        self._main_offsets = np.linspace(
            spec.horizon_m / spec.main_count, spec.horizon_m, spec.main_count)
        self._branch_offsets = np.linspace(
            spec.horizon_m / spec.branch_count, spec.horizon_m, spec.branch_count)

    def last_main_s(self) -> float:
        return float(self.track.s[self.main_tracker.last_seg])

    def build(self, x: float, y: float, heading: float, speed: float) -> np.ndarray:
        spec = self.spec
        s_main, _, _ = self.main_tracker.project((x, y))
        pts = [point_at(self.track.xy, self.track.s, s_main + off)[:2]
               for off in self._main_offsets]
        for fork, tracker in zip(self.track.forks, self.branch_trackers):
            if not (s_main - 80.0 <= fork.attach_s <= s_main + spec.horizon_m):
                continue
            s_b, _, _ = tracker.project((x, y))
            pts.extend(point_at(fork.xy, fork.arc, s_b + off)[:2]
                       for off in self._branch_offsets)

        rel = np.asarray(pts) - (x, y)
        cos_h, sin_h = math.cos(heading), math.sin(heading)
        ego = np.stack([cos_h * rel[:, 0] + sin_h * rel[:, 1],
                        -sin_h * rel[:, 0] + cos_h * rel[:, 1]], axis=1)
        keep = ego[(ego[:, 0] > 0.25) & (ego[:, 0] <= spec.horizon_m + 1.0)]
        if self.rng is not None and spec.noise_std_m > 0 and len(keep):
            keep = keep + self.rng.normal(0.0, spec.noise_std_m, size=keep.shape)
        keep = keep[np.argsort(keep[:, 0])][:spec.preview_points]

        out = np.zeros(spec.dim)
        flat = keep.reshape(-1)
        out[:len(flat)] = flat
        out[-1] = speed
        return out


# ---------------------------------------------------------------------------
# episode logs


LOG_MAGIC = "# steerlab-log v1"
LOG_COLUMNS = ("t", "s", "x", "y", "heading", "speed", "cmd_deg", "eff_deg",
               "deviation_m", "crash_flag")


@dataclass
class EpisodeLog:
    dt: float
    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    cmd_deg: np.ndarray
    eff_deg: np.ndarray  # actuator output, steering-wheel-equivalent degrees
    deviation_m: np.ndarray
    crash_flag: np.ndarray
    crash_events: list[tuple[float, float]] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def columns(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in LOG_COLUMNS}


class _LogAccumulator:
    def __init__(self, dt: float, config: dict):
        self.rows: list[tuple] = []
        self.crash_events: list[tuple[float, float]] = []
        self.dt = dt
        self.config = config
        self.aborted = False
        self.abort_reason = ""

    def add(self, t, s, x, y, heading, speed, cmd_deg, eff_deg, deviation, crashed):
        self.rows.append((t, s, x, y, heading, speed, cmd_deg, eff_deg,
                          deviation, 1.0 if crashed else 0.0))
        if crashed:
            self.crash_events.append((float(t), float(s)))

    def finish(self) -> EpisodeLog:
        data = np.asarray(self.rows, dtype=np.float64).reshape(-1, len(LOG_COLUMNS))
        cols = {name: data[:, i].copy() for i, name in enumerate(LOG_COLUMNS)}
        return EpisodeLog(dt=self.dt, crash_events=self.crash_events,
                          aborted=self.aborted, abort_reason=self.abort_reason,
                          config=self.config, **cols)


def episode_log_to_csv(log: EpisodeLog, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(LOG_MAGIC + "\n")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        data = np.stack([getattr(log, c) for c in LOG_COLUMNS], axis=1)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def episode_log_from_csv(path, dt: float | None = None) -> EpisodeLog:
    import csv

    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != LOG_MAGIC:
            raise ValueError(f"not an episode log (header {magic!r})")
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != LOG_COLUMNS:
            raise ValueError(f"unexpected log columns {header}")
        data = np.array([[float(v) for v in row] for row in reader])
    cols = {name: data[:, i].copy() for i, name in enumerate(LOG_COLUMNS)}
    if dt is None:
        dt = float(cols["t"][1] - cols["t"][0]) if len(data) > 1 else 0.1
    flags = cols["crash_flag"]
    events = [(float(cols["t"][i]), float(cols["s"][i]))
              for i in np.flatnonzero(flags > 0.5)]
    return EpisodeLog(dt=dt, crash_events=events, **cols)


# ---------------------------------------------------------------------------
# episode runners


@dataclass(frozen=True)
class EvalParams:
    speed_factor: float = 0.8
    crash_distance_m: float = 2.0
    respawn_time_s: float = 2.0


def crossed_crash_threshold(deviation_m: float, threshold_m: float) -> bool:
    """Crash rule: strictly more than the threshold away from the expert trajectory."""
    return deviation_m > threshold_m


def _initial_state(path: CommittedPath, speed: float) -> VehicleState:
    x, y, heading = point_at(path.xy, path.arc, 0.0)
    return VehicleState(x, y, heading, speed, 0.0)


def record_expert_run(track: Track, branch_index: int | None,
                      vehicle: VehicleParams, obs_spec: ObservationSpec,
                      expert_params: ExpertParams | None = None,
                      noise_rng: np.random.Generator | None = None,
                      fork_window_m: float = 20.0):
    """Drive the expert at full speed and record observations + labels.

    Row i holds the pre-step pose, the command issued from it (the training
    label), and the actuator's response to that command. Returns
    (EpisodeLog, observations (N, dim), fork_flag (N,)); raises ExpertLost if
    the expert loses the path.
    """
    expert_params = expert_params or ExpertParams()
    path = build_committed_path(track, branch_index, expert_params)
    expert = Expert(path, vehicle, expert_params)
    builder = ObservationBuilder(track, obs_spec, noise_rng)
    dt = vehicle.dt_s
    ratio = vehicle.steering_ratio
    acc = _LogAccumulator(dt, {"track_seed": track.seed, "branch": branch_index})
    observations: list[np.ndarray] = []
    fork_flags: list[bool] = []
    fork_s = [f.attach_s for f in track.forks]

    state = _initial_state(path, float(path.speed[0]))
    cmd0, _, _ = expert.command(state)
    state.front_wheel_rad = math.radians(cmd0 / ratio)

    max_steps = int(path.arc[-1] / (expert_params.v_min_mps * dt) * 2) + 200
    t = 0.0
    for _ in range(max_steps):
        cmd, target_speed, done = expert.command(state)
        if done:
            break
        s_here, lateral, _ = expert.tracker.project((state.x, state.y))
        observations.append(builder.build(state.x, state.y, state.heading, state.speed))
        fork_flags.append(any(abs(s_here - fs) <= fork_window_m for fs in fork_s))
        state.speed = target_speed
        stepped = step_vehicle(state, cmd, dt, vehicle)
        acc.add(t, s_here, state.x, state.y, state.heading, state.speed,
                stepped.command_deg, stepped.front_wheel_deg * ratio,
                abs(lateral), False)
        state = stepped
        t += dt
    else:
        acc.aborted = True
        acc.abort_reason = "step limit"
    log_out = acc.finish()
    return log_out, np.asarray(observations), np.asarray(fork_flags, dtype=bool)


def run_episode(policy, track: Track, expert_log: EpisodeLog,
                vehicle: VehicleParams, obs_spec: ObservationSpec,
                eval_params: EvalParams | None = None,
                noise_rng: np.random.Generator | None = None) -> EpisodeLog:
    """Closed-loop evaluation: the policy steers, speed replays 0.8x expert,
    crashes respawn 2 s further along the expert trajectory.

    A crash step is logged with crash_flag=1 and no policy query; the next
    row starts from the respawn pose exactly on the expert trajectory.
    """
    ep = eval_params or EvalParams()
    dt = vehicle.dt_s
    ratio = vehicle.steering_ratio
    exp_xy = np.stack([expert_log.x, expert_log.y], axis=1)
    seg = np.hypot(*np.diff(exp_xy, axis=0).T)
    exp_arc = np.concatenate([[0.0], np.cumsum(seg)])
    trace = PolylineTracker(exp_xy, exp_arc)
    builder = ObservationBuilder(track, obs_spec, noise_rng)
    acc = _LogAccumulator(dt, {"track_seed": track.seed})

    def expert_at_time(t_query: float) -> VehicleState:
        tt = expert_log.t
        return VehicleState(
            x=float(np.interp(t_query, tt, expert_log.x)),
            y=float(np.interp(t_query, tt, expert_log.y)),
            heading=float(np.interp(t_query, tt, expert_log.heading)),
            speed=float(np.interp(t_query, tt, expert_log.speed)),
            front_wheel_rad=math.radians(
                float(np.interp(t_query, tt, expert_log.eff_deg)) / ratio),
            command_deg=float(np.interp(t_query, tt, expert_log.cmd_deg)),
        )

    state = expert_at_time(0.0)
    state.speed *= ep.speed_factor
    end_s = exp_arc[-1] - 1.0
    max_steps = int(len(expert_log) / ep.speed_factor * 2.5) + 200
    t = 0.0
    for _ in range(max_steps):
        s_here, _, deviation = trace.project((state.x, state.y))
        if s_here >= end_s:
            break
        if crossed_crash_threshold(deviation, ep.crash_distance_m):
            acc.add(t, s_here, state.x, state.y, state.heading, state.speed,
                    state.command_deg, state.front_wheel_deg * ratio, deviation, True)
            t_expert = float(np.interp(s_here, exp_arc, expert_log.t))
            t_respawn = t_expert + ep.respawn_time_s
            if t_respawn >= expert_log.t[-1]:
                break
            state = expert_at_time(t_respawn)
            state.speed *= ep.speed_factor
            trace.reset(float(np.interp(t_respawn, expert_log.t, exp_arc)))
            t += dt
            continue
        state.speed = ep.speed_factor * float(
            np.interp(s_here, exp_arc, expert_log.speed))
        obs = builder.build(state.x, state.y, state.heading, state.speed)
        cmd = float(policy(obs))
        if not math.isfinite(cmd):
            acc.add(t, s_here, state.x, state.y, state.heading, state.speed,
                    state.command_deg, state.front_wheel_deg * ratio, deviation, False)
            acc.aborted = True
            acc.abort_reason = "non-finite policy command"
            break
        stepped = step_vehicle(state, cmd, dt, vehicle)
        acc.add(t, s_here, state.x, state.y, state.heading, state.speed,
                stepped.command_deg, stepped.front_wheel_deg * ratio, deviation, False)
        state = stepped
        t += dt
    else:
        acc.aborted = True
        acc.abort_reason = "step limit"
    return acc.finish()
