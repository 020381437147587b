"""Target attitude generation: circular orbit, LVLH frame and offset schedule.

The body attitude ``q`` maps body components to ECI components, so the target
attitude is the chain ``q_t = q_LVLH/ECI * q_Target/LVLH`` in the composition
order of :mod:`agile_mpc.attitude`.

Two offset models turn a latitude/longitude offset into ``q_Target/LVLH``:

``ground``
    The target is a point on a spherical Earth displaced from the subsatellite
    point by (dlat, dlon).  The boresight (body +z) points along the line of
    sight from the satellite to that point.  Targets beyond the horizon are
    rejected.
``pointing``
    The offsets are look angles: the line of sight is the unit vector with
    elevation ``dlat`` toward local north and azimuth ``dlon`` toward local
    east, measured from nadir.  A longitude rate then maps one to one onto a
    boresight slew rate, and offsets of tens of degrees remain valid.

Both build ``q_Target/LVLH`` as the shortest arc from LVLH +z onto the line of
sight.
"""

from __future__ import annotations

import json
import json.decoder
import json.scanner
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .attitude import quat_conjugate, quat_from_triad, quat_mul, rotate, shortest_arc

log = logging.getLogger(__name__)

EARTH_RADIUS = 6378.137  # km
MU_EARTH = 3.986004418e5  # km^3/s^2
PHASES = ("phase1", "phase2", "phase3", "others")
OFFSET_MODELS = ("ground", "pointing")
Z_AXIS = np.array([0.0, 0.0, 1.0])


class ScenarioError(ValueError):
    """Invalid scenario description.  ``problems`` holds one message per issue."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass(frozen=True)
class OrbitConfig:
    altitude: float = 500.0  # km
    inclination: float = 45.0  # deg
    earth_radius: float = EARTH_RADIUS
    mu: float = MU_EARTH
    phase: float = 0.0  # argument of latitude at t = 0 [rad]

    def __post_init__(self):
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")
        if not (self.earth_radius > 0 and self.mu > 0):
            raise ValueError("earth_radius and mu must be positive")

    @property
    def radius(self) -> float:
        return self.earth_radius + self.altitude

    @property
    def mean_motion(self) -> float:
        return math.sqrt(self.mu / self.radius**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


def orbit_state(cfg: OrbitConfig, t):
    """Inertial position [km] and velocity [km/s] on the circular orbit.

    The ascending node lies on the ECI +X axis.  ``t`` may be an array.
    """
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    a, n = cfg.radius, cfg.mean_motion
    u = cfg.phase + n * t
    ci, si = math.cos(math.radians(cfg.inclination)), math.sin(math.radians(cfg.inclination))
    cu, su = np.cos(u), np.sin(u)
    r = a * np.stack([cu, su * ci, su * si], axis=-1)
    v = a * n * np.stack([-su, cu * ci, cu * si], axis=-1)
    return r, v


def lvlh_axes(position, velocity):
    """LVLH unit axes (x, y, z) in ECI: z nadir, y negative orbit normal."""
    r = np.asarray(position, float)
    v = np.asarray(velocity, float)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    rn = np.linalg.norm(r)
    if rn == 0.0 or hn <= 1e-12 * rn * max(np.linalg.norm(v), 1e-300):
        raise ValueError("position and velocity are degenerate (r x v = 0)")
    z = -r / rn
    y = -h / hn
    x = np.cross(y, z)
    return x, y, z


def lvlh_quaternion(position, velocity) -> np.ndarray:
    """Quaternion mapping LVLH components to ECI components."""
    return quat_from_triad(*lvlh_axes(position, velocity))


def _north_east(position):
    """Local north and east unit vectors (ECI) at the subsatellite point."""
    up = np.asarray(position, float) / np.linalg.norm(position)
    north = Z_AXIS - up[2] * up
    nn = np.linalg.norm(north)
    if nn < 1e-12:
        # over a pole: take the ECI +X meridian as north
        north = np.array([1.0, 0.0, 0.0]) - up[0] * up
        nn = np.linalg.norm(north)
    north = north / nn
    return north, np.cross(north, up)


def line_of_sight(position, offset, model: str = "ground", earth_radius: float = EARTH_RADIUS):
    """Unit line-of-sight vector (ECI) from the satellite to the offset target."""
    r = np.asarray(position, float)
    dlat, dlon = (math.radians(float(a)) for a in offset)
    if model == "pointing":
        north, east = _north_east(r)
        nadir = -r / np.linalg.norm(r)
        los = math.cos(dlat) * math.cos(dlon) * nadir + math.cos(dlat) * math.sin(dlon) * east + math.sin(dlat) * north
        return los / np.linalg.norm(los)
    if model != "ground":
        raise ValueError(f"unknown offset model {model!r}")
    rn = np.linalg.norm(r)
    lat = math.asin(r[2] / rn) + dlat
    lon = math.atan2(r[1], r[0]) + dlon
    p = earth_radius * np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])
    # visible iff the satellite is above the target's local horizon
    if np.dot(r, p) <= earth_radius**2 * (1.0 + 1e-12):
        raise ValueError(f"target offset {tuple(offset)} is below the horizon")
    los = p - r
    return los / np.linalg.norm(los)


def target_quaternion(q_lvlh_eci, sat_position, offset, model: str = "ground",
                      earth_radius: float = EARTH_RADIUS) -> np.ndarray:
    """Target attitude for a (dlat, dlon) offset [deg].

    ``q_Target/LVLH`` is the shortest arc turning LVLH +z onto the line of sight;
    a zero offset therefore returns ``q_lvlh_eci`` itself.
    """
    q_lvlh_eci = np.asarray(q_lvlh_eci, float)
    if offset[0] == 0 and offset[1] == 0:
        return q_lvlh_eci.copy()
    los_eci = line_of_sight(sat_position, offset, model, earth_radius)
    los_lvlh = rotate(quat_conjugate(q_lvlh_eci), los_eci)
    q_target_lvlh = shortest_arc(Z_AXIS, los_lvlh)
    return quat_mul(q_lvlh_eci, q_target_lvlh)


@dataclass(frozen=True)
class Segment:
    """One entry of the schedule.

    The offset is ``(lat, lon + lon_rate * (t - start))`` in degrees.
    """

    start: float
    end: float
    phase: str = "others"
    lat: float = 0.0
    lon: float = 0.0
    lon_rate: float = 0.0
    model: str | None = None
    line: int | None = None

    def offset(self, t: float):
        return self.lat, self.lon + self.lon_rate * (t - self.start)


@dataclass(frozen=True)
class ReferenceSample:
    t: float
    q_t: np.ndarray
    q_lvlh_eci: np.ndarray


@dataclass(frozen=True)
class PhaseSchedule:
    """Ordered, non-overlapping segments; uncovered time uses zero offsets."""

    segments: tuple = ()
    duration: float = 600.0
    default_model: str = "ground"
    warnings: tuple = ()

    def segment_at(self, t: float) -> Segment | None:
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg
        return None

    def phase_at(self, t: float) -> str:
        seg = self.segment_at(t)
        return "others" if seg is None else seg.phase

    def windows(self, phase: str):
        """``(start, end)`` command windows of a phase; for ``others`` the uncovered gaps too."""
        out = [(s.start, s.end) for s in self.segments if s.phase == phase]
        if phase == "others":
            out += self.gaps()
            out.sort()
        return out

    def gaps(self):
        out, cursor = [], 0.0
        for seg in self.segments:
            if seg.start > cursor:
                out.append((cursor, seg.start))
            cursor = max(cursor, seg.end)
        if cursor < self.duration:
            out.append((cursor, self.duration))
        return out

    def normalized(self):
        """Every interval of [0, duration] with its phase and offset law, gaps included."""
        rows = [dict(start=s.start, end=s.end, phase=s.phase, lat=s.lat, lon=s.lon, lon_rate=s.lon_rate,
                     model=s.model or self.default_model) for s in self.segments]
        for a, b in self.gaps():
            rows.append(dict(start=a, end=b, phase="others", lat=0.0, lon=0.0, lon_rate=0.0,
                             model=self.default_model))
        return sorted(rows, key=lambda r: r["start"])


@dataclass(frozen=True)
class Scenario:
    orbit: OrbitConfig = field(default_factory=OrbitConfig)
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    name: str = "scenario"


def _offset_quaternion(orbit: OrbitConfig, schedule: PhaseSchedule, seg: Segment | None, t: float,
                       t_law: float | None = None):
    r, v = orbit_state(orbit, t)
    q_lvlh = lvlh_quaternion(r, v)
    if seg is None:
        return q_lvlh, q_lvlh
    offset = seg.offset(t if t_law is None else t_law)
    model = seg.model or schedule.default_model
    return target_quaternion(q_lvlh, r, offset, model, orbit.earth_radius), q_lvlh


def reference_at(t: float, schedule: PhaseSchedule, orbit: OrbitConfig) -> ReferenceSample:
    """Target attitude at time ``t``; outside any segment the offsets are zero."""
    seg = schedule.segment_at(t)
    q_t, q_lvlh = _offset_quaternion(orbit, schedule, seg, t)
    return ReferenceSample(float(t), q_t, q_lvlh)


def reference_horizon(t: float, n: int, ts: float, schedule: PhaseSchedule, orbit: OrbitConfig) -> np.ndarray:
    """Target attitudes at ``t + k ts`` for ``k = 0..n`` under the command active at ``t``.

    The offset law of the current segment is extrapolated over the whole
    horizon, so upcoming command switches are not anticipated.
    """
    seg = schedule.segment_at(t)
    out = np.empty((n + 1, 4))
    for k in range(n + 1):
        out[k] = _offset_quaternion(orbit, schedule, seg, t + k * ts)[0]
    return out


# ---------------------------------------------------------------- loading

class _Obj(dict):
    line = 0


def _decoder(text: str) -> json.JSONDecoder:
    """JSON decoder whose objects remember the line they start on."""
    dec = json.JSONDecoder()

    def parse_object(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo=None):
        s, end = s_and_end
        pairs, end_out = json.decoder.JSONObject(s_and_end, strict, scan_once, None, list, memo)
        obj = _Obj(pairs)
        obj.line = text.count("\n", 0, end) + 1
        return obj, end_out

    dec.parse_object = parse_object
    dec.scan_once = json.scanner.py_make_scanner(dec)
    return dec


def _number(obj, key, where, problems, default=None):
    if key not in obj:
        if default is None:
            problems.append(f"{where}: missing required field '{key}'")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        problems.append(f"{where}: field '{key}' must be a finite number, got {val!r}")
        return default
    return float(val)


_SEGMENT_KEYS = {"phase", "start", "end", "lat", "lon", "lon_rate", "model", "name"}
_ORBIT_KEYS = {"altitude_km", "inclination_deg", "phase_deg"}
_TOP_KEYS = {"name", "orbit", "duration_s", "offset_model", "segments", "description"}


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Parse and validate a scenario document; raises :class:`ScenarioError`."""
    try:
        doc = _decoder(text).decode(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}:1: top level must be an object")
    problems: list[str] = []
    for key in doc:
        if key not in _TOP_KEYS:
            problems.append(f"{source}:{doc.line}: unknown field '{key}'")

    orbit_doc = doc.get("orbit", _Obj())
    orbit = OrbitConfig()
    if not isinstance(orbit_doc, dict):
        problems.append(f"{source}:{doc.line}: 'orbit' must be an object")
    else:
        where = f"{source}:{getattr(orbit_doc, 'line', doc.line)}: orbit"
        for key in orbit_doc:
            if key not in _ORBIT_KEYS:
                problems.append(f"{where}: unknown field '{key}'")
        alt = _number(orbit_doc, "altitude_km", where, problems, 500.0)
        inc = _number(orbit_doc, "inclination_deg", where, problems, 45.0)
        ph = _number(orbit_doc, "phase_deg", where, problems, 0.0)
        if alt is not None and alt <= 0:
            problems.append(f"{where}: altitude_km must be positive")
        else:
            orbit = OrbitConfig(altitude=alt, inclination=inc, phase=math.radians(ph))

    duration = _number(doc, "duration_s", f"{source}:{doc.line}", problems, 600.0)
    if duration is not None and duration <= 0:
        problems.append(f"{source}:{doc.line}: duration_s must be positive")
    default_model = doc.get("offset_model", "ground")
    if default_model not in OFFSET_MODELS:
        problems.append(f"{source}:{doc.line}: offset_model must be one of {OFFSET_MODELS}")
        default_model = "ground"

    raw = doc.get("segments")
    if not isinstance(raw, list):
        problems.append(f"{source}:{doc.line}: 'segments' must be a list")
        raw = []
    segments = []
    for i, s in enumerate(raw):
        line = getattr(s, "line", doc.line)
        where = f"{source}:{line}: segment {i}"
        if not isinstance(s, dict):
            problems.append(f"{where}: must be an object")
            continue
        for key in s:
            if key not in _SEGMENT_KEYS:
                problems.append(f"{where}: unknown field '{key}'")
        start = _number(s, "start", where, problems)
        end = _number(s, "end", where, problems)
        lat = _number(s, "lat", where, problems, 0.0)
        lon = _number(s, "lon", where, problems, 0.0)
        rate = _number(s, "lon_rate", where, problems, 0.0)
        phase = s.get("phase", "others")
        model = s.get("model")
        if phase not in PHASES:
            problems.append(f"{where}: phase must be one of {PHASES}, got {phase!r}")
        if model is not None and model not in OFFSET_MODELS:
            problems.append(f"{where}: model must be one of {OFFSET_MODELS}, got {model!r}")
        if start is None or end is None:
            continue
        if end <= start:
            problems.append(f"{where}: end ({end:g}) must be after start ({start:g})")
            continue
        if start < 0 or (duration is not None and end > duration):
            problems.append(f"{where}: interval [{start:g}, {end:g}] lies outside [0, {duration:g}]")
        for name, val in (("lat", lat), ("lon", lon), ("lon at end", lon + rate * (end - start))):
            if abs(val) > 90:
                problems.append(f"{where}: {name} offset {val:g} deg exceeds 90 deg")
        segments.append(Segment(start, end, phase, lat, lon, rate, model, line))

    segments.sort(key=lambda seg: (seg.start, seg.end))
    for a, b in zip(segments, segments[1:]):
        if b.start < a.end:
            problems.append(
                f"{source}:{b.line}: segment [{b.start:g}, {b.end:g}] overlaps "
                f"segment [{a.start:g}, {a.end:g}] (line {a.line})"
            )
    if problems:
        raise ScenarioError(problems)

    schedule = PhaseSchedule(tuple(segments), duration, default_model)
    warnings = tuple(f"{source}: no segment covers [{a:g}, {b:g}]; zero offsets are used there"
                     for a, b in schedule.gaps())
    schedule = PhaseSchedule(tuple(segments), duration, default_model, warnings)

    # every ground target must be visible along the orbit
    for seg in segments:
        model = seg.model or default_model
        if model != "ground":
            continue
        for t in np.linspace(seg.start, seg.end, 5):
            r, _ = orbit_state(orbit, t)
            try:
                line_of_sight(r, seg.offset(t), "ground", orbit.earth_radius)
            except ValueError as exc:
                problems.append(f"{source}:{seg.line}: {exc} at t = {t:g} s")
                break
    if problems:
        raise ScenarioError(problems)
    return Scenario(orbit, schedule, str(doc.get("name", Path(source).stem)))


def load_scenario(path=None) -> Scenario:
    """Load a scenario file.

    ``None`` selects the bundled default, as do the names ``default`` and
    ``default.json`` when no such file exists.
    """
    if path is None or (str(path) in ("default", "default.json") and not Path(path).exists()):
        text = resources.files("agile_mpc").joinpath("data/default_scenario.json").read_text()
        return parse_scenario(text, "default_scenario.json")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file ({exc.strerror})") from None
    return parse_scenario(text, str(path))


def reference_table(scenario: Scenario, times) -> tuple[np.ndarray, np.ndarray]:
    """Target and LVLH quaternions at each time in ``times``."""
    times = np.asarray(times, float)
    q_t = np.empty((len(times), 4))
    q_l = np.empty((len(times), 4))
    for i, t in enumerate(times):
        s = reference_at(t, scenario.schedule, scenario.orbit)
        q_t[i], q_l[i] = s.q_t, s.q_lvlh_eci
    return q_t, q_l


__all__ = [
    "OrbitConfig", "PhaseSchedule", "ReferenceSample", "Scenario", "ScenarioError", "Segment",
    "line_of_sight", "load_scenario", "lvlh_axes", "lvlh_quaternion", "orbit_state", "parse_scenario",
    "reference_at", "reference_horizon", "reference_table", "target_quaternion",
]
