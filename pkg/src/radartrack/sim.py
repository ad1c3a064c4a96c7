"""Synthetic bird's-eye-view radar scenarios and chirp-level frame synthesis.

A scenario is a set of rigid oriented boxes moving on nonlinear trajectories
over a square intensity grid.  Each frame renders every present object as an
anisotropic Gaussian blob matching the box extent and orientation; optional
corruptions add displaced low-intensity ghost copies, motion-direction blur,
pixel dropout, and background speckle.  Generation is bit-deterministic per
seed.  The module also provides a simplified frequency-modulated chirp
synthesizer for point scatterers and an ingestion path for externally
recorded sequences stored as grayscale images plus JSONL annotations.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint, jsonl, seeding
from .errors import ConfigError, IngestError
from .geometry import OrientedBox, wrap_angle
from .tracking import Detection

LIGHT_SPEED = 299_792_458.0

MOTION_KINDS = ("constant_velocity", "constant_turn", "accelerating", "piecewise")

DEFAULT_FRAME_RATE = 4.0

# Blob standard deviation as a fraction of box extent: two sigmas per half
# extent keep ~95% of the mass inside the box outline.
BLOB_SIGMA_FRACTION = 0.25
MIN_BLOB_SIGMA = 0.5

BLUR_TAPS = 4

SCENARIO_FILE = "scenario.json"
FRAMES_FILE = "frames.bin"
ANNOTATION_FILE = "annotations.jsonl"
META_FILE = "meta.json"
CROP_SIZE = 256


# ---------------------------------------------------------------------------
# Motion models and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One leg of a piecewise trajectory: ``frames`` steps with fixed per-frame
    ``turn_rate`` (radians) and ``acceleration`` (cells per frame squared)."""

    frames: int
    turn_rate: float = 0.0
    acceleration: float = 0.0


@dataclass(frozen=True)
class MotionModel:
    """A trajectory prescription for one object.

    ``kind`` selects the update rule: ``constant_velocity`` moves along a
    fixed heading, ``constant_turn`` advances the heading by ``turn_rate``
    radians every frame, ``accelerating`` changes speed by ``acceleration``
    cells per frame, and ``piecewise`` chains :class:`Segment` legs while
    keeping position, heading, and speed continuous across boundaries.

    Positions are in grid cells, ``heading`` in radians, ``speed`` in cells
    per frame, and ``size`` is the (w, h) box extent in cells.
    """

    kind: str
    start: tuple[float, float]
    heading: float
    speed: float
    size: tuple[float, float]
    turn_rate: float = 0.0
    acceleration: float = 0.0
    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in MOTION_KINDS:
            raise ConfigError(
                f"unknown motion kind {self.kind!r}; expected one of {MOTION_KINDS}")
        if self.kind == "piecewise" and not self.segments:
            raise ConfigError("piecewise motion requires at least one segment")


def _step_schedule(model: MotionModel, n_frames: int) -> list[tuple[float, float]]:
    """Per-step (turn, acceleration) pairs for steps 1..n_frames-1."""
    if model.kind == "constant_velocity":
        per_step = (0.0, 0.0)
        return [per_step] * (n_frames - 1)
    if model.kind == "constant_turn":
        return [(model.turn_rate, 0.0)] * (n_frames - 1)
    if model.kind == "accelerating":
        return [(0.0, model.acceleration)] * (n_frames - 1)
    schedule: list[tuple[float, float]] = []
    for segment in model.segments:
        schedule.extend([(segment.turn_rate, segment.acceleration)] * segment.frames)
    while len(schedule) < n_frames - 1:
        last = model.segments[-1]
        schedule.append((last.turn_rate, last.acceleration))
    return schedule[: n_frames - 1]


def trajectory(model: MotionModel, n_frames: int) -> np.ndarray:
    """Integrate ``model`` for ``n_frames`` frames.

    Returns an array of shape (n_frames, 3) holding (x, y, heading) per frame.
    The heading is stored unwrapped so consecutive differences equal the
    per-step turn; each step first turns, then advances ``speed`` cells along
    the new heading.  Speed never drops below zero.
    """
    if n_frames < 1:
        raise ConfigError("a trajectory needs at least one frame")
    x, y = float(model.start[0]), float(model.start[1])
    heading = float(model.heading)
    speed = float(model.speed)
    states = [(x, y, heading)]
    for turn, accel in _step_schedule(model, n_frames):
        heading += turn
        speed = max(speed + accel, 0.0)
        x += speed * math.cos(heading)
        y += speed * math.sin(heading)
        states.append((x, y, heading))
    return np.array(states, dtype=np.float64)


# ---------------------------------------------------------------------------
# Scenario records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioObject:
    """Ground truth for one object: its id and a frame -> box mapping.

    Frames where the object is absent simply have no entry.
    """

    object_id: int
    boxes: dict[int, OrientedBox] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    """Ground truth for a sequence: objects, frame count, and grid geometry.

    ``grid`` is (rows, cols) in cells and ``cell_size`` is meters per cell.
    Object ids must be unique and every present box must lie fully inside the
    grid (its axis-aligned bounds within [0, cols-1] x [0, rows-1]).
    """

    objects: tuple[ScenarioObject, ...]
    n_frames: int
    grid: tuple[int, int]
    cell_size: float = 1.0
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self) -> None:
        ids = [obj.object_id for obj in self.objects]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"object ids must be unique, got {ids}")
        rows, cols = self.grid
        for obj in self.objects:
            for frame, box in obj.boxes.items():
                if not 0 <= frame < self.n_frames:
                    raise ConfigError(
                        f"object {obj.object_id} has a box at frame {frame}, "
                        f"outside 0..{self.n_frames - 1}")
                if not box_inside_grid(box, self.grid):
                    raise ConfigError(
                        f"object {obj.object_id} box at frame {frame} leaves "
                        f"the {rows}x{cols} grid")

    def boxes_at(self, frame: int) -> list[tuple[int, OrientedBox]]:
        """(object_id, box) pairs for objects present at ``frame``."""
        out = []
        for obj in self.objects:
            box = obj.boxes.get(frame)
            if box is not None:
                out.append((obj.object_id, box))
        return out


def box_inside_grid(box: OrientedBox, grid: tuple[int, int]) -> bool:
    """Whether the box's axis-aligned bounds stay within the cell index range."""
    rows, cols = grid
    xmin, ymin, xmax, ymax = box.aabb()
    eps = 1e-9
    return (xmin >= -eps and ymin >= -eps
            and xmax <= cols - 1 + eps and ymax <= rows - 1 + eps)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseParams:
    """Corruption settings for rendered frames.

    ``ghost_probability`` is the per-object, per-frame chance of rendering a
    single displaced copy at ``ghost_distance`` cells with ``ghost_gain``
    intensity.  ``blur`` smears each moving object backwards along its
    inter-frame displacement by that fraction of the displacement length.
    ``dropout`` zeroes each pixel independently with the given probability,
    and ``background`` adds half-normal speckle with the given scale.
    ``ego_drift`` and ``ego_turn`` move the sensor frame itself: every frame
    the viewpoint advances ``ego_drift`` cells along its own heading and
    rotates by ``ego_turn`` radians, so even straight-line world motion bends
    in grid coordinates.
    """

    background: float = 0.0
    ghost_probability: float = 0.0
    ghost_distance: float = 6.0
    ghost_gain: float = 0.35
    blur: float = 0.0
    dropout: float = 0.0
    ego_drift: float = 0.0
    ego_turn: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ghost_probability <= 1.0:
            raise ConfigError("ghost_probability must lie in [0, 1]")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError("dropout must lie in [0, 1]")


def render_blob(frame: np.ndarray, box: OrientedBox, gain: float = 1.0) -> None:
    """Compose an anisotropic Gaussian bump for ``box`` into ``frame`` in place.

    The bump is centered on the box center, axis-aligned with its heading,
    and has standard deviations proportional to the box extent, so the
    rendered footprint matches the box outline.  Composition is pointwise
    maximum, keeping overlapping objects at full contrast.
    """
    rows, cols = frame.shape
    sx = max(BLOB_SIGMA_FRACTION * box.w, MIN_BLOB_SIGMA)
    sy = max(BLOB_SIGMA_FRACTION * box.h, MIN_BLOB_SIGMA)
    reach = 3.0 * max(sx, sy)
    r0 = max(int(math.floor(box.cy - reach)), 0)
    r1 = min(int(math.ceil(box.cy + reach)) + 1, rows)
    c0 = max(int(math.floor(box.cx - reach)), 0)
    c1 = min(int(math.ceil(box.cx + reach)) + 1, cols)
    if r0 >= r1 or c0 >= c1:
        return
    ys, xs = np.mgrid[r0:r1, c0:c1]
    dx = xs - box.cx
    dy = ys - box.cy
    cos_t, sin_t = math.cos(box.theta), math.sin(box.theta)
    along = cos_t * dx + sin_t * dy
    across = -sin_t * dx + cos_t * dy
    bump = gain * np.exp(-0.5 * ((along / sx) ** 2 + (across / sy) ** 2))
    np.maximum(frame[r0:r1, c0:c1], bump, out=frame[r0:r1, c0:c1])


def _render_frame(scenario: Scenario, frame: int, noise: NoiseParams,
                  displacements: dict[int, np.ndarray],
                  rng: np.random.Generator) -> np.ndarray:
    rows, cols = scenario.grid
    out = np.zeros((rows, cols), dtype=np.float64)
    for object_id, box in scenario.boxes_at(frame):
        render_blob(out, box)
        disp = displacements.get(object_id)
        if noise.blur > 0.0 and disp is not None and float(np.hypot(*disp)) > 0.0:
            for tap in range(1, BLUR_TAPS + 1):
                shift = noise.blur * tap / BLUR_TAPS
                gain = 1.0 - tap / (BLUR_TAPS + 1.0)
                ghost = replace(box, cx=box.cx - shift * disp[0],
                                cy=box.cy - shift * disp[1])
                render_blob(out, ghost, gain=gain)
        if noise.ghost_probability > 0.0:
            if rng.random() < noise.ghost_probability:
                angle = rng.uniform(0.0, 2.0 * math.pi)
                ghost = replace(box,
                                cx=box.cx + noise.ghost_distance * math.cos(angle),
                                cy=box.cy + noise.ghost_distance * math.sin(angle))
                render_blob(out, ghost, gain=noise.ghost_gain)
    if noise.dropout > 0.0:
        out *= rng.random(out.shape) >= noise.dropout
    if noise.background > 0.0:
        out += np.abs(rng.normal(0.0, noise.background, out.shape))
    return out


def _ego_poses(n_frames: int, noise: NoiseParams) -> list[tuple[float, float, float]]:
    """Sensor pose (x, y, heading) per frame under the ego-motion settings."""
    poses = [(0.0, 0.0, 0.0)]
    x = y = heading = 0.0
    for _ in range(1, n_frames):
        heading += noise.ego_turn
        x += noise.ego_drift * math.cos(heading)
        y += noise.ego_drift * math.sin(heading)
        poses.append((x, y, heading))
    return poses


def generate_scenario(seed: int, motions: list[MotionModel], n_frames: int,
                      grid: tuple[int, int], cell_size: float = 1.0,
                      frame_rate: float = DEFAULT_FRAME_RATE,
                      noise: NoiseParams | None = None,
                      ) -> tuple[Scenario, np.ndarray]:
    """Simulate ``motions`` for ``n_frames`` frames and render the sequence.

    World trajectories are integrated per motion model, mapped into the
    (possibly moving) sensor frame, and an object is present on a frame
    exactly when its box lies fully inside the grid.  Returns the ground
    truth scenario and the rendered frames, shape (n_frames, rows, cols).
    The same seed and arguments always reproduce the identical byte-for-byte
    output.
    """
    noise = noise or NoiseParams()
    rng = seeding.generator(seed, "scenario")
    poses = _ego_poses(n_frames, noise)
    objects = []
    for index, model in enumerate(motions):
        states = trajectory(model, n_frames)
        boxes: dict[int, OrientedBox] = {}
        for frame in range(n_frames):
            ex, ey, epsi = poses[frame]
            wx, wy, heading = states[frame]
            dx, dy = wx - ex, wy - ey
            cos_p, sin_p = math.cos(-epsi), math.sin(-epsi)
            box = OrientedBox(cx=cos_p * dx - sin_p * dy,
                              cy=sin_p * dx + cos_p * dy,
                              w=model.size[0], h=model.size[1],
                              theta=wrap_angle(heading - epsi))
            if box_inside_grid(box, grid):
                boxes[frame] = box
        objects.append(ScenarioObject(object_id=index, boxes=boxes))
    scenario = Scenario(objects=tuple(objects), n_frames=n_frames, grid=grid,
                        cell_size=cell_size, frame_rate=frame_rate)
    frames = np.empty((n_frames,) + tuple(grid), dtype=np.float64)
    for frame in range(n_frames):
        displacements = {}
        for object_id, box in scenario.boxes_at(frame):
            prev = scenario.objects[object_id].boxes.get(frame - 1)
            if prev is not None:
                displacements[object_id] = np.array([box.cx - prev.cx,
                                                     box.cy - prev.cy])
        frames[frame] = _render_frame(scenario, frame, noise, displacements, rng)
    return scenario, frames


def detections_from_scenario(scenario: Scenario, max_lag: int = 3,
                             position_noise: float = 0.0,
                             direction_noise: float = 0.0,
                             drop_probability: float = 0.0,
                             score: float = 0.9,
                             seed: int | None = None,
                             ) -> list[list[Detection]]:
    """Turn ground truth into per-frame detections with controlled noise.

    Each present box becomes one detection; its displacement estimates are
    the true center displacements over the last ``max_lag`` frames (as many
    as the object's history provides).  Optional Gaussian noise perturbs
    centers and displacements, and ``drop_probability`` deletes detections
    at random, which makes the output useful as an idealized or degraded
    detector stand-in for exercising the tracker.
    """
    rng = seeding.generator(seed if seed is not None else 0, "detections")
    frames: list[list[Detection]] = []
    for frame in range(scenario.n_frames):
        dets = []
        for obj in scenario.objects:
            box = obj.boxes.get(frame)
            if box is None:
                continue
            if drop_probability > 0.0 and rng.random() < drop_probability:
                continue
            directions = []
            for lag in range(1, max_lag + 1):
                past = obj.boxes.get(frame - lag)
                if past is None:
                    break
                step = np.array([box.cx - past.cx, box.cy - past.cy])
                if direction_noise > 0.0:
                    step = step + rng.normal(0.0, direction_noise, 2)
                directions.append(step)
            cx, cy = box.cx, box.cy
            if position_noise > 0.0:
                cx += rng.normal(0.0, position_noise)
                cy += rng.normal(0.0, position_noise)
            dets.append(Detection(x=cx, y=cy, w=box.w, h=box.h,
                                  theta=box.theta, score=score,
                                  directions=np.array(directions).reshape(-1, 2)))
        frames.append(dets)
    return frames


# ---------------------------------------------------------------------------
# Chirp synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadarParams:
    """Chirp settings: sweep ``bandwidth`` (Hz), ``pulse_duration`` (s),
    ``n_samples`` beat samples per pulse, and the ``sample_interval`` (s),
    which defaults to ``pulse_duration / n_samples``."""

    bandwidth: float
    pulse_duration: float
    n_samples: int
    sample_interval: float | None = None

    @property
    def chirp_rate(self) -> float:
        """Frequency sweep slope in Hz per second."""
        return self.bandwidth / self.pulse_duration

    @property
    def interval(self) -> float:
        return (self.sample_interval if self.sample_interval is not None
                else self.pulse_duration / self.n_samples)

    @property
    def range_resolution(self) -> float:
        """Meters per range bin."""
        return LIGHT_SPEED / (2.0 * self.bandwidth)

    @property
    def max_range(self) -> float:
        """Range whose beat frequency reaches one cycle per sample."""
        return LIGHT_SPEED / (2.0 * self.chirp_rate * self.interval)

    def beat_frequency(self, scatter_range: float) -> float:
        """Normalized beat frequency (cycles per sample) of a static scatterer."""
        delay = 2.0 * scatter_range / LIGHT_SPEED
        return self.chirp_rate * delay * self.interval


def beat_samples(radar: RadarParams,
                 scatterers: list[tuple[float, float]]) -> np.ndarray:
    """Sum of unit-rate complex beat tones for (range, amplitude) scatterers."""
    steps = np.arange(radar.n_samples)
    samples = np.zeros(radar.n_samples, dtype=np.complex128)
    for scatter_range, amplitude in scatterers:
        freq = radar.beat_frequency(scatter_range)
        samples += amplitude * np.exp(-2j * math.pi * freq * steps)
    return samples


def range_spectrum(samples: np.ndarray) -> np.ndarray:
    """Magnitude range profile of one beam's beat samples.

    The transform sign matches the mixer convention above, so a scatterer at
    range r peaks at bin round(r / range_resolution).
    """
    return np.abs(np.fft.ifft(samples) * len(samples))


def fmcw_synthesize(scatterers: list[tuple[float, float, float]],
                    radar: RadarParams, n_beams: int = 360) -> np.ndarray:
    """Synthesize a range-azimuth frame from (range m, azimuth deg, amplitude).

    Each beam covers 360/n_beams degrees; scatterers snap to the nearest
    beam, their beat samples are summed, and the beam's magnitude spectrum
    becomes one column of the (n_samples, n_beams) output.  Scatterers at or
    beyond the maximum unambiguous range are dropped with a warning.
    """
    beam_width = 360.0 / n_beams
    per_beam: dict[int, list[tuple[float, float]]] = {}
    for scatter_range, azimuth, amplitude in scatterers:
        if scatter_range >= radar.max_range:
            warnings.warn(
                f"scatterer at {scatter_range:g} m is at or beyond the "
                f"{radar.max_range:g} m maximum range; dropped", stacklevel=2)
            continue
        beam = round((azimuth % 360.0) / beam_width) % n_beams
        per_beam.setdefault(beam, []).append((scatter_range, amplitude))
    frame = np.zeros((radar.n_samples, n_beams), dtype=np.float64)
    for beam, points in per_beam.items():
        frame[:, beam] = range_spectrum(beat_samples(radar, points))
    return frame


def polar_to_cartesian(polar: np.ndarray, radar: RadarParams,
                       out_size: int) -> np.ndarray:
    """Resample a (range bins, beams) frame onto a square Cartesian grid.

    The sensor sits at the grid center; the grid spans the maximum range in
    every direction, and each output cell takes the value of its nearest
    range bin and beam (nearest-neighbor, no smoothing).  Cells beyond the
    last range bin are zero.
    """
    n_bins, n_beams = polar.shape
    center = (out_size - 1) / 2.0
    scale = radar.max_range / center
    ys, xs = np.mgrid[0:out_size, 0:out_size]
    dx = (xs - center) * scale
    dy = (ys - center) * scale
    radius = np.hypot(dx, dy)
    bins = np.rint(radius / radar.range_resolution).astype(int)
    azimuth = np.degrees(np.arctan2(dy, dx)) % 360.0
    beams = np.rint(azimuth / (360.0 / n_beams)).astype(int) % n_beams
    valid = bins < n_bins
    out = np.zeros((out_size, out_size), dtype=np.float64)
    out[valid] = polar[bins[valid], beams[valid]]
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _annotation_records(scenario: Scenario) -> list[dict]:
    records = []
    for frame in range(scenario.n_frames):
        entries = [{"id": object_id, "cx": box.cx, "cy": box.cy,
                    "w": box.w, "h": box.h, "theta": box.theta}
                   for object_id, box in scenario.boxes_at(frame)]
        records.append({"frame": frame, "objects": entries})
    return records


def _scenario_from_annotations(records: list[dict], grid: tuple[int, int],
                               cell_size: float, frame_rate: float) -> Scenario:
    n_frames = max((int(r["frame"]) for r in records), default=-1) + 1
    boxes_by_id: dict[int, dict[int, OrientedBox]] = {}
    for record in records:
        frame = int(record["frame"])
        for entry in record["objects"]:
            box = OrientedBox(cx=float(entry["cx"]), cy=float(entry["cy"]),
                              w=float(entry["w"]), h=float(entry["h"]),
                              theta=float(entry["theta"]))
            boxes_by_id.setdefault(int(entry["id"]), {})[frame] = box
    objects = tuple(ScenarioObject(object_id=object_id, boxes=boxes)
                    for object_id, boxes in sorted(boxes_by_id.items()))
    return Scenario(objects=objects, n_frames=n_frames, grid=grid,
                    cell_size=cell_size, frame_rate=frame_rate)


def save_scenario(directory: str | Path, scenario: Scenario,
                  frames: np.ndarray) -> None:
    """Write scenario.json, the frame stack, and per-frame annotations."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"n_frames": scenario.n_frames, "grid": list(scenario.grid),
            "cell_size": scenario.cell_size, "frame_rate": scenario.frame_rate}
    (directory / SCENARIO_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    checkpoint.save_arrays(directory / FRAMES_FILE, {"frames": frames})
    jsonl.write_records(directory / ANNOTATION_FILE,
                        _annotation_records(scenario))


def load_scenario(directory: str | Path) -> tuple[Scenario, np.ndarray]:
    """Read back a directory written by :func:`save_scenario`."""
    directory = Path(directory)
    meta = json.loads((directory / SCENARIO_FILE).read_text())
    frames = checkpoint.load_arrays(directory / FRAMES_FILE)["frames"]
    records = jsonl.read_records(directory / ANNOTATION_FILE)
    scenario = _scenario_from_annotations(
        records, grid=tuple(meta["grid"]), cell_size=float(meta["cell_size"]),
        frame_rate=float(meta["frame_rate"]))
    if scenario.n_frames != int(meta["n_frames"]):
        scenario = replace(scenario, n_frames=int(meta["n_frames"]))
    return scenario, frames


# ---------------------------------------------------------------------------
# External sequence ingestion
# ---------------------------------------------------------------------------


def export_frames(directory: str | Path, scenario: Scenario,
                  frames: np.ndarray) -> None:
    """Write a sequence in the external image format: one 8-bit grayscale PNG
    per frame plus JSONL annotations and a small metadata file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index in range(len(frames)):
        quantized = np.clip(frames[index], 0.0, 1.0)
        image = Image.fromarray(np.rint(quantized * 255.0).astype(np.uint8),
                                mode="L")
        image.save(directory / f"frame_{index:06d}.png")
    jsonl.write_records(directory / ANNOTATION_FILE,
                        _annotation_records(scenario))
    meta = {"cell_size": scenario.cell_size, "frame_rate": scenario.frame_rate}
    (directory / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")


def ingest_recorded(directory: str | Path, crop: bool = True,
                   crop_size: int = CROP_SIZE) -> tuple[Scenario, np.ndarray]:
    """Load an externally recorded sequence of grayscale frames plus boxes.

    The directory must hold ``frame_*.png`` images and an
    ``annotations.jsonl`` file of per-frame oriented boxes with ids.  With
    ``crop`` enabled a centered ``crop_size`` square is cut from every frame,
    annotations are shifted accordingly, and boxes that do not lie fully
    inside the crop are excluded.  Raises :class:`IngestError` when the
    annotation file or the frame images are missing.
    """
    directory = Path(directory)
    annotation_path = directory / ANNOTATION_FILE
    if not annotation_path.exists():
        raise IngestError(f"missing annotation file: {annotation_path}")
    paths = sorted(directory.glob("frame_*.png"))
    if not paths:
        raise IngestError(f"no frame images found in: {directory}")
    frames = np.stack([
        np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
        for path in paths])
    records = jsonl.read_records(annotation_path)
    rows, cols = frames.shape[1:]
    offset_x = offset_y = 0
    if crop:
        if crop_size > rows or crop_size > cols:
            raise IngestError(
                f"cannot cut a {crop_size} crop from {rows}x{cols} frames")
        offset_y = (rows - crop_size) // 2
        offset_x = (cols - crop_size) // 2
        frames = frames[:, offset_y:offset_y + crop_size,
                        offset_x:offset_x + crop_size]
        rows = cols = crop_size
    shifted = []
    for record in records:
        entries = []
        for entry in record["objects"]:
            entry = dict(entry)
            entry["cx"] = float(entry["cx"]) - offset_x
            entry["cy"] = float(entry["cy"]) - offset_y
            box = OrientedBox(entry["cx"], entry["cy"], float(entry["w"]),
                              float(entry["h"]), float(entry["theta"]))
            if box_inside_grid(box, (rows, cols)):
                entries.append(entry)
        shifted.append({"frame": int(record["frame"]), "objects": entries})
    meta_path = directory / META_FILE
    cell_size, frame_rate = 1.0, DEFAULT_FRAME_RATE
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        cell_size = float(meta.get("cell_size", cell_size))
        frame_rate = float(meta.get("frame_rate", frame_rate))
    scenario = _scenario_from_annotations(shifted, grid=(rows, cols),
                                          cell_size=cell_size,
                                          frame_rate=frame_rate)
    if scenario.n_frames < len(frames):
        scenario = replace(scenario, n_frames=len(frames))
    return scenario, frames
