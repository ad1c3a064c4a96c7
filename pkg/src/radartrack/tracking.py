"""Multi-object tracking with motion-consistency association.

A constant-velocity Kalman filter carries each track's state
(x, y, scale, aspect, heading and their rates).  Association scores blend two
generalized-IoU terms: the current observation against the track's predicted
box rotated by the average turn of a pseudo-tracklet, and the track's recent
matched observations against the pseudo-tracklet's estimated past positions.
A plain-overlap association mode is kept as a baseline.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, UndefinedAngleError
from .geometry import (OrientedBox, giou, iou, rotate_prediction,
                       signed_turn_angle, wrap_angle)

STATE_DIM = 9
MEASUREMENT_DIM = 5
ASPECT_EPS = 1e-6
MIN_SCALE = 1e-6

SCORE_GATE = 0.08         # detections at or below this confidence are dropped
SPAWN_THRESHOLD = 0.20    # unmatched detections above this start new tracks
ANGLE_WEIGHT = 0.5        # blend between the rotated-overlap and tracklet terms
MOTION_GATE = -0.2        # minimum combined similarity for a valid match
OVERLAP_GATE = 0.1        # minimum plain IoU for the baseline association
MAX_MISSES = 5            # consecutive unmatched frames before deletion
HISTORY_LENGTH = 16       # matched observations retained per track

TRANSITION = np.eye(STATE_DIM)
TRANSITION[0, 5] = 1.0    # x advances by its rate
TRANSITION[1, 6] = 1.0    # y advances by its rate
TRANSITION[2, 7] = 1.0    # scale advances by its rate
TRANSITION[4, 8] = 1.0    # heading advances by its rate; aspect stays constant
OBSERVATION = np.eye(MEASUREMENT_DIM, STATE_DIM)
PROCESS_NOISE = np.diag([0.1, 5.0, 1e-4, 1e-4, 10.0, 0.01, 0.01, 1e-4, 0.1])
MEASUREMENT_NOISE = 10.0 * np.eye(MEASUREMENT_DIM)
INITIAL_COVARIANCE = np.diag([10.0] * 7 + [10000.0, 10000.0])


# -- observations -----------------------------------------------------------------


@dataclass
class Detection:
    """One detected box plus its estimated past displacements.

    ``directions`` holds one row per look-back step: row i is the estimated
    displacement from the position i+1 frames ago to the current position.
    """

    x: float
    y: float
    w: float
    h: float
    theta: float
    score: float
    directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self) -> None:
        if self.w <= 0.0 or self.h <= 0.0:
            raise ValueError(f"detection extent must be positive, got "
                             f"w={self.w}, h={self.h}")
        self.directions = np.asarray(self.directions,
                                     dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.directions)):
            raise ValueError("direction estimates must be finite")

    def box(self) -> OrientedBox:
        return OrientedBox(self.x, self.y, self.w, self.h, self.theta)


def detection_from_record(record: dict) -> Detection:
    """Build a detection from one JSONL record."""
    return Detection(x=float(record["x"]), y=float(record["y"]),
                     w=float(record["w"]), h=float(record["h"]),
                     theta=float(record["theta"]), score=float(record["score"]),
                     directions=np.asarray(record.get("directions", []),
                                           dtype=np.float64).reshape(-1, 2))


def detection_to_record(frame: int, detection: Detection) -> dict:
    """Serialize a detection as one JSONL record."""
    return {"frame": int(frame), "x": detection.x, "y": detection.y,
            "w": detection.w, "h": detection.h, "theta": detection.theta,
            "score": detection.score,
            "directions": detection.directions.tolist()}


def measurement_vector(detection: Detection) -> np.ndarray:
    """Map a detection to the filter's (x, y, scale, aspect, heading) space."""
    return np.array([detection.x, detection.y, detection.w * detection.h,
                     detection.w / (detection.h + ASPECT_EPS),
                     detection.theta])


# -- pseudo-tracklets -------------------------------------------------------------


@dataclass(frozen=True)
class PseudoTracklet:
    """Estimated recent trajectory reconstructed from one detection.

    ``centers`` run oldest to newest with the last row equal to the current
    observation center; ``velocities`` are the successive differences.
    """

    centers: np.ndarray     # (T, 2)
    velocities: np.ndarray  # (T - 1, 2)


def build_pseudo_tracklet(center, directions) -> PseudoTracklet:
    """Chain estimated past centers from the current center and displacements.

    ``directions`` row i is the displacement from i+1 frames ago to now, so
    the center i+1 frames ago is the current center minus that row.
    """
    center = np.asarray(center, dtype=np.float64).reshape(2)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 2)
    if not (np.all(np.isfinite(center)) and np.all(np.isfinite(directions))):
        raise ValueError("tracklet inputs must be finite")
    centers = np.empty((len(directions) + 1, 2))
    centers[-1] = center
    for step, displacement in enumerate(directions, start=1):
        centers[-1 - step] = center - displacement
    return PseudoTracklet(centers=centers, velocities=np.diff(centers, axis=0))


def average_turn(tracklet: PseudoTracklet) -> float:
    """Mean signed turn between consecutive tracklet velocities.

    Needs at least two velocity pairs (four centers) to be meaningful;
    shorter tracklets and degenerate (zero-velocity) pairs contribute no
    correction.
    """
    if len(tracklet.centers) < 4:
        return 0.0
    angles = []
    velocities = tracklet.velocities
    for i in range(len(velocities) - 1):
        try:
            angles.append(signed_turn_angle(velocities[i], velocities[i + 1]))
        except UndefinedAngleError:
            continue
    return float(np.mean(angles)) if angles else 0.0


# -- Kalman filter ----------------------------------------------------------------


@dataclass
class KFTrack:
    """One tracked object: filter state plus lifecycle bookkeeping.

    ``history`` holds (frame, box) pairs for matched observations, stamped
    with the track's own frame clock so that gaps from missed frames stay
    visible to the similarity terms.
    """

    state: np.ndarray                 # (9,)
    covariance: np.ndarray            # (9, 9)
    id: int
    frame: int = 0
    age: int = 0
    hits: int = 1
    misses: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LENGTH))
    score: float = 0.0
    prev_position: np.ndarray | None = None

    def predicted_box(self) -> OrientedBox:
        return state_box(self.state)


def state_box(state: np.ndarray) -> OrientedBox:
    """Recover an oriented box from (x, y, scale, aspect, heading)."""
    scale = max(float(state[2]), MIN_SCALE)
    aspect = max(float(state[3]), MIN_SCALE)
    w = float(np.sqrt(scale * aspect))
    return OrientedBox(float(state[0]), float(state[1]), w, scale / w,
                       float(state[4]))


def start_track(detection: Detection, track_id: int, frame: int = 0) -> KFTrack:
    """Open a track on a detection; its first displacement seeds the velocity."""
    state = np.zeros(STATE_DIM)
    state[:MEASUREMENT_DIM] = measurement_vector(detection)
    if len(detection.directions):
        state[5:7] = detection.directions[0]
    track = KFTrack(state=state, covariance=INITIAL_COVARIANCE.copy(),
                    id=track_id, frame=frame, score=detection.score)
    track.history.append((frame, detection.box()))
    return track


def kf_predict(track: KFTrack) -> KFTrack:
    """Advance the state one frame under the constant-velocity model."""
    track.prev_position = track.state[:2].copy()
    track.state = TRANSITION @ track.state
    track.state[2] = max(track.state[2], MIN_SCALE)
    track.state[3] = max(track.state[3], MIN_SCALE)
    track.covariance = TRANSITION @ track.covariance @ TRANSITION.T + PROCESS_NOISE
    track.age += 1
    track.frame += 1
    return track


def kf_update(track: KFTrack, detection: Detection) -> KFTrack:
    """Fold one matched detection into the state (standard gain update)."""
    innovation = measurement_vector(detection) - OBSERVATION @ track.state
    innovation[4] = wrap_angle(innovation[4])
    s = OBSERVATION @ track.covariance @ OBSERVATION.T + MEASUREMENT_NOISE
    # The additive measurement noise keeps s invertible; a singular s here
    # means the covariance was corrupted upstream, so let solve() abort.
    gain = np.linalg.solve(s.T, (track.covariance @ OBSERVATION.T).T).T
    track.state = track.state + gain @ innovation
    track.state[2] = max(track.state[2], MIN_SCALE)
    track.state[3] = max(track.state[3], MIN_SCALE)
    track.state[4] = wrap_angle(track.state[4])
    track.covariance = (np.eye(STATE_DIM) - gain @ OBSERVATION) @ track.covariance
    track.covariance = (track.covariance + track.covariance.T) / 2.0
    if len(detection.directions):
        # observation-centric velocity: the process noise keeps the filter's
        # velocity nearly frozen, so refresh it from the newest displacement
        # estimate instead of waiting on the gain
        track.state[5:7] = detection.directions[0]
    track.hits += 1
    track.misses = 0
    track.score = detection.score
    track.history.append((track.frame, detection.box()))
    return track


# -- similarity and assignment ------------------------------------------------------


def rotated_prediction_box(track: KFTrack, phi: float) -> OrientedBox:
    """Predicted box with its center swung by ``phi`` about the prior position."""
    box = state_box(track.state)
    if track.prev_position is None or phi == 0.0:
        return box
    center = rotate_prediction(track.prev_position, track.state[:2], phi)
    return OrientedBox(float(center[0]), float(center[1]), box.w, box.h,
                       box.theta)


def similarity(track: KFTrack, detection: Detection,
               tracklet: PseudoTracklet, angle_weight: float) -> float:
    """Blend of rotated-prediction overlap and tracklet-history overlap.

    The tracklet term averages generalized IoU between the track's matched
    observation k frames back and the tracklet's estimated center k frames
    back (current extent reused).  Pairing is by frame stamp, so frames the
    track missed simply contribute no term and the remaining pairs stay
    aligned.  With no usable pair the rotated-prediction term carries full
    weight.
    """
    if not 0.0 <= angle_weight <= 1.0:
        raise ConfigError(f"angle weight must lie in [0, 1], got {angle_weight}")
    obs_box = detection.box()
    c_angle = giou(obs_box, rotated_prediction_box(track, average_turn(tracklet)))
    observed = dict(track.history)
    terms = []
    for back in range(1, len(tracklet.centers)):
        box = observed.get(track.frame - back)
        if box is None:
            continue
        center = tracklet.centers[-1 - back]
        estimated = OrientedBox(float(center[0]), float(center[1]),
                                detection.w, detection.h, detection.theta)
        terms.append(giou(box, estimated))
    if not terms:
        return c_angle
    return angle_weight * c_angle + (1.0 - angle_weight) * float(np.mean(terms))


def solve_assignment(scores: np.ndarray,
                     gate: float) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Maximize total pair score one-to-one; drop pairs scoring below the gate.

    Returns (matched (row, col) pairs, unmatched rows, unmatched cols).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_rows, n_cols = scores.shape
    if n_rows == 0 or n_cols == 0:
        return [], list(range(n_rows)), list(range(n_cols))
    rows, cols = linear_sum_assignment(-scores)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols)
               if scores[r, c] >= gate]
    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    return (matches,
            [r for r in range(n_rows) if r not in matched_rows],
            [c for c in range(n_cols) if c not in matched_cols])


def associate(tracks, detections, tracklets, angle_weight: float,
              gate: float) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Score every track/detection pair and solve the assignment."""
    scores = np.array([[similarity(track, det, tracklet, angle_weight)
                        for det, tracklet in zip(detections, tracklets)]
                       for track in tracks]).reshape(len(tracks), len(detections))
    return solve_assignment(scores, gate)


# -- lifecycle ----------------------------------------------------------------------


class Tracker:
    """Per-frame predict / associate / update / delete / initialize loop.

    ``association`` selects the similarity: "motion" uses the blended
    pseudo-tracklet score, "overlap" uses plain IoU against the unrotated
    prediction.  Matched tracks emit their observation's box each frame;
    coasting tracks emit nothing.
    """

    def __init__(self, association: str = "motion",
                 angle_weight: float = ANGLE_WEIGHT,
                 score_gate: float = SCORE_GATE,
                 spawn_threshold: float = SPAWN_THRESHOLD,
                 gate: float | None = None,
                 max_misses: int = MAX_MISSES):
        if association not in ("motion", "overlap"):
            raise ConfigError(f"unknown association mode {association!r}")
        if not 0.0 <= angle_weight <= 1.0:
            raise ConfigError(f"angle weight must lie in [0, 1], got {angle_weight}")
        if max_misses < 1:
            raise ConfigError("max_misses must be at least 1")
        self.association = association
        self.angle_weight = angle_weight
        self.score_gate = score_gate
        self.spawn_threshold = spawn_threshold
        self.gate = (MOTION_GATE if association == "motion" else OVERLAP_GATE) \
            if gate is None else gate
        self.max_misses = max_misses
        self.tracks: list[KFTrack] = []
        self.frame_index = 0
        self._next_id = 1

    def step(self, detections) -> list[dict]:
        """Process one frame of detections; return emitted track records."""
        detections = sorted((d for d in detections if d.score > self.score_gate),
                            key=lambda d: -d.score)
        for track in self.tracks:
            kf_predict(track)
        if self.association == "motion":
            tracklets = [build_pseudo_tracklet((d.x, d.y), d.directions)
                         for d in detections]
            matches, unmatched_tracks, unmatched_dets = associate(
                self.tracks, detections, tracklets, self.angle_weight, self.gate)
        else:
            scores = np.array([[iou(track.predicted_box(), det.box())
                                for det in detections]
                               for track in self.tracks]
                              ).reshape(len(self.tracks), len(detections))
            matches, unmatched_tracks, unmatched_dets = solve_assignment(
                scores, self.gate)

        emitted = []
        for track_idx, det_idx in matches:
            track = kf_update(self.tracks[track_idx], detections[det_idx])
            emitted.append(self._record(track, detections[det_idx]))
        for track_idx in unmatched_tracks:
            self.tracks[track_idx].misses += 1
        self.tracks = [t for t in self.tracks if t.misses < self.max_misses]
        for det_idx in unmatched_dets:
            detection = detections[det_idx]
            if detection.score > self.spawn_threshold:
                track = start_track(detection, self._next_id, self.frame_index)
                self._next_id += 1
                self.tracks.append(track)
                emitted.append(self._record(track, detection))
        emitted.sort(key=lambda record: record["id"])
        self.frame_index += 1
        return emitted

    def _record(self, track: KFTrack, detection: Detection) -> dict:
        return {"frame": self.frame_index, "id": track.id,
                "x": detection.x, "y": detection.y, "w": detection.w,
                "h": detection.h, "theta": detection.theta,
                "score": detection.score}


def track_scene(frames, **tracker_kwargs) -> list[dict]:
    """Run a fresh tracker over per-frame detection lists; concatenate records."""
    tracker = Tracker(**tracker_kwargs)
    records = []
    for detections in frames:
        records.extend(tracker.step(detections))
    return records
