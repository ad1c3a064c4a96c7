"""Command-line surface: scenario synthesis, training, tracking, evaluation,
complexity tables, and gradient checking.

Every subcommand is deterministic given its configuration and ``--seed``;
rerunning a command writes byte-identical primary outputs.  Exit codes: 0 on
success, 2 for configuration problems, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, gradchecks, jsonl, seeding
from . import tensor as tt
from .config import Config, load_config
from .errors import ConfigError, IngestError, OracleError, ShapeError
from .geometry import OrientedBox
from .losses import ClipTracks, build_frame_targets, total_loss
from .metrics import evaluate_tracking, summaries_csv, trajectories_from_records
from .model import RadarNet
from .optim import Adam
from .relation import attention_cost
from .sim import (MotionModel, NoiseParams, Scenario, generate_scenario,
                  load_scenario, save_scenario)
from .tracking import Detection, Tracker

GRADCHECK_TOLERANCE = 1e-4

LOSS_COLUMNS = "step,total,heatmap,size,orientation,offset,direction"


def _load_config(args) -> Config:
    return load_config(args.config) if args.config else Config()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_from_config(config: Config, seed: int) -> RadarNet:
    arch = config.architecture
    rng = seeding.generator(seed, "model-init")
    return RadarNet(rng, frames=arch.frames, top_k=arch.top_k,
                    channels=arch.channels, pos_dim=arch.pos_dim,
                    attention_heads=arch.attention_heads, relation=arch.relation,
                    window=arch.window, patch=arch.patch,
                    slot_stride=arch.slot_stride, stages=arch.stages,
                    window_repeats=arch.window_repeats,
                    regroup_repeats=arch.regroup_repeats, merge=arch.merge)


def _scenario_dirs(root: str | None) -> list[Path]:
    if root is None:
        raise ConfigError("data.scenarios must point at a scenario directory")
    base = Path(root)
    if (base / "scenario.json").exists():
        return [base]
    found = sorted(path.parent for path in base.glob("*/scenario.json"))
    if not found:
        raise ConfigError(f"no scenarios found under {base}")
    return found


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _random_motions(rng: np.random.Generator, data) -> list[MotionModel]:
    rows, cols = data.grid
    motions = []
    for _ in range(data.objects):
        start = (rng.uniform(0.25 * cols, 0.75 * cols),
                 rng.uniform(0.25 * rows, 0.75 * rows))
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(data.speed_min, data.speed_max)
        size = (rng.uniform(3.0, 6.0), rng.uniform(2.0, 4.0))
        if data.turn_rate_max > 0.0:
            motions.append(MotionModel(
                kind="constant_turn", start=start, heading=heading, speed=speed,
                size=size,
                turn_rate=rng.uniform(-data.turn_rate_max, data.turn_rate_max)))
        else:
            motions.append(MotionModel(kind="constant_velocity", start=start,
                                       heading=heading, speed=speed, size=size))
    return motions


def cmd_generate(args) -> int:
    """Synthesize a seeded scenario set under the output directory."""
    config = _load_config(args)
    data = config.data
    out = _out_dir(args)
    noise = NoiseParams(background=data.background,
                        ghost_probability=data.ghost_probability,
                        blur=data.blur, dropout=data.dropout)
    for index in range(data.count):
        rng = seeding.generator(args.seed, "generate", index)
        motions = _random_motions(rng, data)
        scenario, frames = generate_scenario(
            seed=int(rng.integers(2 ** 62)), motions=motions,
            n_frames=data.frames, grid=tuple(int(g) for g in data.grid),
            cell_size=data.cell_size, noise=noise)
        save_scenario(out / f"scenario_{index:04d}", scenario, frames)
    print(f"wrote {data.count} scenarios to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _clip_tracks(scenario: Scenario, start: int, length: int,
                 scale: int) -> ClipTracks:
    count = len(scenario.objects)
    positions = np.zeros((count, length, 2), dtype=np.float64)
    present = np.zeros((count, length), dtype=bool)
    for k, obj in enumerate(scenario.objects):
        for i in range(length):
            box = obj.boxes.get(start + i)
            if box is not None:
                positions[k, i] = (box.cx / scale, box.cy / scale)
                present[k, i] = True
    return ClipTracks(positions=positions, present=present)


def _clip_targets(scenario: Scenario, start: int, length: int, scale: int):
    rows, cols = scenario.grid
    feature_grid = (rows // scale, cols // scale)
    frame_targets = []
    for t in range(start, start + length):
        boxes = [OrientedBox(box.cx / scale, box.cy / scale, box.w / scale,
                             box.h / scale, box.theta)
                 for _, box in scenario.boxes_at(t)]
        frame_targets.append(build_frame_targets(boxes, feature_grid))
    return frame_targets


def cmd_train(args) -> int:
    """Fit the detector on a scenario set; writes loss.csv and model.ckpt."""
    config = _load_config(args)
    out = _out_dir(args)
    scale = config.architecture.downsample
    clip_length = config.architecture.frames
    episodes = []
    for directory in _scenario_dirs(config.data.scenarios):
        scenario, frames = load_scenario(directory)
        rows, cols = scenario.grid
        if rows % scale or cols % scale:
            raise ConfigError(
                f"{directory}: grid {rows}x{cols} is not divisible by {scale}")
        if scenario.n_frames < clip_length:
            raise ConfigError(
                f"{directory}: {scenario.n_frames} frames is shorter than the "
                f"{clip_length}-frame clip")
        episodes.append((scenario, frames))

    model = _model_from_config(config, args.seed)
    params = model.params()
    optimizer = Adam(params, lr=config.training.learning_rate)
    start_step = 0
    if config.training.resume:
        try:
            leftover = checkpoint.load_into(config.training.resume, params)
        except (KeyError, ValueError) as err:
            raise ConfigError(
                f"cannot resume from {config.training.resume}: {err}") from err
        optimizer.load_state_arrays(leftover)
        if "train.step" in leftover:
            start_step = int(leftover["train.step"][0])

    rows = [LOSS_COLUMNS]
    for step in range(start_step, start_step + config.training.steps):
        rng = seeding.generator(args.seed, "train-step", step)
        scenario, frames = episodes[int(rng.integers(len(episodes)))]
        start = int(rng.integers(scenario.n_frames - clip_length + 1))
        clip = frames[start:start + clip_length]
        predictions = model.forward(clip)
        targets = _clip_targets(scenario, start, clip_length, scale)
        tracks = _clip_tracks(scenario, start, clip_length, scale)

        def direction_fn(t: int, tau: int, coords: np.ndarray):
            return model.direction(predictions, t, tau, coords)

        loss, parts = total_loss(predictions, targets, tracks, direction_fn)
        if not math.isfinite(parts["total"]):
            raise OracleError(f"non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        rows.append(",".join([str(step)] + [
            repr(parts[key]) for key in
            ("total", "heatmap", "size", "orientation", "offset", "direction")]))

    (out / "loss.csv").write_text("\n".join(rows) + "\n")
    final_step = start_step + config.training.steps
    extra = optimizer.state_arrays()
    extra["train.step"] = np.array([float(final_step)])
    checkpoint.save_params(out / "model.ckpt", params, extra=extra)
    print(f"trained {config.training.steps} steps "
          f"(through step {final_step - 1}); wrote {out / 'loss.csv'} "
          f"and {out / 'model.ckpt'}")
    return 0


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def _frame_detections(model: RadarNet, predictions, index: int, frame: int,
                      scale: int, k_det: int, max_lag: int) -> list[Detection]:
    decoded = model.decode(predictions, k_det)[index]
    detections = []
    for box in decoded:
        coords = np.array([[box.row, box.col]], dtype=np.intp)
        steps = []
        for lag in range(1, min(max_lag, index, frame) + 1):
            displacement = model.direction(predictions, index, index - lag,
                                           coords)
            steps.append(displacement.data[0] * scale)
        x, y = box.center_pixels()
        detections.append(Detection(
            x=x, y=y, w=box.width * scale, h=box.length * scale,
            theta=box.theta, score=box.confidence,
            directions=np.asarray(steps, dtype=np.float64).reshape(-1, 2)))
    return detections


def scenario_detections(model: RadarNet, frames: np.ndarray, scale: int,
                        k_det: int, max_lag: int) -> list[list[Detection]]:
    """Run the detector over a whole sequence with a sliding clip window.

    The first clip yields detections for its every frame; after that each
    new frame is decoded from the clip that ends on it.
    """
    clip_length = model.frames
    if len(frames) < clip_length:
        raise ConfigError(
            f"sequence has {len(frames)} frames, fewer than the "
            f"{clip_length}-frame clip")
    out: list[list[Detection]] = []
    with tt.no_grad():
        predictions = model.forward(frames[:clip_length])
        for index in range(clip_length):
            out.append(_frame_detections(model, predictions, index, index,
                                         scale, k_det, max_lag))
        for frame in range(clip_length, len(frames)):
            clip = frames[frame - clip_length + 1:frame + 1]
            predictions = model.forward(clip)
            out.append(_frame_detections(model, predictions, clip_length - 1,
                                         frame, scale, k_det, max_lag))
    return out


def cmd_track(args) -> int:
    """Detect and track through a scenario; writes tracks.jsonl."""
    config = _load_config(args)
    out = _out_dir(args)
    model = _model_from_config(config, args.seed)
    try:
        checkpoint.load_into(args.checkpoint, model.params())
    except (KeyError, ValueError) as err:
        raise ConfigError(
            f"checkpoint {args.checkpoint} does not match the configured "
            f"architecture: {err}") from err
    scenario, frames = load_scenario(args.scenario)
    tracking = config.tracking
    detections = scenario_detections(
        model, frames, scale=config.architecture.downsample,
        k_det=tracking.max_detections, max_lag=tracking.max_lag)
    tracker = Tracker(association=tracking.association,
                      angle_weight=tracking.angle_weight,
                      score_gate=tracking.score_gate,
                      spawn_threshold=tracking.spawn_threshold,
                      gate=tracking.match_gate, max_misses=tracking.max_misses)
    records = []
    for frame_detections in detections:
        records.extend(tracker.step(frame_detections))
    jsonl.write_records(out / "tracks.jsonl", records)
    print(f"wrote {len(records)} track records to {out / 'tracks.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    """Score a track file against scenario ground truth; writes metrics.csv."""
    _load_config(args)
    out = _out_dir(args)
    scenario, _ = load_scenario(args.gt)
    gt = {obj.object_id: dict(obj.boxes) for obj in scenario.objects}
    pred = trajectories_from_records(jsonl.read_records(args.pred))
    try:
        summary = evaluate_tracking(gt, pred)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    name = args.name if args.name else Path(args.pred).stem
    (out / "metrics.csv").write_text(summaries_csv([(name, summary)]))
    print(f"{name}: mota={summary.mota:.6f} idf1={summary.idf1:.6f} "
          f"switches={summary.id_switches}")
    return 0


# ---------------------------------------------------------------------------
# complexity
# ---------------------------------------------------------------------------


def cmd_complexity(args) -> int:
    """Tabulate attention score counts across clip lengths; writes a CSV.

    Rows cover clip lengths 2..16 that the configured window divides, for 8
    and 16 selected features per frame, comparing full attention over the
    whole clip against the windowed-plus-regrouped form.
    """
    config = _load_config(args)
    arch = config.architecture
    out = _out_dir(args)
    rows = ["frames,top_k,window,patch,stages,full,windowed"]
    for top_k in (8, 16):
        patch = arch.patch if arch.patch is not None else top_k
        for frames in range(2, 17):
            if frames % arch.window:
                continue
            full = attention_cost("full", frames, top_k, arch.stages)
            windowed = attention_cost("windowed", frames, top_k, arch.stages,
                                      window=arch.window, patch=patch)
            rows.append(f"{frames},{top_k},{arch.window},{patch},"
                        f"{arch.stages},{full},{windowed}")
    (out / "complexity.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {len(rows) - 1} rows to {out / 'complexity.csv'}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    """Finite-difference checks for every registered operation; writes a CSV."""
    _load_config(args)
    out = _out_dir(args)
    seeds = range(args.seed, args.seed + args.repeats)
    results = gradchecks.run(seeds=seeds)
    rows = ["op,max_error,status"]
    failures = []
    for name in sorted(results):
        error = results[name]
        status = "pass" if error < GRADCHECK_TOLERANCE else "FAIL"
        if status == "FAIL":
            failures.append(name)
        rows.append(f"{name},{error:.6e},{status}")
    (out / "gradcheck.csv").write_text("\n".join(rows) + "\n")
    worst = max(results.values())
    print(f"{len(results)} ops over {args.repeats} seeds; "
          f"worst error {worst:.3e}; report at {out / 'gradcheck.csv'}")
    if failures:
        raise OracleError(
            f"gradient checks above {GRADCHECK_TOLERANCE:g}: {', '.join(failures)}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radartrack",
        description="Radar sequence detection and tracking workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--out", default=".", help="output directory")
        p.set_defaults(handler=handler)
        return p

    command("generate", cmd_generate, "synthesize a seeded scenario set")
    command("train", cmd_train, "fit the detector on a scenario set")
    track = command("track", cmd_track, "run detection plus tracking")
    track.add_argument("--checkpoint", required=True, help="trained model file")
    track.add_argument("--scenario", required=True, help="scenario directory")
    evaluate = command("eval", cmd_eval, "score tracks against ground truth")
    evaluate.add_argument("--gt", required=True, help="scenario directory")
    evaluate.add_argument("--pred", required=True, help="track JSONL file")
    evaluate.add_argument("--name", default=None, help="sequence label")
    command("complexity", cmd_complexity, "attention cost table")
    gradcheck = command("gradcheck", cmd_gradcheck, "finite-difference report")
    gradcheck.add_argument("--repeats", type=int, default=3,
                           help="seeds per registered op")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, ShapeError, IngestError, FileNotFoundError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except OracleError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
