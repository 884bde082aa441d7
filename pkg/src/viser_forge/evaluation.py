"""Task success predicates, rate aggregation, sim-to-real correlation, and
Agent Score collection.

Trajectory logs are pre-recorded (one JSON-lines file per trial); the
harness never runs a policy or a simulator. Trial evaluation is a pure
function of (task, log), so trials parallelize freely. Real-world success
rates only ever enter as CSV fixtures.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CATEGORIES = ("pick_up", "put_in", "push_near", "pick_from", "open", "long_horizon")
# Categories where a grasp without task completion counts as a half-success
# (object grasped but never reaches the target).
HALF_SUCCESS_CATEGORIES = ("put_in", "pick_from")

H_LIFT = 0.05  # m above the initial z to count as grasped
T_HOLD = 1.0  # s of sustained grasp for pick_up
D_NEAR = 0.10  # m center distance for push_near
DELTA_OPEN = 0.05  # m joint extension for open
DEFAULT_TRIALS_PER_TASK = 5


@dataclass(frozen=True)
class ObjectPose:
    position: np.ndarray  # (3,)
    yaw: float = 0.0


@dataclass(frozen=True)
class Frame:
    t: float
    objects: dict[str, ObjectPose]
    gripper_closed: bool = False
    held: str | None = None
    joints: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class TrajectoryLog:
    frames: tuple[Frame, ...]

    def __post_init__(self):
        if not self.frames:
            raise ValueError("trajectory log is empty")
        times = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        first = set(self.frames[0].objects)
        for i, frame in enumerate(self.frames):
            missing = set(frame.objects) - first
            if missing:
                raise ValueError(
                    f"objects {sorted(missing)} appear at frame {i} but not frame 0"
                )


@dataclass(frozen=True)
class SuccessParams:
    """Predicate parameters; which fields matter depends on the category."""

    target: str | None = None
    container: str | None = None
    container_extent: tuple[float, float] | None = None
    container_height: float | None = None
    reference: str | None = None
    source_region: tuple[tuple[float, float], tuple[float, float]] | None = None
    joint: str = "drawer"
    h_lift: float = H_LIFT
    t_hold: float = T_HOLD
    d_near: float = D_NEAR
    delta_open: float = DELTA_OPEN


@dataclass(frozen=True)
class TaskSpec:
    id: str
    instruction: str
    category: str
    success: SuccessParams
    level: int = 1
    scene: str | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        p = self.success
        need_target = self.category in ("pick_up", "put_in", "push_near", "pick_from")
        if need_target and not p.target:
            raise ValueError(f"{self.category} task needs a target object")
        if self.category == "put_in" and not (
            p.container and p.container_extent and p.container_height
        ):
            raise ValueError("put_in task needs container, extent, and height")
        if self.category == "push_near" and not p.reference:
            raise ValueError("push_near task needs a reference object")
        if self.category == "pick_from" and not p.source_region:
            raise ValueError("pick_from task needs a source region")


@dataclass(frozen=True)
class Evidence:
    predicate: str
    frame: int | None = None


@dataclass(frozen=True)
class TrialOutcome:
    status: str  # success | half_success | failure
    evidence: Evidence

    def __post_init__(self):
        if self.status not in ("success", "half_success", "failure"):
            raise ValueError(f"unknown status {self.status!r}")


@dataclass(frozen=True)
class CorrelationReport:
    pairs: tuple[tuple[str, float, float], ...]  # (task, sim_rate, real_rate)
    r: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 pairs")
        if not -1.0 - 1e-12 <= self.r <= 1.0 + 1e-12:
            raise ValueError(f"correlation out of [-1,1]: {self.r}")


@dataclass(frozen=True)
class AgentScoreReport:
    score: float
    n_trials: int
    n_failed: int
    scores: tuple[float, ...]


# ---------------------------------------------------------------------------
# Trajectory parsing


def parse_frame(doc: dict) -> Frame:
    objects = {
        name: ObjectPose(
            position=np.asarray(o["pos"], dtype=np.float64), yaw=float(o.get("yaw", 0.0))
        )
        for name, o in doc.get("objects", {}).items()
    }
    gripper = doc.get("gripper", {})
    return Frame(
        t=float(doc["t"]),
        objects=objects,
        gripper_closed=bool(gripper.get("closed", False)),
        held=gripper.get("held"),
        joints={k: float(v) for k, v in doc.get("joints", {}).items()},
    )


def load_trajectory(path) -> TrajectoryLog:
    """One frame per JSON line."""
    frames = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            frames.append(parse_frame(json.loads(line)))
    return TrajectoryLog(frames=tuple(frames))


def save_trajectory(log: TrajectoryLog, path) -> None:
    lines = []
    for frame in log.frames:
        lines.append(
            json.dumps(
                {
                    "t": frame.t,
                    "objects": {
                        name: {"pos": pose.position.tolist(), "yaw": pose.yaw}
                        for name, pose in frame.objects.items()
                    },
                    "gripper": {"closed": frame.gripper_closed, "held": frame.held},
                    "joints": frame.joints,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_task(path) -> TaskSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    s = doc.get("success", {})
    params = SuccessParams(
        target=s.get("target"),
        container=s.get("container"),
        container_extent=tuple(s["container_extent"]) if s.get("container_extent") else None,
        container_height=s.get("container_height"),
        reference=s.get("reference"),
        source_region=(
            (tuple(s["source_region"][0]), tuple(s["source_region"][1]))
            if s.get("source_region")
            else None
        ),
        joint=s.get("joint", "drawer"),
        h_lift=s.get("h_lift", H_LIFT),
        t_hold=s.get("t_hold", T_HOLD),
        d_near=s.get("d_near", D_NEAR),
        delta_open=s.get("delta_open", DELTA_OPEN),
    )
    return TaskSpec(
        id=doc["id"],
        instruction=doc.get("instruction", ""),
        category=doc["category"],
        success=params,
        level=int(doc.get("level", 1)),
        scene=doc.get("scene"),
    )


# ---------------------------------------------------------------------------
# Predicates


def _grasp_frames(log: TrajectoryLog, target: str, h_lift: float) -> list[int]:
    """Frames where the gripper holds the target lifted h_lift above start."""
    z0 = float(log.frames[0].objects[target].position[2])
    out = []
    for i, frame in enumerate(log.frames):
        if frame.held == target and target in frame.objects:
            if float(frame.objects[target].position[2]) >= z0 + h_lift:
                out.append(i)
    return out


def _sustained_grasp_end(log: TrajectoryLog, grasped: list[int], t_hold: float) -> int | None:
    """End frame of the first contiguous grasp span lasting >= t_hold seconds."""
    if not grasped:
        return None
    runs: list[list[int]] = [[grasped[0]]]
    for i in grasped[1:]:
        if i == runs[-1][-1] + 1:
            runs[-1].append(i)
        else:
            runs.append([i])
    for run in runs:
        if log.frames[run[-1]].t - log.frames[run[0]].t >= t_hold:
            return run[-1]
    return None


def evaluate_trial(task: TaskSpec, log: TrajectoryLog) -> TrialOutcome:
    """Apply the category predicate to a trajectory log.

    success      : the category predicate holds by the final frame
    half_success : the target was grasped at some frame but the predicate
                   fails (grasp-then-place categories only)
    failure      : otherwise
    """
    if task.category == "long_horizon":
        raise ValueError("long-horizon tasks are scored by agent_score, not predicates")
    p = task.success
    frames = log.frames
    final = frames[-1]

    for name in filter(None, (p.target, p.container, p.reference)):
        if name not in frames[0].objects:
            raise ValueError(f"object {name!r} missing from frame 0")

    if task.category == "open":
        if p.joint not in final.joints:
            raise ValueError(f"no joint data for {p.joint!r} in final frame")
        if final.joints[p.joint] >= p.delta_open:
            return TrialOutcome("success", Evidence("open", len(frames) - 1))
        return TrialOutcome("failure", Evidence("none"))

    target = p.target
    grasped = _grasp_frames(log, target, p.h_lift)

    if task.category == "pick_up":
        end = _sustained_grasp_end(log, grasped, p.t_hold)
        if end is not None:
            return TrialOutcome("success", Evidence("pick_up", end))
        return TrialOutcome("failure", Evidence("none"))

    if task.category == "push_near":
        tpos = final.objects[target].position
        rpos = final.objects[p.reference].position
        dist = math.hypot(tpos[0] - rpos[0], tpos[1] - rpos[1])
        if dist <= p.d_near and not grasped:
            return TrialOutcome("success", Evidence("push_near", len(frames) - 1))
        return TrialOutcome("failure", Evidence("none"))

    if task.category == "put_in":
        done = False
        if grasped:
            tpos = final.objects[target].position
            cpos = final.objects[p.container].position
            hx, hy = p.container_extent[0] / 2.0, p.container_extent[1] / 2.0
            inside_xy = abs(tpos[0] - cpos[0]) <= hx and abs(tpos[1] - cpos[1]) <= hy
            in_band = cpos[2] <= tpos[2] <= cpos[2] + p.container_height
            done = inside_xy and in_band
        if done:
            return TrialOutcome("success", Evidence("put_in", len(frames) - 1))
    elif task.category == "pick_from":
        done = False
        if grasped:
            (x_lo, x_hi), (y_lo, y_hi) = p.source_region
            start = frames[0].objects[target].position
            done = x_lo <= start[0] <= x_hi and y_lo <= start[1] <= y_hi
        if done:
            return TrialOutcome("success", Evidence("pick_from", grasped[0]))
    else:
        raise AssertionError(task.category)

    if grasped and task.category in HALF_SUCCESS_CATEGORIES:
        return TrialOutcome("half_success", Evidence("grasped", grasped[0]))
    return TrialOutcome("failure", Evidence("none"))


def success_rate(outcomes: list[TrialOutcome], half_weight: float = 0.0) -> float:
    """(#success + half_weight * #half_success) / n."""
    if not outcomes:
        raise ValueError("no outcomes")
    if not 0.0 <= half_weight <= 1.0:
        raise ValueError(f"half_weight out of [0,1]: {half_weight}")
    n_success = sum(o.status == "success" for o in outcomes)
    n_half = sum(o.status == "half_success" for o in outcomes)
    return (n_success + half_weight * n_half) / len(outcomes)


def pearson(x, y) -> float:
    """Pearson correlation r = sum((xi-xm)(yi-ym)) / sqrt(sum sq * sum sq)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance input")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def agent_score(
    task: TaskSpec, logs: list[TrajectoryLog], renderer, judge
) -> AgentScoreReport:
    """Mean video-judge score over trials, raw judge scale preserved.

    ``renderer`` maps a log to a list of frames for the judge. Individual
    judge failures are tolerated and counted; all-failed is an error.
    """
    if task.category != "long_horizon":
        raise ValueError("agent_score applies to long-horizon tasks")
    if not logs:
        raise ValueError("no trajectory logs")
    scores: list[float] = []
    n_failed = 0
    for log in logs:
        frames = renderer(log)
        try:
            scores.append(judge.judge_video(frames, task.instruction).score)
        except Exception:
            n_failed += 1
    if not scores:
        raise RuntimeError(f"judge failed on all {n_failed} trials")
    return AgentScoreReport(
        score=float(np.mean(scores)),
        n_trials=len(logs),
        n_failed=n_failed,
        scores=tuple(scores),
    )


# ---------------------------------------------------------------------------
# Rate CSVs and correlation


def load_rates_csv(path) -> dict[str, float]:
    """CSV with header task_id,rate,n_trials."""
    rates: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"task_id", "rate"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"rates CSV must have header task_id,rate,n_trials: {path}")
        for row in reader:
            rates[row["task_id"]] = float(row["rate"])
    return rates


def save_rates_csv(rates: dict[str, float], path, n_trials: int = DEFAULT_TRIALS_PER_TASK) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "rate", "n_trials"])
        for task_id in sorted(rates):
            writer.writerow([task_id, rates[task_id], n_trials])


def correlation_report(sim_csv, real_csv) -> CorrelationReport:
    """Inner-join the two rate tables on task id and correlate."""
    sim = load_rates_csv(sim_csv)
    real = load_rates_csv(real_csv)
    shared = sorted(set(sim) & set(real))
    if len(shared) < 2:
        raise ValueError(
            f"need >= 2 shared tasks to correlate, got {len(shared)}"
        )
    pairs = tuple((task, sim[task], real[task]) for task in shared)
    r = pearson([p[1] for p in pairs], [p[2] for p in pairs])
    return CorrelationReport(pairs=pairs, r=r, n=len(pairs))


def correlation_report_to_json(report: CorrelationReport) -> dict:
    return {
        "pairs": [
            {"task": t, "sim_rate": s, "real_rate": r} for t, s, r in report.pairs
        ],
        "r": report.r,
        "n": report.n,
    }
