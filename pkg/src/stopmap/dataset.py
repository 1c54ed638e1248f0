"""Data model, manifest/trajectory file I/O, and the synthetic cage simulator.

The simulator substitutes the private tracking dataset: each simulated
mouse alternates stop bouts (locations drawn from a per-class Gaussian
mixture over cage anchors, small within-stop jitter) with straight-line
travel well above the stop-velocity threshold, so ground-truth stop
counts are recoverable by the featurizer.  Everything is deterministic
per seed, with per-recording sub-seeds.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .nncore import CLASS_NAMES

log = logging.getLogger(__name__)

SEXES = ("M", "F")
AGES = ("adult", "juvenile")


@dataclass
class Recording:
    recording_id: str
    cage_id: str
    mouse_id: str
    sex: str  # "M" or "F"
    age: str  # "adult" or "juvenile"
    samples: np.ndarray  # (n, 3) rows of t, x, y

    def __post_init__(self):
        if self.sex not in SEXES:
            raise DataError(f"{self.recording_id}: sex must be M or F, got {self.sex!r}")
        if self.age not in AGES:
            raise DataError(
                f"{self.recording_id}: age must be adult or juvenile, got {self.age!r}"
            )
        self.samples = np.asarray(self.samples, dtype=float)

    @property
    def label(self) -> str:
        return ("A" if self.age == "adult" else "J") + self.sex

    @property
    def class_index(self) -> int:
        return CLASS_NAMES.index(self.label)


@dataclass
class CageLayout:
    width: float = 50.0
    height: float = 50.0
    anchors: dict = field(
        default_factory=lambda: {
            "dome": (10.0, 40.0),
            "feeder_upper": (40.0, 38.0),
            "feeder_lower": (40.0, 12.0),
            "water": (20.0, 5.0),
        }
    )

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("cage dimensions must be positive")
        for name, (x, y) in self.anchors.items():
            if not (0 <= x <= self.width and 0 <= y <= self.height):
                raise ConfigError(f"anchor {name!r} at ({x}, {y}) outside cage")

    def anchor(self, name: str):
        if name == "center":
            return (self.width / 2, self.height / 2)
        try:
            return self.anchors[name]
        except KeyError:
            raise ConfigError(f"unknown anchor {name!r}") from None


@dataclass
class ClassProfile:
    """Stop-behavior archetype of one sex/age class."""

    mixture: list  # [(anchor_name, weight, std_cm), ...]
    stop_duration: tuple = (1.2, 12.0)  # log-uniform bounds, seconds
    travel_speed: float = 15.0  # cm/s, must stay above the stop threshold
    inter_stop_rate: float = 0.5  # 1/s; mean extra travel gap = 1/rate

    def __post_init__(self):
        w = sum(m[1] for m in self.mixture)
        if not np.isclose(w, 1.0, atol=1e-9):
            raise ConfigError(f"mixture weights must sum to 1, got {w}")
        if self.travel_speed <= 5.0:
            raise ConfigError("travel_speed must exceed the 5 cm/s stop threshold")
        lo, hi = self.stop_duration
        if not (0 < lo <= hi):
            raise ConfigError("stop_duration bounds must satisfy 0 < lo <= hi")
        if self.inter_stop_rate < 0:
            raise ConfigError("inter_stop_rate must be >= 0")


def default_class_profiles() -> dict:
    """Archetypes: females favor the dome corner, males the lower cage;
    juvenile males blend adult-male and juvenile-female habits."""
    af = ClassProfile(
        mixture=[("dome", 0.70), ("feeder_upper", 0.15), ("water", 0.10),
                 ("center", 0.05)],
    )
    jf = ClassProfile(
        mixture=[("feeder_upper", 0.40), ("dome", 0.25), ("water", 0.20),
                 ("center", 0.15)],
    )
    am = ClassProfile(
        mixture=[("feeder_lower", 0.45), ("water", 0.35), ("feeder_upper", 0.10),
                 ("center", 0.10)],
    )
    jm = ClassProfile(mixture=_blend(am.mixture, jf.mixture))
    return {"AM": am, "JM": jm, "AF": af, "JF": jf}


def _blend(mix_a, mix_b):
    merged = {}
    for mix in (mix_a, mix_b):
        for entry in mix:
            name, weight = entry[0], entry[1]
            std = entry[2] if len(entry) > 2 else None
            prev_w, prev_s = merged.get(name, (0.0, None))
            merged[name] = (prev_w + 0.5 * weight, std if std is not None else prev_s)
    return [(name, w, s) if s is not None else (name, w)
            for name, (w, s) in sorted(merged.items())]


@dataclass
class SimConfig:
    cages: int = 12
    mice_per_cage: int = 4
    duration: float = 300.0  # seconds per recording
    fps: float = 30.0
    rng_seed: int = 0
    class_profiles: dict | None = None  # label -> ClassProfile; None = defaults
    default_std: float = 3.0  # cm, for mixture entries without an explicit std

    def __post_init__(self):
        if self.cages < 1 or self.mice_per_cage < 1:
            raise ConfigError("cages and mice_per_cage must be >= 1")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")

    def profiles(self) -> dict:
        return self.class_profiles or default_class_profiles()


# ---------------------------------------------------------------------------
# simulation


def _draw_stop_location(rng, profile, layout, default_std):
    weights = np.array([m[1] for m in profile.mixture])
    comp = rng.choice(len(profile.mixture), p=weights / weights.sum())
    entry = profile.mixture[comp]
    std = entry[2] if len(entry) > 2 else default_std
    cx, cy = layout.anchor(entry[0])
    x = np.clip(cx + rng.normal(0, std), 0.5, layout.width - 0.5)
    y = np.clip(cy + rng.normal(0, std), 0.5, layout.height - 0.5)
    return np.array([x, y])


def _simulate_recording(rng, profile, layout, duration, fps, default_std):
    """One mouse session: alternating stop / travel, emitted at fps."""
    n_frames = int(round(duration * fps))
    lo, hi = profile.stop_duration
    speed = profile.travel_speed
    pts = []
    emitted = 0
    pos = _draw_stop_location(rng, profile, layout, default_std)
    while emitted < n_frames:
        # stop bout: hold position with sub-threshold jitter
        d = np.exp(rng.uniform(np.log(lo), np.log(hi)))
        n_stop = max(2, int(round(d * fps)))
        jitter = rng.uniform(-0.03, 0.03, size=(n_stop, 2))
        pts.append(np.clip(pos + jitter, 0.0, [layout.width, layout.height]))
        emitted += n_stop

        # travel leg to the next stop, always faster than the threshold
        target = _draw_stop_location(rng, profile, layout, default_std)
        while np.linalg.norm(target - pos) < 1.0:
            target = _draw_stop_location(rng, profile, layout, default_std)
        dist = np.linalg.norm(target - pos)
        n_leg = max(1, int(dist / speed * fps))
        frac = np.arange(1, n_leg + 1)[:, None] / n_leg
        pts.append(pos + frac * (target - pos))
        emitted += n_leg

        # extra wander before settling: circle the target at travel speed
        if profile.inter_stop_rate > 0:
            extra = rng.exponential(1.0 / profile.inter_stop_rate)
            n_extra = int(round(extra * fps))
            if n_extra > 0:
                r = 1.0
                cx = np.clip(target, r + 0.2, [layout.width - r - 0.2,
                                               layout.height - r - 0.2])
                ang0 = rng.uniform(0, 2 * np.pi)
                ang = ang0 + (speed / r) * np.arange(n_extra) / fps
                pts.append(cx + r * np.column_stack([np.cos(ang), np.sin(ang)]))
                emitted += n_extra
        pos = target
    xy = np.concatenate(pts)[:n_frames]
    t = np.arange(n_frames) / fps
    return np.column_stack([t, xy])


def simulate(config: SimConfig, layout: CageLayout | None = None) -> list[Recording]:
    """Deterministic synthetic dataset: cages x mice x two age sessions."""
    layout = layout or CageLayout()
    profiles = config.profiles()
    for name in CLASS_NAMES:
        if name not in profiles:
            raise ConfigError(f"missing class profile for {name}")
    recordings = []
    for cage in range(config.cages):
        for mouse in range(config.mice_per_cage):
            sex = "M" if mouse < (config.mice_per_cage + 1) // 2 else "F"
            for session, age in enumerate(AGES):
                label = ("A" if age == "adult" else "J") + sex
                rng = np.random.default_rng([config.rng_seed, cage, mouse, session])
                samples = _simulate_recording(
                    rng, profiles[label], layout,
                    config.duration, config.fps, config.default_std,
                )
                recordings.append(
                    Recording(
                        recording_id=f"c{cage:02d}m{mouse}_{age}",
                        cage_id=f"cage{cage:02d}",
                        mouse_id=f"c{cage:02d}m{mouse}",
                        sex=sex,
                        age=age,
                        samples=samples,
                    )
                )
    return recordings


# ---------------------------------------------------------------------------
# file formats


def write_dataset(recordings, out_dir) -> Path:
    """Write manifest.json plus one t,x,y CSV per recording; returns manifest path."""
    out_dir = Path(out_dir)
    traj_dir = out_dir / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in recordings:
        rel = f"trajectories/{rec.recording_id}.csv"
        with open(out_dir / rel, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y"])
            for t, x, y in rec.samples:
                writer.writerow([f"{t:.6f}", f"{x:.6f}", f"{y:.6f}"])
        entries.append(
            {
                "recording_id": rec.recording_id,
                "cage_id": rec.cage_id,
                "mouse_id": rec.mouse_id,
                "sex": rec.sex,
                "age": rec.age,
                "trajectory_path": rel,
            }
        )
    manifest = out_dir / "manifest.json"
    with open(manifest, "w") as fh:
        json.dump(entries, fh, indent=1)
    return manifest


def _load_trajectory(path: Path, cage_w: float, cage_h: float) -> np.ndarray:
    rows = []
    prev_t = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "x", "y"]:
            raise DataError(f"{path}: expected header 't,x,y', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                t, x, y = (float(v) for v in row)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if not (0 <= x <= cage_w and 0 <= y <= cage_h):
                raise DataError(
                    f"{path}:{lineno}: position ({x}, {y}) outside cage "
                    f"{cage_w}x{cage_h}"
                )
            if prev_t is not None and t <= prev_t:
                raise DataError(f"{path}:{lineno}: time {t} not increasing")
            prev_t = t
            rows.append((t, x, y))
    if not rows:
        raise DataError(f"{path}: empty trajectory")
    return np.array(rows)


def load_manifest(path, cage_w: float = 50.0, cage_h: float = 50.0) -> list[Recording]:
    """Read a manifest and all referenced trajectory CSVs, validating as we go."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        with open(path) as fh:
            entries = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(entries, list):
        raise DataError(f"{path}: manifest must be a JSON list")
    recordings = []
    for i, entry in enumerate(entries):
        try:
            traj_rel = entry["trajectory_path"]
        except (TypeError, KeyError):
            raise DataError(f"{path}: entry {i} missing trajectory_path") from None
        traj = path.parent / traj_rel
        if not traj.exists():
            raise DataError(f"{path}: entry {i}: trajectory file not found: {traj}")
        samples = _load_trajectory(traj, cage_w, cage_h)
        try:
            recordings.append(
                Recording(
                    recording_id=entry["recording_id"],
                    cage_id=entry["cage_id"],
                    mouse_id=entry["mouse_id"],
                    sex=entry["sex"],
                    age=entry["age"],
                    samples=samples,
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}: entry {i} missing field {exc}") from None
    return recordings


def load_layout(path) -> CageLayout:
    path = Path(path)
    if not path.exists():
        raise DataError(f"layout file not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    anchors = {k: tuple(v) for k, v in doc.get("anchors", {}).items()}
    return CageLayout(width=doc["width"], height=doc["height"], anchors=anchors)


def save_layout(layout: CageLayout, path):
    with open(path, "w") as fh:
        json.dump(
            {"width": layout.width, "height": layout.height,
             "anchors": {k: list(v) for k, v in layout.anchors.items()}},
            fh, indent=1,
        )


def split_loco(recordings) -> list:
    """Leave-one-cage-out folds: (train, test) per cage, sorted by cage id."""
    cages = sorted({r.cage_id for r in recordings})
    if len(cages) < 2:
        raise DataError(f"need at least 2 cages for LOCO, got {len(cages)}")
    folds = []
    for cage in cages:
        test = [r for r in recordings if r.cage_id == cage]
        train = [r for r in recordings if r.cage_id != cage]
        folds.append((train, test))
    return folds
