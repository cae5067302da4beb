"""52-joint skeletal representation, 623-dim per-frame motion features, and a
procedurally generated synthetic gesture-language corpus.

Feature layout per row (623 channels total):
    [0]        root angular velocity about the vertical axis (rad/frame)
    [1:3]      root linear velocity in the ground plane, heading-local (m/frame)
    [3]        root height (m)
    [4:157]    local positions of the 51 non-root joints, heading-local (m)
    [157:463]  local rotations of the 51 non-root joints, 6-D continuous form
    [463:619]  local velocities of all 52 joints, heading-local (m/frame)
    [619:623]  foot-contact indicators (left ankle/foot, right ankle/foot)

Velocity differencing consumes one frame: an M-frame clip yields M-1 feature rows.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

JOINT_COUNT = 52
FEATURE_DIM = 623
DEFAULT_FPS = 20.0
FOOT_CONTACT_THRESHOLD = 0.02  # m/frame
MAX_JOINT_SPEED = 5.0  # m/s, generation bound

# channel slices
ROOT_ANG_VEL = slice(0, 1)
ROOT_LIN_VEL = slice(1, 3)
ROOT_HEIGHT = slice(3, 4)
LOCAL_POS = slice(4, 157)
LOCAL_ROT = slice(157, 463)
LOCAL_VEL = slice(463, 619)
FOOT_CONTACT = slice(619, 623)

L_HIP, R_HIP = 1, 2
L_ANKLE, R_ANKLE = 7, 8
L_FOOT, R_FOOT = 10, 11
_CONTACT_JOINTS = (L_ANKLE, L_FOOT, R_ANKLE, R_FOOT)


@dataclass
class Skeleton:
    """Single-rooted 52-joint tree with rest offsets in meters."""

    parent_index: np.ndarray  # (52,), parent of root is -1
    rest_offsets: np.ndarray  # (52, 3)

    def __post_init__(self):
        if len(self.parent_index) != JOINT_COUNT:
            raise ValueError(f"skeleton must have {JOINT_COUNT} joints")
        roots = np.flatnonzero(self.parent_index < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("skeleton must be single-rooted at joint 0")

    def rest_pose(self) -> np.ndarray:
        """Forward-kinematics of the rest offsets: (52, 3) global positions."""
        pos = np.zeros((JOINT_COUNT, 3))
        for j in range(JOINT_COUNT):
            p = self.parent_index[j]
            pos[j] = self.rest_offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos


def _build_hand(parents, offsets, wrist, side):
    # 5 fingers x 3 joints chained off the wrist
    sx = 1.0 if side == "left" else -1.0
    finger_dirs = [(0.09, 0.02), (0.10, 0.01), (0.10, 0.0), (0.09, -0.01), (0.06, 0.03)]
    for fwd, lat in finger_dirs:
        prev = wrist
        for seg in range(3):
            parents.append(prev)
            offsets.append([sx * fwd / 3.0, 0.0, lat / 3.0])
            prev = len(parents) - 1


def default_skeleton() -> Skeleton:
    """Body (22 joints) plus 15 finger joints per hand, y-up, meters."""
    parents = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
    offsets = [
        [0.0, 0.95, 0.0],      # 0 pelvis
        [0.09, -0.05, 0.0],    # 1 left hip
        [-0.09, -0.05, 0.0],   # 2 right hip
        [0.0, 0.11, 0.0],      # 3 spine1
        [0.0, -0.40, 0.0],     # 4 left knee
        [0.0, -0.40, 0.0],     # 5 right knee
        [0.0, 0.13, 0.0],      # 6 spine2
        [0.0, -0.42, 0.0],     # 7 left ankle
        [0.0, -0.42, 0.0],     # 8 right ankle
        [0.0, 0.12, 0.0],      # 9 spine3
        [0.0, -0.05, 0.12],    # 10 left foot
        [0.0, -0.05, 0.12],    # 11 right foot
        [0.0, 0.10, 0.0],      # 12 neck
        [0.07, 0.06, 0.0],     # 13 left collar
        [-0.07, 0.06, 0.0],    # 14 right collar
        [0.0, 0.12, 0.0],      # 15 head
        [0.10, 0.02, 0.0],     # 16 left shoulder
        [-0.10, 0.02, 0.0],    # 17 right shoulder
        [0.26, 0.0, 0.0],      # 18 left elbow
        [-0.26, 0.0, 0.0],     # 19 right elbow
        [0.25, 0.0, 0.0],      # 20 left wrist
        [-0.25, 0.0, 0.0],     # 21 right wrist
    ]
    _build_hand(parents, offsets, 20, "left")
    _build_hand(parents, offsets, 21, "right")
    return Skeleton(np.asarray(parents, dtype=np.int64), np.asarray(offsets, dtype=np.float64))


@dataclass
class JointClip:
    """M x 52 x 3 global joint positions in meters."""

    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (JOINT_COUNT, 3):
            raise ValueError(f"expected (M, {JOINT_COUNT}, 3) frames, got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValueError("clip needs at least 2 frames")
        if not np.isfinite(self.frames).all():
            raise ValueError("clip contains non-finite values")


@dataclass
class MotionSequence:
    """Feature rows (M-1 x 623) for one clip, plus the state needed to invert them."""

    features: np.ndarray
    fps: float = DEFAULT_FPS
    normalized: bool = False
    stats_id: Optional[str] = None
    init_heading: float = 0.0
    init_root_xz: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise ValueError(f"expected (*, {FEATURE_DIM}) features, got {self.features.shape}")


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    stats_id: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(FEATURE_DIM)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64).reshape(FEATURE_DIM), 1e-6)
        if not self.stats_id:
            h = hashlib.sha256()
            h.update(self.mean.tobytes())
            h.update(self.std.tobytes())
            self.stats_id = h.hexdigest()[:16]


def _heading_angle(frames: np.ndarray) -> np.ndarray:
    """Facing angle about the vertical axis, from the across-hips vector. (M,)"""
    across = frames[:, R_HIP] - frames[:, L_HIP]
    # forward = up x across (y-up)
    fwd_x = across[:, 2]
    fwd_z = -across[:, 0]
    return np.arctan2(fwd_x, fwd_z)


def _rot_y(angles: np.ndarray) -> np.ndarray:
    """Rotation matrices about y for each angle: (M, 3, 3)."""
    c, s = np.cos(angles), np.sin(angles)
    m = np.zeros(angles.shape + (3, 3))
    m[..., 0, 0] = c
    m[..., 0, 2] = s
    m[..., 1, 1] = 1.0
    m[..., 2, 0] = -s
    m[..., 2, 2] = c
    return m


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def _bone_6d(local_pos: np.ndarray, parents: np.ndarray) -> np.ndarray:
    """Per-bone 6-D rotation representation from heading-local joint positions.

    local_pos: (T, 52, 3) with root at origin. Returns (T, 51, 6).
    """
    T = local_pos.shape[0]
    child = np.arange(1, JOINT_COUNT)
    pa = parents[child]
    bone = local_pos[:, child] - local_pos[:, pa]
    norm = np.linalg.norm(bone, axis=-1, keepdims=True)
    e1 = bone / np.maximum(norm, 1e-9)
    up = np.zeros_like(e1)
    up[..., 1] = 1.0
    degenerate = np.abs(e1[..., 1]) > 0.99
    up[degenerate] = [1.0, 0.0, 0.0]
    proj = (up * e1).sum(-1, keepdims=True)
    e2 = up - proj * e1
    e2 /= np.maximum(np.linalg.norm(e2, axis=-1, keepdims=True), 1e-9)
    return np.concatenate([e1, e2], axis=-1)


def extract_features(clip: JointClip) -> MotionSequence:
    """Convert an M-frame clip into M-1 rows of the 623-dim representation."""
    frames = clip.frames
    if not np.isfinite(frames).all():
        raise ValueError("non-finite joint positions")
    M = frames.shape[0]
    theta = _heading_angle(frames)
    rot_inv = _rot_y(-theta)  # world -> heading-local, per frame

    root = frames[:, 0]
    t = np.arange(M - 1)

    ang_vel = _wrap_angle(theta[1:] - theta[:-1])[:, None]
    root_vel_world = root[1:] - root[:-1]
    root_vel_local = np.einsum("tij,tj->ti", rot_inv[:-1], root_vel_world)
    lin_vel = root_vel_local[:, [0, 2]]
    height = root[:-1, 1:2]

    rel = frames - root[:, None, :]
    local = np.einsum("tij,tkj->tki", rot_inv, rel)  # (M, 52, 3) heading-local
    skeleton = default_skeleton()
    rest_rel = skeleton.rest_pose()
    rest_rel = rest_rel - rest_rel[0]
    # deviations from the root-relative rest pose: zero features mean rest
    local_pos = (local[:-1, 1:] - rest_rel[1:]).reshape(M - 1, 153)
    rot6d = _bone_6d(local, skeleton.parent_index)[:-1].reshape(M - 1, 306)

    joint_vel_world = frames[1:] - frames[:-1]
    joint_vel = np.einsum("tij,tkj->tki", rot_inv[:-1], joint_vel_world).reshape(M - 1, 156)

    contact_speed = np.linalg.norm(joint_vel_world[:, _CONTACT_JOINTS, :], axis=-1)
    contacts = (contact_speed < FOOT_CONTACT_THRESHOLD).astype(np.float64)

    feats = np.concatenate(
        [ang_vel, lin_vel, height, local_pos, rot6d, joint_vel, contacts], axis=1)
    assert feats.shape[1] == FEATURE_DIM
    return MotionSequence(
        features=feats.astype(np.float32),
        fps=clip.fps,
        normalized=False,
        init_heading=float(theta[0]),
        init_root_xz=(float(root[0, 0]), float(root[0, 2])),
    )


def features_to_joints(seq: MotionSequence, stats: Optional[FeatureStats] = None,
                       init_heading: Optional[float] = None,
                       init_root_xz: Optional[tuple] = None) -> JointClip:
    """Recover global joint positions from the local-position channels plus the
    integrated root trajectory. Returns one clip frame per feature row."""
    if seq.normalized:
        if stats is None or (seq.stats_id and stats.stats_id != seq.stats_id):
            raise ValueError(f"unknown normalization id {seq.stats_id!r}")
        feats = seq.features.astype(np.float64) * stats.std + stats.mean
    else:
        feats = seq.features.astype(np.float64)

    T = feats.shape[0]
    heading0 = seq.init_heading if init_heading is None else init_heading
    xz0 = seq.init_root_xz if init_root_xz is None else init_root_xz

    ang_vel = feats[:, ROOT_ANG_VEL][:, 0]
    theta = heading0 + np.concatenate([[0.0], np.cumsum(ang_vel[:-1])])
    rot = _rot_y(theta)  # heading-local -> world

    lin_vel = feats[:, ROOT_LIN_VEL]
    vel3 = np.zeros((T, 3))
    vel3[:, 0] = lin_vel[:, 0]
    vel3[:, 2] = lin_vel[:, 1]
    step_world = np.einsum("tij,tj->ti", rot, vel3)
    root = np.zeros((T, 3))
    root[0, 0], root[0, 2] = xz0
    root[1:, [0, 2]] = root[0, [0, 2]] + np.cumsum(step_world[:-1], axis=0)[:, [0, 2]]
    root[:, 1] = feats[:, ROOT_HEIGHT][:, 0]

    skeleton = default_skeleton()
    rest_rel = skeleton.rest_pose()
    rest_rel = rest_rel - rest_rel[0]
    local_pos = feats[:, LOCAL_POS].reshape(T, 51, 3) + rest_rel[1:]
    world_rel = np.einsum("tij,tkj->tki", rot, local_pos)
    frames = np.zeros((T, JOINT_COUNT, 3))
    frames[:, 0] = root
    frames[:, 1:] = root[:, None, :] + world_rel
    return JointClip(frames=frames, fps=seq.fps)


def compute_stats(corpus: Iterable[MotionSequence]) -> FeatureStats:
    """Per-channel z-scoring statistics over all rows of a corpus."""
    rows = [seq.features for seq in corpus]
    if not rows:
        raise ValueError("empty corpus")
    allrows = np.concatenate(rows, axis=0).astype(np.float64)
    return FeatureStats(mean=allrows.mean(axis=0), std=allrows.std(axis=0))


def normalize(seq: MotionSequence, stats: FeatureStats) -> MotionSequence:
    if seq.normalized:
        raise ValueError("sequence already normalized")
    feats = (seq.features.astype(np.float64) - stats.mean) / stats.std
    return MotionSequence(feats.astype(np.float32), fps=seq.fps, normalized=True,
                          stats_id=stats.stats_id, init_heading=seq.init_heading,
                          init_root_xz=seq.init_root_xz)


def denormalize(seq: MotionSequence, stats: FeatureStats) -> MotionSequence:
    if not seq.normalized:
        raise ValueError("sequence is not normalized")
    if seq.stats_id and seq.stats_id != stats.stats_id:
        raise ValueError(f"unknown normalization id {seq.stats_id!r}")
    feats = seq.features.astype(np.float64) * stats.std + stats.mean
    return MotionSequence(feats.astype(np.float32), fps=seq.fps, normalized=False,
                          stats_id=None, init_heading=seq.init_heading,
                          init_root_xz=seq.init_root_xz)


# -- synthetic corpus ---------------------------------------------------

_WORDS = [
    "hello", "thanks", "please", "help", "good", "morning", "friend", "water",
    "eat", "drink", "home", "work", "happy", "sad", "yes", "no",
    "today", "tomorrow", "name", "meet", "love", "family", "school", "learn",
    "big", "small", "fast", "slow", "stop", "go", "come", "give",
]

# joints animated per motif family: alternating arm/hand chains
_LEFT_ARM = [13, 16, 18, 20] + list(range(22, 37))
_RIGHT_ARM = [14, 17, 19, 21] + list(range(37, 52))


def _motif_params(rng: np.random.Generator):
    side = _LEFT_ARM if rng.random() < 0.5 else _RIGHT_ARM
    joints = np.asarray(side)
    length = int(rng.integers(16, 25))
    posture = rng.uniform(-0.22, 0.22, size=(len(joints), 3))
    amp = rng.uniform(0.10, 0.18, size=(len(joints), 3))
    freq = rng.uniform(0.3, 0.9)
    phase = rng.uniform(0.0, 2 * np.pi, size=(len(joints), 3))
    return {"joints": joints, "length": length, "posture": posture,
            "amp": amp, "freq": freq, "phase": phase}


def _motif_frames(rest: np.ndarray, params) -> np.ndarray:
    T = params["length"]
    frames = np.repeat(rest[None], T, axis=0)
    t = np.arange(T)[:, None, None]
    wave = params["amp"] * np.sin(params["freq"] * t + params["phase"])
    frames[:, params["joints"]] += params["posture"] + wave
    return frames


def _motif_distance(a: np.ndarray, b: np.ndarray) -> float:
    T = min(len(a), len(b))
    return float(np.linalg.norm(a[:T] - b[:T], axis=-1).mean())


def gesture_vocabulary(size: int) -> list:
    if size <= len(_WORDS):
        return _WORDS[:size]
    return _WORDS + [f"sign{i:03d}" for i in range(size - len(_WORDS))]


def synth_corpus(seed: int, vocab_size: int, samples: int,
                 words_per_sample=(2, 5), fps: float = DEFAULT_FPS,
                 blend_frames: int = 4, min_motif_distance: float = 0.05):
    """Generate a deterministic (JointClip, text) corpus.

    Each gesture word is a fixed joint-trajectory motif (posture offset plus
    sinusoids on one arm/hand chain); a sample concatenates a few motifs with
    linear-blend transitions, and its text is the word sequence.
    """
    if vocab_size < 2:
        raise ValueError("gesture vocabulary must have at least 2 words")
    rng = np.random.default_rng(seed)
    rest = default_skeleton().rest_pose()
    words = gesture_vocabulary(vocab_size)

    motifs = []
    for _ in words:
        motifs.append(_motif_frames(rest, _motif_params(rng)))
    # regenerate any motif that sits too close to an earlier one
    for i in range(len(motifs)):
        for _attempt in range(100):
            if all(_motif_distance(motifs[i], motifs[j]) > min_motif_distance
                   for j in range(i)):
                break
            motifs[i] = _motif_frames(rest, _motif_params(rng))
        else:
            raise RuntimeError("could not separate gesture motifs")

    lo, hi = words_per_sample
    corpus = []
    for _ in range(samples):
        k = int(rng.integers(lo, hi + 1))
        idx = rng.integers(0, vocab_size, size=k)
        segments = [motifs[i] for i in idx]
        frames = segments[0].copy()
        for seg in segments[1:]:
            n = min(blend_frames, len(seg))
            w = np.linspace(0.0, 1.0, n + 2)[1:-1][:, None, None]
            bridge = (1 - w) * frames[-1][None] + w * seg[0][None]
            frames = np.concatenate([frames, bridge, seg], axis=0)
        text = " ".join(words[i] for i in idx)
        corpus.append((JointClip(frames=frames, fps=fps), text))
    return corpus


# -- motion file format -------------------------------------------------

def save_motion(path, seq: MotionSequence, clip_id: str) -> None:
    """Write `<path>.bin` (row-major little-endian float32) + `<path>.json` sidecar."""
    path = Path(path)
    blob = seq.features.astype("<f4").tobytes()
    path.with_suffix(".bin").write_bytes(blob)
    header = {
        "id": clip_id,
        "frames": int(seq.features.shape[0]),
        "dims": FEATURE_DIM,
        "fps": seq.fps,
        "normalized": seq.normalized,
        "stats_id": seq.stats_id,
        "init_heading": seq.init_heading,
        "init_root_xz": list(seq.init_root_xz),
    }
    path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True) + "\n")


def load_motion(path) -> MotionSequence:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    blob = path.with_suffix(".bin").read_bytes()
    feats = np.frombuffer(blob, dtype="<f4").reshape(header["frames"], header["dims"])
    return MotionSequence(
        features=feats.copy(), fps=header["fps"], normalized=header["normalized"],
        stats_id=header.get("stats_id"), init_heading=header.get("init_heading", 0.0),
        init_root_xz=tuple(header.get("init_root_xz", (0.0, 0.0))))


def save_stats(path, stats: FeatureStats) -> None:
    Path(path).write_text(json.dumps({
        "stats_id": stats.stats_id,
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
    }) + "\n")


def load_stats(path) -> FeatureStats:
    d = json.loads(Path(path).read_text())
    return FeatureStats(mean=np.asarray(d["mean"]), std=np.asarray(d["std"]),
                        stats_id=d["stats_id"])
