"""Synthetic scenes, dataset utilities and scene file I/O.

Scene files are JSON documents with an explicit integer version; floats are
written with full round-trip precision. External correspondence files are
whitespace-delimited text with one correspondence per line
(``x1 y1 x2 y2 [ratio]``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyGroup, FormatError, VersionError
from .geometry import (DegenerateMinimalSet, ModelInstance, _dlt,
                       fit_line_minimal, get_model_class)

SCENE_FORMAT_VERSION = 1
MATCHING_RATIO_CUTOFF = 0.9


@dataclass
class Scene:
    """A set of observations with optional ground truth and camera data."""

    kind: str
    observations: np.ndarray
    gt_labels: np.ndarray | None = None
    gt_models: list[ModelInstance] | None = None
    intrinsics: np.ndarray | None = None
    image_size: tuple[int, int] | None = None
    scene_id: str | None = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.gt_labels is not None:
            self.gt_labels = np.asarray(self.gt_labels, dtype=np.int64)


@dataclass
class SynthLineConfig:
    """Parameters of the synthetic multi-line generator (unit-square domain)."""

    num_lines: int = 4
    points_per_line: tuple[int, int] = (40, 100)
    noise_sigma: tuple[float, float] = (0.007, 0.008)
    outlier_fraction: tuple[float, float] = (0.4, 0.6)
    segment_fraction: tuple[float, float] = (0.3, 1.0)


def _clip_line_to_unit_square(p: np.ndarray, d: np.ndarray) -> tuple[float, float] | None:
    """Parameter interval of the line p + t*d inside [0,1]^2, or None."""
    t0, t1 = -np.inf, np.inf
    for axis in (0, 1):
        if abs(d[axis]) < 1e-12:
            if not (0.0 <= p[axis] <= 1.0):
                return None
            continue
        a = (0.0 - p[axis]) / d[axis]
        b = (1.0 - p[axis]) / d[axis]
        t0 = max(t0, min(a, b))
        t1 = min(t1, max(a, b))
    if not np.isfinite(t0) or not np.isfinite(t1) or t1 <= t0:
        return None
    return float(t0), float(t1)


def generate_line_scene(config: SynthLineConfig, seed: int) -> Scene:
    """Random multi-line scene: noisy points along random segments plus
    uniform outliers; deterministic in the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10,)))
    sigma = rng.uniform(*config.noise_sigma)
    points = []
    labels = []
    models = []
    for li in range(config.num_lines):
        while True:
            p = rng.random(2)
            q = rng.random(2)
            d = q - p
            norm = np.hypot(d[0], d[1])
            if norm < 0.1:
                continue
            d = d / norm
            interval = _clip_line_to_unit_square(p, d)
            if interval is None or interval[1] - interval[0] < 0.2:
                continue
            break
        t0, t1 = interval
        chord = t1 - t0
        frac = rng.uniform(*config.segment_fraction)
        length = frac * chord
        start = t0 + rng.uniform(0.0, chord - length)
        count = int(rng.integers(config.points_per_line[0],
                                 config.points_per_line[1] + 1))
        ts = start + rng.random(count) * length
        pts = p[None, :] + ts[:, None] * d[None, :]
        pts = pts + rng.normal(0.0, sigma, pts.shape)
        points.append(pts)
        labels.append(np.full(count, li))
        models.append(fit_line_minimal(p, p + d))
    inliers = np.concatenate(points)
    n_in = len(inliers)
    frac = rng.uniform(*config.outlier_fraction)
    n_out = int(round(n_in * frac / (1.0 - frac)))
    lo = int(np.ceil(n_in * config.outlier_fraction[0] / (1.0 - config.outlier_fraction[0])))
    hi = int(np.floor(n_in * config.outlier_fraction[1] / (1.0 - config.outlier_fraction[1])))
    n_out = int(np.clip(n_out, lo, hi))
    outliers = rng.random((n_out, 2))
    observations = np.concatenate([inliers, outliers])
    gt_labels = np.concatenate([np.concatenate(labels), np.full(n_out, -1)])
    order = rng.permutation(len(observations))
    return Scene(kind="line", observations=observations[order],
                 gt_labels=gt_labels[order], gt_models=models,
                 scene_id=f"lines-{seed}")


def _random_homography(rng: np.random.Generator) -> np.ndarray:
    """Random well-conditioned homography mapping the unit square near itself."""
    src = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    while True:
        dst = src + rng.uniform(-0.25, 0.25, src.shape)
        corr = np.concatenate([src, dst], axis=1)
        try:
            h = _dlt(corr)
        except DegenerateMinimalSet:
            continue
        if np.linalg.cond(h) < 50.0:
            return h


def apply_homography(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(points)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ h.T
    return hom[:, 0:2] / hom[:, 2:3]


def generate_homography_scene(num_planes: int, points_per_plane: int,
                              noise: float, outlier_fraction: float,
                              seed: int) -> Scene:
    """Random multi-plane correspondence scene.

    Each plane contributes ``points_per_plane`` correspondences generated by
    its own random homography; the second-view points carry Gaussian noise.
    The outlier count is floor(n_inliers * f / (1 - f)), so outliers make up
    the requested fraction of the total (rounded down).
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    correspondences = []
    labels = []
    models = []
    for pi in range(num_planes):
        h = _random_homography(rng)
        models.append(ModelInstance("homography", h))
        pts1 = np.empty((points_per_plane, 2))
        pts2 = np.empty((points_per_plane, 2))
        filled = 0
        while filled < points_per_plane:
            cand = rng.random((points_per_plane, 2))
            mapped = apply_homography(h, cand)
            ok = np.all((mapped >= 0.0) & (mapped <= 1.0), axis=1)
            take = min(int(ok.sum()), points_per_plane - filled)
            pts1[filled:filled + take] = cand[ok][:take]
            pts2[filled:filled + take] = mapped[ok][:take]
            filled += take
        pts2 = pts2 + rng.normal(0.0, noise, pts2.shape)
        correspondences.append(np.concatenate([pts1, pts2], axis=1))
        labels.append(np.full(points_per_plane, pi))
    inliers = np.concatenate(correspondences)
    n_in = len(inliers)
    n_out = int(np.floor(n_in * outlier_fraction / (1.0 - outlier_fraction)))
    outliers = rng.random((n_out, 4))
    observations = np.concatenate([inliers, outliers])
    gt_labels = np.concatenate([np.concatenate(labels), np.full(n_out, -1)])
    order = rng.permutation(len(observations))
    return Scene(kind="homography", observations=observations[order],
                 gt_labels=gt_labels[order], gt_models=models,
                 scene_id=f"homographies-{seed}")


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentParams:
    """One draw of the correspondence augmentation: a shared flip per axis and
    an independent scale/shift per image side and axis."""

    flip_x: bool = False
    flip_y: bool = False
    scale: np.ndarray = field(default_factory=lambda: np.ones((2, 2)))
    shift: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))


def draw_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        flip_x=bool(rng.random() < 0.5),
        flip_y=bool(rng.random() < 0.5),
        scale=rng.uniform(0.9, 1.1, (2, 2)),
        shift=rng.uniform(-0.1, 0.1, (2, 2)),
    )


def _augment_matrix(params: AugmentParams, side: int) -> np.ndarray:
    """Affine map for one image side as a 3x3 matrix: flip about 0.5, then
    per-axis scale and shift."""
    a = np.eye(3)
    if params.flip_x:
        a = np.array([[-1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]) @ a
    if params.flip_y:
        a = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 1.0]]) @ a
    sx, sy = params.scale[side]
    tx, ty = params.shift[side]
    return np.array([[sx, 0.0, tx], [0.0, sy, ty], [0.0, 0.0, 1.0]]) @ a


def apply_augmentation(scene: Scene, params: AugmentParams) -> Scene:
    """Transform a correspondence scene; ground-truth homographies are
    conjugated by the applied affine maps so labels stay exact."""
    if scene.kind != "homography":
        raise ValueError("augmentation is defined for homography scenes")
    a1 = _augment_matrix(params, 0)
    a2 = _augment_matrix(params, 1)
    obs = scene.observations
    new_obs = np.concatenate([apply_homography(a1, obs[:, 0:2]),
                              apply_homography(a2, obs[:, 2:4])], axis=1)
    gt_models = None
    if scene.gt_models is not None:
        gt_models = []
        for m in scene.gt_models:
            h = a2 @ m.params @ np.linalg.inv(a1)
            gt_models.append(ModelInstance("homography", h / np.linalg.norm(h)))
    return replace(scene, observations=new_obs, gt_models=gt_models)


def augment_correspondences(scene: Scene, rng: np.random.Generator) -> Scene:
    return apply_augmentation(scene, draw_augment_params(rng))


# ---------------------------------------------------------------------------
# Dataset utilities
# ---------------------------------------------------------------------------

def rebalanced_sampler(groups: Sequence[Sequence], rng: np.random.Generator,
                       ) -> Iterator:
    """Infinite stream drawing a group uniformly first, then one of its items."""
    if not groups or any(len(g) == 0 for g in groups):
        raise EmptyGroup("rebalanced sampling needs nonempty groups")
    while True:
        g = groups[int(rng.integers(len(groups)))]
        yield g[int(rng.integers(len(g)))]


def subsample_scene(scene: Scene, size: int, rng: np.random.Generator) -> Scene:
    """Fixed-size observation subset: without replacement when the scene is
    large enough, padded by resampling with replacement otherwise."""
    n = len(scene.observations)
    if n >= size:
        idx = rng.permutation(n)[:size]
    else:
        idx = np.concatenate([rng.permutation(n),
                              rng.integers(0, n, size=size - n)])
    labels = scene.gt_labels[idx] if scene.gt_labels is not None else None
    return replace(scene, observations=scene.observations[idx], gt_labels=labels)


# ---------------------------------------------------------------------------
# Scene file I/O
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "version": SCENE_FORMAT_VERSION,
        "kind": scene.kind,
        "observations": scene.observations.tolist(),
    }
    if scene.scene_id is not None:
        doc["scene_id"] = scene.scene_id
    if scene.gt_labels is not None:
        doc["gt_labels"] = scene.gt_labels.tolist()
    if scene.gt_models is not None:
        doc["gt_models"] = [m.params.ravel().tolist() for m in scene.gt_models]
    if scene.intrinsics is not None:
        doc["intrinsics"] = np.asarray(scene.intrinsics).ravel().tolist()
    if scene.image_size is not None:
        doc["image_size"] = list(scene.image_size)
    return doc


def scene_from_dict(doc: dict, source: str = "scene") -> Scene:
    if not isinstance(doc, dict):
        raise FormatError(f"{source}: expected an object")
    version = doc.get("version")
    if version != SCENE_FORMAT_VERSION:
        raise VersionError(
            f"{source}.version: expected {SCENE_FORMAT_VERSION}, found {version}")
    kind = doc.get("kind")
    if kind not in ("line", "vp", "homography"):
        raise FormatError(f"{source}.kind: unknown kind {kind!r}")
    if "observations" not in doc:
        raise FormatError(f"{source}.observations: missing")
    spec = get_model_class(kind)
    try:
        observations = np.array(doc["observations"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise FormatError(f"{source}.observations: {e}") from e
    if observations.ndim != 2 or observations.shape[1] != spec.observation_dim:
        raise FormatError(
            f"{source}.observations: expected shape (n, {spec.observation_dim})")
    gt_labels = None
    if "gt_labels" in doc:
        gt_labels = np.array(doc["gt_labels"], dtype=np.int64)
        if gt_labels.shape != (len(observations),):
            raise FormatError(f"{source}.gt_labels: wrong length")
    gt_models = None
    if "gt_models" in doc:
        gt_models = []
        for i, params in enumerate(doc["gt_models"]):
            arr = np.array(params, dtype=np.float64)
            if kind == "homography":
                if arr.size != 9:
                    raise FormatError(f"{source}.gt_models[{i}]: expected 9 values")
                arr = arr.reshape(3, 3)
            elif arr.size != 3:
                raise FormatError(f"{source}.gt_models[{i}]: expected 3 values")
            gt_models.append(ModelInstance(kind, arr))
    intrinsics = None
    if "intrinsics" in doc:
        arr = np.array(doc["intrinsics"], dtype=np.float64)
        if arr.size != 9:
            raise FormatError(f"{source}.intrinsics: expected 9 values")
        intrinsics = arr.reshape(3, 3)
    image_size = None
    if "image_size" in doc:
        size = doc["image_size"]
        if not (isinstance(size, list) and len(size) == 2):
            raise FormatError(f"{source}.image_size: expected two integers")
        image_size = (int(size[0]), int(size[1]))
    return Scene(kind=kind, observations=observations, gt_labels=gt_labels,
                 gt_models=gt_models, intrinsics=intrinsics,
                 image_size=image_size, scene_id=doc.get("scene_id"))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=1)


def load_scene(path) -> Scene:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})") from e
    return scene_from_dict(doc, source=str(path))


def load_correspondences(path, ratio_cutoff: float = MATCHING_RATIO_CUTOFF) -> Scene:
    """Import a delimited correspondence file as a homography scene.

    Lines carry ``x1 y1 x2 y2`` and optionally a matching score ratio;
    correspondences with a ratio above the cutoff are discarded as suspected
    gross outliers.
    """
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) not in (4, 5):
                raise FormatError(f"{path}:{lineno}: expected 4 or 5 columns")
            try:
                values = [float(v) for v in parts]
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
            if len(values) == 5 and values[4] > ratio_cutoff:
                continue
            rows.append(values[:4])
    observations = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return Scene(kind="homography", observations=observations, scene_id=str(path))
