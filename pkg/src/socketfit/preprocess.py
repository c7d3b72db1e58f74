"""Scan-pair preprocessing: mirroring, reorientation, landmark variation,
template correspondence and adaptation fields.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateLandmarks, EmptySlice, InvariantViolation,
                     TopologyMismatch)
from .mesh import LandmarkPair, TriMesh, mirror_mesh
from .template import N_VERTICES, CorrespondedMesh

log = logging.getLogger(__name__)

DEFAULT_BAND_HALFWIDTH = 5.0
DEFAULT_SIGMA_MID_PATELLA = 3.0
DEFAULT_SIGMA_TIBIA_END = 4.0
DEFAULT_VARIANT_COUNT = 25


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


@dataclass(frozen=True, eq=False)
class ScanPair:
    stump: TriMesh
    socket: TriMesh
    landmarks: LandmarkPair
    side: str = "L"

    def __post_init__(self):
        if self.side not in ("L", "R"):
            raise InvariantViolation(f"side must be 'L' or 'R', got {self.side!r}")
        v = self.stump.vertices
        if len(v):
            center = 0.5 * (v.min(0) + v.max(0))
            reach = 2.0 * self.stump.bounding_box_diagonal()
            for name in ("mid_patella", "tibia_end"):
                p = getattr(self.landmarks, name)
                if np.linalg.norm(p - center) > reach:
                    raise InvariantViolation(f"{name} lies far outside the stump mesh")

    def transformed(self, t: RigidTransform) -> "ScanPair":
        return ScanPair(self.stump.transformed(t.rotation, t.translation),
                        self.socket.transformed(t.rotation, t.translation),
                        self.landmarks.transformed(t.rotation, t.translation),
                        self.side)

    def mirrored(self) -> "ScanPair":
        """Mirror a right-side pair so it is represented as a left side."""
        side = "L" if self.side == "R" else "R"
        return ScanPair(mirror_mesh(self.stump), mirror_mesh(self.socket),
                        self.landmarks.mirrored(), side)


@dataclass(frozen=True, eq=False)
class AdaptationField:
    """Per-vertex displacement (mm) from stump to socket."""

    displacements: np.ndarray

    def __post_init__(self):
        d = np.array(self.displacements, dtype=float).reshape(-1, 3)
        d.setflags(write=False)
        object.__setattr__(self, "displacements", d)
        if len(d) != N_VERTICES:
            raise TopologyMismatch(f"expected {N_VERTICES} displacements, got {len(d)}")
        if not np.all(np.isfinite(d)):
            raise InvariantViolation("displacements must be finite")


@dataclass(frozen=True)
class LandmarkSamplerConfig:
    sigma_mid_patella: float = DEFAULT_SIGMA_MID_PATELLA
    sigma_tibia_end: float = DEFAULT_SIGMA_TIBIA_END
    count: int = DEFAULT_VARIANT_COUNT
    seed: int = 0

    def __post_init__(self):
        if self.sigma_mid_patella < 0 or self.sigma_tibia_end < 0:
            raise InvariantViolation("sigmas must be non-negative")
        if self.count < 1:
            raise InvariantViolation("count must be at least 1")


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def cross_section_com(mesh: TriMesh, z: float, band_halfwidth: float = DEFAULT_BAND_HALFWIDTH):
    """Area-weighted (x, y) centroid of the vertices within ``band_halfwidth`` of height ``z``.

    Each vertex is weighted by one third of the area of its incident faces.
    """
    v = mesh.vertices
    inside = np.abs(v[:, 2] - z) <= band_halfwidth
    if not inside.any():
        raise EmptySlice(f"no vertices within {band_halfwidth} mm of z = {z}")
    w = mesh.vertex_areas()[inside]
    xy = v[inside, :2]
    total = w.sum()
    if total <= 0:
        # vertices without incident faces: plain average
        return xy.mean(axis=0)
    return (w[:, None] * xy).sum(axis=0) / total


def reorientation_transform(stump: TriMesh, landmarks: LandmarkPair,
                            band_halfwidth: float = DEFAULT_BAND_HALFWIDTH) -> RigidTransform:
    """Rigid transform into the canonical frame.

    Canonical frame: mid-patella at the origin, tibia-end on the negative
    z axis, and the cross-section centroid at mid-patella height on the
    positive y half-plane.
    """
    mp, te = landmarks.mid_patella, landmarks.tibia_end
    d = te - mp
    length = np.linalg.norm(d)
    scale = max(1.0, float(np.abs(mp).max()), float(np.abs(te).max()))
    if length <= 1e-9 * scale:
        raise DegenerateLandmarks("mid-patella and tibia-end coincide")

    # about x, then about y, until the landmark axis points down -z
    alpha = -0.5 * np.pi - np.arctan2(d[2], d[1])
    rx = _rot_x(alpha)
    dx = rx @ d
    rho = np.hypot(dx[1], dx[2])
    beta = np.arctan2(dx[0], rho)
    r1 = _rot_y(beta) @ rx

    tilted = (stump.vertices - mp) @ r1.T
    cx, cy = cross_section_com(TriMesh(tilted, stump.faces), 0.0, band_halfwidth)
    if np.hypot(cx, cy) <= 1e-12 * scale:
        raise DegenerateLandmarks("cross-section centroid lies on the landmark axis")
    gamma = 0.5 * np.pi - np.arctan2(cy, cx)
    rot = _rot_z(gamma) @ r1
    return RigidTransform(rot, -(rot @ mp))


def reorient(pair: ScanPair, band_halfwidth: float = DEFAULT_BAND_HALFWIDTH):
    """Apply one rigid transform to stump, socket and landmarks.

    Returns ``(reoriented_pair, transform)``.
    """
    t = reorientation_transform(pair.stump, pair.landmarks, band_halfwidth)
    return pair.transformed(t), t


def sample_landmark_variations(lm: LandmarkPair, cfg: LandmarkSamplerConfig):
    """Gaussian perturbations of a landmark pair, deterministic given ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    d_mp = rng.normal(0.0, cfg.sigma_mid_patella, size=(cfg.count, 3))
    d_te = rng.normal(0.0, cfg.sigma_tibia_end, size=(cfg.count, 3))
    return [LandmarkPair(lm.mid_patella + a, lm.tibia_end + b) for a, b in zip(d_mp, d_te)]


def _check_topology(a, b):
    if a.n_vertices != N_VERTICES or b.n_vertices != N_VERTICES:
        raise TopologyMismatch(
            f"expected {N_VERTICES} vertices, got {a.n_vertices} and {b.n_vertices}"
        )


def compute_adaptations(stump: TriMesh, socket: TriMesh) -> AdaptationField:
    _check_topology(stump, socket)
    return AdaptationField(socket.vertices - stump.vertices)


def apply_adaptations(stump: TriMesh, adaptations: AdaptationField) -> CorrespondedMesh:
    if stump.n_vertices != N_VERTICES:
        raise TopologyMismatch(f"expected {N_VERTICES} vertices, got {stump.n_vertices}")
    d = adaptations.displacements if isinstance(adaptations, AdaptationField) else adaptations
    d = np.asarray(d, dtype=float).reshape(-1, 3)
    if len(d) != N_VERTICES:
        raise TopologyMismatch(f"expected {N_VERTICES} displacements, got {len(d)}")
    return CorrespondedMesh(stump.vertices + d)


# -- dataset manifest --------------------------------------------------------

@dataclass
class SampleEntry:
    id: str
    stump_path: str
    socket_path: str
    side: str
    landmarks: list = field(default_factory=list)

    def average_landmarks(self) -> LandmarkPair:
        """Average of the rater annotations (used for testing)."""
        return LandmarkPair.average(self.landmarks)

    def to_dict(self):
        return {"id": self.id, "stump_path": self.stump_path, "socket_path": self.socket_path,
                "side": self.side, "landmarks": [lm.to_dict() for lm in self.landmarks]}

    @classmethod
    def from_dict(cls, d):
        lms = [LandmarkPair.from_dict(x) for x in d.get("landmarks", [])]
        if not 1 <= len(lms) <= 3:
            raise InvariantViolation(f"sample {d.get('id')!r} needs 1 to 3 landmark annotations")
        if d["side"] not in ("L", "R"):
            raise InvariantViolation(f"sample {d.get('id')!r} has invalid side {d['side']!r}")
        return cls(str(d["id"]), d["stump_path"], d["socket_path"], d["side"], lms)


def load_manifest(path):
    """Read a dataset manifest; relative mesh paths resolve against its directory."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    root = path.parent
    entries = []
    for d in doc["samples"]:
        e = SampleEntry.from_dict(d)
        e.stump_path = str(root / e.stump_path)
        e.socket_path = str(root / e.socket_path)
        entries.append(e)
    return entries


def save_manifest(entries, path, relative_to=None, extra=None):
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    samples = []
    for e in entries:
        d = e.to_dict()
        for key in ("stump_path", "socket_path"):
            p = Path(d[key])
            if p.is_absolute():
                d[key] = os.path.relpath(p, base)
        samples.append(d)
    doc = {"version": 1, "samples": samples}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scan_pair(entry: SampleEntry, landmarks=None) -> ScanPair:
    from .meshio import load_mesh

    lm = landmarks if landmarks is not None else entry.average_landmarks()
    return ScanPair(load_mesh(entry.stump_path), load_mesh(entry.socket_path), lm, entry.side)


@dataclass
class PreprocessedSample:
    id: str
    stump: CorrespondedMesh
    socket: CorrespondedMesh
    adaptations: AdaptationField
    residual_stump: float
    residual_socket: float
    # rigid motions from the averaged-landmark frame to each perturbed-landmark frame
    variants: np.ndarray


def preprocess_sample(entry: SampleEntry, template: CorrespondedMesh | None = None,
                      registration=None, sampler: LandmarkSamplerConfig | None = None,
                      band_halfwidth: float = DEFAULT_BAND_HALFWIDTH) -> PreprocessedSample:
    """Mirror (right sides), reorient with averaged landmarks, fit the
    template to the stump and then the stump fit to the socket.
    """
    from .registration import RegistrationConfig, fit_template, median_residual
    from .template import canonical_template

    template = template if template is not None else canonical_template()
    registration = registration if registration is not None else RegistrationConfig()
    pair = load_scan_pair(entry)
    if pair.side == "R":
        pair = pair.mirrored()
    canon, t_avg = reorient(pair, band_halfwidth)

    stump_fit = fit_template(template, canon.stump, registration)
    socket_fit = fit_template(stump_fit, canon.socket, registration)

    variants = np.zeros((0, 4, 4))
    if sampler is not None:
        lms = sample_landmark_variations(pair.landmarks, sampler)
        inv = t_avg.inverse()
        mats = []
        for lm in lms:
            t_v = reorientation_transform(pair.stump, lm, band_halfwidth)
            mats.append(t_v.compose(inv).matrix())
        variants = np.array(mats)

    return PreprocessedSample(
        id=entry.id,
        stump=stump_fit,
        socket=socket_fit,
        adaptations=compute_adaptations(stump_fit, socket_fit),
        residual_stump=median_residual(stump_fit, canon.stump),
        residual_socket=median_residual(socket_fit, canon.socket),
        variants=variants,
    )
