"""Synthetic stump/socket corpus with known rectifications.

Stumps are smooth tubes with a domed distal end, built directly on the
template grid in a generator frame whose z axis is the limb axis (rim at
z = 0, apex at z = -length) and whose anterior side faces -y. Sockets are
obtained by displacing the stump along its vertex normals with a few
regional primitives (patellar tendon press, tibia crest and tibia end
relief, calf load) and then shrinking it radially.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.stats import maxwell

from .errors import InvalidParams, MeshIOError
from .mesh import LandmarkPair, TriMesh, mirror_mesh
from .meshio import save_mesh
from .template import APEX, N_RINGS, N_SEGMENTS, N_VERTICES, template_faces

log = logging.getLogger(__name__)

ANTERIOR = -0.5 * np.pi
POSTERIOR = 0.5 * np.pi

# population statistics of stump length and circumference (mm)
LENGTH_MEAN, LENGTH_STD = 209.0, 28.0
CIRCUMFERENCE_MEAN, CIRCUMFERENCE_STD = 349.0, 39.0

# median inter-rater landmark distances (mm)
RATER_MEDIAN_MID_PATELLA = 7.48
RATER_MEDIAN_TIBIA_END = 10.34


def rater_sigma(median_pairwise_distance: float) -> float:
    """Per-axis Gaussian std that gives the requested median distance
    between two independent annotations (a Maxwell variable with scale
    ``sigma * sqrt(2)``).
    """
    return median_pairwise_distance / (np.sqrt(2.0) * maxwell.median())


@dataclass(frozen=True)
class StumpParams:
    length: float = LENGTH_MEAN
    circumference: float = CIRCUMFERENCE_MEAN
    taper: float = 0.25
    ridge_amplitude: float = 3.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.length > 0 or not self.circumference > 0:
            raise InvalidParams("length and circumference must be positive")
        if self.ridge_amplitude < 0 or self.noise_std < 0:
            raise InvalidParams("amplitudes must be non-negative")
        if not 0 <= self.taper < 1:
            raise InvalidParams("taper must lie in [0, 1)")

    @classmethod
    def population_mean(cls):
        return cls()

    @classmethod
    def sample(cls, rng, noise_std=1.0):
        return cls(
            length=float(np.clip(rng.normal(LENGTH_MEAN, LENGTH_STD), 130.0, 300.0)),
            circumference=float(np.clip(rng.normal(CIRCUMFERENCE_MEAN, CIRCUMFERENCE_STD), 240.0, 470.0)),
            taper=float(np.clip(rng.normal(0.25, 0.05), 0.1, 0.4)),
            ridge_amplitude=float(np.clip(rng.normal(3.0, 1.0), 0.0, 6.0)),
            noise_std=noise_std,
            seed=int(rng.integers(2**63)),
        )


class _StumpSurface:
    """Smooth parametric surface ``(s, theta) -> xyz`` with s in [0, 1]."""

    def __init__(self, p: StumpParams):
        self.p = p
        self.r0 = p.circumference / (2 * np.pi)
        self.r_end = self.r0 * (1 - p.taper)
        self.dome = min(self.r_end, 0.4 * p.length)
        body = p.length - self.dome
        arc = 0.5 * np.pi * 0.5 * (self.dome + self.r_end)
        self.s_body = body / (body + arc)
        self.body = body
        rng = np.random.default_rng(p.seed)
        # low-frequency radial noise: harmonics 1..3 around, 0..2 along the limb
        self.coef = rng.normal(0.0, p.noise_std / np.sqrt(9.0), size=(3, 3, 2))

    def height_and_scale(self, s):
        """z and the radial profile multiplier (1 on the body, 0 at the apex)."""
        s = np.asarray(s, dtype=float)
        on_body = s <= self.s_body
        t = np.where(on_body, s / self.s_body, 1.0)
        phi = np.where(on_body, 0.0, (s - self.s_body) / (1 - self.s_body) * 0.5 * np.pi)
        z = np.where(on_body, -self.body * t, -self.body - self.dome * np.sin(phi))
        scale = np.where(on_body, 1.0, np.cos(phi))
        return z, scale

    def radius(self, s, theta):
        p = self.p
        z, scale = self.height_and_scale(s)
        u = -z / p.length
        t = np.clip(-z / max(self.body, 1e-9), 0.0, 1.0)
        base = self.r0 * (1 - p.taper * t)
        d = np.angle(np.exp(1j * (theta - ANTERIOR)))
        ridge = p.ridge_amplitude * np.exp(-0.5 * (d / 0.22) ** 2) * np.sin(np.pi * np.clip(u / 0.9, 0, 1))
        noise = np.zeros_like(base)
        for k in range(3):
            for m in range(3):
                a, b = self.coef[k, m]
                noise = noise + (a * np.cos((k + 1) * theta) + b * np.sin((k + 1) * theta)) * np.cos(m * np.pi * u)
        return (base + ridge + noise) * scale

    def point(self, s, theta):
        s = np.asarray(s, dtype=float)
        theta = np.asarray(theta, dtype=float)
        z, _ = self.height_and_scale(s)
        r = self.radius(s, theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)

    def s_at_height(self, z):
        """Inverse of the body part of the height profile."""
        return np.clip(-z / self.body, 0, 1) * self.s_body


def generate_stump(p: StumpParams):
    """Stump mesh on the template grid plus its true landmarks.

    Returns ``(TriMesh, LandmarkPair)`` in the generator frame.
    """
    surf = _StumpSurface(p)
    s = np.arange(N_RINGS) / N_RINGS
    theta = 2 * np.pi * np.arange(N_SEGMENTS) / N_SEGMENTS
    ss, tt = np.meshgrid(s, theta, indexing="ij")
    verts = np.empty((N_VERTICES, 3))
    verts[:APEX] = surf.point(ss, tt).reshape(-1, 3)
    verts[APEX] = (0.0, 0.0, -p.length)

    mid_patella = surf.point(surf.s_at_height(-0.12 * p.length), ANTERIOR)
    s_te = surf.s_body
    surface_te = surf.point(s_te, ANTERIOR)
    axis_te = np.array([0.0, 0.0, surface_te[2]])
    tibia_end = axis_te + 0.5 * (surface_te - axis_te)
    return TriMesh(verts, template_faces()), LandmarkPair(mid_patella, tibia_end)


@dataclass(frozen=True)
class RectificationRule:
    """Regional displacement magnitudes in mm (presses inward, reliefs outward)."""

    patellar_tendon_depth: float = 4.0
    tibia_crest_relief: float = 2.0
    tibia_end_relief: float = 3.0
    calf_depth: float = 3.0
    volume_scale: float = 1.0
    # relative std of the per-sample magnitude jitter
    jitter: float = 0.0

    @classmethod
    def for_stump(cls, p: StumpParams, jitter=0.1):
        """Magnitudes as smooth functions of the stump parameters."""
        zc = (p.circumference - CIRCUMFERENCE_MEAN) / CIRCUMFERENCE_STD
        zl = (p.length - LENGTH_MEAN) / LENGTH_STD
        return cls(
            patellar_tendon_depth=4.0 + 0.8 * zc,
            tibia_crest_relief=2.0 + 0.3 * p.ridge_amplitude / 3.0,
            tibia_end_relief=3.0 - 0.5 * zl,
            calf_depth=3.0 + 0.7 * zc,
            volume_scale=0.975 - 0.008 * zc,
            jitter=jitter,
        )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def rectification_field(stump: TriMesh, lm: LandmarkPair, rules: RectificationRule, seed=0):
    """Per-vertex displacement (mm) turning a generator-frame stump into its socket."""
    rng = np.random.default_rng(seed)
    gain = 1.0 + rules.jitter * np.clip(rng.standard_normal(4), -2.0, 2.0)
    v = stump.vertices
    normals = stump.vertex_normals()
    r = np.hypot(v[:, 0], v[:, 1])
    theta = np.arctan2(v[:, 1], v[:, 0])
    z = v[:, 2]
    r_ref = np.median(r[z > 0.5 * z.min()]) if len(r) else 1.0
    length = -z.min() if len(z) else 1.0

    def arc(center):
        return np.angle(np.exp(1j * (theta - center))) * r_ref

    z_mp = lm.mid_patella[2]
    z_te = lm.tibia_end[2]
    press = rules.patellar_tendon_depth * gain[0] * np.exp(
        -0.5 * (arc(ANTERIOR) / 18.0) ** 2 - 0.5 * ((z - (z_mp - 30.0)) / 10.0) ** 2)
    crest = rules.tibia_crest_relief * gain[1] * np.exp(-0.5 * (arc(ANTERIOR) / 10.0) ** 2) * \
        _sigmoid((z_mp - 45.0 - z) / 8.0) * _sigmoid((z - z_te) / 8.0)
    te_surface = np.array([lm.tibia_end[0], lm.tibia_end[1], z_te])
    te_surface[:2] *= 2.0  # tibia-end sits halfway between axis and skin
    dist2 = ((v - te_surface) ** 2).sum(axis=1)
    end_relief = rules.tibia_end_relief * gain[2] * np.exp(-0.5 * dist2 / 15.0 ** 2)
    calf = rules.calf_depth * gain[3] * np.exp(
        -0.5 * (arc(POSTERIOR) / 35.0) ** 2 - 0.5 * ((z + 0.45 * length) / (0.15 * length)) ** 2)

    amount = -press + crest + end_relief - calf
    moved = v + amount[:, None] * normals
    moved[:, :2] *= rules.volume_scale
    return moved - v


def generate_socket(stump: TriMesh, lm: LandmarkPair, rules: RectificationRule, seed=0):
    """Socket mesh and its ground-truth displacement field (socket - stump)."""
    field = rectification_field(stump, lm, rules, seed)
    socket = stump.with_vertices(stump.vertices + field)
    return socket, socket.vertices - stump.vertices


@dataclass(frozen=True)
class PopulationConfig:
    noise_std: float = 1.0
    jitter: float = 0.1
    rater_count: int = 3
    sigma_rater_mid_patella: float = rater_sigma(RATER_MEDIAN_MID_PATELLA)
    sigma_rater_tibia_end: float = rater_sigma(RATER_MEDIAN_TIBIA_END)
    # random scanner pose: translation std in mm
    pose_translation_std: float = 100.0
    right_fraction: float = 0.5


def simulate_raters(lm: LandmarkPair, cfg: PopulationConfig, rng):
    out = []
    for _ in range(cfg.rater_count):
        out.append(LandmarkPair(lm.mid_patella + rng.normal(0, cfg.sigma_rater_mid_patella, 3),
                                lm.tibia_end + rng.normal(0, cfg.sigma_rater_tibia_end, 3)))
    return out


def generate_dataset(n: int, out_dir, population: PopulationConfig | None = None, seed: int = 0):
    """Write ``n`` stump/socket PLY pairs, a manifest and the generation config.

    Returns the manifest path. Half of the samples are written as right
    sides (mirrored) so the mirroring step is exercised.
    """
    from .preprocess import SampleEntry, save_manifest

    if n < 1:
        raise InvalidParams("n must be at least 1")
    population = population or PopulationConfig()
    out = Path(out_dir)
    try:
        (out / "meshes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MeshIOError(f"cannot create {out}: {exc}") from exc

    children = np.random.SeedSequence(seed).spawn(n)
    n_right = int(round(population.right_fraction * n))
    sides = np.array(["R"] * n_right + ["L"] * (n - n_right))
    np.random.default_rng(seed).shuffle(sides)

    entries = []
    truth = {}
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        sid = f"S{i:04d}"
        params = StumpParams.sample(rng, noise_std=population.noise_std)
        stump, lm = generate_stump(params)
        rules = RectificationRule.for_stump(params, jitter=population.jitter)
        socket_seed = int(rng.integers(2**63))
        socket, field = generate_socket(stump, lm, rules, seed=socket_seed)

        pose = Rotation.random(random_state=np.random.RandomState(rng.integers(2**32))).as_matrix()
        shift = rng.normal(0.0, population.pose_translation_std, 3)
        stump_w = stump.transformed(pose, shift)
        socket_w = socket.transformed(pose, shift)
        lm_w = lm.transformed(pose, shift)
        side = str(sides[i])
        if side == "R":
            stump_w, socket_w, lm_w = mirror_mesh(stump_w), mirror_mesh(socket_w), lm_w.mirrored()
        raters = simulate_raters(lm_w, population, rng)

        stump_path = out / "meshes" / f"{sid}_stump.ply"
        socket_path = out / "meshes" / f"{sid}_socket.ply"
        save_mesh(stump_w, stump_path)
        save_mesh(socket_w, socket_path)
        entries.append(SampleEntry(sid, str(stump_path), str(socket_path), side, raters))
        truth[sid] = {"params": asdict(params), "rules": asdict(rules),
                      "socket_seed": socket_seed, "side": side,
                      "pose": {"rotation": pose.tolist(), "translation": shift.tolist()},
                      "true_landmarks": lm_w.to_dict()}

    manifest = out / "manifest.json"
    save_manifest(entries, manifest)
    config = {"n": n, "seed": seed, "population": asdict(population), "samples": truth}
    with open(out / "generation.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
