"""Stacked corresponded stump/socket pairs, the unit the learners consume."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeMismatch
from .template import N_VERTICES

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class CorrespondedDataset:
    """``stumps`` and ``sockets`` are (n, 3361, 3) in the canonical frame.

    ``variants`` holds, per sample, a (V, 4, 4) stack of rigid motions that
    re-express the pair under perturbed landmark annotations; an empty
    stack means no augmentation is available.
    """

    ids: tuple
    stumps: np.ndarray
    sockets: np.ndarray
    variants: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        stumps = np.asarray(self.stumps, dtype=float)
        sockets = np.asarray(self.sockets, dtype=float)
        n = len(self.ids)
        if stumps.shape != (n, N_VERTICES, 3) or sockets.shape != stumps.shape:
            raise ShapeMismatch(f"expected ({n}, {N_VERTICES}, 3) stumps and sockets")
        variants = tuple(np.asarray(v, dtype=float).reshape(-1, 4, 4) for v in self.variants)
        if not variants:
            variants = tuple(np.zeros((0, 4, 4)) for _ in range(n))
        if len(variants) != n:
            raise ShapeMismatch("one variant stack per sample is required")
        object.__setattr__(self, "stumps", stumps)
        object.__setattr__(self, "sockets", sockets)
        object.__setattr__(self, "variants", variants)

    def __len__(self):
        return len(self.ids)

    @property
    def adaptations(self) -> np.ndarray:
        return self.sockets - self.stumps

    def subset(self, idx) -> "CorrespondedDataset":
        idx = np.asarray(idx, dtype=int)
        return CorrespondedDataset(tuple(self.ids[i] for i in idx), self.stumps[idx],
                                   self.sockets[idx], tuple(self.variants[i] for i in idx))

    def augmented(self, max_variants=None) -> "CorrespondedDataset":
        """Originals followed by every stored variant of every sample."""
        ids, stumps, sockets = list(self.ids), [self.stumps], [self.sockets]
        for sid, s, t, mats in zip(self.ids, self.stumps, self.sockets, self.variants):
            for j, m in enumerate(mats[:max_variants]):
                r, tr = m[:3, :3], m[:3, 3]
                ids.append(f"{sid}~{j}")
                stumps.append((s @ r.T + tr)[None])
                sockets.append((t @ r.T + tr)[None])
        return CorrespondedDataset(tuple(ids), np.concatenate(stumps), np.concatenate(sockets))

    @classmethod
    def from_samples(cls, samples) -> "CorrespondedDataset":
        """Stack ``PreprocessedSample`` objects."""
        samples = list(samples)
        return cls(tuple(s.id for s in samples),
                   np.array([s.stump.vertices for s in samples]).reshape(-1, N_VERTICES, 3),
                   np.array([s.socket.vertices for s in samples]).reshape(-1, N_VERTICES, 3),
                   tuple(s.variants for s in samples))

    def save(self, path):
        counts = np.array([len(v) for v in self.variants], dtype=np.int64)
        stacked = np.concatenate(self.variants) if counts.sum() else np.zeros((0, 4, 4))
        np.savez(path, version=np.array(FORMAT_VERSION), ids=np.array(json.dumps(self.ids)),
                 stumps=self.stumps, sockets=self.sockets,
                 variant_counts=counts, variants=stacked)

    @classmethod
    def load(cls, path) -> "CorrespondedDataset":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        with np.load(path) as z:
            if int(z["version"]) != FORMAT_VERSION:
                raise ParseError(f"unsupported dataset version {int(z['version'])}", str(path))
            ids = tuple(json.loads(str(z["ids"])))
            bounds = np.cumsum(z["variant_counts"])[:-1]
            variants = tuple(np.split(z["variants"], bounds)) if len(ids) else ()
            return cls(ids, z["stumps"], z["sockets"], variants)


@dataclass(frozen=True)
class SampleLog:
    id: str
    status: str
    residual_stump: float | None = None
    residual_socket: float | None = None
    message: str = ""


def build_dataset(entries, sampler=None, registration=None, template=None):
    """Preprocess manifest entries, skipping (and logging) failures.

    Returns ``(dataset, logs)`` where ``logs`` has one ``SampleLog`` per
    entry, in manifest order.
    """
    import logging

    from .errors import SocketfitError
    from .preprocess import preprocess_sample

    log = logging.getLogger(__name__)
    samples, logs = [], []
    for entry in entries:
        try:
            s = preprocess_sample(entry, template=template, registration=registration,
                                  sampler=sampler)
        except (SocketfitError, OSError) as exc:
            log.warning("sample %s skipped: %s", entry.id, exc)
            logs.append(SampleLog(entry.id, "failed", message=f"{type(exc).__name__}: {exc}"))
            continue
        samples.append(s)
        logs.append(SampleLog(entry.id, "ok", s.residual_stump, s.residual_socket))
    if samples:
        data = CorrespondedDataset.from_samples(samples)
    else:
        data = CorrespondedDataset((), np.zeros((0, N_VERTICES, 3)), np.zeros((0, N_VERTICES, 3)))
    return data, logs
