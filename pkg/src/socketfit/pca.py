"""Principal component analysis of flattened shape vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientSamples, ParseError

FORMAT_VERSION = 1
KINDS = ("Scan", "Socket", "Adaptation")


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Mean, orthonormal component rows and the retained variance spectrum.

    ``spectrum`` holds every non-zero covariance eigenvalue found at fit
    time, so reconstruction error and explained ratios stay available after
    truncation to ``k`` components.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    explained_ratio: np.ndarray
    spectrum: np.ndarray
    threshold: float
    kind: str = "Scan"

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def discarded_variance(self) -> float:
        return float(self.spectrum[self.k:].sum())

    def save(self, path):
        np.savez(path, version=np.array(FORMAT_VERSION), mean=self.mean,
                 components=self.components, eigenvalues=self.eigenvalues,
                 explained_ratio=self.explained_ratio, spectrum=self.spectrum,
                 threshold=np.array(self.threshold), kind=np.array(self.kind))

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            version = int(z["version"])
            if version != FORMAT_VERSION:
                raise ParseError(f"unsupported PCA model version {version}", str(path))
            return cls(z["mean"], z["components"], z["eigenvalues"], z["explained_ratio"],
                       z["spectrum"], float(z["threshold"]), str(z["kind"]))


def pca_fit(data, threshold: float = 0.95, kind: str = "Scan") -> PcaModel:
    """Fit PCA keeping the fewest components whose cumulative explained
    variance reaches ``threshold``.

    The eigenproblem is solved on the n x n Gram matrix of the centered
    data, which is cheap when samples are far fewer than dimensions.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientSamples("PCA needs at least two samples")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    n = x.shape[0]
    mean = x.mean(axis=0)
    xc = x - mean
    gram = xc @ xc.T
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    # centered data has rank <= n - 1; drop numerically null directions
    tol = max(evals[0], 0.0) * max(x.shape) * np.finfo(float).eps
    keep = evals > tol
    evals, evecs = evals[keep], evecs[:, keep]
    if len(evals) == 0:
        raise InsufficientSamples("data has no variance")

    components = (xc.T @ evecs / np.sqrt(evals)).T
    # one Gram-Schmidt pass cleans up round-off from the Gram construction
    components, _ = np.linalg.qr(components.T)
    components = components.T
    flip = np.sign(components[np.arange(len(components)), np.argmax(np.abs(components), axis=1)])
    components *= flip[:, None]

    variances = evals / (n - 1)
    ratio = variances / variances.sum()
    cumulative = np.cumsum(ratio)
    k = int(np.searchsorted(cumulative, threshold - 1e-12) + 1)
    k = min(k, len(variances))
    return PcaModel(mean, components[:k].copy(), variances[:k].copy(), ratio[:k].copy(),
                    variances, float(threshold), kind)


def _check_dim(model, x, axis_len, what):
    if axis_len != model.dim:
        raise DimensionMismatch(f"{what} has {axis_len} values, model expects {model.dim}")


def pca_transform(model: PcaModel, x) -> np.ndarray:
    """Coefficients ``components @ (x - mean)``; accepts one vector or rows."""
    x = np.asarray(x, dtype=float)
    _check_dim(model, x, x.shape[-1], "input")
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != model.k:
        raise DimensionMismatch(f"expected {model.k} coefficients, got {c.shape[-1]}")
    return model.mean + c @ model.components


def reconstruction_error(model: PcaModel, data) -> float:
    """Summed squared reconstruction error per sample, normalized by n - 1
    so that on the fitting data it equals the discarded variance.
    """
    x = np.asarray(data, dtype=float)
    r = x - pca_inverse(model, pca_transform(model, x))
    return float((r ** 2).sum() / (len(x) - 1))


def truncate(model: PcaModel, k: int) -> PcaModel:
    """Copy of ``model`` keeping only the first ``k`` components."""
    k = int(k)
    if not 1 <= k <= len(model.spectrum):
        raise ValueError(f"k must lie in [1, {len(model.spectrum)}]")
    if k > model.k:
        raise ValueError("cannot extend a truncated model")
    return PcaModel(model.mean, model.components[:k], model.eigenvalues[:k],
                    model.explained_ratio[:k], model.spectrum, model.threshold, model.kind)
