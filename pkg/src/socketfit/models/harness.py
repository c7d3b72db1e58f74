"""Training, prediction, persistence and k-fold cross-validation for the
three learners in either output mode and representation.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import CorrespondedDataset
from ..errors import DatasetTooSmall, InvariantViolation, ModeMismatch, ParseError
from ..evaluation import EvalReport, aggregate_reports, evaluate_prediction
from ..geometry import MeshIndex
from ..pca import PcaModel, pca_fit, pca_inverse, pca_transform
from ..preprocess import AdaptationField, apply_adaptations
from ..template import N_VERTICES, CorrespondedMesh
from .ffnn import FeedForwardNet, MlpSpec
from .forest import Forest, ForestConfig, train_forest
from .pointset import PointSetNet, PointSetSpec, prepare_clouds
from .training import fit_network

log = logging.getLogger(__name__)

METHODS = ("Forest", "Ffnn", "PointSet")
MODES = ("Adaptations", "SocketShape")
REPRESENTATIONS = ("Raw", "Reduced")
MODEL_VERSION = 1


@dataclass(frozen=True)
class OutputMode:
    mode: str = "Adaptations"
    representation: str = "Raw"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvariantViolation(f"unknown mode {self.mode!r}")
        if self.representation not in REPRESENTATIONS:
            raise InvariantViolation(f"unknown representation {self.representation!r}")


def check_supported(method, mode: OutputMode):
    if method not in METHODS:
        raise InvariantViolation(f"unknown method {method!r}")
    if method == "PointSet" and mode.representation != "Raw":
        raise ModeMismatch("the point-set network takes raw point clouds only")


@dataclass(frozen=True)
class AlgorithmSpec:
    """What to train: ``params`` overrides the published defaults of the
    method (forest config fields, network spec fields).

    ``budget`` selects the point-set sampling budget (``"full"`` or
    ``"reduced"``); ``augment`` caps the number of landmark variants per
    sample used for network training (0 disables augmentation).
    """

    method: str
    mode: OutputMode = OutputMode()
    params: dict = field(default_factory=dict)
    augment: int = 0
    budget: str = "full"
    pca_threshold: float = 0.95

    def __post_init__(self):
        check_supported(self.method, self.mode)
        if self.budget not in ("full", "reduced"):
            raise InvariantViolation(f"unknown budget {self.budget!r}")

    def to_dict(self):
        d = asdict(self)
        d["mode"] = asdict(self.mode)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["mode"] = OutputMode(**d["mode"])
        return cls(**d)


@dataclass
class Normalizer:
    """Per-feature centering with a single global scale, so relative
    magnitudes between coordinates are preserved.
    """

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        mean = x.mean(axis=0)
        scale = float(np.sqrt(np.mean((x - mean) ** 2)))
        return cls(mean, scale if scale > 0 else 1.0)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def inverse(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.mean


def _targets(data: CorrespondedDataset, mode: OutputMode):
    src = data.adaptations if mode.mode == "Adaptations" else data.sockets
    return src.reshape(len(data), -1)


def _stack_flat(data: CorrespondedDataset):
    return data.stumps.reshape(len(data), -1)


@dataclass(eq=False)
class TrainedModel:
    algo: AlgorithmSpec
    model: object
    train_ids: tuple
    in_pca: PcaModel | None = None
    out_pca: PcaModel | None = None
    x_norm: Normalizer | None = None
    y_norm: Normalizer | None = None
    history: list = field(default_factory=list)

    @property
    def mode(self) -> OutputMode:
        return self.algo.mode

    def predict_targets(self, stumps) -> np.ndarray:
        """Raw-space target vectors (n, 10083) for stacked stumps (n, 3361, 3)."""
        stumps = np.asarray(stumps, dtype=float).reshape(-1, N_VERTICES, 3)
        method = self.algo.method
        if method == "PointSet":
            spec = self.model.spec
            y = self.model.predict(prepare_clouds(stumps, spec)).astype(float)
        else:
            x = stumps.reshape(len(stumps), -1)
            if self.in_pca is not None:
                x = pca_transform(self.in_pca, x)
            if method == "Forest":
                y = self.model.predict(x)
            else:
                y = self.model.predict(self.x_norm.transform(x)).astype(float)
        if self.y_norm is not None:
            y = self.y_norm.inverse(y)
        if self.out_pca is not None:
            y = pca_inverse(self.out_pca, y)
        return np.atleast_2d(y)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"version": MODEL_VERSION, "algo": self.algo.to_dict(),
                "train_ids": list(self.train_ids)}
        if self.algo.method == "Forest":
            self.model.save(directory / "forest.npz")
            meta["forest"] = self.model.config.to_dict()
        else:
            net_meta, arrays = self.model.state()
            meta["network"] = net_meta
            np.savez(directory / "network.npz", *arrays)
        for name in ("x_norm", "y_norm"):
            norm = getattr(self, name)
            if norm is not None:
                np.savez(directory / f"{name}.npz", mean=norm.mean, scale=np.array(norm.scale))
        for name in ("in_pca", "out_pca"):
            model = getattr(self, name)
            if model is not None:
                model.save(directory / f"{name}.npz")
        (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if self.history:
            write_loss_csv(self.history, directory / "loss.csv")

    @classmethod
    def load(cls, directory) -> "TrainedModel":
        directory = Path(directory)
        meta_path = directory / "model.json"
        if not meta_path.exists():
            raise FileNotFoundError(meta_path)
        meta = json.loads(meta_path.read_text())
        if meta.get("version") != MODEL_VERSION:
            raise ParseError(f"unsupported model version {meta.get('version')}", str(meta_path))
        algo = AlgorithmSpec.from_dict(meta["algo"])
        if algo.method == "Forest":
            model = Forest.load(directory / "forest.npz", ForestConfig(**meta["forest"]))
        else:
            with np.load(directory / "network.npz") as z:
                arrays = [z[f"arr_{i}"] for i in range(len(z.files))]
            net_cls = PointSetNet if algo.method == "PointSet" else FeedForwardNet
            model = net_cls.from_state(meta["network"], arrays)
        out = cls(algo, model, tuple(meta["train_ids"]))
        for name in ("x_norm", "y_norm"):
            p = directory / f"{name}.npz"
            if p.exists():
                with np.load(p) as z:
                    setattr(out, name, Normalizer(z["mean"], float(z["scale"])))
        for name in ("in_pca", "out_pca"):
            p = directory / f"{name}.npz"
            if p.exists():
                setattr(out, name, PcaModel.load(p))
        return out


def write_loss_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "test_loss"])
        for epoch, train, test in history:
            w.writerow([epoch, repr(float(train)), repr(float(test))])


def train_model(train: CorrespondedDataset, algo: AlgorithmSpec, seed=0,
                test: CorrespondedDataset | None = None) -> TrainedModel:
    """Fit one learner on ``train``; ``test`` only feeds the per-epoch
    test-loss log of the networks and never influences the fit.
    """
    mode = algo.mode
    reduced = mode.representation == "Reduced"
    in_pca = out_pca = None
    if reduced:
        # fitted on the (un-augmented) training rows only
        in_pca = pca_fit(_stack_flat(train), algo.pca_threshold, "Scan")
        kind = "Adaptation" if mode.mode == "Adaptations" else "Socket"
        out_pca = pca_fit(_targets(train, mode), algo.pca_threshold, kind)

    fit_set = train
    if algo.method != "Forest" and algo.augment > 0:
        fit_set = train.augmented(algo.augment)

    def encode(data):
        x, y = _stack_flat(data), _targets(data, mode)
        if reduced:
            x, y = pca_transform(in_pca, x), pca_transform(out_pca, y)
        return x, y

    x, y = encode(fit_set)
    if algo.method == "Forest":
        cfg = ForestConfig.for_mode(mode.mode, mode.representation, **{"seed": seed, **algo.params})
        forest = train_forest(x, y, cfg)
        return TrainedModel(algo, forest, train.ids, in_pca, out_pca)

    y_norm = Normalizer.fit(y)
    yt = y_norm.transform(y)
    if algo.method == "Ffnn":
        x_norm = Normalizer.fit(x)
        spec = MlpSpec.for_mode(mode.mode, mode.representation, x.shape[1], y.shape[1], **algo.params)
        net = FeedForwardNet(spec, seed)
        inputs = x_norm.transform(x)
        test_pair = None
        if test is not None:
            tx, ty = encode(test)
            test_pair = (x_norm.transform(tx), y_norm.transform(ty))
    else:
        x_norm = None
        base = PointSetSpec.reduced_budget if algo.budget == "reduced" else PointSetSpec.for_mode
        spec = base(mode.mode, **algo.params)
        net = PointSetNet(spec, seed)
        inputs = prepare_clouds(fit_set.stumps, spec)
        test_pair = None
        if test is not None:
            test_pair = (prepare_clouds(test.stumps, spec), y_norm.transform(_targets(test, mode)))
    history = fit_network(net, inputs, yt, spec.epochs, spec.batch_size, spec.learning_rate,
                          spec.smooth_l1_beta, seed=seed, test=test_pair)
    return TrainedModel(algo, net, train.ids, in_pca, out_pca, x_norm, y_norm, history)


def predict_socket(model: TrainedModel, stump: CorrespondedMesh,
                   mode: OutputMode | None = None) -> CorrespondedMesh:
    """Predicted socket for one corresponded stump."""
    if mode is not None and mode != model.mode:
        raise ModeMismatch(f"model predicts {model.mode}, asked for {mode}")
    return predict_sockets(model, stump.vertices[None])[0]


def predict_sockets(model: TrainedModel, stumps) -> list:
    stumps = np.asarray(stumps, dtype=float).reshape(-1, N_VERTICES, 3)
    y = model.predict_targets(stumps).reshape(-1, N_VERTICES, 3)
    out = []
    for s, v in zip(stumps, y):
        stump = CorrespondedMesh(s)
        if model.mode.mode == "Adaptations":
            out.append(apply_adaptations(stump, AdaptationField(v)))
        else:
            out.append(CorrespondedMesh(v))
    return out


def fold_indices(n, k=5, seed=0):
    """Seeded shuffle split into ``k`` near-equal folds (larger folds first)."""
    if n < k or k < 2:
        raise DatasetTooSmall(f"{n} samples cannot form {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def fold_seed(seed, fold):
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def evaluate_model(model: TrainedModel, data: CorrespondedDataset, fold=None):
    """Per-sample records of ``model`` on every sample of ``data``."""
    preds = predict_sockets(model, data.stumps)
    records = []
    for sid, pred, truth in zip(data.ids, preds, data.sockets):
        truth_mesh = CorrespondedMesh(truth)
        records.append(evaluate_prediction(pred, truth_mesh, sid, fold, index=MeshIndex(truth_mesh)))
    return records


def cross_validate(dataset: CorrespondedDataset, algo: AlgorithmSpec, k=5, seed=0,
                   out_dir=None) -> list:
    """k-fold cross-validation; returns one ``EvalReport`` per fold.

    Each fold trains a fresh model (and, for the reduced representation,
    fresh PCA models) on the other folds only. With ``out_dir`` the fold
    models and loss logs are written to ``out_dir/fold<i>``.
    """
    folds = fold_indices(len(dataset), k, seed)
    reports = []
    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(dataset)), test_idx)
        train, test = dataset.subset(train_idx), dataset.subset(test_idx)
        log.info("%s/%s/%s fold %d: %d train, %d test", algo.method, algo.mode.mode,
                 algo.mode.representation, f, len(train), len(test))
        model = train_model(train, algo, fold_seed(seed, f), test)
        # leakage guard: nothing evaluated here may have been seen in training
        assert not set(model.train_ids) & set(test.ids), "test sample leaked into training"
        if model.in_pca is not None:
            assert model.train_ids == train.ids
        if out_dir is not None:
            model.save(Path(out_dir) / f"fold{f}")
        records = evaluate_model(model, test, fold=f)
        reports.append(aggregate_reports(records, None, algo.method, algo.mode.mode,
                                         algo.mode.representation))
    return reports


def holdout_split(n, fraction=0.2, seed=0):
    """Seeded shuffle into sorted ``(train_idx, test_idx)`` with
    ``round(fraction * n)`` test samples (at least one of each).
    """
    if not 0 < fraction < 1:
        raise InvariantViolation("holdout fraction must lie in (0, 1)")
    n_test = int(round(fraction * n))
    if n < 2 or n_test < 1 or n_test >= n:
        raise DatasetTooSmall(f"{n} samples cannot form a {fraction} holdout split")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def holdout_validate(dataset: CorrespondedDataset, algo: AlgorithmSpec, fraction=0.2, seed=0,
                     out_dir=None) -> list:
    """Single seeded train/test split; returns a one-element report list
    shaped like ``cross_validate`` output (the test part is fold 0).
    """
    train_idx, test_idx = holdout_split(len(dataset), fraction, seed)
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    model = train_model(train, algo, fold_seed(seed, 0), test)
    assert not set(model.train_ids) & set(test.ids), "test sample leaked into training"
    if out_dir is not None:
        model.save(Path(out_dir) / "fold0")
    records = evaluate_model(model, test, fold=0)
    return [aggregate_reports(records, None, algo.method, algo.mode.mode, algo.mode.representation)]


def combine_folds(reports) -> EvalReport:
    """Overall report over the records of all fold reports."""
    first = reports[0]
    records = [r for rep in reports for r in rep.records]
    return aggregate_reports(records, None, first.method, first.mode, first.representation)
