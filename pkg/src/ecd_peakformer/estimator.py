"""scikit-learn style wrappers around the pipeline pieces."""

from __future__ import annotations

from dataclasses import fields
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint
from .chemio import DatasetEntry, MoleculeRecord, parse_smiles
from .metrics import EvalReport, evaluate
from .molgraph import featurize
from .spectra import N_GRID, PeakSet, extract_peaks, render, validate_spectrum
from .training import GraphCache, TrainConfig, predict_peaks, train


def check_molecules(X) -> list[MoleculeRecord]:
    """Accept SMILES strings, records or dataset entries; return records with unique ids."""
    if isinstance(X, (str, MoleculeRecord, DatasetEntry)):
        raise TypeError("expected a sequence of molecules, got a single molecule")
    out = []
    for k, x in enumerate(X):
        if isinstance(x, str):
            x = parse_smiles(x, id=f"mol-{k}")
        elif isinstance(x, DatasetEntry):
            x = x.record
        elif not isinstance(x, MoleculeRecord):
            raise TypeError(f"item {k}: cannot interpret {type(x).__name__} as a molecule")
        out.append(x)
    ids = [r.id for r in out]
    if len(set(ids)) != len(ids):
        out = [MoleculeRecord(f"mol-{k}", r.atoms, r.bonds, r.source_smiles) for k, r in enumerate(out)]
    return out


def check_spectra(S) -> np.ndarray:
    arr = np.asarray(S, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != N_GRID:
        raise ValueError(f"expected spectra of shape (n, {N_GRID}), got {arr.shape}")
    return np.stack([validate_spectrum(row) for row in arr])


def check_peak_sets(y) -> list[PeakSet]:
    out = []
    for k, p in enumerate(y):
        if isinstance(p, PeakSet):
            out.append(p)
        elif isinstance(p, (list, tuple)):
            out.append(PeakSet.from_list(p) if p and isinstance(p[0], dict) else PeakSet.from_tuples(p))
        else:
            raise TypeError(f"label {k}: expected a PeakSet, got {type(p).__name__}")
    return out


class PeakExtractor(TransformerMixin, BaseEstimator):
    """Spectra ``(n, 371)`` to a list of peak sets."""

    def __init__(self, prominence_frac: float = 0.05, min_sep_nm: float = 5.0):
        self.prominence_frac = prominence_frac
        self.min_sep_nm = min_sep_nm

    def fit(self, X, y=None):
        check_spectra(X)
        return self

    def transform(self, X) -> list[PeakSet]:
        return [extract_peaks(row, self.prominence_frac, self.min_sep_nm) for row in check_spectra(X)]


class SpectrumRenderer(TransformerMixin, BaseEstimator):
    """Peak sets to spectra ``(n, 371)``."""

    def __init__(self, mode: str = "amplitude", sigma0_nm: float = 10.0):
        self.mode = mode
        self.sigma0_nm = sigma0_nm

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        peak_sets = check_peak_sets(X)
        if not peak_sets:
            return np.zeros((0, N_GRID))
        return np.stack([render(p, self.mode, self.sigma0_nm) for p in peak_sets])


class MoleculeFeaturizer(TransformerMixin, BaseEstimator):
    """Molecules to ``(AtomBondGraph, BondAngleGraph)`` pairs."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> list:
        return [featurize(r, seed=self.seed) for r in check_molecules(X)]


_CONFIG_FIELDS = [f.name for f in fields(TrainConfig)]


class ECDFormerRegressor(BaseEstimator):
    """Fit on molecules with peak-set (or spectrum) targets; predict peak sets.

    Constructor parameters mirror :class:`TrainConfig`.  After ``fit`` the
    selected checkpoint is stored in ``checkpoint_``.
    """

    def __init__(self, batch_size=256, learning_rate=1e-3, lr_decay_factor=0.25,
                 lr_decay_every_epochs=200, epochs=1000, split_fractions=(0.90, 0.05, 0.05),
                 seed=0, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8, embedding_dim=128,
                 gnn_iterations=5, n_queries=10, transformer_layers=4, n_heads=4, dropout=0.1,
                 loss_number=1.0, loss_position=1.0, loss_symbol=2.0, loss_height=0.1,
                 render_mode="amplitude", sigma0_nm=10.0, prominence_frac=0.05, min_sep_nm=5.0):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_every_epochs = lr_decay_every_epochs
        self.epochs = epochs
        self.split_fractions = split_fractions
        self.seed = seed
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.embedding_dim = embedding_dim
        self.gnn_iterations = gnn_iterations
        self.n_queries = n_queries
        self.transformer_layers = transformer_layers
        self.n_heads = n_heads
        self.dropout = dropout
        self.loss_number = loss_number
        self.loss_position = loss_position
        self.loss_symbol = loss_symbol
        self.loss_height = loss_height
        self.render_mode = render_mode
        self.sigma0_nm = sigma0_nm
        self.prominence_frac = prominence_frac
        self.min_sep_nm = min_sep_nm

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in _CONFIG_FIELDS})

    def fit(self, X, y, log_path=None):
        records = check_molecules(X)
        if isinstance(y, np.ndarray) and y.ndim == 2:
            spectra = check_spectra(y)
            entries = [DatasetEntry(r, s) for r, s in zip(records, spectra)]
        else:
            labels = check_peak_sets(y)
            entries = [DatasetEntry(r, None, p) for r, p in zip(records, labels)]
        if len(entries) != len(records) or len(records) != len(y):
            raise ValueError(f"X has {len(records)} molecules but y has {len(y)} targets")
        self.checkpoint_ = train(entries, self.train_config(), log_path=log_path)
        self.model_ = self.checkpoint_.model()
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint | str) -> "ECDFormerRegressor":
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        est = cls(**TrainConfig.from_dict(checkpoint.config).to_dict())
        est.split_fractions = tuple(est.split_fractions)
        est.betas = tuple(est.betas)
        est.checkpoint_ = checkpoint
        est.model_ = checkpoint.model()
        return est

    def predict(self, X) -> list[PeakSet]:
        check_is_fitted(self, "model_")
        records = check_molecules(X)
        entries = [DatasetEntry(r) for r in records]
        return predict_peaks(self.model_, entries, GraphCache(self.seed), self.batch_size)

    def predict_spectra(self, X) -> np.ndarray:
        return SpectrumRenderer(self.render_mode, self.sigma0_nm).transform(self.predict(X))

    def evaluate(self, X, y) -> EvalReport:
        return evaluate(self.predict(X), check_peak_sets(y))

    def score(self, X, y) -> float:
        """Symbol accuracy as a fraction in [0, 1]; 0 when no peaks could be matched."""
        acc = self.evaluate(X, y).symbol_acc_pct
        return 0.0 if acc is None else acc / 100.0
