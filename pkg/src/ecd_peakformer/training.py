"""Training and evaluation harness."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .chemio import DatasetEntry
from .encoder import GraphBatch, NumericError
from .metrics import EvalReport, evaluate
from .model import ECDFormer, ModelConfig
from .molgraph import featurize
from .peakformer import LabelError, LossWeights, make_targets, peak_loss
from .spectra import MAX_PEAKS, PeakSet, extract_peaks, validate_spectrum

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.25
    lr_decay_every_epochs: int = 200
    epochs: int = 1000
    split_fractions: tuple[float, float, float] = (0.90, 0.05, 0.05)
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    embedding_dim: int = 128
    gnn_iterations: int = 5
    n_queries: int = 10
    transformer_layers: int = 4
    n_heads: int = 4
    dropout: float = 0.1
    loss_number: float = 1.0
    loss_position: float = 1.0
    loss_symbol: float = 2.0
    loss_height: float = 0.1
    render_mode: str = "amplitude"
    sigma0_nm: float = 10.0
    prominence_frac: float = 0.05
    min_sep_nm: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three values summing to 1, got {self.split_fractions}")
        if any(f < 0 for f in self.split_fractions):
            raise ValueError("split fractions must be non-negative")
        for name in ("batch_size", "epochs", "lr_decay_every_epochs", "embedding_dim", "n_queries",
                     "transformer_layers", "n_heads", "sigma0_nm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("learning_rate", "weight_decay", "gnn_iterations", "loss_number",
                     "loss_position", "loss_symbol", "loss_height", "dropout", "min_sep_nm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.render_mode not in ("amplitude", "literal"):
            raise ValueError(f"unknown render mode {self.render_mode!r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.embedding_dim, self.gnn_iterations, self.n_queries,
                           self.transformer_layers, self.n_heads, self.dropout)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.loss_number, self.loss_position, self.loss_symbol, self.loss_height)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every_epochs)


def prepare_labels(entry: DatasetEntry, config: TrainConfig = TrainConfig()) -> PeakSet:
    """Peak labels for one entry: given peaks pass through, otherwise extracted from the curve."""
    if entry.peaks is not None:
        peaks = PeakSet(tuple(entry.peaks))
    elif entry.spectrum is not None:
        peaks = extract_peaks(validate_spectrum(entry.spectrum), config.prominence_frac, config.min_sep_nm)
    else:
        raise LabelError(f"entry {entry.id!r} has neither a spectrum nor peaks")
    if len(peaks) > MAX_PEAKS:
        raise LabelError(f"entry {entry.id!r} has {len(peaks)} peaks (> {MAX_PEAKS})")
    return peaks


def label_entries(entries: Sequence[DatasetEntry], config: TrainConfig) -> tuple[list[DatasetEntry], list[PeakSet]]:
    kept, labels, rejected = [], [], 0
    for e in entries:
        try:
            labels.append(prepare_labels(e, config))
        except LabelError as exc:
            if "neither" in str(exc):
                raise
            rejected += 1
            log.warning("rejected: %s", exc)
            continue
        kept.append(e)
    if rejected:
        log.warning("%d entries rejected for having more than %d peaks", rejected, MAX_PEAKS)
    return kept, labels


def split_dataset(entries: Sequence, fractions=(0.90, 0.05, 0.05), seed: int = 0):
    """Shuffle with ``seed`` and cut into train/valid/test.

    Valid and test sizes are ``floor(n * fraction)``; the remainder goes to train.
    """
    n = len(entries)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_valid - n_test
    if n_valid == 0 or n_test == 0:
        log.warning("split of %d entries leaves valid=%d test=%d", n, n_valid, n_test)
    pick = lambda idx: [entries[i] for i in idx]
    return (pick(order[:n_train]), pick(order[n_train:n_train + n_valid]),
            pick(order[n_train + n_valid:]))


class GraphCache:
    """Featurized graphs keyed by entry id; coordinates embedded once with ``seed``."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._graphs: dict[str, tuple] = {}

    def get(self, entry: DatasetEntry):
        g = self._graphs.get(entry.id)
        if g is None:
            g = self._graphs[entry.id] = featurize(entry.record, seed=self.seed)
        return g

    def batch(self, entries: Sequence[DatasetEntry]) -> GraphBatch:
        return GraphBatch.from_graphs([self.get(e) for e in entries])


def predict_peaks(model: ECDFormer, entries: Sequence[DatasetEntry], cache: GraphCache,
                  batch_size: int = 256) -> list[PeakSet]:
    out: list[PeakSet] = []
    for start in range(0, len(entries), batch_size):
        out += model.predict_peaks(cache.batch(entries[start:start + batch_size]))
    return out


def _selection_key(report: Optional[EvalReport], epoch: int) -> tuple:
    if report is None:
        return (-math.inf, -math.inf, -epoch)
    sym = report.symbol_acc_pct if report.symbol_acc_pct is not None else -math.inf
    pos = report.position_rmse_nm if report.position_rmse_nm is not None else math.inf
    return (sym, -pos, -epoch)


def _state_arrays(module_or_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module_or_dict.items()}


def _optimizer_arrays(model: ECDFormer, opt: torch.optim.Optimizer):
    names = {id(p): n for n, p in model.named_parameters()}
    exp_avg, exp_avg_sq, step = {}, {}, 0
    for p, st in opt.state.items():
        if not st:
            continue
        exp_avg[names[id(p)]] = st["exp_avg"].detach().numpy().copy()
        exp_avg_sq[names[id(p)]] = st["exp_avg_sq"].detach().numpy().copy()
        step = int(st["step"])
    return exp_avg, exp_avg_sq, step


def _find_nonfinite(model, cache, entries, labels, weights) -> str:
    with torch.no_grad():
        for e, lab in zip(entries, labels):
            try:
                terms = peak_loss(model(cache.batch([e])), [lab], weights)
            except NumericError:
                return e.id
            if not torch.isfinite(terms.total):
                return e.id
    return "<unknown>"


def train(entries: Sequence[DatasetEntry], config: TrainConfig = TrainConfig(),
          log_path=None, on_epoch: Optional[Callable[[dict], None]] = None) -> Checkpoint:
    """Train from scratch and return the checkpoint with the best validation Symbol-Acc.

    Selection ties go to lower Position-RMSE, then the earlier epoch.  When
    the validation split is empty the training split is scored instead.
    """
    entries, labels = label_entries(list(entries), config)
    if not entries:
        raise ValueError("no trainable entries")
    label_of = {e.id: lab for e, lab in zip(entries, labels)}
    train_set, valid_set, test_set = split_dataset(entries, config.split_fractions, config.seed)
    score_set = valid_set or train_set

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    cache = GraphCache(config.seed)
    for e in entries:
        cache.get(e)
    model = ECDFormer(config.model_config(), seed=config.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, betas=config.betas,
                            eps=config.eps, weight_decay=config.weight_decay)
    weights = config.loss_weights()
    splits = {"train": [e.id for e in train_set], "valid": [e.id for e in valid_set],
              "test": [e.id for e in test_set]}

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    best_key, best = None, None
    try:
        for epoch in range(config.epochs):
            lr = lr_at_epoch(config, epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            order = rng.permutation(len(train_set))
            sums = dict.fromkeys(("total", "number", "position", "symbol", "height"), 0.0)
            for start in range(0, len(order), config.batch_size):
                batch_entries = [train_set[i] for i in order[start:start + config.batch_size]]
                batch_labels = [label_of[e.id] for e in batch_entries]
                try:
                    pred = model(cache.batch(batch_entries))
                    terms = peak_loss(pred, make_targets(batch_labels, config.n_queries), weights)
                    finite = bool(torch.isfinite(terms.total))
                except NumericError:
                    finite = False
                if not finite:
                    model.eval()
                    bad = _find_nonfinite(model, cache, batch_entries, batch_labels, weights)
                    raise NumericError(f"non-finite loss at epoch {epoch}, molecule {bad!r}")
                opt.zero_grad(set_to_none=True)
                terms.total.backward()
                opt.step()
                for k, v in terms.as_floats().items():
                    sums[k] += v * len(batch_entries)
            losses = {k: v / len(train_set) for k, v in sums.items()}

            preds = predict_peaks(model, score_set, cache, config.batch_size)
            report = evaluate(preds, [label_of[e.id] for e in score_set])
            key = _selection_key(report, epoch)
            record = {
                "epoch": epoch, "lr": lr, **{f"loss_{k}": v for k, v in losses.items()},
                "val_number_rmse": report.number_rmse, "val_position_rmse_nm": report.position_rmse_nm,
                "val_symbol_acc_pct": report.symbol_acc_pct,
                "scored_on": "valid" if valid_set else "train",
            }
            if best_key is None or key > best_key:
                best_key = key
                exp_avg, exp_avg_sq, step = _optimizer_arrays(model, opt)
                best = Checkpoint(
                    model_state=_state_arrays(model.state_dict()),
                    config=config.to_dict(), epoch=epoch, optimizer_step=step,
                    exp_avg=exp_avg, exp_avg_sq=exp_avg_sq,
                    torch_rng=torch.get_rng_state().numpy().tobytes(),
                    numpy_rng=copy.deepcopy(rng.bit_generator.state),
                    best={"symbol_acc_pct": report.symbol_acc_pct,
                          "position_rmse_nm": report.position_rmse_nm,
                          "number_rmse": report.number_rmse, "epoch": epoch},
                    splits=splits,
                )
                record["best"] = True
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(record)
    finally:
        if log_fh:
            log_fh.close()
    return best


def evaluate_checkpoint(checkpoint: Checkpoint, entries: Sequence[DatasetEntry],
                        batch_size: int = 256) -> EvalReport:
    if not entries:
        raise ValueError("no entries to evaluate")
    config = TrainConfig.from_dict(checkpoint.config)
    entries, labels = label_entries(list(entries), config)
    model = checkpoint.model()
    preds = predict_peaks(model, entries, GraphCache(config.seed), batch_size)
    return evaluate(preds, labels)
