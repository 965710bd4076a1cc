"""Peak-level evaluation: Number-RMSE, Position-RMSE and Symbol-Acc."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .spectra import PeakSet


def match_peaks(pred: PeakSet, truth: PeakSet) -> list[tuple[int, int]]:
    """Pair the i-th predicted peak with the i-th true peak, both in wavelength order."""
    return [(i, i) for i in range(min(len(pred), len(truth)))]


@dataclass
class MoleculeScore:
    n_pred: int
    n_truth: int
    position_errors: list[float]
    symbol_matches: list[bool]

    @property
    def n_matched(self) -> int:
        return len(self.position_errors)


def _rmse(values: Sequence[float]) -> Optional[float]:
    if not values:
        return None
    return math.sqrt(sum(v * v for v in values) / len(values))


def _acc(matches: Sequence[bool]) -> Optional[float]:
    if not matches:
        return None
    return 100.0 * sum(matches) / len(matches)


@dataclass
class Bucket:
    n_molecules: int
    number_rmse: float
    position_rmse_nm: Optional[float]
    symbol_acc_pct: Optional[float]
    position_errors: list[float]
    symbol_matches: list[bool]


@dataclass
class EvalReport:
    """Aggregate metrics; ``None`` marks a metric with no matched pairs to score."""

    number_rmse: float
    position_rmse_nm: Optional[float]
    symbol_acc_pct: Optional[float]
    n_molecules: int
    n_matched_pairs: int
    n_unmatched_pred: int
    n_unmatched_truth: int
    molecules: list[MoleculeScore] = field(repr=False)
    buckets: dict[int, Bucket] = field(repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["buckets"] = {str(k): v for k, v in d["buckets"].items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        def fmt(v, spec):
            return "undefined" if v is None else format(v, spec)

        head = f"{'Position-RMSE (nm)':>20} {'Number-RMSE':>12} {'Symbol-Acc (%)':>15}"
        row = (f"{fmt(self.position_rmse_nm, '.2f'):>20} {fmt(self.number_rmse, '.2f'):>12} "
               f"{fmt(self.symbol_acc_pct, '.1f'):>15}")
        return f"{head}\n{row}\n(n_molecules={self.n_molecules}, matched_pairs={self.n_matched_pairs})"


def score_molecule(pred: PeakSet, truth: PeakSet) -> MoleculeScore:
    pairs = match_peaks(pred, truth)
    return MoleculeScore(
        n_pred=len(pred),
        n_truth=len(truth),
        position_errors=[pred[i].position_nm - truth[j].position_nm for i, j in pairs],
        symbol_matches=[pred[i].symbol == truth[j].symbol for i, j in pairs],
    )


def _aggregate(scores: list[MoleculeScore]) -> tuple[float, Optional[float], Optional[float], list, list]:
    number = math.sqrt(sum((s.n_pred - s.n_truth) ** 2 for s in scores) / len(scores))
    errors = [e for s in scores for e in s.position_errors]
    matches = [m for s in scores for m in s.symbol_matches]
    return number, _rmse(errors), _acc(matches), errors, matches


def evaluate(predictions: Sequence[PeakSet], truths: Sequence[PeakSet]) -> EvalReport:
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if not truths:
        raise ValueError("nothing to evaluate")
    scores = [score_molecule(p, t) for p, t in zip(predictions, truths)]
    number, position, symbol, errors, _ = _aggregate(scores)

    by_n: dict[int, list[MoleculeScore]] = {}
    for s in scores:
        by_n.setdefault(s.n_truth, []).append(s)
    buckets = {}
    for n in sorted(by_n):
        b_num, b_pos, b_sym, b_err, b_match = _aggregate(by_n[n])
        buckets[n] = Bucket(len(by_n[n]), b_num, b_pos, b_sym, b_err, b_match)

    return EvalReport(
        number_rmse=number,
        position_rmse_nm=position,
        symbol_acc_pct=symbol,
        n_molecules=len(scores),
        n_matched_pairs=len(errors),
        n_unmatched_pred=sum(s.n_pred - s.n_matched for s in scores),
        n_unmatched_truth=sum(s.n_truth - s.n_matched for s in scores),
        molecules=scores,
        buckets=buckets,
    )


def optimal_assignment(pred: PeakSet, truth: PeakSet) -> tuple[list[tuple[int, int]], float]:
    """Minimum squared-position-error pairing of size ``min(len(pred), len(truth))``.

    Exhaustive search; meant for the small sets used to compare against the
    order-based matching.
    """
    k = min(len(pred), len(truth))
    if k == 0:
        return [], 0.0
    best_cost, best = math.inf, []
    for ps in itertools.permutations(range(len(pred)), k):
        for ts in itertools.combinations(range(len(truth)), k):
            cost = sum((pred[i].position_nm - truth[j].position_nm) ** 2 for i, j in zip(ps, ts))
            if cost < best_cost:
                best_cost, best = cost, list(zip(ps, ts))
    return sorted(best, key=lambda ij: ij[1]), best_cost


def optimal_assignment_metrics(predictions: Sequence[PeakSet],
                               truths: Sequence[PeakSet]) -> tuple[Optional[float], Optional[float]]:
    """Position-RMSE and Symbol-Acc under optimal assignment, for comparison only."""
    errors, matches = [], []
    for p, t in zip(predictions, truths):
        pairs, _ = optimal_assignment(p, t)
        errors += [p[i].position_nm - t[j].position_nm for i, j in pairs]
        matches += [p[i].symbol == t[j].symbol for i, j in pairs]
    return _rmse(errors), _acc(matches)
