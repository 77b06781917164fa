"""
Evaluation metrics, prediction tables and reports.
"""

import math
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from qcap.base_logging import Logger
from qcap.config import settings
from qcap.exceptions import ConstantSeries, QcapValidationError
from qcap.models import EvalReport, RecordResult

logger = Logger("qcap.metrics")


def _pairs(targets: Sequence[float], predictions: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    if targets.shape != predictions.shape or targets.ndim != 1:
        raise QcapValidationError(f"Targets {targets.shape} and predictions {predictions.shape} do not pair up")
    return targets, predictions


def mae(targets: Sequence[float], predictions: Sequence[float]) -> float:
    targets, predictions = _pairs(targets, predictions)
    if targets.size == 0:
        raise QcapValidationError("MAE of an empty set is undefined")
    return float(math.fsum(np.abs(predictions - targets)) / targets.size)


def pearson(targets: Sequence[float], predictions: Sequence[float]) -> float:
    targets, predictions = _pairs(targets, predictions)
    if targets.size < 2:
        raise QcapValidationError("Pearson r needs at least two pairs")
    if np.ptp(targets) == 0 or np.ptp(predictions) == 0:
        raise ConstantSeries("Pearson r is undefined for a constant series")
    return float(np.clip(stats.pearsonr(targets, predictions)[0], -1.0, 1.0))


def bayes_factor_pst(pred_a: Sequence[float], pred_b: Sequence[float],
                     shots: Sequence[Optional[Tuple[int, int]]], clip: float = None) -> float:
    """
    log10 of the binomial likelihood ratio of predictor a over predictor b,
    summed over records with (shots, successes) counts.
    """
    clip = settings.CLIP if clip is None else clip
    pred_a, pred_b = _pairs(pred_a, pred_b)
    if len(shots) != pred_a.size:
        raise QcapValidationError(f"{len(shots)} shot counts for {pred_a.size} predictions")
    if any(s is None for s in shots):
        raise QcapValidationError("Bayes factors need (shots, successes) for every record")
    n = np.array([s[0] for s in shots])
    k = np.array([s[1] for s in shots])
    pa = np.clip(pred_a, clip, 1.0 - clip)
    pb = np.clip(pred_b, clip, 1.0 - clip)
    log_ratio = stats.binom.logpmf(k, n, pa) - stats.binom.logpmf(k, n, pb)
    return float(math.fsum(log_ratio) / math.log(10.0))


def prediction_table(ids: Sequence[str], targets: Sequence[float], predictions: Sequence[float]) -> pd.DataFrame:
    targets, predictions = _pairs(targets, predictions)
    return pd.DataFrame({
        'id': list(ids),
        'target': targets,
        'prediction': predictions,
        'abs_error': np.abs(predictions - targets),
    })


def write_predictions(df: pd.DataFrame, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format='%.17g')
    logger.info(f"Wrote {len(df)} predictions to {path}")


def read_predictions(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise QcapValidationError(f"Prediction file not found: {path}")
    df = pd.read_csv(path, dtype={'id': str}, float_precision='round_trip')
    missing = [c for c in ('id', 'prediction') if c not in df.columns]
    if missing:
        raise QcapValidationError(f"{path} lacks columns {missing}")
    return df


def build_report(dataset_id: str, model_id: str, table: pd.DataFrame, runtime_seconds: float,
                 compare: pd.DataFrame = None, compare_id: str = None,
                 shots: Sequence[Optional[Tuple[int, int]]] = None, metric: str = 'fidelity') -> EvalReport:
    """
    Metrics for a prediction table with a ``target`` column. A Bayes factor is
    computed only for PST data with shot counts and a comparison table.
    """
    targets = table['target'].to_numpy(dtype=float)
    predictions = table['prediction'].to_numpy(dtype=float)
    try:
        r = pearson(targets, predictions)
    except (ConstantSeries, QcapValidationError) as e:
        logger.warning(f"Pearson r not reported: {e}")
        r = None

    log10_k = None
    if compare is not None:
        if metric != 'pst':
            raise QcapValidationError("Bayes factors are defined for PST datasets with shot counts only")
        other = compare.set_index('id')['prediction'].reindex(table['id'])
        if other.isna().any():
            raise QcapValidationError(f"Comparison predictions miss {int(other.isna().sum())} record ids")
        log10_k = bayes_factor_pst(predictions, other.to_numpy(dtype=float), shots or [None] * len(table))

    records = [RecordResult(id=row.id, target=row.target, prediction=row.prediction, abs_error=row.abs_error)
               for row in table.itertuples(index=False)]
    return EvalReport(dataset_id=dataset_id, model_id=model_id, n_records=len(records),
                      mae=mae(targets, predictions), pearson_r=r, log10_bayes_factor=log10_k,
                      compare_id=compare_id, clip=settings.CLIP, runtime_seconds=runtime_seconds,
                      records=records)


def scatter_plot(table: pd.DataFrame, path: Path, title: str = None):
    """Static target-vs-prediction scatter with the y = x line"""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(table['target'], table['prediction'], s=6, alpha=0.6)
    low = float(min(table['target'].min(), table['prediction'].min()))
    ax.plot([low, 1.0], [low, 1.0], color='black', linewidth=0.8)
    ax.set_xlabel('target')
    ax.set_ylabel('prediction')
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format=Path(path).suffix.lstrip('.') or 'svg')
    plt.close(fig)
    logger.info(f"Wrote scatter plot to {path}")
