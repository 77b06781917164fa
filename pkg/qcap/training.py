"""
Mini-batch Adam with early stopping on the validation loss.
"""

from typing import List, Sequence, Tuple

import numpy as np

from qcap.base_logging import Logger, Progress
from qcap.dataset import DatasetSplit
from qcap.exceptions import NumericalError, QcapValidationError
from qcap.models import TrainConfig
from qcap.network import PreparedRecord, QpaModel, loss_and_gradients, predict_batch, prepare_record

logger = Logger("qcap.training")


class Adam:
    """Adam optimizer updating the model's parameter arrays in place"""

    def __init__(self, params: List[np.ndarray], learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-7):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


def evaluate_loss(model: QpaModel, records: Sequence[PreparedRecord], batch_size: int = None) -> float:
    """Scaled MSE over ``records``, forward pass only"""
    if not records:
        return float('nan')
    predictions = predict_batch(model, records, batch_size)
    targets = np.array([r.target for r in records])
    return float(np.mean((model.scale * predictions - model.scale * targets) ** 2))


def train(model: QpaModel, split: DatasetSplit, cfg: TrainConfig = None) -> Tuple[QpaModel, List[dict]]:
    """
    Train ``model`` in place and return it with the per-epoch history. The
    parameters of the best validation epoch are restored at the end.
    """
    cfg = cfg or TrainConfig()
    if not split.train:
        raise QcapValidationError("Cannot train on an empty training set")
    train_records = [prepare_record(model, r) for r in split.train]
    val_records = [prepare_record(model, r) for r in split.validation]
    if not val_records:
        logger.warning("Validation set is empty; early stopping monitors the training loss")

    optimizer = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    best_loss = np.inf
    best_params = [p.copy() for p in model.parameters()]
    best_epoch = 0
    stale = 0
    history = []

    logger.info("=" * 80)
    logger.info(f"Training {model.metric} model: {len(train_records)} train / {len(val_records)} validation records")
    logger.info(f"lr={cfg.learning_rate} batch={cfg.batch_size} max_epochs={cfg.max_epochs} patience={cfg.patience}")
    logger.info("=" * 80)
    progress = Progress(logger, cfg.max_epochs, "Training", unit='epochs', every=10)

    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_records))
        train_loss = 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_records[t] for t in order[i:i + cfg.batch_size]]
            loss, grads = loss_and_gradients(model, batch)
            if not np.isfinite(loss):
                raise NumericalError(f"Training loss diverged at epoch {epoch}")
            optimizer.step(grads)
            train_loss += loss * len(batch)
        train_loss /= len(train_records)
        val_loss = evaluate_loss(model, val_records) if val_records else train_loss
        history.append({'epoch': epoch, 'train_loss': train_loss, 'val_loss': val_loss})
        progress.step()

        if val_loss < best_loss:
            best_loss, best_epoch, stale = val_loss, epoch, 0
            best_params = [p.copy() for p in model.parameters()]
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info(f"Early stopping at epoch {epoch}; best validation loss {best_loss:.6g} at epoch {best_epoch}")
                break

    for p, best in zip(model.parameters(), best_params):
        p[...] = best
    model.train_history = history
    logger.info(f"Training finished in {progress.elapsed() / 60:.2f} minutes ({len(history)} epochs, "
                f"best validation loss {best_loss:.6g} at epoch {best_epoch})")
    return model, history
