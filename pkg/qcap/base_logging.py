import logging
from datetime import datetime
from pathlib import Path

from qcap.config import settings


class Logger(logging.Logger):
    """Base logger configuration class"""

    def __new__(cls, name: str) -> logging.Logger:
        """Get a configured logger instance"""

        # handlers are attached once, by the first logger created
        if not logging.getLogger().handlers:
            handlers = [logging.StreamHandler()]
            if settings.LOG_DIR:
                logs_dir = Path(settings.LOG_DIR)
                logs_dir.mkdir(parents=True, exist_ok=True)
                handlers.append(logging.FileHandler(logs_dir / 'qcap.log'))

            logging.basicConfig(
                level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
                format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                handlers=handlers
            )
        logger = logging.getLogger(name)
        return logger


class Progress:
    """Periodic progress lines with rate and ETA for long batch loops"""

    def __init__(self, logger: logging.Logger, total: int, label: str, unit: str = 'items',
                 every: int = 100, seconds: float = 5.0):
        self.logger = logger
        self.total = total
        self.label = label
        self.unit = unit
        self.every = every
        self.seconds = seconds
        self.processed = 0
        self.start_time = datetime.now()
        self.last_log_time = self.start_time

    def step(self, count: int = 1):
        self.processed += count
        current_time = datetime.now()
        if self.processed % self.every == 0 or (current_time - self.last_log_time).seconds >= self.seconds:
            elapsed = (current_time - self.start_time).total_seconds()
            rate = self.processed / elapsed if elapsed > 0 else 0
            eta_seconds = (self.total - self.processed) / rate if rate > 0 else 0
            self.logger.info(
                f"{self.label} Progress: {self.processed}/{self.total} "
                f"({self.processed * 100 / max(self.total, 1):.1f}%) | "
                f"Rate: {rate:.1f} {self.unit}/sec | ETA: {eta_seconds / 60:.1f} min"
            )
            self.last_log_time = current_time

    def elapsed(self) -> float:
        return (datetime.now() - self.start_time).total_seconds()
