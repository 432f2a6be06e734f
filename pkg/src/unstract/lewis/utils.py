import hashlib
import json
import logging
import os
import subprocess
from typing import Any, Iterable, Union

import numpy as np

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class LewisUtils:
    @staticmethod
    def get_logger(name: str, logging_level: str = "") -> logging.Logger:
        """Returns a module logger with the toolkit's stream handler
        attached.

        Args:
            name (str): Logger name, usually ``__name__``.
            logging_level (str, optional): "DEBUG", "INFO", "WARNING" or "ERROR".
                Defaults to the LEWIS_LOGGING_LEVEL environment variable, or
                "INFO" if it is not set.

        Returns:
            logging.Logger: The configured logger.
        """
        logger = logging.getLogger(name)
        if not any(getattr(h, "_lewis_handler", False) for h in logger.handlers):
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            handler._lewis_handler = True  # type: ignore[attr-defined]
            logger.addHandler(handler)
            logger.propagate = False
        LewisUtils.set_logging_level(logger, logging_level)
        return logger

    @staticmethod
    def set_logging_level(logger: logging.Logger, logging_level: str = "") -> None:
        if logging_level == "":
            logging_level = os.getenv("LEWIS_LOGGING_LEVEL", "INFO")
        logging_level = logging_level.upper()
        if logging_level not in LOG_LEVELS:
            raise ValueError(f"Logging level must be one of {', '.join(LOG_LEVELS)}")
        logger.setLevel(logging_level)

    @staticmethod
    def sha256_bytes(data: bytes) -> str:
        return hashlib.sha256(data).hexdigest()

    @staticmethod
    def sha256_file(path: Union[str, os.PathLike]) -> str:
        digest = hashlib.sha256()
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 16), b""):
                digest.update(chunk)
        return digest.hexdigest()

    @staticmethod
    def canonical_json(data: Any) -> str:
        """Sorted-keys compact JSON, the form every hash in the toolkit is
        computed over."""
        return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @staticmethod
    def derive_seed(seed: int, *keys: int) -> int:
        """Derives an independent child seed from a stage seed and integer
        keys (file index, line number, ...).

        Args:
            seed (int): Stage seed.
            *keys (int): Non-negative integers identifying the work item.

        Returns:
            int: A 32-bit seed, stable across platforms and worker counts.
        """
        if seed < 0 or any(k < 0 for k in keys):
            raise ValueError("Seeds and seed keys must be non-negative integers")
        state = np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint32)
        return int(state[0])

    @staticmethod
    def git_describe(cwd: Union[str, os.PathLike, None] = None) -> str:
        try:
            out = subprocess.run(
                ["git", "describe", "--always", "--dirty"],
                cwd=cwd,
                capture_output=True,
                text=True,
                timeout=10,
                check=False,
            )
        except (OSError, subprocess.SubprocessError):
            return "unknown"
        described = out.stdout.strip()
        return described if out.returncode == 0 and described else "unknown"

    @staticmethod
    def mean_std(values: Iterable[float]) -> tuple[float, float]:
        """Population mean and standard deviation; (0.0, 0.0) when empty."""
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size == 0:
            return 0.0, 0.0
        return float(arr.mean()), float(arr.std())
