"""Console logging and line-delimited structured logs."""

import logging
from pathlib import Path
from typing import Optional, TextIO, Union

from pydantic import BaseModel


def setup_logger(name: str = "moad_fusion", level: str = "INFO") -> logging.Logger:
    """Setup logger with console output."""
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper()))

    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(
            "%(asctime)s [%(levelname)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    return logger


class JsonlWriter:
    """Appends one pydantic record per line to a file."""

    def __init__(self, path: Union[str, Path], truncate: bool = True) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: Optional[TextIO] = open(self.path, "w" if truncate else "a", encoding="utf-8")
        self.count = 0

    def write(self, record: BaseModel) -> None:
        if self._fh is None:
            raise ValueError(f"{self.path} is closed")
        self._fh.write(record.model_dump_json(by_alias=True))
        self._fh.write("\n")
        self.count += 1

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
