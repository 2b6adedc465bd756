"""Contingency-table ingestion: ``label,count_1,...,count_k`` CSV files."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, TypeVar, Union

import numpy as np

from error_handler import EmptyFile, ParseError, UsageError
from gof import ClusterSample

logger = logging.getLogger(__name__)

Row = Tuple[str, Tuple[int, ...]]
T = TypeVar('T')


@dataclass(frozen=True)
class ContingencyFile:
    header: Tuple[str, ...]
    rows: Tuple[Row, ...]

    @property
    def k(self) -> int:
        return len(self.header) - 1

    def clusters(self) -> List[ClusterSample]:
        return [ClusterSample(label, np.asarray(counts, dtype=np.int64)) for label, counts in self.rows]


def read_contingency_file(path: Union[str, Path]) -> ContingencyFile:
    """Parse and validate a contingency CSV; line numbers in errors are 1-based."""
    file_path = Path(path)
    if not file_path.exists():
        raise UsageError(f"File not found: {file_path}", path=str(file_path))

    with open(file_path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise EmptyFile(f"{file_path} is empty", path=str(file_path))
        header = [name.strip() for name in header]
        if header[0].lower() != 'label' or len(header) < 2:
            raise ParseError(
                f"{file_path}:1: header must be 'label,count_1,...,count_k', got {','.join(header)}",
                line=1,
            )
        k = len(header) - 1

        rows: List[Row] = []
        for line_no, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != k + 1:
                raise ParseError(
                    f"{file_path}:{line_no}: expected {k + 1} fields, found {len(raw)}",
                    line=line_no,
                )
            label = raw[0].strip()
            try:
                counts = tuple(int(cell.strip()) for cell in raw[1:])
            except ValueError:
                raise ParseError(f"{file_path}:{line_no}: counts must be integers (row {label!r})", line=line_no) from None
            if any(c < 0 for c in counts):
                raise ParseError(f"{file_path}:{line_no}: negative count in row {label!r}", line=line_no, label=label)
            if sum(counts) == 0:
                raise ParseError(f"{file_path}:{line_no}: row {label!r} has no positive count", line=line_no, label=label)
            rows.append((label, counts))

    if not rows:
        raise EmptyFile(f"{file_path} has a header but no data rows", path=str(file_path))
    logger.info(f"Loaded {len(rows)} clusters with k={k} from {file_path}")
    return ContingencyFile(tuple(header), tuple(rows))


def read_contingency(path: Union[str, Path]) -> List[ClusterSample]:
    """Clusters from a contingency CSV, reference probabilities unset."""
    return read_contingency_file(path).clusters()


def write_contingency(path: Union[str, Path], contingency: ContingencyFile) -> str:
    """Canonical form: LF line endings, no trailing comma."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(contingency.header)
        for label, counts in contingency.rows:
            writer.writerow([label, *counts])
    logger.info(f"Wrote {len(contingency.rows)} rows to {target}")
    return str(target)


def thin_clusters(rows: Sequence[T], stride: int, offset: int = 0) -> List[T]:
    """Keep rows offset, offset+stride, ... (e.g. every third day)."""
    if stride < 1:
        raise UsageError(f"stride must be >= 1, got {stride}")
    if offset < 0:
        raise UsageError(f"offset must be >= 0, got {offset}")
    return list(rows[offset::stride])
