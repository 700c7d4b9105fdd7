"""
JSONL readers and writers for datasets, model outputs and traces.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Tuple

from errors import EmptyInput, InvariantError, SchemaError
from models import GroundingSample
from validators import validate_sample

logger = logging.getLogger(__name__)


def iter_jsonl(path: Path) -> Iterator[Tuple[int, Any]]:
    """Yield (line number, decoded value), skipping blank lines."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_num, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_num, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_num}", f"invalid JSON: {exc.msg}") from exc


def read_dataset(path: Path) -> List[GroundingSample]:
    """Read and validate every record of a dataset JSONL file.

    Validation errors keep their type; the message gains the file location.
    """
    samples = []
    seen = set()
    for line_num, record in iter_jsonl(path):
        try:
            sample = validate_sample(record)
        except (SchemaError, InvariantError) as exc:
            exc.args = (f"{path}:{line_num}: {exc}",)
            raise
        if sample.sample_id in seen:
            raise SchemaError(f"{path}:{line_num}", f"duplicate sample_id {sample.sample_id!r}")
        seen.add(sample.sample_id)
        samples.append(sample)
    logger.info("Read %d samples from %s", len(samples), path)
    return samples


def read_outputs(path: Path) -> List[Tuple[str, str]]:
    """Read {sample_id, output} records in file order.

    Duplicated ids are kept so coverage checks can report them.
    """
    outputs = []
    for line_num, record in iter_jsonl(path):
        if not isinstance(record, Mapping):
            raise SchemaError(f"{path}:{line_num}", "expected a JSON object")
        sample_id, output = record.get("sample_id"), record.get("output")
        if not isinstance(sample_id, str) or not sample_id:
            raise SchemaError("sample_id", f"{path}:{line_num}: missing or not text")
        if not isinstance(output, str):
            raise SchemaError("output", f"{path}:{line_num}: missing or not text")
        outputs.append((sample_id, output))
    if not outputs:
        raise EmptyInput(f"No model outputs in {path}")
    return outputs


def dumps_record(record: Mapping[str, Any]) -> str:
    """One JSONL line, key order preserved."""
    return json.dumps(record, ensure_ascii=False)


def write_jsonl(path: Path, records: Iterable[Mapping[str, Any]], append: bool = False) -> int:
    """Write records one per line; returns the count written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("a" if append else "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(dumps_record(record) + "\n")
            count += 1
    return count


def write_json(path: Path, data: Any) -> None:
    """Pretty JSON written atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(data, ensure_ascii=False, indent=2) + "\n"
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
