"""
Trajectory and artifact persistence for armaxlab.
Handles the trajectory CSV schema (k,u,y[,w,x1..xn]) and the experiment
output directory.
"""

import re
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple, Union

import numpy as np
import pandas as pd

from armaxlab.errors import TrajectoryParseError
from armaxlab.model_core import Trajectory
from armaxlab.utils import get_logger, log_operation, safe_json_dumps

logger = get_logger("storage")

PathLike = Union[str, Path]
REQUIRED_COLUMNS = ("u", "y")
FLOAT_FORMAT = "%.17g"
_LINE_PATTERN = re.compile(r"line (\d+)")


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """Trajectory as a k,u,y[,w,x1..xn] table."""
    frame = pd.DataFrame({"k": np.arange(len(traj)), "u": traj.u, "y": traj.y})
    if traj.w is not None:
        frame["w"] = traj.w
    if traj.x is not None:
        for i in range(traj.state_dim):
            frame[f"x{i + 1}"] = traj.x[:, i]
    return frame


def save_trajectory(traj: Trajectory, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(traj).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log_operation("save_trajectory", "storage", {"path": str(path), "samples": len(traj)})
    return path


def _parse_error(error: Exception) -> TrajectoryParseError:
    match = _LINE_PATTERN.search(str(error))
    # header is file line 1, so data row = file line - 1
    row = int(match.group(1)) - 1 if match else None
    return TrajectoryParseError(f"malformed CSV: {error}", row=row)


def _read_csv(path: PathLike, **kwargs):
    try:
        return pd.read_csv(path, float_precision="round_trip", **kwargs)
    except pd.errors.EmptyDataError:
        raise TrajectoryParseError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise _parse_error(e)


def _numeric_block(frame: pd.DataFrame, columns: List[str], row_offset: int = 0) -> np.ndarray:
    """Columns as floats; the first unparsable or missing cell raises with its 1-based data row."""
    block = frame[columns].apply(pd.to_numeric, errors="coerce")
    bad = block.isna().to_numpy()
    if bad.any():
        index, column = np.argwhere(bad)[0]
        raise TrajectoryParseError(f"invalid value in column '{columns[column]}'", row=row_offset + int(index) + 1)
    return block.to_numpy(dtype=float)


def _check_header(columns: List[str], path: PathLike) -> Tuple[bool, List[str]]:
    missing = [name for name in REQUIRED_COLUMNS if name not in columns]
    if missing:
        raise TrajectoryParseError(f"{path} is missing required column(s): {', '.join(missing)}")
    states = sorted((c for c in columns if re.fullmatch(r"x\d+", c)), key=lambda c: int(c[1:]))
    expected = [f"x{i}" for i in range(1, len(states) + 1)]
    if states != expected:
        raise TrajectoryParseError(f"{path} has non-contiguous state columns: {', '.join(states)}")
    return "w" in columns, states


def load_trajectory(path: PathLike) -> Trajectory:
    """Read a trajectory CSV; w and x1..xn populate the optional truth fields."""
    frame = _read_csv(path)
    has_w, states = _check_header(list(frame.columns), path)

    u, y = _numeric_block(frame, ["u", "y"]).T
    if "k" in frame.columns:
        k = _numeric_block(frame, ["k"])[:, 0]
        wrong = np.flatnonzero(k != np.arange(len(frame)))
        if wrong.size:
            raise TrajectoryParseError(f"sample index k={k[wrong[0]]:g} out of sequence", row=int(wrong[0]) + 1)

    traj = Trajectory(
        u=u,
        y=y,
        w=_numeric_block(frame, ["w"])[:, 0] if has_w else None,
        x=_numeric_block(frame, states) if states else None
    )
    log_operation("load_trajectory", "storage", {"path": str(path), "samples": len(traj), "state_dim": traj.state_dim})
    return traj


def iter_trajectory_rows(path: PathLike, chunksize: int = 4096) -> Iterator[Tuple[int, float, float]]:
    """Stream (k, u_k, y_k) from a trajectory CSV without loading it whole."""
    offset = 0
    with _read_csv(path, chunksize=chunksize) as reader:
        while True:
            try:
                chunk = next(reader)
            except StopIteration:
                break
            except pd.errors.ParserError as e:
                raise _parse_error(e)

            if offset == 0:
                _check_header(list(chunk.columns), path)
            values = _numeric_block(chunk, ["u", "y"], row_offset=offset)
            for i, (u, y) in enumerate(values):
                yield offset + i, float(u), float(y)
            offset += len(chunk)


class ArtifactWriter:
    """Writes CSV tables and JSON documents under one output directory."""

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.out_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        self.written.append(path)
        log_operation("write_frame", "storage", {"path": str(path), "rows": len(frame)})
        return path

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        path = self.out_dir / name
        path.write_text(safe_json_dumps(data) + "\n", encoding="utf-8")
        self.written.append(path)
        log_operation("write_json", "storage", {"path": str(path)})
        return path

    def path(self, name: str) -> Path:
        return self.out_dir / name
