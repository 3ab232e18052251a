"""File formats shared by the command line and library users.

Every writer stamps the run-config hash into its output: a ``config_hash``
field in JSON documents, a ``# config_hash=`` comment line in CSV files and
PGM images, and a header field in expert databases.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

from .core import CandidateSet, Scenario, Trajectory, load_scenario
from .evaluator import CostBreakdown
from .scenarios import SUITE, get_scenario

TRAJECTORY_FORMAT_VERSION = 1


def resolve_scenario(name: str) -> Scenario:
    """A built-in scenario name or a path to a scenario JSON file."""
    if name in SUITE:
        return get_scenario(name)
    p = Path(name)
    if not p.exists():
        raise FileNotFoundError(f"no built-in scenario or file named {name!r} (built-ins: {', '.join(SUITE)})")
    return load_scenario(p)


def trajectories_doc(trajs: Iterable[Trajectory], config_hash: str = "", **extra) -> dict:
    return {"format_version": TRAJECTORY_FORMAT_VERSION, "config_hash": config_hash, **extra,
            "trajectories": [t.to_dict() for t in trajs]}


def save_trajectories(path: str | Path, trajs: Iterable[Trajectory], config_hash: str = "", **extra) -> None:
    Path(path).write_text(json.dumps(trajectories_doc(trajs, config_hash, **extra), indent=1))


def load_trajectories(path: str | Path) -> list[Trajectory]:
    """Reads a trajectory document, a bare list of trajectories or a single one."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed trajectory file {path}: {exc}") from exc
    if isinstance(doc, dict) and "trajectories" in doc:
        if doc.get("format_version") != TRAJECTORY_FORMAT_VERSION:
            raise ValueError(f"unsupported trajectory file version {doc.get('format_version')!r}")
        items = doc["trajectories"]
    elif isinstance(doc, list):
        items = doc
    else:
        items = [doc]
    return [Trajectory.from_dict(d) for d in items]


def candidates_doc(cands: CandidateSet, config_hash: str = "") -> dict:
    return trajectories_doc(cands, config_hash, warning=cands.warning, provenance=cands.provenance)


def format_breakdown(b: CostBreakdown) -> str:
    """Fixed-layout text; floats are printed with ``repr`` so the text is exact."""
    lines = [
        f"total {b.total!r}",
        f"volume_term {b.volume_term!r}",
        f"occupancy_term {b.occupancy_term!r}",
        f"prediction_term {b.prediction_term!r}",
        f"out_of_extent {int(b.out_of_extent)}",
        "per_waypoint " + " ".join(repr(float(x)) for x in b.per_waypoint),
    ]
    return "\n".join(lines) + "\n"


def metrics_csv(rows: Sequence[dict], config_hash: str = "") -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def write_json(path: str | Path, doc: dict, config_hash: str = "") -> None:
    Path(path).write_text(json.dumps({"config_hash": config_hash, **doc}, indent=2, sort_keys=True))
