"""Loading run directories and aggregating evaluation curves across seeds."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ocgvf.errors import AlignmentError, UsageError


@dataclass
class RunLog:
    path: Path
    manifest: dict
    rows: list[dict]

    @property
    def variant(self) -> str:
        return self.manifest.get("variant", self.path.parent.name)

    @property
    def seed(self) -> Optional[int]:
        return self.manifest.get("seed")

    def eval_curve(self) -> tuple[np.ndarray, np.ndarray]:
        pts = [(r["episode"], r["eval_return_mean"]) for r in self.rows if r.get("eval_return_mean") is not None]
        if not pts:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        ep, ret = zip(*pts)
        return np.asarray(ep, dtype=np.int64), np.asarray(ret, dtype=np.float64)


def load_run(path) -> RunLog:
    path = Path(path)
    log = path / "log.jsonl"
    if not log.exists():
        raise UsageError(f"{path}: no log.jsonl found")
    rows = [json.loads(line) for line in log.read_text().splitlines() if line.strip()]
    episodes = [r["episode"] for r in rows]
    if any(b <= a for a, b in zip(episodes, episodes[1:])):
        raise UsageError(f"{log}: episodes are not strictly increasing")
    manifest_path = path / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    return RunLog(path, manifest, rows)


def find_runs(roots: Iterable) -> list[RunLog]:
    """Every directory below ``roots`` that holds a log.jsonl."""
    runs = []
    for root in roots:
        root = Path(root)
        if (root / "log.jsonl").exists():
            runs.append(load_run(root))
            continue
        for log in sorted(root.rglob("log.jsonl")):
            runs.append(load_run(log.parent))
    if not runs:
        raise UsageError(f"no runs found under {', '.join(map(str, roots))}")
    return runs


@dataclass
class Curve:
    variant: str
    episodes: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    num_seeds: int
    returns: np.ndarray  # [seeds, points]


def aggregate(runs: list[RunLog]) -> dict[str, Curve]:
    """Mean and standard error (ddof=1) of eval return per variant at each eval episode."""
    grid = None
    grouped: dict[str, list[np.ndarray]] = {}
    for run in runs:
        episodes, returns = run.eval_curve()
        if grid is None:
            grid = episodes
        elif not np.array_equal(grid, episodes):
            raise AlignmentError(
                f"{run.path}: eval episodes {episodes.tolist()[:5]}... differ from {grid.tolist()[:5]}..."
            )
        grouped.setdefault(run.variant, []).append(returns)
    if grid is None or grid.size == 0:
        raise UsageError("runs contain no evaluation rows")
    curves = {}
    for variant, rets in grouped.items():
        data = np.stack(rets)
        n = data.shape[0]
        se = data.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(data.shape[1])
        curves[variant] = Curve(variant, grid, data.mean(axis=0), se, n, data)
    return curves


def auc(episodes: np.ndarray, returns: np.ndarray) -> float:
    """Trapezoid area under an eval curve."""
    if len(episodes) < 2:
        return float(returns.sum()) if len(returns) else 0.0
    return float(np.trapz(returns, episodes))


def final_return(run: RunLog) -> Optional[float]:
    _, ret = run.eval_curve()
    return float(ret[-1]) if len(ret) else None


def curves_table(curves: dict[str, Curve]) -> str:
    """Comma-separated rows: variant, episode, mean, se, seeds."""
    lines = ["variant,episode,mean,se,num_seeds"]
    for variant, c in curves.items():
        for ep, m, s in zip(c.episodes, c.mean, c.se):
            lines.append(f"{variant},{int(ep)},{m!r},{s!r},{c.num_seeds}")
    return "\n".join(lines) + "\n"
