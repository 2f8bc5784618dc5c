"""Replica fan-out with per-replica caching and deterministic ordering."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path


class ReplicaFailure(RuntimeError):
    """Some replicas raised; ``results`` holds the ones that finished."""

    def __init__(self, results, failures):
        self.results = results
        self.failures = failures
        first = next(iter(failures.items()))
        super().__init__(f"{len(failures)} replica(s) failed, first: replica {first[0]}: {first[1]!r}")


def default_workers() -> int:
    env = os.environ.get("NBCPP_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("NBCPP_THREADS: must be >= 1")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _cache_path(cache_dir, replica):
    return Path(cache_dir) / f"replica_{replica:06d}.npz"


def _save(save, result, path):
    tmp = path.with_suffix(".tmp.npz")
    save(result, tmp)
    os.replace(tmp, path)


def map_replicas(task, replicas, workers: int = 1, cache_dir=None, load=None, save=None,
                 progress=None) -> list:
    """Run task(r) for each replica index r and return results sorted by r.

    With ``cache_dir`` each finished replica is stored (via ``save``) and later
    runs load it (via ``load``) instead of recomputing.
    """
    replicas = sorted(int(r) for r in replicas)
    done = {}
    todo = []
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
    for r in replicas:
        path = None if cache_dir is None else _cache_path(cache_dir, r)
        if path is not None and path.exists():
            done[r] = load(path)
        else:
            todo.append(r)
    failures = {}

    def finish(r, res):
        done[r] = res
        if cache_dir is not None:
            _save(save, res, _cache_path(cache_dir, r))
        if progress:
            progress(len(done), len(replicas))

    if workers <= 1 or len(todo) <= 1:
        for r in todo:
            try:
                finish(r, task(r))
            except Exception as exc:  # reported with the partial results
                failures[r] = exc
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(task, r): r for r in todo}
            for fut in as_completed(futs):
                r = futs[fut]
                try:
                    finish(r, fut.result())
                except Exception as exc:
                    failures[r] = exc
    results = [done[r] for r in replicas if r in done]
    if failures:
        raise ReplicaFailure(results, failures)
    return results
