"""Projection-parallel execution.

Tomographic projections are independent, so work over a projection range is
split into contiguous chunks and farmed out to workers. Results always come
back in index order and are bit-identical to a serial run for tasks that
are pure functions of the projection index.

Executors
---------
``serial``  run in the calling process
``local``   a pool of worker processes (task must be picklable)
``thread``  a pool of threads
``joblist`` nothing runs; :func:`emit_job_list` renders one command per
            chunk for an external scheduler's array job
"""

from __future__ import annotations

import functools
import os
import traceback
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass

WORKERS_ENV = "NEARFIELD_WORKERS"
EXECUTORS = ("serial", "local", "thread", "joblist")


class ProjectionFailures(RuntimeError):
    """One or more projections failed; the rest completed.

    ``failures`` maps projection index to a formatted error message,
    ``error_types`` maps it to the class names in the exception's MRO and
    ``results`` maps every successful index to its output.
    """

    def __init__(self, failures, results, error_types=None):
        self.failures = dict(sorted(failures.items()))
        self.results = results
        self.error_types = dict(error_types or {})
        idx = ", ".join(str(i) for i in self.failures)
        first = next(iter(self.failures.values())).strip().splitlines()[-1]
        super().__init__(f"{len(self.failures)} projection(s) failed: [{idx}]; first error: {first}")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkPlan:
    total: int
    chunks: tuple
    workers: int

    def __iter__(self):
        return iter(self.chunks)

    def __len__(self):
        return len(self.chunks)


def chunk(total, workers):
    """Split ``range(total)`` into ``min(workers, total)`` balanced contiguous ranges.

    Sizes differ by at most one, larger chunks first.

    >>> chunk(10, 3).chunks
    ((0, 4), (4, 7), (7, 10))
    """
    if total < 0:
        raise ValueError("total must be >= 0")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n = min(workers, total)
    if n == 0:
        return ChunkPlan(total, (), workers)
    q, r = divmod(total, n)
    chunks, start = [], 0
    for i in range(n):
        end = start + q + (1 if i < r else 0)
        chunks.append((start, end))
        start = end
    return ChunkPlan(total, tuple(chunks), workers)


def resolve_workers(configured=None, default=1):
    """Worker count: environment override, then configuration, then ``default``."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    else:
        value = configured if configured is not None else default
    if value < 1:
        raise ValueError(f"workers must be >= 1, got {value}")
    return value


def _run_chunk(task, indices):
    out = []
    for i in indices:
        try:
            out.append((i, True, task(i)))
        except Exception as exc:  # collected and reported per index
            kinds = [c.__name__ for c in type(exc).__mro__]
            out.append((i, False, (traceback.format_exc(), kinds)))
    return out


def map_projections(task, indices, workers=1, executor="local", fail_fast=False):
    """Apply ``task(index)`` to every projection index.

    Parameters
    ----------
    task : callable
        Pure per-index function. Must be picklable for ``executor="local"``.
    indices : range or sequence of int
    workers : int
    executor : {"serial", "local", "thread"}
    fail_fast : bool
        Stop after the first chunk containing a failure instead of finishing
        all chunks.

    Returns
    -------
    list
        ``task(i)`` for each index, in the order of ``indices``.

    Raises
    ------
    ProjectionFailures
        Listing every failed index; successful results are attached.
    """
    indices = list(indices)
    if executor not in ("serial", "local", "thread"):
        raise ValueError(f"executor {executor!r} cannot run tasks; use serial, local or thread")
    plan = chunk(len(indices), workers)
    groups = [indices[a:b] for a, b in plan]
    if executor == "serial" or plan.workers == 1 or len(groups) <= 1:
        parts = []
        for g in groups:
            parts.append(_run_chunk(task, g))
            if fail_fast and not all(ok for _, ok, _ in parts[-1]):
                break
    else:
        pool_cls = ProcessPoolExecutor if executor == "local" else ThreadPoolExecutor
        with pool_cls(max_workers=len(groups)) as pool:
            futures = [pool.submit(_run_chunk, task, g) for g in groups]
            parts = []
            for f in futures:
                parts.append(f.result())
                if fail_fast and not all(ok for _, ok, _ in parts[-1]):
                    for rest in futures:
                        rest.cancel()
                    break
    results, failures, kinds = {}, {}, {}
    for part in parts:
        for i, ok, value in part:
            if ok:
                results[i] = value
            else:
                failures[i], kinds[i] = value
    if failures:
        raise ProjectionFailures(failures, results, kinds)
    if len(results) != len(indices):
        missing = [i for i in indices if i not in results]
        raise ProjectionFailures({i: "not run" for i in missing}, results)
    return [results[i] for i in indices]


def parallelize(func):
    """Turn ``func(index, *args, **kwargs)`` into a range-taking parallel function.

    The decorated function accepts ``indices`` first plus keyword-only
    ``workers`` and ``executor`` and returns results in index order.
    """

    @functools.wraps(func)
    def wrapper(indices, *args, workers=1, executor="serial", **kwargs):
        task = functools.partial(_call_with_index, func, args, kwargs)
        return map_projections(task, indices, workers=workers, executor=executor)

    return wrapper


def _call_with_index(func, args, kwargs, index):
    return func(index, *args, **kwargs)


def emit_job_list(plan, template):
    """One command per chunk with ``{start}``/``{end}`` substituted, newline separated."""
    if "{start}" not in template or "{end}" not in template:
        raise TemplateError("command template needs both {start} and {end} placeholders")
    lines = [template.replace("{start}", str(a)).replace("{end}", str(b)) for a, b in plan]
    return "".join(line + "\n" for line in lines)
