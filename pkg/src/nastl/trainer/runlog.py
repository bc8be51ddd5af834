"""Append-only JSON-lines run log.

Every event carries "type", "step" and "walltime_s". Steps are
non-decreasing; within a step, events keep emission order. Deterministic
runs log virtual walltime (a fixed per-step rate) so logs are reproducible
bit for bit; threaded runs log real wall-clock time.
"""

from __future__ import annotations

import json

from ..errors import FormatError


class RunLogWriter:
    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")
        self._last_step = -1
        self._last_walltime = 0.0

    def log(self, type: str, step: int, walltime_s: float, **fields) -> None:
        if step < self._last_step:
            raise FormatError(f"event step {step} after {self._last_step}")
        if walltime_s < self._last_walltime:
            raise FormatError("walltime went backwards")
        self._last_step = step
        self._last_walltime = walltime_s
        event = {"type": type, "step": int(step), "walltime_s": float(walltime_s), **fields}
        self._fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_runlog(path: str) -> list[dict]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{i + 1}: bad JSON: {exc}") from exc
            for key in ("type", "step", "walltime_s"):
                if key not in event:
                    raise FormatError(f"{path}:{i + 1}: event lacks {key!r}")
            events.append(event)
    return events
