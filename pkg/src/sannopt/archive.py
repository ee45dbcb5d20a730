"""Append-only, resumable newline-JSON archive of an optimisation session.

Format: UTF-8, one JSON object per line. The first line is a header
``{"version":1,"dim":N,"lower":[...],"upper":[...],"names":[...],...}``;
every following line is one observation with keys ``run_index, source,
params, raw_cost, scaled_cost, bad, wall_time``. Floats are written with
full round-trip precision, so re-reading an archive is bit-exact. A
truncated final line (e.g. after a crash mid-write) is discarded on resume.
"""

from __future__ import annotations

import json
import os

from .spaces import Dataset, Observation, ParameterSpace, Source

ARCHIVE_VERSION = 1

_OBS_KEYS = ("run_index", "source", "params", "raw_cost", "scaled_cost", "bad", "wall_time")


class ArchiveError(RuntimeError):
    """The archive file is malformed beyond a truncated final line."""


def _obs_to_json(obs: Observation) -> str:
    record = {
        "run_index": int(obs.run_index),
        "source": obs.source.value,
        "params": [float(v) for v in obs.params],
        "raw_cost": float(obs.raw_cost),
        "scaled_cost": float(obs.scaled_cost),
        "bad": bool(obs.bad),
        "wall_time": float(obs.wall_time),
    }
    return json.dumps(record, separators=(",", ":"))


def _obs_from_json(line: str) -> Observation:
    record = json.loads(line)
    if not isinstance(record, dict) or any(k not in record for k in _OBS_KEYS):
        raise ValueError("observation line missing required keys")
    return Observation(
        run_index=record["run_index"],
        params=record["params"],
        raw_cost=record["raw_cost"],
        scaled_cost=record["scaled_cost"],
        bad=record["bad"],
        source=Source(record["source"]),
        wall_time=record["wall_time"],
    )


class RunArchive:
    """Single-writer archive handle. Every append is flushed immediately."""

    def __init__(self, path, space: ParameterSpace, failure_cost: float, fh, observations):
        self.path = str(path)
        self.space = space
        self.failure_cost = float(failure_cost)
        self._fh = fh
        self.observations: list[Observation] = observations

    @classmethod
    def create(cls, path, space: ParameterSpace, failure_cost: float = 1.0) -> "RunArchive":
        header = {
            "version": ARCHIVE_VERSION,
            "dim": space.dim,
            "lower": [float(v) for v in space.lower],
            "upper": [float(v) for v in space.upper],
            "names": list(space.names) if space.names else None,
            # extra metadata beyond the required keys; readers ignore unknowns
            "std_convention": "population",
            "failure_cost": float(failure_cost),
        }
        fh = open(path, "w", encoding="utf-8", newline="\n")
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        fh.flush()
        return cls(path, space, failure_cost, fh, [])

    @classmethod
    def resume(cls, path) -> "RunArchive":
        """Reopen an archive, discarding a truncated final line if present."""
        with open(path, "r", encoding="utf-8", newline="\n") as fh:
            raw = fh.read()
        if not raw:
            raise ArchiveError("archive is empty")
        lines = raw.split("\n")
        # a well-formed file ends with "\n", so the final split element is ""
        complete, tail = lines[:-1], lines[-1]
        if not complete:
            raise ArchiveError("archive has no complete header line")
        try:
            header = json.loads(complete[0])
            space = ParameterSpace(
                lower=header["lower"],
                upper=header["upper"],
                names=tuple(header["names"]) if header.get("names") else None,
            )
            if int(header["version"]) != ARCHIVE_VERSION:
                raise ArchiveError(f"unsupported archive version {header['version']}")
            if space.dim != int(header["dim"]):
                raise ArchiveError("header dim disagrees with bounds length")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ArchiveError(f"bad archive header: {exc}") from exc

        observations: list[Observation] = []
        good_bytes = len((complete[0] + "\n").encode("utf-8"))
        for i, line in enumerate(complete[1:], start=1):
            try:
                obs = _obs_from_json(line)
            except (ValueError, KeyError) as exc:
                if i == len(complete) - 1 and tail == "":
                    # corrupt final complete line: treat like a truncated tail
                    break
                raise ArchiveError(f"corrupt archive line {i + 1}: {exc}") from exc
            observations.append(obs)
            good_bytes += len((line + "\n").encode("utf-8"))

        # drop the truncated tail (if any) before reopening for append
        with open(path, "r+b") as fh:
            fh.truncate(good_bytes)
        fh = open(path, "a", encoding="utf-8", newline="\n")
        failure_cost = float(header.get("failure_cost", 1.0))
        archive = cls(path, space, failure_cost, fh, observations)
        return archive

    def append(self, obs: Observation) -> None:
        if self.observations and obs.run_index <= self.observations[-1].run_index:
            raise ValueError("run_index must be strictly increasing")
        self._fh.write(_obs_to_json(obs) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self.observations.append(obs)

    def dataset(self) -> Dataset:
        ds = Dataset(self.space)
        for obs in self.observations:
            ds.append(obs)
        return ds

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_dataset(path) -> Dataset:
    """Strict read of a finished archive (truncated tail tolerated)."""
    archive = RunArchive.resume(path)
    archive.close()
    return archive.dataset()
