"""Training run logs and bitwise divergence localization.

Every mini-batch is logged as one JSON line carrying the per-worker losses
and a fingerprint of the post-step parameters.  Floats are hex-encoded raw
IEEE-754 binary64 (little-endian byte order) rather than decimal-rendered:
decimal round-trips are a classic silent determinism killer.  Parameter
fingerprints use 64-bit FNV-1a -- trivially portable and adequate for
divergence detection (this is not a security hash).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from .errors import InputError
from .prng import fnv1a64


def float_to_hex(x: float) -> str:
    """Raw little-endian binary64 bytes as 16 hex chars; exact round-trip."""
    return struct.pack("<d", x).hex()


def hex_to_float(h: str) -> float:
    return struct.unpack("<d", bytes.fromhex(h))[0]


def param_fingerprint(values: list[float]) -> str:
    return format(fnv1a64(struct.pack(f"<{len(values)}d", *values)), "016x")


@dataclass
class RunRecord:
    """One mini-batch: losses by ascending virtual rank, post-step fingerprint."""

    step: int
    losses: list[float]
    param_hash: str
    params: list[float] | None = None

    def to_line(self) -> str:
        doc: dict = {
            "step": self.step,
            "losses": [float_to_hex(v) for v in self.losses],
            "param_hash": self.param_hash,
        }
        if self.params is not None:
            doc["params"] = [float_to_hex(v) for v in self.params]
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass
class RunLog:
    """Header metadata plus the ordered mini-batch records."""

    max_workers: int
    determinism: str
    seed: int
    records: list[RunRecord] = field(default_factory=list)

    def add(self, record: RunRecord) -> None:
        self.records.append(record)

    def to_lines(self) -> list[str]:
        head = json.dumps(
            {
                "type": "runlog",
                "max_workers": self.max_workers,
                "determinism": self.determinism,
                "seed": self.seed,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return [head] + [r.to_line() for r in self.records]

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def from_lines(cls, lines: list[str]) -> "RunLog":
        if not lines:
            raise InputError("empty run log")
        head = json.loads(lines[0])
        if head.get("type") != "runlog":
            raise InputError("missing run log header")
        log = cls(
            max_workers=head["max_workers"],
            determinism=head["determinism"],
            seed=head["seed"],
        )
        for line in lines[1:]:
            doc = json.loads(line)
            log.add(
                RunRecord(
                    step=doc["step"],
                    losses=[hex_to_float(h) for h in doc["losses"]],
                    param_hash=doc["param_hash"],
                    params=[hex_to_float(h) for h in doc["params"]]
                    if "params" in doc
                    else None,
                )
            )
        return log

    @classmethod
    def load(cls, path) -> "RunLog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_lines([ln.rstrip("\n") for ln in fh if ln.strip()])


@dataclass(frozen=True)
class Divergence:
    """First bitwise difference between two run logs."""

    step: int
    field: str  # "loss" or "param_hash"
    worker: int | None = None  # rank, when field == "loss"

    def describe(self) -> str:
        where = f" worker {self.worker}" if self.worker is not None else ""
        return f"first divergence at step {self.step}: {self.field}{where}"


def bitdiff(log_a: RunLog, log_b: RunLog) -> Divergence | None:
    """Locate the first step where the two logs differ, or None if identical.

    Losses are compared per worker before the parameter fingerprint, so a
    step whose forwards agreed but whose synchronized update differed is
    attributed to the parameter hash (a synchronization-step divergence).
    """
    if log_a.max_workers != log_b.max_workers:
        raise InputError("run logs have different worker counts")
    if len(log_a.records) != len(log_b.records):
        raise InputError("run logs have different lengths")
    for ra, rb in zip(log_a.records, log_b.records):
        if ra.step != rb.step:
            raise InputError("run logs have mismatched step numbering")
        for rank, (la, lb) in enumerate(zip(ra.losses, rb.losses)):
            if float_to_hex(la) != float_to_hex(lb):
                return Divergence(step=ra.step, field="loss", worker=rank)
        if ra.param_hash != rb.param_hash:
            return Divergence(step=ra.step, field="param_hash")
    return None
