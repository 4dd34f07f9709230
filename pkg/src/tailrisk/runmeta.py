"""Resolved-config hashing and output-file headers.

Every output file starts with the package version, a hash of the resolved
configuration and the seed, so a report can always be traced to the exact run
that produced it. Execution-only knobs (worker count) are deliberately excluded
from the resolved config: they must not change a single output byte.
"""

from __future__ import annotations

import hashlib
import json

from . import __version__

EXECUTION_KEYS = ("jobs", "out", "config")  # where/how to run, never what to run


def resolved_config(config: dict) -> dict:
    return {k: v for k, v in sorted(config.items()) if k not in EXECUTION_KEYS}


def config_hash(config: dict) -> str:
    canonical = json.dumps(resolved_config(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def header_lines(config: dict, seed) -> tuple[str, ...]:
    return (f"tailrisk v{__version__}",
            f"config sha256:{config_hash(config)}",
            f"seed {seed}")


def json_meta(config: dict, seed) -> dict:
    return {"version": __version__, "config_hash": config_hash(config), "seed": seed}


def write_config(path, config: dict) -> None:
    with open(path, "w") as fh:
        json.dump(resolved_config(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
