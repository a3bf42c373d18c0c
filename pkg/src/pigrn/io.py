"""Flat key-value config files, checksums, and run manifests.

The config format is deliberately tiny: one ``key = value`` pair per line,
``#`` starts a comment, values are decimal numbers, bare strings, or
comma-separated lists. All physical quantities are stored in SI units.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def parse_value(text: str):
    """Parse a single config value: int, float, string, or list of those."""
    text = text.strip()
    if "," in text:
        return [parse_value(part) for part in text.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def read_keyvalue(path) -> dict:
    """Read a key-value file into a dict. Raises ValueError on malformed lines."""
    result = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        result[key] = parse_value(value)
    return result


def write_keyvalue(path, entries, header: str | None = None):
    """Write key-value pairs (a dict or an iterable of pairs) to a file.
    `header` becomes leading comment lines."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    items = entries.items() if isinstance(entries, dict) else entries
    for key, value in items:
        lines.append(f"{key} = {format_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(path, command: str, argv: list[str], seeds: dict,
                       inputs: list, outputs: list, timestamp: str):
    """Record one CLI invocation: what ran, with which seeds, on which bytes.

    Inputs/outputs are recorded with content hashes so a rerun can be checked
    for reproducibility by comparing hashes rather than trusting paths.
    """
    manifest = {
        "command": command,
        "argv": argv,
        "timestamp": timestamp,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): sha256_file(p) for p in outputs if Path(p).is_file()},
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
