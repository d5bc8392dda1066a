"""File helpers shared by every stage: atomic writes and provenance headers."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from . import __version__


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def provenance(config_hash: str = "", **seeds) -> dict:
    out = {"tool": "weakrank", "version": __version__, "config_sha256": config_hash}
    out.update({k: v for k, v in sorted(seeds.items())})
    return out


def header_line(prov: dict | None) -> str:
    """One ``#`` comment line rendering ``prov`` as ``key=value`` pairs."""
    if not prov:
        prov = provenance()
    return "# " + " ".join(f"{k}={v}" for k, v in prov.items()) + "\n"


def strip_comments(lines):
    for line in lines:
        if line.startswith("#") or not line.strip():
            continue
        yield line
