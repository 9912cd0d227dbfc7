"""Self-describing, never-reused output directories."""
from __future__ import annotations

import time
from pathlib import Path

from .data.images import write_manifest
from .errors import DatasetError


def new_run_dir(parent, tag: str, seed: int, clock=time.localtime) -> Path:
    """Create ``<parent>/<timestamp>-<tag>-<seed>``; a numeric suffix avoids reusing a name."""
    parent = Path(parent)
    stamp = time.strftime("%Y%m%d-%H%M%S", clock())
    base = f"{stamp}-{tag}-{seed}"
    for i in range(1000):
        path = parent / (base if i == 0 else f"{base}.{i}")
        try:
            path.mkdir(parents=True, exist_ok=False)
            return path
        except FileExistsError:
            continue
        except OSError as exc:
            raise DatasetError(f"cannot create run directory under {parent}: {exc}") from exc
    raise DatasetError(f"no free run directory name for {base} under {parent}")


def finish_run_dir(path, config_text: str, seed: int, command: str, extra: dict | None = None):
    """Write the resolved config and an artifact manifest listing every file present."""
    path = Path(path)
    (path / "config.txt").write_text(config_text)
    artifacts = sorted(str(p.relative_to(path)) for p in path.rglob("*")
                       if p.is_file() and p.name != "manifest.txt")
    items = {"command": command, "seed": seed}
    items.update(extra or {})
    items["artifacts"] = ",".join(artifacts)
    write_manifest(path / "manifest.txt", items)
