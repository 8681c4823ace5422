"""JSON layout for chain snapshots.

::

    {
      "format": "countqr-draws/1",
      "py": {"discount": ..., "strength": ...},
      "base_measure": {...},
      "draws": [
        {"iteration": int, "pi0": float, "weights": [...],
         "atoms": [{"mu_y", "sigma2_y", "mu_x": [...], "Sigma_c": [[...]], "eta": [...]}],
         "fresh_atoms": [...], "multiplicities": [...]}
      ],
      "retained_clusters": [...]
    }

Matrices are nested row-major lists.
"""
from __future__ import annotations

import json
from pathlib import Path

from .model import BaseMeasure, PYParams
from .sampler import PosteriorDraw

FORMAT = "countqr-draws/1"


def dump_draws(path, draws, py: PYParams | None = None,
               base: BaseMeasure | None = None, extra: dict | None = None) -> None:
    doc = {"format": FORMAT}
    if py is not None:
        doc["py"] = {"discount": py.discount, "strength": py.strength}
    if base is not None:
        doc["base_measure"] = base.to_dict()
    doc["draws"] = [d.to_dict() for d in draws]
    doc["retained_clusters"] = [d.n_clusters for d in draws]
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_draws(path) -> tuple[list[PosteriorDraw], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    draws = [PosteriorDraw.from_dict(d) for d in doc["draws"]]
    meta = {k: v for k, v in doc.items() if k != "draws"}
    return draws, meta
