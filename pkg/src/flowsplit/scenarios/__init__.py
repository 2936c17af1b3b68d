"""Bundled reference scenarios (small, medium, large) and the scenario loader."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import TopologyError
from ..topology import Topology, topology_from_dict

BUNDLED = ("small", "medium", "large")


@dataclass(frozen=True)
class ScenarioBundle:
    name: str
    topology: Topology
    description: str = ""

    @property
    def hash(self) -> str:
        return self.topology.content_hash()


def bundled_data(name: str) -> dict:
    text = resources.files(__name__).joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_scenario(name_or_path: str | Path) -> ScenarioBundle:
    """Load a bundled scenario by name, or any scenario JSON file by path."""
    key = str(name_or_path)
    if key in BUNDLED:
        data = bundled_data(key)
        name = key
    else:
        path = Path(key)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise TopologyError(f"not valid JSON: {exc}", "$") from exc
        name = str(path)
    return ScenarioBundle(name, topology_from_dict(data), data.get("description", ""))
