"""Probabilistic flow splitting over queue networks with travel-time targets."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .errors import FlowsplitError
from .scenarios import ScenarioBundle, load_scenario
from .topology import Policy, Topology, load_topology, topology_from_dict

__all__ = ["FlowsplitError", "Policy", "ScenarioBundle", "Topology", "__version__", "load_scenario",
           "load_topology", "topology_from_dict"]
