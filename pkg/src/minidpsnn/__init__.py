"""Distributed spiking-network proxy application over a cortical-column grid."""

from .dynamics import ExternalStimulus, LifcaParams, LifcaState, step_lifca
from .topology import GridConfig, Topology, build_topology, build_routing_tables, partition_columns

__version__ = "0.1.0"
