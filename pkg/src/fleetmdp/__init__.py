"""Ride-pooling fleet management as a Markov decision process.

Simulator, decision enumeration, assignment solvers and value-function
approximation policies for a homogeneous taxi fleet.
"""
from .domain import (
    CostParams,
    Decision,
    FleetParams,
    Kind,
    RequestAttribute,
    SystemState,
    VehicleAttribute,
    apply_decisions,
    fleet_params,
    transition_attribute,
)
from .enumeration import EnumerationConfig, enumerate_decisions, feasible_trip_paths
from .ingest import Instance, SamplePath, SyntheticConfig, generate_synthetic
from .learn import Aggregation, TrainConfig, ValueTables, train
from .network import Network, PathPlan, build_grid
from .policy import Context, PolicyConfig, decide_myopic, decide_pm, decide_surrogate, decide_vfa
from .simulate import EvalStats, evaluate, run_episode, sign_test

__version__ = "0.1.0"
