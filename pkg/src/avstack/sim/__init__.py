"""Deterministic 2D simulator: scenarios, sensors and world stepping."""

from .scenario import (
    ActorSpec,
    Lane,
    LightSchedule,
    MapSpec,
    MotionSpec,
    ScenarioConfig,
    ScenarioError,
    SensorSpec,
    SpeedSign,
    StopSignSpec,
    TrafficLightSpec,
    VehicleSpec,
    load_scenario,
    scenario_from_dict,
)
from .sensors import (
    TRACK_SENSORS,
    GeoFrame,
    GroundTruthObjects,
    lidar_directions,
    SensorRig,
    SensorSnapshot,
    sense_depth,
    sense_gps,
    sense_lidar,
    sense_objects,
)
from .world import (
    INFRACTION_POINTS,
    EventLog,
    InfractionEvent,
    SimWorld,
    detect_infractions,
    rects_overlap,
    step_world,
)

__all__ = [
    "ActorSpec",
    "EventLog",
    "GeoFrame",
    "GroundTruthObjects",
    "INFRACTION_POINTS",
    "InfractionEvent",
    "Lane",
    "LightSchedule",
    "MapSpec",
    "MotionSpec",
    "ScenarioConfig",
    "ScenarioError",
    "SensorRig",
    "SensorSnapshot",
    "SensorSpec",
    "SimWorld",
    "SpeedSign",
    "StopSignSpec",
    "TRACK_SENSORS",
    "TrafficLightSpec",
    "VehicleSpec",
    "detect_infractions",
    "lidar_directions",
    "load_scenario",
    "rects_overlap",
    "scenario_from_dict",
    "sense_depth",
    "sense_gps",
    "sense_lidar",
    "sense_objects",
    "step_world",
]
