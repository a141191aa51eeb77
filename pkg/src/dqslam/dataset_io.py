"""Dataset (de)serialization.

One self-describing JSON document per trial, with a versioned schema and
explicit units. Floats are written in Python's shortest round-trip
representation, so write -> read -> write reproduces the file byte for
byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .factors import BBoxDetection, OdometryMeasurement, RelativePositionMeasurement
from .geometry import ImageLine, RobotPose
from .simulator import CubeLandmark, Dataset, SensorConfig, WorldConfig

__all__ = ["SCHEMA", "SCHEMA_VERSION", "dataset_to_dict", "dataset_from_dict",
           "write_dataset", "read_dataset", "dumps_dataset"]

SCHEMA = "dqslam.dataset"
SCHEMA_VERSION = 1

_UNITS = {
    "poses": "x, y in meters; theta in radians",
    "landmark_center": "meters",
    "cube_side": "meters",
    "odometry": "v in meters/step; omega in radians/step",
    "bbox_lines": "normalized homogeneous pixel lines (unit line normal)",
    "relative_position": "meters, in the robot frame of pose_index",
}


def _floats(seq) -> list:
    return [float(v) for v in np.asarray(seq, dtype=float).ravel()]


def _native(value):
    if isinstance(value, (bool, int, str)):
        return value
    return float(value)


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "units": _UNITS,
        "seed": int(ds.seed),
        "world_config": {k: _native(v) for k, v in asdict(ds.world_config).items()},
        "sensor_config": {k: _native(v) for k, v in asdict(ds.sensor_config).items()},
        "ground_truth": {
            "poses": [[float(p.x), float(p.y), float(p.theta)] for p in ds.ground_truth_poses],
            "landmarks": [
                {"id": int(lm.id), "center": _floats(lm.center), "side": float(lm.side)}
                for lm in ds.landmarks
            ],
        },
        "odometry": [
            {"v": float(u.v), "omega": float(u.omega), "turn": bool(u.turn)}
            for u in ds.odometry
        ],
        "detections": [
            {
                "pose_index": int(d.pose_index),
                "landmark_id": int(d.landmark_id),
                "lines": [_floats(l.coords) for l in d.lines],
            }
            for d in ds.detections
        ],
        "relative_positions": [
            {
                "pose_index": int(z.pose_index),
                "landmark_id": int(z.landmark_id),
                "z": _floats(z.z),
            }
            for z in ds.relative_positions
        ],
    }


def dataset_from_dict(doc: dict) -> Dataset:
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"not a {SCHEMA} document")
    if doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('version')}")
    world = WorldConfig(**doc["world_config"])
    sensor = SensorConfig(**doc["sensor_config"])
    poses = [RobotPose(*row) for row in doc["ground_truth"]["poses"]]
    landmarks = [
        CubeLandmark(id=lm["id"], center=np.array(lm["center"]), side=lm["side"])
        for lm in doc["ground_truth"]["landmarks"]
    ]
    odometry = [
        OdometryMeasurement(v=u["v"], omega=u["omega"], turn=u["turn"])
        for u in doc["odometry"]
    ]
    detections = [
        BBoxDetection(
            pose_index=d["pose_index"],
            landmark_id=d["landmark_id"],
            lines=tuple(ImageLine(np.array(l)) for l in d["lines"]),
        )
        for d in doc["detections"]
    ]
    relpos = [
        RelativePositionMeasurement(
            pose_index=z["pose_index"], landmark_id=z["landmark_id"], z=np.array(z["z"])
        )
        for z in doc["relative_positions"]
    ]
    return Dataset(
        world_config=world,
        sensor_config=sensor,
        seed=doc["seed"],
        ground_truth_poses=poses,
        landmarks=landmarks,
        odometry=odometry,
        detections=detections,
        relative_positions=relpos,
    )


def dumps_dataset(ds: Dataset) -> str:
    return json.dumps(dataset_to_dict(ds), indent=1) + "\n"


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_dataset(ds))


def read_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return dataset_from_dict(doc)
