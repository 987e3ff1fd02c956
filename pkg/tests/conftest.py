"""Shared fixtures: small rendered scenes reused across module tests."""

import numpy as np
import pytest

from cog3d.descriptors import SceneContext
from cog3d.synth import PlacedObject, SyntheticSceneSpec, synthesize_scene


@pytest.fixture(scope="session")
def box_record():
    """One textured box in a room, oblique camera."""
    spec = SyntheticSceneSpec(
        scene_id="unit_box",
        room=(6.0, 6.0, 3.0),
        camera_eye=(0.0, -2.2, 1.5),
        camera_target=(0.0, 0.0, 0.5),
        objects=[
            PlacedObject("box", (1.2, 0.8, 0.9), (0.0, 0.0), 0.3, texture="checker")
        ],
        image_size=(160, 120),
        focal=140.0,
        texture_seed=11,
    )
    return synthesize_scene(spec)


@pytest.fixture(scope="session")
def box_ctx(box_record):
    return SceneContext.from_record(box_record)


@pytest.fixture(scope="session")
def frontal_record():
    """Box viewed head-on: camera axis along +y, box yaw 0.

    The width/gravity plane of the box is then parallel to the image
    plane, which is the configuration where projected orientation bins
    coincide with fixed image-plane bins.
    """
    spec = SyntheticSceneSpec(
        scene_id="frontal_box",
        room=(6.0, 8.0, 3.0),
        camera_eye=(0.0, -3.0, 1.0),
        camera_target=(0.0, 0.0, 1.0),
        objects=[
            PlacedObject("box", (1.2, 0.8, 1.2), (0.0, 0.0), 0.0, texture="checker")
        ],
        image_size=(160, 120),
        focal=140.0,
        texture_seed=5,
    )
    return synthesize_scene(spec)


@pytest.fixture(scope="session")
def frontal_ctx(frontal_record):
    return SceneContext.from_record(frontal_record)


def identity_pose():
    from cog3d.geometry import CameraPose

    return CameraPose(rotation=np.eye(3), translation=np.zeros(3))
