import numpy as np
import pytest

from roomsim.geometry import (
    Directivity,
    Material,
    Receiver,
    RoomScene,
    Source,
    Vec3,
)

LAB_DIMS = Vec3(7.0, 4.5, 2.5)


def uniform_material(name, alpha, scattering=0.0):
    return Material(
        name=name,
        absorption=(alpha,) * 6,
        scattering=(scattering,) * 6,
    )


def make_lab_scene(
    alpha=0.3,
    scattering=0.0,
    sources=None,
    receivers=None,
    boxes=(),
    room_id="lab",
):
    """7 x 4.5 x 2.5 m room with one uniform wall material."""
    mat = uniform_material("walls", alpha, scattering)
    if sources is None:
        sources = (Source("src0", Vec3(2.0, 3.0, 1.5)),)
    if receivers is None:
        receivers = (Receiver("rcv0", Vec3(3.0, 1.0, 1.0)),)
    return RoomScene(
        room_id=room_id,
        dims=LAB_DIMS,
        materials={"walls": mat, "brick": uniform_material("brick", 0.05)},
        wall_materials=("walls",) * 6,
        sources=tuple(sources),
        receivers=tuple(receivers),
        boxes=tuple(boxes),
    )


@pytest.fixture
def lab_scene():
    return make_lab_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
