import numpy as np
import pytest

from radiofill import scene


def make_room(image_size=(32, 32), n_sensors=2, seed=0, fov=np.pi / 2):
    sensors_all = [
        scene.SensorPose(1, (1.2, 1.0)),
        scene.SensorPose(2, (4.8, 1.0)),
        scene.SensorPose(3, (1.2, 3.0)),
        scene.SensorPose(4, (4.8, 3.0)),
    ]
    return scene.RoomConfig(
        width=6.0,
        depth=4.0,
        camera_poses=[
            scene.CameraPose(
                position=(3.0, 0.2),
                view_direction=(0.0, 1.0),
                field_of_view=fov,
                image_size=image_size,
            )
        ],
        sensor_poses=sensors_all[:n_sensors],
        tx_pose=(0.5, 2.0),
        seed=seed,
    )


def make_loop_trajectory(room, pedestrian_id=1, color=(0.85, 0.15, 0.15), period=8.0, clockwise=False):
    motion = "clockwise-loop" if clockwise else "counterclockwise-loop"
    return scene.PedestrianTrajectory(
        pedestrian_id=pedestrian_id,
        color=color,
        waypoints=scene.room_loop(room, period=period, clockwise=clockwise, margin_frac=0.2),
        motion=motion,
    )


@pytest.fixture(scope="session")
def tiny_room():
    return make_room(image_size=(32, 32), n_sensors=2, seed=3)


@pytest.fixture(scope="session")
def tiny_params():
    return scene.ChannelParams(n_subcarriers=16, csi_rate=50.0, camera_rate=10.0, noise_std=0.002)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_room, tiny_params):
    """A small session: 8 s, 32x32 frames, 2 sensors, one loop pedestrian."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    traj = make_loop_trajectory(tiny_room, period=8.0)
    scene.generate_dataset(tiny_room, [traj], tiny_params, duration=8.0, out_dir=str(out), seed=3)
    return str(out)


@pytest.fixture
def criterion_report(capsys):
    """Print one visible pass/fail line per acceptance criterion."""

    def _report(number, ok, text):
        with capsys.disabled():
            print(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {text}", flush=True)

    return _report
