"""Synthetic scene and radio-channel simulation.

Produces coupled (image, CSI) capture sessions for a rectangular room:
pedestrians move along scripted trajectories, virtual pinhole cameras
rasterize them as colored rectangles, and each sensing receiver reports a
two-bounce multipath channel estimate whose per-subcarrier amplitude shifts
with the pedestrians' positions. The two streams are sampled on independent
clocks (the CSI clock carries a random sub-period offset) so downstream time
alignment is exercised for real.

All randomness derives from (seed, purpose, frame index) sub-seeds, so a
session is bit-identical across runs and across serial/parallel generation.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import storage
from .seeding import derive_seed

SPEED_OF_LIGHT = 299_792_458.0

# Rendering constants: flat backdrop, pedestrians as 0.5 m x 1.7 m boards.
BACKGROUND_LEVEL = 0.85
PEDESTRIAN_WIDTH_M = 0.5
PEDESTRIAN_HEIGHT_M = 1.7

# Shortest path length admitted by the channel model; trajectories that graze
# a sensor or the transmitter are clamped here instead of hitting the 1/d pole.
MIN_PATH_M = 0.1

LOOP_MOTIONS = ("clockwise-loop", "counterclockwise-loop")
MOTIONS = LOOP_MOTIONS + ("straight-line",)


@dataclass
class CameraPose:
    """A 2D pinhole camera: position, unit view direction, horizontal FOV."""

    position: tuple
    view_direction: tuple
    field_of_view: float
    image_size: tuple = (64, 64)

    def __post_init__(self):
        d = np.asarray(self.view_direction, dtype=float)
        norm = float(np.linalg.norm(d))
        if norm <= 0:
            raise ValueError("camera view_direction must be non-zero")
        self.view_direction = tuple(d / norm)
        if not 0 < self.field_of_view < math.pi:
            raise ValueError(f"field_of_view must lie in (0, pi), got {self.field_of_view}")
        h, w = self.image_size
        if h < 1 or w < 1:
            raise ValueError(f"image_size must be positive, got {self.image_size}")


@dataclass
class SensorPose:
    sensor_id: int
    position: tuple


@dataclass
class RoomConfig:
    """Rectangular room with cameras, CSI sensors, and one transmitter."""

    width: float
    depth: float
    camera_poses: list
    sensor_poses: list
    tx_pose: tuple
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0:
            raise ValueError(f"room dimensions must be positive, got {self.width}x{self.depth}")
        if not self.camera_poses:
            raise ValueError("at least one camera is required")
        if not self.sensor_poses:
            raise ValueError("at least one sensor is required")
        ids = [s.sensor_id for s in self.sensor_poses]
        if len(set(ids)) != len(ids):
            raise ValueError(f"sensor ids must be unique, got {ids}")
        for cam in self.camera_poses:
            self._check_inside(cam.position, "camera")
        for sensor in self.sensor_poses:
            self._check_inside(sensor.position, f"sensor {sensor.sensor_id}")
        self._check_inside(self.tx_pose, "transmitter")

    def _check_inside(self, point, label):
        x, y = float(point[0]), float(point[1])
        if not (0.0 <= x <= self.width and 0.0 <= y <= self.depth):
            raise ValueError(
                f"{label} at ({x}, {y}) lies outside the {self.width}x{self.depth} m room"
            )

    def sensor_by_id(self, sensor_id):
        for sensor in self.sensor_poses:
            if sensor.sensor_id == sensor_id:
                return sensor
        raise KeyError(f"sensor id {sensor_id} not present in room")


@dataclass
class PedestrianTrajectory:
    """Scripted motion: timed waypoints plus a motion style.

    Loop motions treat the waypoints as a closed circuit: after the final
    waypoint the pedestrian walks straight back to the first one at the
    circuit's mean speed, then repeats. The traversal order is flipped when
    the waypoint polygon's orientation disagrees with the requested one.
    """

    pedestrian_id: int
    color: tuple
    waypoints: list  # [(time_s, (x, y)), ...] with strictly increasing times
    motion: str = "straight-line"

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}, expected one of {MOTIONS}")
        if not self.waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        times = [t for t, _ in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"waypoint times must be strictly increasing, got {times}")


@dataclass
class ChannelParams:
    """Channel geometry and sampling parameters.

    `carrier_wavelengths` defaults to `n_subcarriers` tones spread linearly
    across an 80 MHz band centered at 5.18 GHz. `reflection_gain` is a free
    knob: nothing in the physical setup pins the strength of a pedestrian
    echo, so it simply scales the scatter term relative to line of sight.
    """

    n_tx: int = 1
    n_rx: int = 1
    n_subcarriers: int = 64
    carrier_wavelengths: np.ndarray = None
    reflection_gain: float = 1.0
    noise_std: float = 0.005
    csi_rate: float = 100.0
    camera_rate: float = 10.0

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.csi_rate <= self.camera_rate:
            raise ValueError(
                f"csi_rate ({self.csi_rate}) must exceed camera_rate ({self.camera_rate})"
            )
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.carrier_wavelengths is None:
            self.carrier_wavelengths = subcarrier_wavelengths(self.n_subcarriers)
        self.carrier_wavelengths = np.asarray(self.carrier_wavelengths, dtype=float)
        if self.carrier_wavelengths.shape != (self.n_subcarriers,):
            raise ValueError(
                f"need one wavelength per subcarrier ({self.n_subcarriers}), "
                f"got shape {self.carrier_wavelengths.shape}"
            )


def subcarrier_wavelengths(n_subcarriers, center_hz=5.18e9, bandwidth_hz=80e6):
    """Wavelengths of `n_subcarriers` tones spread linearly over one band."""
    if n_subcarriers == 1:
        freqs = np.array([center_hz])
    else:
        freqs = np.linspace(center_hz - bandwidth_hz / 2, center_hz + bandwidth_hz / 2, n_subcarriers)
    return SPEED_OF_LIGHT / freqs


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def _signed_area(points):
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _oriented_waypoints(traj):
    """Waypoint times/positions with loop orientation enforced."""
    times = np.asarray([t for t, _ in traj.waypoints], dtype=float)
    pos = np.asarray([p for _, p in traj.waypoints], dtype=float).reshape(-1, 2)
    if traj.motion in LOOP_MOTIONS and len(pos) >= 3:
        area = _signed_area(pos)
        want_ccw = traj.motion == "counterclockwise-loop"
        if area != 0.0 and (area > 0.0) != want_ccw:
            seg = np.diff(times)
            pos = pos[::-1].copy()
            times = np.concatenate([[times[0]], times[0] + np.cumsum(seg[::-1])])
    return times, pos


def loop_period(traj):
    """Duration of one full circuit, including the closing leg back to start."""
    times, pos = _oriented_waypoints(traj)
    if len(pos) < 2:
        return 0.0
    span = float(times[-1] - times[0])
    seg_len = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    total = float(seg_len.sum())
    closing = float(np.linalg.norm(pos[-1] - pos[0]))
    if total <= 0.0 or span <= 0.0:
        return span
    return span + closing / (total / span)


def trajectory_positions(traj, times_q):
    """Evaluate the parametric trajectory at arbitrary times.

    Straight-line motion clamps to the first/last waypoint outside the timed
    range; loop motion wraps modulo `loop_period`, so the position at t=0 and
    t=period coincide exactly.
    """
    times, pos = _oriented_waypoints(traj)
    times_q = np.atleast_1d(np.asarray(times_q, dtype=float))
    if len(pos) == 1:
        return np.tile(pos[0], (len(times_q), 1))
    if traj.motion in LOOP_MOTIONS:
        period = loop_period(traj)
        closing = float(np.linalg.norm(pos[-1] - pos[0]))
        if closing > 0.0 and period > times[-1] - times[0]:
            times = np.concatenate([times, [times[0] + period]])
            pos = np.vstack([pos, pos[:1]])
        if period > 0.0:
            times_q = times[0] + np.mod(times_q - times[0], period)
    x = np.interp(times_q, times, pos[:, 0])
    y = np.interp(times_q, times, pos[:, 1])
    return np.stack([x, y], axis=1)


def validate_trajectory(traj, room):
    for idx, (t, p) in enumerate(traj.waypoints):
        x, y = float(p[0]), float(p[1])
        if not (0.0 <= x <= room.width and 0.0 <= y <= room.depth):
            raise ValueError(
                f"waypoint {idx} (t={t}s) of pedestrian {traj.pedestrian_id} at "
                f"({x}, {y}) lies outside the {room.width}x{room.depth} m room"
            )


def generate_trajectory(traj, room, duration, rate):
    """Dense position series: one sample per tick of `rate` over `duration`."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    validate_trajectory(traj, room)
    n = int(round(duration * rate))
    times = np.arange(n, dtype=float) / rate
    return trajectory_positions(traj, times)


def room_loop(room, period, clockwise=True, margin_frac=0.15):
    """Waypoints tracing the room's inset rectangle at constant speed.

    Convenience for building loop scenarios; the returned list covers the
    four corners, with the closing leg left to the loop semantics so the
    circuit period equals `period` exactly.
    """
    mx, my = room.width * margin_frac, room.depth * margin_frac
    corners = [
        (mx, my),
        (mx, room.depth - my),
        (room.width - mx, room.depth - my),
        (room.width - mx, my),
    ]
    if clockwise:
        # Shoelace orientation of the list above is counterclockwise.
        corners = [corners[0]] + corners[1:][::-1]
    pts = np.asarray(corners + [corners[0]], dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    ts = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum() * period
    return [(float(t), (float(x), float(y))) for t, (x, y) in zip(ts[:-1], pts[:-1])]


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def render_frame(room, camera_index, pedestrian_states):
    """Rasterize one frame: flat backdrop plus one rectangle per pedestrian.

    `pedestrian_states` is a list of (position, color) pairs. A pedestrian is
    drawn only when its position falls inside the view frustum; the rectangle
    is centered at the pinhole projection of the position and its pixel width
    scales as focal * width_m / depth, i.e. inversely with distance.
    """
    cam = room.camera_poses[camera_index]
    h_px, w_px = cam.image_size
    frame = np.full((h_px, w_px, 3), BACKGROUND_LEVEL, dtype=np.float32)
    d = np.asarray(cam.view_direction, dtype=float)
    right = np.array([d[1], -d[0]])
    focal = (w_px / 2.0) / math.tan(cam.field_of_view / 2.0)

    visible = []
    for pos, color in pedestrian_states:
        v = np.asarray(pos, dtype=float) - np.asarray(cam.position, dtype=float)
        depth = float(v @ d)
        if depth < MIN_PATH_M:
            continue
        lateral = float(v @ right)
        if abs(math.atan2(lateral, depth)) > cam.field_of_view / 2.0:
            continue
        visible.append((depth, lateral, np.asarray(color, dtype=np.float32)))

    # Painter's order: far to near, so closer pedestrians overdraw.
    for depth, lateral, color in sorted(visible, key=lambda s: -s[0]):
        u = w_px / 2.0 + focal * lateral / depth
        rect_w = max(1, int(round(focal * PEDESTRIAN_WIDTH_M / depth)))
        rect_h = max(1, int(round(focal * PEDESTRIAN_HEIGHT_M / depth)))
        x0 = int(round(u - rect_w / 2.0))
        y0 = int(round(h_px / 2.0 - rect_h / 2.0))
        x1, y1 = x0 + rect_w, y0 + rect_h
        x0, x1 = max(0, x0), min(w_px, x1)
        y0, y1 = max(0, y0), min(h_px, y1)
        if x1 <= x0:  # center is in view, so keep at least one column
            x0 = min(w_px - 1, max(0, int(u)))
            x1 = x0 + 1
        if y1 <= y0:
            y0 = min(h_px - 1, max(0, h_px // 2))
            y1 = y0 + 1
        frame[y0:y1, x0:x1] = color
    return frame


# ---------------------------------------------------------------------------
# Channel synthesis
# ---------------------------------------------------------------------------

ANTENNA_SPACING_M = 0.03


def _antenna_positions(anchor, count):
    anchor = np.asarray(anchor, dtype=float)
    offsets = np.arange(count)[:, None] * np.array([0.0, ANTENNA_SPACING_M])
    return anchor[None, :] + offsets


def synth_csi_frame(room, sensor_id, pedestrian_positions, params, rng=None):
    """One channel estimate: line of sight plus one bounce per pedestrian.

    Per (tx, rx, subcarrier): (1/d0) * exp(-j 2 pi d0 / lambda_k) summed with
    g * exp(-j 2 pi (d_tx->p + d_p->rx) / lambda_k) / (d_tx->p * d_p->rx) for
    each pedestrian p, plus optional complex Gaussian noise of total std
    `noise_std`. Path lengths are clamped to MIN_PATH_M. Deterministic given
    the rng state.
    """
    sensor = room.sensor_by_id(sensor_id)
    lam = params.carrier_wavelengths
    tx = _antenna_positions(room.tx_pose, params.n_tx)
    rx = _antenna_positions(sensor.position, params.n_rx)

    d0 = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1)
    d0 = np.maximum(d0, MIN_PATH_M)
    phase = -2j * np.pi * d0[..., None] / lam
    h = (1.0 / d0)[..., None] * np.exp(phase)

    positions = np.asarray(pedestrian_positions, dtype=float).reshape(-1, 2)
    for p in positions:
        d1 = np.maximum(np.linalg.norm(tx - p, axis=-1), MIN_PATH_M)
        d2 = np.maximum(np.linalg.norm(rx - p, axis=-1), MIN_PATH_M)
        bounce = d1[:, None] + d2[None, :]
        gain = params.reflection_gain / (d1[:, None] * d2[None, :])
        h = h + gain[..., None] * np.exp(-2j * np.pi * bounce[..., None] / lam)

    if rng is not None and params.noise_std > 0:
        shape = h.shape
        scale = params.noise_std / math.sqrt(2.0)
        h = h + scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return h.astype(np.complex64)


# ---------------------------------------------------------------------------
# Session generation
# ---------------------------------------------------------------------------


def generate_dataset(room, scenarios, params, duration, out_dir, seed=None):
    """Write a full capture session to `out_dir` and return its manifest.

    Image frames tick at `camera_rate` starting at t=0; each sensor's CSI
    clock starts at an offset drawn uniformly within one CSI period, so the
    streams are never phase-aligned. Per-frame noise comes from a
    counter-based sub-seed of (seed, sensor, frame), making parallel and
    serial generation bit-identical.
    """
    if seed is None:
        seed = room.seed
    for traj in scenarios:
        validate_trajectory(traj, room)

    os.makedirs(out_dir, exist_ok=True)
    n_img = int(round(duration * params.camera_rate))
    n_csi = int(round(duration * params.csi_rate))
    image_ts = np.arange(n_img, dtype=np.float64) / params.camera_rate

    manifest = {
        "version": storage.MANIFEST_VERSION,
        "generator": "radiofill",
        "seed": int(seed),
        "duration_s": float(duration),
        "camera_rate_hz": float(params.camera_rate),
        "csi_rate_hz": float(params.csi_rate),
        "background": BACKGROUND_LEVEL,
        "byte_order": "little",
        "room": room_to_dict(room),
        "channel": channel_params_to_dict(params),
        "scenarios": [trajectory_to_dict(t) for t in scenarios],
        "cameras": [],
        "sensors": [],
    }

    ped_img_positions = [trajectory_positions(t, image_ts) for t in scenarios]
    colors = [t.color for t in scenarios]

    for cam_idx in range(len(room.camera_poses)):
        h, w = room.camera_poses[cam_idx].image_size
        frames = np.empty((n_img, h, w, 3), dtype=np.float32)
        for i in range(n_img):
            states = [(ped_img_positions[k][i], colors[k]) for k in range(len(scenarios))]
            frames[i] = render_frame(room, cam_idx, states)
        frames_file = storage.camera_frames_file(cam_idx)
        ts_file = storage.camera_ts_file(cam_idx)
        storage.write_raw(os.path.join(out_dir, frames_file), frames, storage.IMAGE_DTYPE)
        storage.write_raw(os.path.join(out_dir, ts_file), image_ts, storage.TS_DTYPE)
        manifest["cameras"].append(
            {
                "camera_id": cam_idx,
                "frames_file": frames_file,
                "frames_dtype": "float32",
                "frames_shape": [n_img, h, w, 3],
                "timestamps_file": ts_file,
                "timestamps_dtype": "float64",
                "timestamps_shape": [n_img],
            }
        )

    for sensor in sorted(room.sensor_poses, key=lambda s: s.sensor_id):
        offset_rng = np.random.default_rng(derive_seed(seed, "csi-offset", sensor.sensor_id))
        offset = float(offset_rng.uniform(0.0, 1.0 / params.csi_rate))
        csi_ts = offset + np.arange(n_csi, dtype=np.float64) / params.csi_rate
        ped_csi_positions = [trajectory_positions(t, csi_ts) for t in scenarios]
        values = np.empty(
            (n_csi, params.n_tx, params.n_rx, params.n_subcarriers), dtype=np.complex64
        )
        for j in range(n_csi):
            noise_rng = np.random.default_rng(
                derive_seed(seed, "csi-noise", sensor.sensor_id, j)
            )
            positions = np.array([pp[j] for pp in ped_csi_positions]).reshape(-1, 2)
            values[j] = synth_csi_frame(room, sensor.sensor_id, positions, params, noise_rng)
        values_file = storage.sensor_values_file(sensor.sensor_id)
        ts_file = storage.sensor_ts_file(sensor.sensor_id)
        storage.write_complex(os.path.join(out_dir, values_file), values)
        storage.write_raw(os.path.join(out_dir, ts_file), csi_ts, storage.TS_DTYPE)
        manifest["sensors"].append(
            {
                "sensor_id": sensor.sensor_id,
                "values_file": values_file,
                "values_dtype": "complex64-interleaved-float32",
                "values_shape": [n_csi, params.n_tx, params.n_rx, params.n_subcarriers],
                "timestamps_file": ts_file,
                "timestamps_dtype": "float64",
                "timestamps_shape": [n_csi],
                "clock_offset_s": offset,
            }
        )

    storage.write_manifest(out_dir, manifest)
    return manifest


# ---------------------------------------------------------------------------
# Config (de)serialization
# ---------------------------------------------------------------------------


def room_to_dict(room):
    return {
        "width": room.width,
        "depth": room.depth,
        "tx_pose": list(room.tx_pose),
        "seed": room.seed,
        "cameras": [
            {
                "position": list(c.position),
                "view_direction": list(c.view_direction),
                "field_of_view": c.field_of_view,
                "image_size": list(c.image_size),
            }
            for c in room.camera_poses
        ],
        "sensors": [
            {"sensor_id": s.sensor_id, "position": list(s.position)} for s in room.sensor_poses
        ],
    }


def room_from_dict(d):
    return RoomConfig(
        width=d["width"],
        depth=d["depth"],
        camera_poses=[
            CameraPose(
                position=tuple(c["position"]),
                view_direction=tuple(c["view_direction"]),
                field_of_view=c["field_of_view"],
                image_size=tuple(c["image_size"]),
            )
            for c in d["cameras"]
        ],
        sensor_poses=[
            SensorPose(sensor_id=s["sensor_id"], position=tuple(s["position"]))
            for s in d["sensors"]
        ],
        tx_pose=tuple(d["tx_pose"]),
        seed=d.get("seed", 0),
    )


def trajectory_to_dict(traj):
    return {
        "pedestrian_id": traj.pedestrian_id,
        "color": list(traj.color),
        "motion": traj.motion,
        "waypoints": [[t, list(p)] for t, p in traj.waypoints],
    }


def trajectory_from_dict(d):
    return PedestrianTrajectory(
        pedestrian_id=d["pedestrian_id"],
        color=tuple(d["color"]),
        waypoints=[(t, tuple(p)) for t, p in d["waypoints"]],
        motion=d["motion"],
    )


def channel_params_to_dict(params):
    return {
        "n_tx": params.n_tx,
        "n_rx": params.n_rx,
        "n_subcarriers": params.n_subcarriers,
        "carrier_wavelengths": params.carrier_wavelengths.tolist(),
        "reflection_gain": params.reflection_gain,
        "noise_std": params.noise_std,
        "csi_rate": params.csi_rate,
        "camera_rate": params.camera_rate,
    }


def channel_params_from_dict(d):
    return ChannelParams(
        n_tx=d["n_tx"],
        n_rx=d["n_rx"],
        n_subcarriers=d["n_subcarriers"],
        carrier_wavelengths=np.asarray(d["carrier_wavelengths"], dtype=float)
        if d.get("carrier_wavelengths") is not None
        else None,
        reflection_gain=d["reflection_gain"],
        noise_std=d["noise_std"],
        csi_rate=d["csi_rate"],
        camera_rate=d["camera_rate"],
    )
