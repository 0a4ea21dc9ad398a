import numpy as np

from terraprint.core import Pose
from terraprint.plant import Plant, PlantConfig, initial_state
from terraprint.sensors import (BASE_LAYOUT, EndEffectorEstimator, FeatureLayout, SensorConfig, SensorFrame,
                                SensorSuite, extract_features, sample_sensors)
from terraprint.terrain import build_scenario, reference_scenario


def _still_plant(field=None):
    field = field or build_scenario({"kind": "flat"})
    pc = PlantConfig()
    return Plant(pc, field, np.random.default_rng(0), 0.0, initial_state(field, pc, (0.0, 0.0))), field


def test_rest_case_reads_zero():
    plant, field = _still_plant()
    suite = SensorSuite(SensorConfig().noiseless(), field, np.random.default_rng(1))
    for k in range(30):
        gt = plant.step((0.0, 0.0), np.zeros(3), 10)
        frame = sample_sensors(suite, gt, (k + 1) * 0.01)
        assert np.array_equal(frame.imu_acc, np.zeros(3))
        assert np.array_equal(frame.imu_gyro, np.zeros(3))
        assert np.allclose(frame.base_orientation_est, 0.0, atol=1e-15)


def test_vision_held_between_frames():
    plant, field = _still_plant()
    suite = SensorSuite(SensorConfig(), field, np.random.default_rng(1))
    f0 = suite.sample(plant.last, 0.0)
    f1 = suite.sample(plant.last, 0.01)
    assert np.array_equal(f0.ee_pose_meas.position, f1.ee_pose_meas.position)
    assert f0.vision_index == f1.vision_index
    f2 = suite.sample(plant.last, 0.034)
    assert f2.vision_index != f0.vision_index


def test_channels_refresh_at_their_rates():
    plant, field = _still_plant()
    suite = SensorSuite(SensorConfig(), field, np.random.default_rng(1))
    vis, imu = set(), []
    prev = None
    for ms in range(1000):
        f = suite.sample(plant.last, ms / 1000)
        vis.add(f.vision_index)
        if prev is not None and not np.array_equal(prev, f.imu_acc):
            imu.append(ms)
        prev = f.imu_acc
    assert len(vis) == 30
    assert len(imu) == 99  # first refresh at t=0 is not a change


def test_vision_noise_sigma():
    plant, field = _still_plant()
    suite = SensorSuite(SensorConfig(), field, np.random.default_rng(2))
    truth = plant.last.ee_world.position
    samples = []
    for k in range(10_000):
        f = suite.sample(plant.last, k * 0.034)
        samples.append(f.ee_pose_meas.position - truth)
    sig = np.std(samples, axis=0)
    assert np.all(np.abs(sig - 1e-3) < 0.15e-3)


def test_time_must_not_go_backwards():
    plant, field = _still_plant()
    suite = SensorSuite(SensorConfig(), field, np.random.default_rng(1))
    suite.sample(plant.last, 0.5)
    try:
        suite.sample(plant.last, 0.4)
    except ValueError:
        return
    raise AssertionError("expected ValueError")


def test_default_layout_dimension():
    assert FeatureLayout().dim == 15
    assert len(BASE_LAYOUT) == 3 + 3 + 3 + 1 + 2 + 3
    assert FeatureLayout(ee_orientation=True, velocity_terms=True).dim == 20
    assert FeatureLayout.from_names(FeatureLayout(velocity_terms=True).names) == FeatureLayout(velocity_terms=True)


def test_zero_frame_gives_zero_features():
    z = extract_features(SensorFrame.zero(), tool_nominal=(0, 0, 0))
    assert z.shape == (15,) and np.array_equal(z, np.zeros(15))
    z = extract_features(SensorFrame.zero(), layout=FeatureLayout(True, True), tool_nominal=(0, 0, 0))
    assert np.array_equal(z, np.zeros(20))


def test_features_deterministic_regardless_of_construction_order():
    kw = dict(t=1.0, imu_acc=np.array([0.1, 0.2, 0.3]), imu_gyro=np.array([0.01, 0.0, -0.01]),
              base_orientation_est=np.array([0.0, 0.087, 0.1]), ee_pose_meas=Pose.from_translation(1, 2, 3),
              terrain_ahead={"height_var": 0.002, "slope_est": (0.08, -0.01)},
              joint_pos_meas=np.array([0.01, 0.0, -0.02]))
    a = SensorFrame(**kw)
    b = SensorFrame(**dict(reversed(list(kw.items()))))
    layout = FeatureLayout(True, True)
    assert np.array_equal(extract_features(a, None, layout), extract_features(b, None, layout))


def test_depth_descriptors_on_slope():
    field = reference_scenario()
    pc = PlantConfig()
    plant = Plant(pc, field, np.random.default_rng(0), 0.0, initial_state(field, pc, (4.8, 0.0)))
    suite = SensorSuite(SensorConfig().noiseless(), field, np.random.default_rng(1))
    f = suite.sample(plant.last, 0.0)
    # all wheels still on the flat; the look-ahead point 0.9 m ahead of the chassis is on the incline
    look = plant.last.state.base.position[0] + 0.9
    assert look > 5.0
    assert np.isclose(f.terrain_ahead["slope_est"][0], np.tan(np.radians(5)))
    assert np.isclose(f.terrain_ahead["height_var"], (look - 5.0) * np.tan(np.radians(5)))


def test_estimator_tracks_open_loop_motion():
    field = reference_scenario()
    pc = PlantConfig()
    plant = Plant(pc, field, np.random.default_rng(0), 0.0, initial_state(field, pc, (3.5, 0.0)))
    suite = SensorSuite(SensorConfig(), field, np.random.default_rng(4))
    est = EndEffectorEstimator(pc.tool_nominal)
    est.update(suite.sample(plant.last, 0.0))
    worst = 0.0
    for k in range(600):
        gt = plant.step((0.3, 0.02), np.array([0.0, 0.0, 0.01 * np.sin(k / 30)]), 10)
        pose = est.update(suite.sample(gt, (k + 1) / 100))
        if k > 50:
            worst = max(worst, float(np.max(np.abs(pose.position - gt.ee_world.position))))
    assert worst < 3e-3
