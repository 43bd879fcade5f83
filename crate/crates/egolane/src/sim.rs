//! Deterministic synthetic driving scenarios.
//!
//! Generates multi-lane straight-corridor scenarios with a lane-level map,
//! an ego trajectory that drifts slowly inside its lane, noisy lane-marking
//! perception and biased GNSS. Everything is a pure function of
//! (config, seed), so datasets are reproducible byte-for-byte.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant ego speed. The corridor is straight; longitudinal dynamics carry
/// no lane information, so a fixed speed keeps scenarios comparable.
pub const EGO_SPEED_MPS: f64 = 25.0;

/// Forward sampling ranges of the marking perception, in meters ahead.
pub const PERCEPTION_RANGES_M: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];

/// Peak in-lane lateral drift of the ego trajectory.
pub const DRIFT_SPAN_M: f64 = 0.4;

/// Frequency of the in-lane drift.
pub const DRIFT_FREQ_HZ: f64 = 0.05;

/// Odometry noise scales relative to `point_noise_sigma`, so that a
/// zero-noise configuration yields exact odometry.
pub const ODOMETRY_SPEED_NOISE_SCALE: f64 = 0.2;
pub const ODOMETRY_YAW_NOISE_SCALE: f64 = 0.02;

/// Fraction of scenarios whose map ends before the nominal duration, so the
/// drive runs out of the map mid-sequence. Committing early keeps such
/// sequences available; waiting forfeits them.
pub const SHORT_MAP_PROB: f64 = 0.45;

/// A short map covers this range of the nominal driven distance.
pub const SHORT_MAP_SPAN: (f64, f64) = (0.03, 0.5);

/// Probability that a perception channel is absent for a whole scenario
/// (mapping or perception inconsistency). The per-frame dropout rate is
/// lowered so the marginal missing probability stays at `missing_prob`:
/// blackout + (1 - blackout) * residual = missing_prob.
pub const CHANNEL_BLACKOUT_PROB: f64 = 0.08;

/// Lane-marking types carried by the map and by perception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaneMarkingType {
    Solid,
    Dashed,
    Double,
    BottsDots,
}

impl LaneMarkingType {
    pub const ALL: [LaneMarkingType; 4] = [
        LaneMarkingType::Solid,
        LaneMarkingType::Dashed,
        LaneMarkingType::Double,
        LaneMarkingType::BottsDots,
    ];
}

/// The four perception channels, named relative to the ego lane. Lateral
/// coordinates grow to the left; lane 0 is the rightmost lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkingRole {
    EgoLeft,
    EgoRight,
    AdjacentLeft,
    AdjacentRight,
}

impl MarkingRole {
    pub const ALL: [MarkingRole; 4] = [
        MarkingRole::EgoLeft,
        MarkingRole::EgoRight,
        MarkingRole::AdjacentLeft,
        MarkingRole::AdjacentRight,
    ];

    /// Index inside `SensorFrame::perceived`.
    pub fn index(self) -> usize {
        match self {
            MarkingRole::EgoLeft => 0,
            MarkingRole::EgoRight => 1,
            MarkingRole::AdjacentLeft => 2,
            MarkingRole::AdjacentRight => 3,
        }
    }
}

/// Scenario generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_lanes: usize,
    pub lane_width: f64,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub point_noise_sigma: f64,
    pub type_confusion_prob: f64,
    pub gnss_bias_range: f64,
    pub gnss_noise_sigma: f64,
    pub missing_prob: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_lanes: 4,
            lane_width: 3.5,
            duration_s: 30.0,
            sample_rate_hz: 40,
            point_noise_sigma: 0.15,
            type_confusion_prob: 0.12,
            gnss_bias_range: 5.25,
            gnss_noise_sigma: 0.6,
            missing_prob: 0.15,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.num_lanes) {
            return Err(Error::config("num_lanes", format!("{} not in 2..=8", self.num_lanes)));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::config("lane_width", format!("{} must be > 0", self.lane_width)));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::config("duration_s", format!("{} must be > 0", self.duration_s)));
        }
        if self.sample_rate_hz != 40 {
            return Err(Error::config("sample_rate_hz", format!("{} must be 40", self.sample_rate_hz)));
        }
        for (field, value) in [
            ("type_confusion_prob", self.type_confusion_prob),
            ("missing_prob", self.missing_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(field, format!("{value} not in [0, 1]")));
            }
        }
        for (field, value) in [
            ("point_noise_sigma", self.point_noise_sigma),
            ("gnss_bias_range", self.gnss_bias_range),
            ("gnss_noise_sigma", self.gnss_noise_sigma),
        ] {
            if !(value >= 0.0) {
                return Err(Error::config(field, format!("{value} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz as f64
    }
}

/// A boundary polyline: (station, lateral) samples with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
}

impl Polyline {
    pub fn lateral_at(&self, station: f64) -> f64 {
        let pts = &self.points;
        if station <= pts[0].0 {
            return pts[0].1;
        }
        if station >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let idx = pts.partition_point(|p| p.0 <= station);
        let (s0, l0) = pts[idx - 1];
        let (s1, l1) = pts[idx];
        l0 + (l1 - l0) * (station - s0) / (s1 - s0)
    }
}

/// Lane-level map: `num_lanes + 1` boundary polylines ordered right to left,
/// a marking type per boundary, and the mapped longitudinal range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub boundaries: Vec<Polyline>,
    pub boundary_types: Vec<LaneMarkingType>,
    pub map_extent: f64,
}

impl MapModel {
    pub fn num_lanes(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn lane_center(&self, lane: usize, station: f64) -> f64 {
        0.5 * (self.boundaries[lane].lateral_at(station) + self.boundaries[lane + 1].lateral_at(station))
    }

    /// Lane containing a global lateral coordinate, if any.
    pub fn lane_of(&self, lateral: f64, station: f64) -> Option<usize> {
        (0..self.num_lanes()).find(|&lane| {
            lateral >= self.boundaries[lane].lateral_at(station)
                && lateral < self.boundaries[lane + 1].lateral_at(station)
        })
    }

    /// Boundary index observed by `role` from a vehicle in `lane`; `None`
    /// when the corresponding adjacent lane does not exist.
    pub fn boundary_index(&self, lane: usize, role: MarkingRole) -> Option<usize> {
        let n = self.num_lanes();
        match role {
            MarkingRole::EgoLeft => Some(lane + 1),
            MarkingRole::EgoRight => Some(lane),
            MarkingRole::AdjacentLeft => (lane + 1 < n).then(|| lane + 2),
            MarkingRole::AdjacentRight => (lane >= 1).then(|| lane - 1),
        }
    }
}

/// Ground-truth ego pose at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub station: f64,
    pub lateral: f64,
    pub heading: f64,
}

/// One perceived marking channel: sample points in the ego frame
/// (longitudinal offset, lateral offset) and the perceived marking type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelObservation {
    pub points: Vec<(f64, f64)>,
    pub marking_type: LaneMarkingType,
}

/// Sensor data for one frame. Any perception channel may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: usize,
    pub perceived: [Option<ChannelObservation>; 4],
    /// (station, lateral) fix.
    pub gnss: (f64, f64),
    /// (speed m/s, yaw rate rad/s) over the step starting at this frame.
    pub odometry: (f64, f64),
}

/// One simulated drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub scenario_id: u64,
    pub config: ScenarioConfig,
    pub map: MapModel,
    pub frames: Vec<SensorFrame>,
    pub truth_lane: usize,
    pub truth_pose: Vec<Pose>,
}

fn build_map(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> MapModel {
    let n = config.num_lanes;
    let full_extent = EGO_SPEED_MPS * config.duration_s + 60.0;
    let extent = if rng.gen::<f64>() < SHORT_MAP_PROB {
        let span = Uniform::new(SHORT_MAP_SPAN.0, SHORT_MAP_SPAN.1).sample(rng);
        EGO_SPEED_MPS * config.duration_s * span
    } else {
        full_extent
    };
    let half_width = n as f64 * config.lane_width / 2.0;
    let mut stations: Vec<f64> = (0..).map(|i| i as f64 * 50.0).take_while(|&s| s < extent).collect();
    stations.push(extent);

    let boundaries = (0..=n)
        .map(|i| {
            let lateral = i as f64 * config.lane_width - half_width;
            Polyline { points: stations.iter().map(|&s| (s, lateral)).collect() }
        })
        .collect();

    let mut boundary_types: Vec<LaneMarkingType> = (0..=n)
        .map(|i| if i == 0 || i == n { LaneMarkingType::Solid } else { LaneMarkingType::Dashed })
        .collect();
    // One boundary per scenario gets a distinct type so that type channels
    // carry signal between interior lanes.
    let distinct_idx = rng.gen_range(0..=n);
    let candidates = [LaneMarkingType::Double, LaneMarkingType::BottsDots];
    boundary_types[distinct_idx] = candidates[rng.gen_range(0..2)];

    MapModel { boundaries, boundary_types, map_extent: extent }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("non-negative sigma").sample(rng)
}

fn confuse_type(true_type: LaneMarkingType, prob: f64, rng: &mut ChaCha8Rng) -> LaneMarkingType {
    if prob > 0.0 && rng.gen::<f64>() < prob {
        let others: Vec<LaneMarkingType> =
            LaneMarkingType::ALL.iter().copied().filter(|&t| t != true_type).collect();
        others[rng.gen_range(0..others.len())]
    } else {
        true_type
    }
}

/// Ego-frame lateral offset of a straight boundary at global lateral `b`, as
/// seen from pose (`lateral`, `heading`) at forward distance `forward`.
///
/// The same expression is used by the tracker to predict measurements, so a
/// hypothesis whose state matches the truth reproduces noise-free
/// perception bit-for-bit.
pub fn boundary_offset_in_ego_frame(b: f64, lateral: f64, heading: f64, forward: f64) -> f64 {
    (b - lateral - forward * heading.sin()) / heading.cos()
}

/// Scenario-wide channel blackout rate implied by `missing_prob`.
pub fn blackout_prob(missing_prob: f64) -> f64 {
    CHANNEL_BLACKOUT_PROB.min(missing_prob)
}

/// Per-frame dropout rate that keeps the marginal missing probability at
/// `missing_prob` once scenario-wide blackouts are in effect.
pub fn residual_missing_prob(missing_prob: f64) -> f64 {
    let blackout = blackout_prob(missing_prob);
    if blackout >= 1.0 {
        return 1.0;
    }
    (missing_prob - blackout) / (1.0 - blackout)
}

/// Simulate the marking perception for one frame: per channel, 10 sample
/// points at fixed forward ranges with Gaussian lateral noise, plus a
/// perceived marking type confused with probability `type_confusion_prob`.
/// Channels blacked out for the scenario stay missing; the rest drop out
/// per frame so the marginal missing rate equals `missing_prob`. A pose
/// outside the mapped range yields all channels missing.
pub fn perceive(
    pose: &Pose,
    map: &MapModel,
    outages: &[bool; 4],
    config: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> [Option<ChannelObservation>; 4] {
    let mut channels: [Option<ChannelObservation>; 4] = [None, None, None, None];
    if pose.station < 0.0 || pose.station > map.map_extent {
        return channels;
    }
    let Some(lane) = map.lane_of(pose.lateral, pose.station) else {
        return channels;
    };
    let residual = residual_missing_prob(config.missing_prob);
    for role in MarkingRole::ALL {
        let Some(boundary_idx) = map.boundary_index(lane, role) else {
            continue;
        };
        if outages[role.index()] {
            continue;
        }
        if residual > 0.0 && rng.gen::<f64>() < residual {
            continue;
        }
        let boundary = &map.boundaries[boundary_idx];
        let points = PERCEPTION_RANGES_M
            .iter()
            .map(|&fwd| {
                let b = boundary.lateral_at(pose.station + fwd);
                let offset = boundary_offset_in_ego_frame(b, pose.lateral, pose.heading, fwd)
                    + gaussian(rng, config.point_noise_sigma);
                (fwd, offset)
            })
            .collect();
        let marking_type =
            confuse_type(map.boundary_types[boundary_idx], config.type_confusion_prob, rng);
        channels[role.index()] = Some(ChannelObservation { points, marking_type });
    }
    channels
}

/// Generate one scenario. Deterministic for a fixed (config, scenario_id).
pub fn generate_scenario(config: &ScenarioConfig, scenario_id: u64) -> Result<SequenceRecord> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::util::scenario_seed(config.seed, scenario_id));

    let map = build_map(config, &mut rng);
    let truth_lane = rng.gen_range(0..config.num_lanes);
    let gnss_bias = if config.gnss_bias_range > 0.0 {
        Uniform::new_inclusive(-config.gnss_bias_range, config.gnss_bias_range).sample(&mut rng)
    } else {
        0.0
    };
    let outage_rate = blackout_prob(config.missing_prob);
    let mut outages = [false; 4];
    for slot in outages.iter_mut() {
        *slot = outage_rate > 0.0 && rng.gen::<f64>() < outage_rate;
    }

    let total = config.frame_count();
    let dt = config.dt();
    let omega = 2.0 * std::f64::consts::PI * DRIFT_FREQ_HZ;

    // Target heading sequence for the in-lane drift
    // d(t) = DRIFT_SPAN/2 * (1 - cos(omega t)), which starts at zero offset
    // and zero heading.
    let target_heading = |t: usize| -> f64 {
        let time = t as f64 * dt;
        let lateral_speed = 0.5 * DRIFT_SPAN_M * omega * (omega * time).sin();
        (lateral_speed / EGO_SPEED_MPS).asin()
    };

    let mut frames = Vec::with_capacity(total);
    let mut truth_pose = Vec::with_capacity(total);

    // The in-lane offset is integrated separately from the lane center with
    // exactly the arithmetic the tracker's predict step uses, so a hypothesis
    // whose state matches the truth reproduces it bit-for-bit.
    let mut station = 0.0f64;
    let mut offset = 0.0f64;
    let mut heading = target_heading(0);

    for t in 0..total {
        if station > map.map_extent {
            break;
        }
        let pose = Pose {
            station,
            lateral: map.lane_center(truth_lane, station) + offset,
            heading,
        };
        truth_pose.push(pose);

        let yaw_rate_true = (target_heading(t + 1) - target_heading(t)) / dt;
        let odometry = (
            EGO_SPEED_MPS + gaussian(&mut rng, ODOMETRY_SPEED_NOISE_SCALE * config.point_noise_sigma),
            yaw_rate_true + gaussian(&mut rng, ODOMETRY_YAW_NOISE_SCALE * config.point_noise_sigma),
        );
        let gnss = (
            pose.station + gaussian(&mut rng, config.gnss_noise_sigma),
            pose.lateral + gnss_bias + gaussian(&mut rng, config.gnss_noise_sigma),
        );
        let perceived = perceive(&pose, &map, &outages, config, &mut rng);
        frames.push(SensorFrame { t, perceived, gnss, odometry });

        station += EGO_SPEED_MPS * heading.cos() * dt;
        offset += EGO_SPEED_MPS * heading.sin() * dt;
        heading += yaw_rate_true * dt;
    }

    Ok(SequenceRecord { scenario_id, config: config.clone(), map, frames, truth_lane, truth_pose })
}
