//! Per-lane hypothesis tracking.
//!
//! One hypothesis is placed in each lane, nearest lane first by GNSS
//! distance, and each tracks its in-lane pose (lateral offset to its lane
//! center, heading) with a Kalman filter fed by the perceived ego-lane
//! markings. Longitudinal position is dead-reckoned from odometry by the
//! caller and shared across hypotheses.
//!
//! Residual sign convention: residual = perceived - predicted, which equals
//! the hypothesis's believed-minus-true lateral error (divided by cos of the
//! heading), so a hypothesis that believes itself 0.5 m left of where it is
//! sees residuals of +0.5 m.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{boundary_offset_in_ego_frame, MapModel, MarkingRole, ScenarioConfig, SensorFrame};

/// Filter tuning constants. Values are scaled to lane geometry and exposed
/// here rather than hard-coded at call sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Association gate on a point residual, meters.
    pub gate: f64,
    /// Floor on the per-point measurement variance.
    pub r_floor: f64,
    /// Process noise rate for the lateral state, m^2 per second.
    pub q_lateral: f64,
    /// Process noise rate for the heading state, rad^2 per second.
    pub q_heading: f64,
    /// Initial lateral variance, m^2.
    pub init_var_lateral: f64,
    /// Initial heading variance, rad^2.
    pub init_var_heading: f64,
    /// Expected marking point noise, used for the measurement variance.
    pub point_noise_sigma: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            gate: 0.9,
            r_floor: 1e-4,
            q_lateral: 0.01,
            q_heading: 0.001,
            init_var_lateral: 0.25,
            init_var_heading: 0.01,
            point_noise_sigma: ScenarioConfig::default().point_noise_sigma,
        }
    }
}

impl FilterParams {
    pub fn from_scenario(config: &ScenarioConfig) -> Self {
        FilterParams { point_noise_sigma: config.point_noise_sigma, ..FilterParams::default() }
    }

    pub fn measurement_variance(&self) -> f64 {
        (self.point_noise_sigma * self.point_noise_sigma).max(self.r_floor)
    }
}

/// A candidate ego-lane with its tracked in-lane pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: u32,
    pub lane_index: usize,
    /// (lateral offset to assigned lane center in m, heading in rad).
    pub state: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub active: bool,
}

impl Hypothesis {
    /// Global lateral position implied by the hypothesis.
    pub fn global_lateral(&self, map: &MapModel, station: f64) -> f64 {
        map.lane_center(self.lane_index, station) + self.state[0]
    }
}

/// Innovation statistics of one geometry channel before the Kalman update.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub role: MarkingRole,
    /// Inlier residuals, perceived - predicted.
    pub residuals: Vec<f64>,
    /// Diagonal innovation covariance, one entry per inlier.
    pub innovation_var: Vec<f64>,
    /// Measurement Jacobian rows d(predicted)/d(lateral, heading) per inlier.
    pub jacobians: Vec<[f64; 2]>,
    pub outlier_count: usize,
    /// Number of associated (inlier) samples.
    pub dof: usize,
}

fn is_spd(m: &[[f64; 2]; 2]) -> bool {
    let sym = (m[0][1] - m[1][0]).abs() <= 1e-9 * (1.0 + m[0][1].abs());
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    sym && m[0][0] > 0.0 && det > 0.0
}

fn inv2(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det <= 0.0 {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// One hypothesis per lane at the lane center, ordered nearest-to-farthest
/// from the GNSS fix, truncated at `max_hypotheses`. Ties break toward the
/// lower lane index.
pub fn generate_hypotheses(
    gnss: (f64, f64),
    map: &MapModel,
    max_hypotheses: usize,
    params: &FilterParams,
) -> Vec<Hypothesis> {
    assert!(max_hypotheses >= 1, "need at least one hypothesis");
    let (station, lateral) = gnss;
    let mut lanes: Vec<usize> = (0..map.num_lanes()).collect();
    lanes.sort_by(|&a, &b| {
        let da = (lateral - map.lane_center(a, station)).abs();
        let db = (lateral - map.lane_center(b, station)).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    lanes
        .into_iter()
        .take(max_hypotheses.min(map.num_lanes()))
        .enumerate()
        .map(|(id, lane_index)| Hypothesis {
            id: id as u32,
            lane_index,
            state: [0.0, 0.0],
            covariance: [[params.init_var_lateral, 0.0], [0.0, params.init_var_heading]],
            active: true,
        })
        .collect()
}

impl Hypothesis {
    /// Kalman predict step: propagate the in-lane pose with odometry and
    /// inflate the covariance with process noise.
    pub fn predict(&self, odometry: (f64, f64), dt: f64, params: &FilterParams) -> Result<Hypothesis> {
        if !self.active {
            return Err(Error::InactiveHypothesis { id: self.id });
        }
        assert!(dt > 0.0, "dt must be positive");
        let (speed, yaw_rate) = odometry;
        let mut next = self.clone();
        next.state[0] += speed * self.state[1].sin() * dt;
        next.state[1] += yaw_rate * dt;
        next.covariance[0][0] += params.q_lateral * dt;
        next.covariance[1][1] += params.q_heading * dt;
        debug_assert!(is_spd(&next.covariance));
        Ok(next)
    }

    /// Associate the frame's geometry channels against this hypothesis's
    /// boundaries. Channels absent from the frame produce no result; a
    /// perceived channel with no boundary at this lane counts every point as
    /// an outlier.
    pub fn associate(
        &self,
        frame: &SensorFrame,
        map: &MapModel,
        station: f64,
        params: &FilterParams,
    ) -> Result<Vec<AssociationResult>> {
        if !self.active {
            return Err(Error::InactiveHypothesis { id: self.id });
        }
        let believed_lateral = self.global_lateral(map, station);
        let heading = self.state[1];
        let r = params.measurement_variance();
        let mut results = Vec::with_capacity(4);
        for role in MarkingRole::ALL {
            let Some(obs) = &frame.perceived[role.index()] else { continue };
            let Some(boundary_idx) = map.boundary_index(self.lane_index, role) else {
                results.push(AssociationResult {
                    role,
                    residuals: Vec::new(),
                    innovation_var: Vec::new(),
                    jacobians: Vec::new(),
                    outlier_count: obs.points.len(),
                    dof: 0,
                });
                continue;
            };
            let boundary = &map.boundaries[boundary_idx];
            let mut residuals = Vec::new();
            let mut innovation_var = Vec::new();
            let mut jacobians = Vec::new();
            let mut outlier_count = 0usize;
            for &(fwd, perceived) in &obs.points {
                let b = boundary.lateral_at(station + fwd);
                let predicted = boundary_offset_in_ego_frame(b, believed_lateral, heading, fwd);
                let residual = perceived - predicted;
                if residual.abs() > params.gate {
                    outlier_count += 1;
                    continue;
                }
                let h = [-1.0 / heading.cos(), -fwd + predicted * heading.tan()];
                let p = &self.covariance;
                let hph = h[0] * (p[0][0] * h[0] + p[0][1] * h[1])
                    + h[1] * (p[1][0] * h[0] + p[1][1] * h[1]);
                residuals.push(residual);
                innovation_var.push(hph + r);
                jacobians.push(h);
            }
            let dof = residuals.len();
            results.push(AssociationResult { role, residuals, innovation_var, jacobians, outlier_count, dof });
        }
        Ok(results)
    }

    /// Kalman update over the stacked inlier residuals of the ego-lane
    /// geometry channels. Adjacent channels are scored but never update the
    /// state, so a wrong hypothesis cannot pull itself onto the true lane
    /// with its neighbor's markings. Computed in information form; an empty
    /// measurement set returns the hypothesis unchanged.
    pub fn update(&self, associations: &[AssociationResult], params: &FilterParams) -> Result<Hypothesis> {
        if !self.active {
            return Err(Error::InactiveHypothesis { id: self.id });
        }
        let r = params.measurement_variance();
        let ego: Vec<&AssociationResult> = associations
            .iter()
            .filter(|a| matches!(a.role, MarkingRole::EgoLeft | MarkingRole::EgoRight))
            .collect();
        let count: usize = ego.iter().map(|a| a.dof).sum();
        if count == 0 {
            return Ok(self.clone());
        }

        let prior_inv = inv2(&self.covariance).ok_or(Error::NotPositiveDefinite)?;
        let mut info = prior_inv;
        let mut gain = [0.0f64; 2];
        for assoc in &ego {
            for (residual, h) in assoc.residuals.iter().zip(&assoc.jacobians) {
                info[0][0] += h[0] * h[0] / r;
                info[0][1] += h[0] * h[1] / r;
                info[1][0] += h[1] * h[0] / r;
                info[1][1] += h[1] * h[1] / r;
                gain[0] += h[0] * residual / r;
                gain[1] += h[1] * residual / r;
            }
        }
        let mut posterior = inv2(&info).ok_or(Error::NotPositiveDefinite)?;
        // Symmetrize against rounding drift.
        let off = 0.5 * (posterior[0][1] + posterior[1][0]);
        posterior[0][1] = off;
        posterior[1][0] = off;

        let mut next = self.clone();
        next.state[0] += posterior[0][0] * gain[0] + posterior[0][1] * gain[1];
        next.state[1] += posterior[1][0] * gain[0] + posterior[1][1] * gain[1];
        next.covariance = posterior;
        debug_assert!(is_spd(&next.covariance));
        Ok(next)
    }

    /// Deactivate when the shared station leaves the map or the lateral
    /// offset exceeds twice the lane width. Deactivation is permanent.
    pub fn deactivate_if_off_map(&self, map: &MapModel, station: f64) -> Hypothesis {
        let mut next = self.clone();
        if !next.active {
            return next;
        }
        let lane_width = map.boundaries[self.lane_index + 1].lateral_at(station)
            - map.boundaries[self.lane_index].lateral_at(station);
        if station > map.map_extent || next.state[0].abs() > 2.0 * lane_width {
            next.active = false;
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, Pose, ScenarioConfig};
    use proptest::prelude::*;

    fn test_map(num_lanes: usize) -> MapModel {
        let config = ScenarioConfig { num_lanes, ..ScenarioConfig::default() };
        generate_scenario(&config, 0).unwrap().map
    }

    #[test]
    fn nearest_lane_comes_first() {
        let map = test_map(4);
        let gnss = (0.0, map.lane_center(2, 0.0));
        let hyps = generate_hypotheses(gnss, &map, 6, &FilterParams::default());
        assert_eq!(hyps.len(), 4);
        assert_eq!(hyps[0].lane_index, 2);
        assert_eq!(hyps[0].id, 0);
        for h in &hyps {
            assert_eq!(h.state, [0.0, 0.0]);
            assert_eq!(h.covariance, [[0.25, 0.0], [0.0, 0.01]]);
            assert!(h.active);
        }
    }

    #[test]
    fn eight_lanes_truncate_to_six() {
        let map = test_map(8);
        let hyps = generate_hypotheses((0.0, 0.0), &map, 6, &FilterParams::default());
        assert_eq!(hyps.len(), 6);
    }

    #[test]
    fn two_lanes_yield_two_hypotheses() {
        let map = test_map(2);
        let hyps = generate_hypotheses((0.0, 0.0), &map, 6, &FilterParams::default());
        assert_eq!(hyps.len(), 2);
    }

    #[test]
    fn equidistant_tie_breaks_to_lower_lane_index() {
        let map = test_map(4);
        // Exactly on the boundary between lanes 1 and 2.
        let gnss = (0.0, map.boundaries[2].lateral_at(0.0));
        let hyps = generate_hypotheses(gnss, &map, 6, &FilterParams::default());
        assert_eq!(hyps[0].lane_index, 1);
        assert_eq!(hyps[1].lane_index, 2);
    }

    #[test]
    fn ordering_is_a_distance_sorted_lane_permutation() {
        let map = test_map(6);
        let gnss = (0.0, 2.3);
        let hyps = generate_hypotheses(gnss, &map, 6, &FilterParams::default());
        let mut lanes: Vec<usize> = hyps.iter().map(|h| h.lane_index).collect();
        let dist = |lane: usize| (gnss.1 - map.lane_center(lane, 0.0)).abs();
        for pair in hyps.windows(2) {
            assert!(dist(pair[0].lane_index) <= dist(pair[1].lane_index));
        }
        lanes.sort_unstable();
        assert_eq!(lanes, (0..6).collect::<Vec<_>>());
    }

    fn fresh_hypothesis(lane: usize) -> Hypothesis {
        Hypothesis {
            id: 0,
            lane_index: lane,
            state: [0.0, 0.0],
            covariance: [[0.25, 0.0], [0.0, 0.01]],
            active: true,
        }
    }

    #[test]
    fn predict_with_zero_odometry_keeps_state_and_inflates_covariance() {
        let h = fresh_hypothesis(0);
        let next = h.predict((0.0, 0.0), 0.025, &FilterParams::default()).unwrap();
        assert_eq!(next.state, h.state);
        assert!(next.covariance[0][0] > h.covariance[0][0]);
        assert!(next.covariance[1][1] > h.covariance[1][1]);
    }

    #[test]
    fn predict_with_zero_heading_keeps_lateral() {
        let h = fresh_hypothesis(0);
        let next = h.predict((30.0, 0.0), 0.025, &FilterParams::default()).unwrap();
        assert_eq!(next.state[0], 0.0);
    }

    #[test]
    fn predict_closed_form_lateral_increment() {
        let mut h = fresh_hypothesis(0);
        h.state[1] = 0.01;
        let next = h.predict((30.0, 0.0), 0.025, &FilterParams::default()).unwrap();
        let expect = 30.0 * 0.01f64.sin() * 0.025;
        assert!((next.state[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn predict_rejects_inactive() {
        let mut h = fresh_hypothesis(0);
        h.active = false;
        assert!(matches!(
            h.predict((1.0, 0.0), 0.025, &FilterParams::default()),
            Err(Error::InactiveHypothesis { .. })
        ));
    }

    fn noise_free_record() -> crate::sim::SequenceRecord {
        let config = ScenarioConfig {
            point_noise_sigma: 0.0,
            type_confusion_prob: 0.0,
            gnss_bias_range: 0.0,
            gnss_noise_sigma: 0.0,
            missing_prob: 0.0,
            seed: 21,
            ..ScenarioConfig::default()
        };
        generate_scenario(&config, 0).unwrap()
    }

    #[test]
    fn true_lane_hypothesis_has_exactly_zero_residuals_under_zero_noise() {
        let record = noise_free_record();
        let params = FilterParams::from_scenario(&record.config);
        let mut h = fresh_hypothesis(record.truth_lane);
        let dt = record.config.dt();
        let mut station = record.frames[0].gnss.0;
        for (i, frame) in record.frames.iter().take(200).enumerate() {
            if i > 0 {
                let odom = record.frames[i - 1].odometry;
                h = h.predict(odom, dt, &params).unwrap();
                station += odom.0 * dt;
            }
            let assocs = h.associate(frame, &record.map, station, &params).unwrap();
            assert!(!assocs.is_empty());
            for assoc in &assocs {
                assert_eq!(assoc.outlier_count, 0);
                assert_eq!(assoc.dof, 10);
                for &r in &assoc.residuals {
                    assert_eq!(r, 0.0, "frame {i}, role {:?}", assoc.role);
                }
            }
            h = h.update(&assocs, &params).unwrap();
        }
    }

    #[test]
    fn hypothesis_displaced_one_lane_width_gates_every_point() {
        let record = noise_free_record();
        let params = FilterParams::from_scenario(&record.config);
        let mut h = fresh_hypothesis(record.truth_lane);
        h.state[0] = record.config.lane_width; // believed pose one lane width off
        let frame = &record.frames[0];
        let assocs = h.associate(frame, &record.map, 0.0, &params).unwrap();
        for assoc in &assocs {
            assert_eq!(assoc.outlier_count, 10, "role {:?}", assoc.role);
            assert_eq!(assoc.dof, 0);
        }
    }

    #[test]
    fn lateral_error_appears_as_residual_with_matching_sign() {
        let record = noise_free_record();
        let params = FilterParams::from_scenario(&record.config);
        let mut h = fresh_hypothesis(record.truth_lane);
        h.state[0] = -0.5; // believes itself 0.5 m right of where it is
        let frame = &record.frames[0];
        let assocs = h.associate(frame, &record.map, 0.0, &params).unwrap();
        assert!(!assocs.is_empty());
        for assoc in &assocs {
            assert_eq!(assoc.dof, 10);
            for &r in &assoc.residuals {
                assert!((r - (-0.5)).abs() < 1e-9, "residual {r}");
            }
        }
    }

    #[test]
    fn perceived_channel_with_no_boundary_is_all_outliers() {
        // Need a truth lane that sees an adjacent-right channel.
        let base = noise_free_record();
        let record = (0..16)
            .map(|id| generate_scenario(&base.config, id).unwrap())
            .find(|r| r.truth_lane != 0)
            .unwrap();
        let params = FilterParams::from_scenario(&record.config);
        // Hypothesis in the rightmost lane has no adjacent-right boundary;
        // force a frame perceived from an interior lane onto it.
        let interior_frame = record
            .frames
            .iter()
            .find(|f| f.perceived[MarkingRole::AdjacentRight.index()].is_some())
            .expect("interior truth lane sees an adjacent-right channel");
        let h = fresh_hypothesis(0);
        let assocs = h.associate(interior_frame, &record.map, 0.0, &params).unwrap();
        let ar = assocs.iter().find(|a| a.role == MarkingRole::AdjacentRight).unwrap();
        assert_eq!(ar.dof, 0);
        assert_eq!(ar.outlier_count, 10);
    }

    #[test]
    fn update_with_zero_residuals_keeps_state_and_contracts_covariance() {
        let h = fresh_hypothesis(0);
        let assoc = AssociationResult {
            role: MarkingRole::EgoLeft,
            residuals: vec![0.0; 10],
            innovation_var: vec![0.3; 10],
            jacobians: vec![[-1.0, -5.0]; 10],
            outlier_count: 0,
            dof: 10,
        };
        let next = h.update(&[assoc], &FilterParams::default()).unwrap();
        assert_eq!(next.state, [0.0, 0.0]);
        let trace_before = h.covariance[0][0] + h.covariance[1][1];
        let trace_after = next.covariance[0][0] + next.covariance[1][1];
        assert!(trace_after < trace_before);
    }

    #[test]
    fn update_with_empty_associations_is_identity() {
        let h = fresh_hypothesis(1);
        let next = h.update(&[], &FilterParams::default()).unwrap();
        assert_eq!(next, h);
    }

    #[test]
    fn scalar_update_matches_closed_form() {
        // Prior var 1, R 1, residual 1: posterior mean 0.5, posterior var 0.5.
        let mut h = fresh_hypothesis(0);
        h.covariance = [[1.0, 0.0], [0.0, 1e6]];
        let params = FilterParams { point_noise_sigma: 1.0, r_floor: 1e-9, ..FilterParams::default() };
        let assoc = AssociationResult {
            role: MarkingRole::EgoLeft,
            residuals: vec![1.0],
            innovation_var: vec![2.0],
            jacobians: vec![[1.0, 0.0]],
            outlier_count: 0,
            dof: 1,
        };
        let next = h.update(&[assoc], &params).unwrap();
        assert!((next.state[0] - 0.5).abs() < 1e-9);
        assert!((next.covariance[0][0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn adjacent_channels_do_not_move_the_state() {
        let h = fresh_hypothesis(1);
        let assoc = AssociationResult {
            role: MarkingRole::AdjacentLeft,
            residuals: vec![0.8; 10],
            innovation_var: vec![0.3; 10],
            jacobians: vec![[-1.0, -5.0]; 10],
            outlier_count: 0,
            dof: 10,
        };
        let next = h.update(&[assoc], &FilterParams::default()).unwrap();
        assert_eq!(next, h);
    }

    #[test]
    fn deactivation_cases() {
        let map = test_map(4);
        let h = fresh_hypothesis(1);

        let same = h.deactivate_if_off_map(&map, 100.0);
        assert!(same.active);

        let off = h.deactivate_if_off_map(&map, map.map_extent + 1.0);
        assert!(!off.active);

        let mut wide = fresh_hypothesis(1);
        wide.state[0] = 2.0 * 3.5 + 0.1;
        assert!(!wide.deactivate_if_off_map(&map, 10.0).active);

        // Once inactive, stays inactive.
        let still = off.deactivate_if_off_map(&map, 0.0);
        assert!(!still.active);
    }

    proptest! {
        #[test]
        fn covariance_stays_spd_through_predict_update_cycles(
            speeds in proptest::collection::vec(0.0f64..40.0, 1..30),
            yaw in -0.05f64..0.05,
            residual in -0.8f64..0.8,
        ) {
            let params = FilterParams::default();
            let mut h = fresh_hypothesis(0);
            for (i, &speed) in speeds.iter().enumerate() {
                h = h.predict((speed, yaw), 0.025, &params).unwrap();
                prop_assert!(is_spd(&h.covariance));
                let fwd = 5.0 + (i % 10) as f64 * 5.0;
                let assoc = AssociationResult {
                    role: MarkingRole::EgoRight,
                    residuals: vec![residual; 10],
                    innovation_var: vec![params.measurement_variance(); 10],
                    jacobians: (0..10).map(|j| [-1.0, -(fwd + j as f64)]).collect(),
                    outlier_count: 0,
                    dof: 10,
                };
                h = h.update(&[assoc], &params).unwrap();
                prop_assert!(is_spd(&h.covariance));
            }
        }
    }
}
