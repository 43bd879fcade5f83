//! Length-independent features over score prefixes and the boosted
//! probabilistic classifier.
//!
//! A prefix of a score series is summarized by averaging each channel over
//! trailing windows of several sizes, so one classifier serves every prefix
//! length. Features are fed to gradient-boosted trees trained with logistic
//! loss; the output is the probability that the hypothesis is the true one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmq::{MmqFrame, CHANNEL_COUNT};
use crate::tree::{fit_tree, ColumnMatrix, RegressionTree};
use crate::util::fnv1a;

/// Trailing window sizes, in frames; a fifth window always covers the whole
/// prefix.
pub const WINDOW_SIZES: [usize; 4] = [10, 40, 120, 400];

/// Placed in a window mean when the window holds no present value; strictly
/// below the score floor so trees can isolate missingness.
pub const MISSING_SENTINEL: f64 = -11.0;

/// Nominal sequence length (30 s at 40 Hz) used to normalize prefix length.
pub const NOMINAL_SEQUENCE_LEN: usize = 1200;

/// 8 channels x 5 windows + 8 missing fractions + normalized prefix length.
pub const FEATURE_COUNT: usize = CHANNEL_COUNT * (WINDOW_SIZES.len() + 1) + CHANNEL_COUNT + 1;

/// Fingerprint of the feature layout; models refuse inputs from any other
/// schema.
pub fn feature_schema_hash() -> u64 {
    fnv1a(b"mmq8/windows=10,40,120,400,full/missing-fraction/norm-len=1200/v1")
}

/// Cumulative per-channel sums and presence counts over a score series;
/// features for any prefix length come out in O(1) per window.
pub struct SeriesStats {
    len: usize,
    cum_sum: Vec<[f64; CHANNEL_COUNT]>,
    cum_count: Vec<[u32; CHANNEL_COUNT]>,
}

impl SeriesStats {
    pub fn new(series: &[MmqFrame]) -> SeriesStats {
        let mut cum_sum = Vec::with_capacity(series.len() + 1);
        let mut cum_count = Vec::with_capacity(series.len() + 1);
        cum_sum.push([0.0; CHANNEL_COUNT]);
        cum_count.push([0u32; CHANNEL_COUNT]);
        for frame in series {
            let mut sums = *cum_sum.last().unwrap();
            let mut counts = *cum_count.last().unwrap();
            for (c, slot) in frame.channels.iter().enumerate() {
                if let Some(v) = slot {
                    sums[c] += v;
                    counts[c] += 1;
                }
            }
            cum_sum.push(sums);
            cum_count.push(counts);
        }
        SeriesStats { len: series.len(), cum_sum, cum_count }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feature vector for the prefix of length `t` (1-based frame count).
    pub fn features(&self, t: usize) -> Result<Vec<f64>> {
        if t < 1 || t > self.len {
            return Err(Error::Data(format!(
                "feature prefix length {t} outside 1..={}",
                self.len
            )));
        }
        let mut out = Vec::with_capacity(FEATURE_COUNT);
        for c in 0..CHANNEL_COUNT {
            for window in WINDOW_SIZES.iter().copied().chain([t]) {
                let start = t.saturating_sub(window);
                let count = self.cum_count[t][c] - self.cum_count[start][c];
                if count == 0 {
                    out.push(MISSING_SENTINEL);
                } else {
                    let sum = self.cum_sum[t][c] - self.cum_sum[start][c];
                    out.push(sum / count as f64);
                }
            }
        }
        for c in 0..CHANNEL_COUNT {
            let present = self.cum_count[t][c];
            out.push(1.0 - present as f64 / t as f64);
        }
        out.push((t as f64 / NOMINAL_SEQUENCE_LEN as f64).min(1.0));
        debug_assert_eq!(out.len(), FEATURE_COUNT);
        Ok(out)
    }
}

/// Features for a score-series prefix of length `t`.
pub fn extract_features(series: &[MmqFrame], t: usize) -> Result<Vec<f64>> {
    SeriesStats::new(series).features(t)
}

/// One labeled training row.
#[derive(Debug, Clone)]
pub struct TrainingRow {
    pub features: Vec<f64>,
    pub label: bool,
}

/// Labeled feature rows sampled from hypothesis prefixes.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
}

/// Boosting hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { rounds: 100, learning_rate: 0.1, max_depth: 3, min_samples_leaf: 1 }
    }
}

/// A fitted gradient-boosted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Prior log-odds, ln(n_pos / n_neg).
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub feature_count: usize,
    pub schema_hash: u64,
    pub rounds: usize,
    pub max_depth: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_loss(scores: &[f64], labels: &[bool], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for ((&f, &y), &w) in scores.iter().zip(labels).zip(weights) {
        let p = sigmoid(f).clamp(1e-15, 1.0 - 1e-15);
        total -= w * if y { p.ln() } else { (1.0 - p).ln() };
        weight += w;
    }
    total / weight
}

fn schema_hash_for(feature_count: usize) -> u64 {
    if feature_count == FEATURE_COUNT {
        feature_schema_hash()
    } else {
        fnv1a(format!("raw/{feature_count}").as_bytes())
    }
}

/// Stagewise logistic-loss boosting. Rows are first brought into a canonical
/// order (lexicographic by features, then label), which makes the fit
/// invariant to row permutation and duplication.
pub fn fit(data: &TrainingSet, params: &BoostParams) -> Result<BoostedModel> {
    fit_with_loss_history(data, params).map(|(model, _)| model)
}

/// As [`fit`], also returning the training log-loss after each round.
pub fn fit_with_loss_history(
    data: &TrainingSet,
    params: &BoostParams,
) -> Result<(BoostedModel, Vec<f64>)> {
    if data.rows.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let feature_count = data.rows[0].features.len();
    if data.rows.iter().any(|r| r.features.len() != feature_count) {
        return Err(Error::Training("inconsistent feature lengths".into()));
    }
    let n_pos = data.rows.iter().filter(|r| r.label).count();
    let n_neg = data.rows.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Training("training data must contain both classes".into()));
    }

    let mut order: Vec<usize> = (0..data.rows.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = &data.rows[a];
        let rb = &data.rows[b];
        ra.features
            .iter()
            .zip(&rb.features)
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ra.label.cmp(&rb.label))
    });
    // Merge identical (features, label) rows into one weighted row; repeated
    // data then scales every split statistic exactly.
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        let row = &data.rows[i];
        let duplicate = rows
            .last()
            .is_some_and(|last: &&[f64]| *last == row.features.as_slice())
            && labels.last() == Some(&row.label);
        if duplicate {
            *weights.last_mut().unwrap() += 1.0;
        } else {
            rows.push(row.features.as_slice());
            labels.push(row.label);
            weights.push(1.0);
        }
    }

    let matrix = ColumnMatrix::from_rows(&rows);
    let base_score = (n_pos as f64 / n_neg as f64).ln();
    let mut scores = vec![base_score; rows.len()];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut history = Vec::with_capacity(params.rounds + 1);
    history.push(log_loss(&scores, &labels, &weights));

    for _ in 0..params.rounds {
        let mut gradients = Vec::with_capacity(rows.len());
        let mut hessians = Vec::with_capacity(rows.len());
        for ((&f, &y), &w) in scores.iter().zip(&labels).zip(&weights) {
            let p = sigmoid(f);
            gradients.push(w * if y { 1.0 - p } else { -p });
            hessians.push(w * p * (1.0 - p));
        }
        let (tree, row_values) = fit_tree(
            &matrix,
            &gradients,
            &hessians,
            &weights,
            params.max_depth,
            params.min_samples_leaf as f64,
        );
        for (score, v) in scores.iter_mut().zip(row_values) {
            *score += params.learning_rate * v;
        }
        trees.push(tree);
        history.push(log_loss(&scores, &labels, &weights));
    }

    Ok((
        BoostedModel {
            base_score,
            learning_rate: params.learning_rate,
            trees,
            feature_count,
            schema_hash: schema_hash_for(feature_count),
            rounds: params.rounds,
            max_depth: params.max_depth,
        },
        history,
    ))
}

/// Probability that the hypothesis behind `features` is the true one.
pub fn predict_proba(model: &BoostedModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.feature_count {
        return Err(Error::SchemaMismatch {
            expected: model.schema_hash,
            actual: schema_hash_for(features.len()),
        });
    }
    let mut score = model.base_score;
    for tree in &model.trees {
        score += model.learning_rate * tree.value(features);
    }
    Ok(sigmoid(score))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_series(len: usize, value: Option<f64>) -> Vec<MmqFrame> {
        (0..len)
            .map(|t| MmqFrame { t, channels: [value; CHANNEL_COUNT] })
            .collect()
    }

    #[test]
    fn constant_channel_means_equal_the_constant() {
        let series = constant_series(100, Some(2.5));
        let features = extract_features(&series, 100).unwrap();
        for c in 0..CHANNEL_COUNT {
            for w in 0..5 {
                assert_eq!(features[c * 5 + w], 2.5);
            }
            assert_eq!(features[40 + c], 0.0);
        }
    }

    #[test]
    fn fully_missing_channel_yields_sentinels_and_unit_fraction() {
        let series = constant_series(50, None);
        let features = extract_features(&series, 50).unwrap();
        for c in 0..CHANNEL_COUNT {
            for w in 0..5 {
                assert_eq!(features[c * 5 + w], MISSING_SENTINEL);
            }
            assert_eq!(features[40 + c], 1.0);
        }
    }

    #[test]
    fn ramp_mean_over_window_40() {
        // Channel 0 ramps 0..=39; mean over the window of 40 is 19.5.
        let series: Vec<MmqFrame> = (0..40)
            .map(|t| {
                let mut frame = MmqFrame::empty(t);
                frame.channels[0] = Some(t as f64);
                frame
            })
            .collect();
        let features = extract_features(&series, 40).unwrap();
        assert_eq!(features[1], 19.5); // channel 0, window 40
        assert_eq!(features[4], 19.5); // channel 0, full prefix
    }

    #[test]
    fn feature_length_is_constant_for_every_prefix() {
        let series = constant_series(NOMINAL_SEQUENCE_LEN, Some(1.0));
        for t in [1, 2, 9, 10, 39, 120, 401, 777, 1200] {
            assert_eq!(extract_features(&series, t).unwrap().len(), FEATURE_COUNT);
        }
        assert!(extract_features(&series, 0).is_err());
        assert!(extract_features(&series, 1201).is_err());
    }

    #[test]
    fn normalized_length_saturates_at_one() {
        let series = constant_series(1200, Some(0.0));
        let f600 = extract_features(&series, 600).unwrap();
        assert_eq!(f600[FEATURE_COUNT - 1], 0.5);
        let f1200 = extract_features(&series, 1200).unwrap();
        assert_eq!(f1200[FEATURE_COUNT - 1], 1.0);
    }

    #[test]
    fn features_never_read_past_the_prefix() {
        let mut series = constant_series(200, Some(1.0));
        let before = extract_features(&series, 120).unwrap();
        for frame in series.iter_mut().skip(120) {
            frame.channels = [Some(-9.0); CHANNEL_COUNT];
        }
        let after = extract_features(&series, 120).unwrap();
        assert_eq!(before, after);
    }

    fn separable_set(n_per_class: usize) -> TrainingSet {
        // 1-D feature, perfectly separable at 0.
        let mut rows = Vec::new();
        for i in 0..n_per_class {
            rows.push(TrainingRow { features: vec![-(1.0 + i as f64)], label: false });
            rows.push(TrainingRow { features: vec![1.0 + i as f64], label: true });
        }
        TrainingSet { rows }
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy_within_ten_rounds() {
        let data = separable_set(20);
        let params = BoostParams { rounds: 10, ..BoostParams::default() };
        let model = fit(&data, &params).unwrap();
        let correct = data
            .rows
            .iter()
            .filter(|r| (predict_proba(&model, &r.features).unwrap() > 0.5) == r.label)
            .count();
        assert_eq!(correct, data.rows.len());
    }

    #[test]
    fn default_training_pushes_positives_past_point_nine() {
        let data = separable_set(20);
        let model = fit(&data, &BoostParams::default()).unwrap();
        let mean_pos: f64 = data
            .rows
            .iter()
            .filter(|r| r.label)
            .map(|r| predict_proba(&model, &r.features).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!(mean_pos > 0.9, "mean positive probability {mean_pos}");
    }

    #[test]
    fn training_auc_is_one_on_separable_data() {
        let data = separable_set(15);
        let model = fit(&data, &BoostParams::default()).unwrap();
        let mut scored: Vec<(f64, bool)> = data
            .rows
            .iter()
            .map(|r| (predict_proba(&model, &r.features).unwrap(), r.label))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Every positive outranks every negative.
        let max_neg = scored.iter().filter(|(_, y)| !y).map(|(p, _)| *p).fold(0.0, f64::max);
        let min_pos = scored.iter().filter(|(_, y)| *y).map(|(p, _)| *p).fold(1.0, f64::min);
        assert!(min_pos > max_neg);
    }

    #[test]
    fn zero_rounds_gives_the_class_prior() {
        let mut data = separable_set(10);
        data.rows.push(TrainingRow { features: vec![5.0], label: true });
        let n_pos = 11.0;
        let n_neg = 10.0;
        let params = BoostParams { rounds: 0, ..BoostParams::default() };
        let model = fit(&data, &params).unwrap();
        let p = predict_proba(&model, &[0.3]).unwrap();
        assert!((p - n_pos / (n_pos + n_neg)).abs() < 1e-12);
    }

    #[test]
    fn balanced_prior_predicts_half() {
        let data = separable_set(10);
        let params = BoostParams { rounds: 0, ..BoostParams::default() };
        let model = fit(&data, &params).unwrap();
        assert_eq!(predict_proba(&model, &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn duplicated_training_set_fits_an_identical_model() {
        let data = separable_set(12);
        let mut doubled = data.clone();
        doubled.rows.extend(data.rows.iter().cloned());
        let params = BoostParams { rounds: 25, ..BoostParams::default() };
        let a = fit(&data, &params).unwrap();
        let b = fit(&doubled, &params).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn row_permutation_does_not_change_the_model() {
        let data = separable_set(12);
        let mut reversed = data.clone();
        reversed.rows.reverse();
        let a = fit(&data, &BoostParams::default()).unwrap();
        let b = fit(&reversed, &BoostParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_data_is_rejected() {
        let rows = (0..10)
            .map(|i| TrainingRow { features: vec![i as f64], label: true })
            .collect();
        assert!(matches!(fit(&TrainingSet { rows }, &BoostParams::default()), Err(Error::Training(_))));
    }

    #[test]
    fn training_log_loss_never_increases() {
        let data = separable_set(30);
        let (_, history) = fit_with_loss_history(&data, &BoostParams::default()).unwrap();
        for pair in history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss went up: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn monotone_single_split_orders_probabilities() {
        let data = separable_set(10);
        let params = BoostParams { rounds: 1, max_depth: 1, ..BoostParams::default() };
        let model = fit(&data, &params).unwrap();
        let low = predict_proba(&model, &[-3.0]).unwrap();
        let high = predict_proba(&model, &[3.0]).unwrap();
        assert!(high > low);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let data = separable_set(5);
        let model = fit(&data, &BoostParams::default()).unwrap();
        assert!(matches!(
            predict_proba(&model, &[1.0, 2.0]),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn model_round_trips_through_json() {
        let data = separable_set(8);
        let model = fit(&data, &BoostParams { rounds: 5, ..BoostParams::default() }).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: BoostedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let p1 = predict_proba(&model, &[2.0]).unwrap();
        let p2 = predict_proba(&back, &[2.0]).unwrap();
        assert_eq!(p1, p2);
    }
}
