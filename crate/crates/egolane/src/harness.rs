//! Pipeline orchestration: from simulated drives to the method comparison.
//!
//! Per sequence, the tracker runs one Kalman filter per lane hypothesis and
//! every frame's innovation statistics become an 8-channel score frame. A
//! hypothesis is labeled true only if it is the singular closest to the
//! reference pose at every frame; ambiguous sequences are dropped. Sequences
//! split deterministically into train / optimize / test subsets by hashed
//! scenario id. The online loop classifies every active hypothesis per step
//! and asks the trigger whether to commit; availability, earliness and
//! accuracy summarize the outcomes.
//!
//! Trigger evaluation during optimization runs over precomputed probability
//! traces: the classifier output per (sequence, hypothesis, step) does not
//! depend on the trigger, so one trace serves every candidate parameter
//! vector. `run_sequence_online` is the reference step-by-step loop; the
//! trace path is tested to agree with it exactly.

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_proba, BoostParams, BoostedModel, SeriesStats, TrainingRow, TrainingSet};
use crate::error::{Error, Result};
use crate::mmq::{Channel, MmqFrame, MmqScorer, MmqSeries};
use crate::moo::{
    self, cost_accuracy, cost_availability, cost_earliness, CostPoint, NsgaConfig, ParetoFront,
    SequenceOutcome,
};
use crate::sim::{generate_scenario, MarkingRole, ScenarioConfig, SequenceRecord};
use crate::tracker::{generate_hypotheses, FilterParams, Hypothesis};
use crate::trigger::{self, sort_probs, TriggerParams, TriggerVariant, DEFAULT_HORIZON};
use crate::util::{fnv1a, splitmix64};

/// Ambiguity threshold for the singular-closest labeling rule, meters.
pub const LABEL_AMBIGUITY_EPS: f64 = 1e-6;

/// Default chi-square probability for score normalization.
pub const CHI2_PROBABILITY: f64 = 0.95;

/// Maximum hypotheses tracked per sequence.
pub const MAX_HYPOTHESES: usize = 6;

/// Training prefixes are sampled every this many frames (0.5 s at 40 Hz).
pub const TRAINING_STRIDE: usize = 20;

/// One tracked hypothesis over a sequence: its score series and the global
/// lateral position it implies at each frame while active.
#[derive(Debug, Clone)]
pub struct HypothesisRun {
    pub id: u32,
    pub lane_index: usize,
    pub mmq: MmqSeries,
    pub global_lateral: Vec<f64>,
}

/// A sequence with per-hypothesis score series and truth labels. Invalid
/// sequences (ambiguous ground truth) are excluded from every dataset.
#[derive(Debug, Clone)]
pub struct LabeledSequence {
    pub scenario_id: u64,
    pub length: usize,
    pub hypotheses: Vec<LabeledHypothesis>,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct LabeledHypothesis {
    pub id: u32,
    pub lane_index: usize,
    pub label: bool,
    pub mmq: MmqSeries,
}

/// Output of the online loop for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub hypothesis_id: Option<u32>,
    pub t_star: Option<usize>,
}

impl Prediction {
    pub fn none() -> Prediction {
        Prediction { hypothesis_id: None, t_star: None }
    }
}

// --- score series ------------------------------------------------------------

/// Run the tracker over a sequence and emit per-hypothesis score series:
/// predict, associate, score each channel, then update, frame by frame.
/// Deactivated hypotheses stop emitting.
pub fn build_mmq_series(
    seq: &SequenceRecord,
    max_hypotheses: usize,
    params: &FilterParams,
    scorer: &MmqScorer,
) -> Result<Vec<HypothesisRun>> {
    let dt = seq.config.dt();
    let first = seq
        .frames
        .first()
        .ok_or_else(|| Error::Data(format!("scenario {} has no frames", seq.scenario_id)))?;
    let hypotheses = generate_hypotheses(first.gnss, &seq.map, max_hypotheses, params);

    let mut runs: Vec<HypothesisRun> = hypotheses
        .iter()
        .map(|h| HypothesisRun {
            id: h.id,
            lane_index: h.lane_index,
            mmq: Vec::new(),
            global_lateral: Vec::new(),
        })
        .collect();
    let mut states: Vec<Option<Hypothesis>> = hypotheses.into_iter().map(Some).collect();

    let mut station = first.gnss.0;
    for (t, frame) in seq.frames.iter().enumerate() {
        if t > 0 {
            station += seq.frames[t - 1].odometry.0 * dt;
        }
        for (run, slot) in runs.iter_mut().zip(states.iter_mut()) {
            let Some(h) = slot.take() else { continue };
            let h = if t > 0 { h.predict(seq.frames[t - 1].odometry, dt, params)? } else { h };
            let h = h.deactivate_if_off_map(&seq.map, station);
            if !h.active {
                continue; // slot stays empty; the series ends here
            }

            let mut mmq_frame = MmqFrame::empty(t);
            let associations = h.associate(frame, &seq.map, station, params)?;
            for assoc in &associations {
                let channel = match assoc.role {
                    MarkingRole::EgoLeft => Channel::EgoLeftGeometry,
                    MarkingRole::EgoRight => Channel::EgoRightGeometry,
                    MarkingRole::AdjacentLeft => Channel::AdjacentLeftGeometry,
                    MarkingRole::AdjacentRight => Channel::AdjacentRightGeometry,
                };
                let nis = crate::mmq::nis_diagonal(&assoc.residuals, &assoc.innovation_var);
                mmq_frame.channels[channel.index()] =
                    scorer.score(nis, assoc.outlier_count, assoc.dof);
            }
            for role in MarkingRole::ALL {
                let type_channel = match role {
                    MarkingRole::EgoLeft => Channel::EgoLeftType,
                    MarkingRole::EgoRight => Channel::EgoRightType,
                    MarkingRole::AdjacentLeft => Channel::AdjacentLeftType,
                    MarkingRole::AdjacentRight => Channel::AdjacentRightType,
                };
                let Some(obs) = &frame.perceived[role.index()] else { continue };
                let Some(boundary_idx) = seq.map.boundary_index(h.lane_index, role) else {
                    continue; // no map type to compare against
                };
                let expected = seq.map.boundary_types[boundary_idx];
                // Same pseudo-NIS as `type_pseudo_nis`, using the scorer's
                // cached quantum instead of re-inverting the CDF per frame.
                let mismatches = usize::from(obs.marking_type != expected);
                let pseudo_nis = mismatches as f64 * scorer.penalty_quantum();
                mmq_frame.channels[type_channel.index()] = scorer.score(pseudo_nis, 0, 1);
            }

            let h = h.update(&associations, params)?;
            run.mmq.push(mmq_frame);
            run.global_lateral.push(h.global_lateral(&seq.map, station));
            *slot = Some(h);
        }
    }
    Ok(runs)
}

// --- labeling ----------------------------------------------------------------

/// Core of the annotation rule, over plain lateral traces. Returns the id of
/// the hypothesis that is the singular closest to the truth at every frame
/// where any hypothesis is active, or `None` (invalid) when a frame has a
/// closest-place tie or no hypothesis wins every such frame. Frames past the
/// point where every hypothesis has deactivated carry no annotation.
pub fn singular_closest_all_frames(
    truth_lateral: &[f64],
    traces: &[(u32, Vec<f64>)],
) -> Option<u32> {
    let mut winner: Option<u32> = None;
    for (t, &truth) in truth_lateral.iter().enumerate() {
        let mut best: Option<(u32, f64)> = None;
        let mut second = f64::INFINITY;
        for (id, trace) in traces {
            let Some(&lateral) = trace.get(t) else { continue };
            let dist = (lateral - truth).abs();
            match best {
                None => best = Some((*id, dist)),
                Some((_, bd)) if dist < bd => {
                    second = bd;
                    best = Some((*id, dist));
                }
                Some(_) => second = second.min(dist),
            }
        }
        let Some((id, dist)) = best else { continue };
        if second.is_finite() && (second - dist).abs() < LABEL_AMBIGUITY_EPS {
            return None;
        }
        match winner {
            None => winner = Some(id),
            Some(w) if w != id => return None,
            _ => {}
        }
    }
    winner
}

/// Apply the annotation rule to tracked hypothesis runs.
pub fn label_sequences(seq: &SequenceRecord, runs: &[HypothesisRun]) -> LabeledSequence {
    let truth: Vec<f64> = seq.truth_pose.iter().map(|p| p.lateral).collect();
    let traces: Vec<(u32, Vec<f64>)> =
        runs.iter().map(|r| (r.id, r.global_lateral.clone())).collect();
    let winner = singular_closest_all_frames(&truth, &traces);
    LabeledSequence {
        scenario_id: seq.scenario_id,
        length: seq.frames.len(),
        hypotheses: runs
            .iter()
            .map(|r| LabeledHypothesis {
                id: r.id,
                lane_index: r.lane_index,
                label: winner == Some(r.id),
                mmq: r.mmq.clone(),
            })
            .collect(),
        valid: winner.is_some(),
    }
}

/// Simulate, track and label one scenario.
pub fn label_scenario(
    config: &ScenarioConfig,
    scenario_id: u64,
    params: &FilterParams,
    scorer: &MmqScorer,
) -> Result<LabeledSequence> {
    let record = generate_scenario(config, scenario_id)?;
    let runs = build_mmq_series(&record, MAX_HYPOTHESES, params, scorer)?;
    Ok(label_sequences(&record, &runs))
}

// --- dataset split -----------------------------------------------------------

/// Split ratios for train / optimize / test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub opt: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.49, opt: 0.33, test: 0.18 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitBucket {
    Train,
    Opt,
    Test,
}

/// Deterministic three-way partition of scenario ids: ids are ranked by a
/// stable hash and the ranking is cut at the ratio boundaries, so subset
/// sizes are exact up to rounding and the assignment never changes between
/// runs.
pub fn split_dataset(ids: &[u64], ratios: &SplitRatios) -> Result<Vec<SplitBucket>> {
    if ids.len() < 10 {
        return Err(Error::Data(format!("need at least 10 sequences to split, got {}", ids.len())));
    }
    let sum = ratios.train + ratios.opt + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train <= 0.0 || ratios.opt <= 0.0 || ratios.test <= 0.0 {
        return Err(Error::Data("split ratios must be positive and sum to 1".into()));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (fnv1a(&ids[i].to_le_bytes()), ids[i]));
    let n = ids.len() as f64;
    let n_train = (n * ratios.train).round() as usize;
    let n_opt = (n * ratios.opt).round() as usize;
    let mut buckets = vec![SplitBucket::Test; ids.len()];
    for (rank, &idx) in order.iter().enumerate() {
        buckets[idx] = if rank < n_train {
            SplitBucket::Train
        } else if rank < n_train + n_opt {
            SplitBucket::Opt
        } else {
            SplitBucket::Test
        };
    }
    Ok(buckets)
}

// --- online loop -------------------------------------------------------------

/// The step-by-step online loop: at each t, classify every active hypothesis
/// on its prefix, sort, and ask the trigger. Strictly causal; returns the
/// first firing step, or no prediction if the trigger never fires (or every
/// hypothesis deactivates).
pub fn run_sequence_online(
    ls: &LabeledSequence,
    model: &BoostedModel,
    params: &TriggerParams,
) -> Result<Prediction> {
    let stats: Vec<(u32, SeriesStats)> =
        ls.hypotheses.iter().map(|h| (h.id, SeriesStats::new(&h.mmq))).collect();
    for t in 1..=ls.length {
        let mut probs = Vec::with_capacity(stats.len());
        for (id, s) in &stats {
            if s.len() >= t {
                probs.push((*id, predict_proba(model, &s.features(t)?)?));
            }
        }
        let Some(sp) = sort_probs(&probs, t) else {
            return Ok(Prediction::none()); // every hypothesis deactivated
        };
        if trigger::evaluate(params, &sp) {
            return Ok(Prediction { hypothesis_id: Some(sp.argmax_id), t_star: Some(t) });
        }
    }
    Ok(Prediction::none())
}

// --- probability traces ------------------------------------------------------

/// Sorted probabilities at one step, plus whether the arg-max hypothesis is
/// the labeled-true one.
#[derive(Debug, Clone, Copy)]
pub struct TraceStep {
    pub p_prime: f64,
    pub p_second: f64,
    pub argmax_id: u32,
    pub argmax_is_true: bool,
}

/// Classifier output over a whole sequence; trigger-independent.
#[derive(Debug, Clone)]
pub struct SequenceTrace {
    pub scenario_id: u64,
    pub length: usize,
    pub steps: Vec<TraceStep>,
}

/// Traces for a set of sequences against a fixed model.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub traces: Vec<SequenceTrace>,
}

impl TraceSet {
    pub fn build(sequences: &[&LabeledSequence], model: &BoostedModel) -> Result<TraceSet> {
        let traces = sequences
            .iter()
            .map(|ls| {
                let stats: Vec<(u32, bool, SeriesStats)> = ls
                    .hypotheses
                    .iter()
                    .map(|h| (h.id, h.label, SeriesStats::new(&h.mmq)))
                    .collect();
                let mut steps = Vec::with_capacity(ls.length);
                for t in 1..=ls.length {
                    let mut probs = Vec::with_capacity(stats.len());
                    for (id, _, s) in &stats {
                        if s.len() >= t {
                            probs.push((*id, predict_proba(model, &s.features(t)?)?));
                        }
                    }
                    let Some(sp) = sort_probs(&probs, t) else { break };
                    let argmax_is_true =
                        stats.iter().any(|(id, label, _)| *id == sp.argmax_id && *label);
                    steps.push(TraceStep {
                        p_prime: sp.p_prime,
                        p_second: sp.p_second,
                        argmax_id: sp.argmax_id,
                        argmax_is_true,
                    });
                }
                Ok(SequenceTrace { scenario_id: ls.scenario_id, length: ls.length, steps })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceSet { traces })
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

/// First firing step of a trigger over one trace.
fn scan_trace(trace: &SequenceTrace, params: &TriggerParams) -> Option<(usize, bool)> {
    for (i, step) in trace.steps.iter().enumerate() {
        let sp = trigger::SortedProbs {
            p_prime: step.p_prime,
            p_second: step.p_second,
            argmax_id: step.argmax_id,
            t: i + 1,
        };
        if trigger::evaluate(params, &sp) {
            return Some((i + 1, step.argmax_is_true));
        }
    }
    None
}

/// Outcomes of a trigger over every sequence in a trace set.
pub fn trace_outcomes(traces: &TraceSet, params: &TriggerParams) -> Vec<SequenceOutcome> {
    traces
        .traces
        .iter()
        .map(|trace| SequenceOutcome { decision: scan_trace(trace, params), length: trace.length })
        .collect()
}

/// Availability, accuracy and earliness costs of one parameter vector over a
/// trace set. Pure: repeated calls give identical results.
pub fn evaluate_gamma(params: &TriggerParams, traces: &TraceSet) -> Result<CostPoint> {
    let outcomes = trace_outcomes(traces, params);
    Ok(CostPoint {
        c_av: cost_availability(&outcomes)?,
        c_ac: cost_accuracy(&outcomes)?,
        c_ea: cost_earliness(&outcomes)?,
        params: params.clone(),
    })
}

// --- training ----------------------------------------------------------------

/// Sample labeled prefixes from sequences at a fixed stride, starting from
/// the one-frame prefix so the model also learns what short, data-poor
/// prefixes look like.
pub fn training_rows(sequences: &[&LabeledSequence], stride: usize) -> TrainingSet {
    let mut rows = Vec::new();
    for ls in sequences {
        for hyp in &ls.hypotheses {
            let stats = SeriesStats::new(&hyp.mmq);
            let mut t = 1;
            while t <= stats.len() {
                rows.push(TrainingRow {
                    features: stats.features(t).expect("t within prefix"),
                    label: hyp.label,
                });
                t += stride;
            }
        }
    }
    TrainingSet { rows }
}

// --- metrics -----------------------------------------------------------------

/// Per-sequence prediction log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scenario_id: u64,
    pub prediction: Prediction,
    pub correct: Option<bool>,
}

/// Availability / earliness / accuracy of one trigger over a trace set, with
/// the raw per-sequence log.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Mean decision time over predicted sequences, in seconds.
    pub earliness_s: f64,
    /// Fraction of sequences with a prediction.
    pub availability: f64,
    /// Fraction correct among predicted; vacuously 1 when nothing predicted.
    pub accuracy: f64,
    pub accuracy_vacuous: bool,
    pub records: Vec<PredictionRecord>,
}

pub fn evaluate(traces: &TraceSet, params: &TriggerParams, sample_rate_hz: f64) -> Result<Evaluation> {
    if traces.is_empty() {
        return Err(Error::Data("evaluation over an empty trace set".into()));
    }
    let mut records = Vec::with_capacity(traces.traces.len());
    for trace in &traces.traces {
        let record = match scan_trace(trace, params) {
            Some((t_star, correct)) => PredictionRecord {
                scenario_id: trace.scenario_id,
                prediction: Prediction {
                    hypothesis_id: Some(trace.steps[t_star - 1].argmax_id),
                    t_star: Some(t_star),
                },
                correct: Some(correct),
            },
            None => PredictionRecord {
                scenario_id: trace.scenario_id,
                prediction: Prediction::none(),
                correct: None,
            },
        };
        records.push(record);
    }
    let total = records.len();
    let predicted: Vec<&PredictionRecord> =
        records.iter().filter(|r| r.prediction.t_star.is_some()).collect();
    let availability = predicted.len() as f64 / total as f64;
    let (earliness_s, accuracy, vacuous) = if predicted.is_empty() {
        (0.0, 1.0, true)
    } else {
        let mean_t = predicted.iter().map(|r| r.prediction.t_star.unwrap() as f64).sum::<f64>()
            / predicted.len() as f64;
        let correct = predicted.iter().filter(|r| r.correct == Some(true)).count();
        (mean_t / sample_rate_hz, correct as f64 / predicted.len() as f64, false)
    };
    Ok(Evaluation { earliness_s, availability, accuracy, accuracy_vacuous: vacuous, records })
}

// --- optimization and comparison ----------------------------------------------

/// Tune one trigger variant on a trace set with NSGA-II; returns its Pareto
/// front in cost space.
pub fn optimize_variant(
    variant: TriggerVariant,
    traces: &TraceSet,
    nsga: &NsgaConfig,
) -> Result<ParetoFront> {
    let outcome = moo::nsga2(nsga, variant.gene_count(), |genes| {
        let params =
            TriggerParams { variant, gamma: genes.to_vec(), horizon: DEFAULT_HORIZON };
        let point = evaluate_gamma(&params, traces).expect("nonempty trace set");
        (point.c_av, point.c_ac)
    })?;
    let points = outcome
        .front
        .iter()
        .map(|ind| {
            let params =
                TriggerParams { variant, gamma: ind.genes.clone(), horizon: DEFAULT_HORIZON };
            evaluate_gamma(&params, traces)
        })
        .collect::<Result<Vec<_>>>()?;
    let hv = moo::hypervolume(&points.iter().map(|p| (p.c_av, p.c_ac)).collect::<Vec<_>>())?;
    Ok(ParetoFront { points, reference: (1.0, 1.0), hypervolume: hv })
}

/// One row of the method-comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub earliness_s: f64,
    pub availability: f64,
    pub accuracy: f64,
    /// Hypervolume of the optimization-set Pareto front.
    pub hypervolume: f64,
    /// The same front re-evaluated on the test set.
    pub hypervolume_test: f64,
    pub gamma: Vec<f64>,
    pub horizon: usize,
}

/// The method-comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub sequences_total: usize,
    pub sequences_valid: usize,
    pub rows: Vec<MethodRow>,
}

/// One row of the trigger-vs-no-trigger curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub no_trigger_accuracy: f64,
    pub cumulative_trigger_fraction: f64,
}

/// Accuracy of forcing an arg-max prediction at every time step, over all
/// sequences still alive at that step.
pub fn no_trigger_curve(traces: &TraceSet) -> Vec<(usize, f64)> {
    let max_len = traces.traces.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    (1..=max_len)
        .map(|t| {
            let mut alive = 0usize;
            let mut correct = 0usize;
            for trace in &traces.traces {
                if let Some(step) = trace.steps.get(t - 1) {
                    alive += 1;
                    if step.argmax_is_true {
                        correct += 1;
                    }
                }
            }
            (t, if alive == 0 { 0.0 } else { correct as f64 / alive as f64 })
        })
        .collect()
}

/// Everything the comparison produces.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
    pub fronts: Vec<(TriggerVariant, ParetoFront)>,
}

/// For each trigger variant: optimize on the optimization subset, pick the
/// operating point, evaluate on the test subset. The no-trigger arg-max
/// accuracy curve and the cumulative fraction of s4 decisions run over all
/// valid sequences.
#[allow(clippy::too_many_arguments)]
pub fn compare_methods(
    opt_traces: &TraceSet,
    test_traces: &TraceSet,
    all_traces: &TraceSet,
    nsga: &NsgaConfig,
    seed: u64,
    sequences_total: usize,
    sequences_valid: usize,
    sample_rate_hz: f64,
) -> Result<Comparison> {
    let mut rows = Vec::new();
    let mut fronts = Vec::new();
    let mut s4_records: Vec<PredictionRecord> = Vec::new();
    for (k, variant) in TriggerVariant::ALL.iter().copied().enumerate() {
        let nsga_variant = NsgaConfig { seed: splitmix64(seed ^ (k as u64 + 1)), ..nsga.clone() };
        let front = optimize_variant(variant, opt_traces, &nsga_variant)?;
        let selected = moo::select_operating_point(&front)?.params.clone();
        let test_points = front
            .points
            .iter()
            .map(|p| evaluate_gamma(&p.params, test_traces).map(|cp| (cp.c_av, cp.c_ac)))
            .collect::<Result<Vec<_>>>()?;
        let hypervolume_test = moo::hypervolume_clipped(&test_points);
        let eval = evaluate(test_traces, &selected, sample_rate_hz)?;
        if variant == TriggerVariant::S4 {
            s4_records = evaluate(all_traces, &selected, sample_rate_hz)?.records;
        }
        rows.push(MethodRow {
            method: variant.name().to_string(),
            earliness_s: eval.earliness_s,
            availability: eval.availability,
            accuracy: eval.accuracy,
            hypervolume: front.hypervolume,
            hypervolume_test,
            gamma: selected.gamma.clone(),
            horizon: selected.horizon,
        });
        fronts.push((variant, front));
    }

    let total = all_traces.traces.len().max(1);
    let curve = no_trigger_curve(all_traces)
        .into_iter()
        .map(|(t, acc)| {
            let fired = s4_records
                .iter()
                .filter(|r| r.prediction.t_star.is_some_and(|ts| ts <= t))
                .count();
            CurvePoint {
                t,
                no_trigger_accuracy: acc,
                cumulative_trigger_fraction: fired as f64 / total as f64,
            }
        })
        .collect();

    Ok(Comparison {
        report: EvalReport { seed, sequences_total, sequences_valid, rows },
        curve,
        fronts,
    })
}

// --- end-to-end benchmark ----------------------------------------------------

/// Knobs for the full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub scenario_count: u64,
    pub boost: BoostParams,
    pub nsga: NsgaConfig,
    pub ratios: SplitRatios,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenario: ScenarioConfig::default(),
            scenario_count: 300,
            boost: BoostParams::default(),
            nsga: NsgaConfig::default(),
            ratios: SplitRatios::default(),
        }
    }
}

/// Full pipeline output.
#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
    pub fronts: Vec<(TriggerVariant, ParetoFront)>,
    pub model: BoostedModel,
}

/// Label every scenario of a generated dataset.
pub fn label_dataset(config: &ScenarioConfig, count: u64) -> Result<Vec<LabeledSequence>> {
    let params = FilterParams::from_scenario(config);
    let scorer = MmqScorer::new(CHI2_PROBABILITY, 10)?;
    (0..count).map(|id| label_scenario(config, id, &params, &scorer)).collect()
}

/// Train a model on the given sequences.
pub fn train_on(sequences: &[&LabeledSequence], boost: &BoostParams) -> Result<BoostedModel> {
    crate::classifier::fit(&training_rows(sequences, TRAINING_STRIDE), boost)
}

/// Simulate, label, split, train, optimize all four variants and evaluate:
/// the whole pipeline from one master seed.
pub fn run_benchmark(config: &PipelineConfig) -> Result<BenchmarkOutput> {
    let labeled = label_dataset(&config.scenario, config.scenario_count)?;
    let valid: Vec<&LabeledSequence> = labeled.iter().filter(|l| l.valid).collect();
    if valid.len() < 10 {
        return Err(Error::Data(format!("only {} valid sequences", valid.len())));
    }
    let ids: Vec<u64> = valid.iter().map(|l| l.scenario_id).collect();
    let buckets = split_dataset(&ids, &config.ratios)?;
    let subset = |bucket: SplitBucket| -> Vec<&LabeledSequence> {
        valid.iter().zip(&buckets).filter(|(_, b)| **b == bucket).map(|(l, _)| *l).collect()
    };

    let model = train_on(&subset(SplitBucket::Train), &config.boost)?;
    let opt_traces = TraceSet::build(&subset(SplitBucket::Opt), &model)?;
    let test_traces = TraceSet::build(&subset(SplitBucket::Test), &model)?;
    let all_traces = TraceSet::build(&valid, &model)?;

    let comparison = compare_methods(
        &opt_traces,
        &test_traces,
        &all_traces,
        &config.nsga,
        config.scenario.seed,
        labeled.len(),
        valid.len(),
        config.scenario.sample_rate_hz as f64,
    )?;
    Ok(BenchmarkOutput {
        report: comparison.report,
        curve: comparison.curve,
        fronts: comparison.fronts,
        model: model.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate_scenario;

    fn noise_free_config(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            point_noise_sigma: 0.0,
            type_confusion_prob: 0.0,
            gnss_bias_range: 0.0,
            gnss_noise_sigma: 0.0,
            missing_prob: 0.0,
            seed,
            ..ScenarioConfig::default()
        }
    }

    fn scorer() -> MmqScorer {
        MmqScorer::new(CHI2_PROBABILITY, 10).unwrap()
    }

    #[test]
    fn zero_noise_true_hypothesis_scores_at_the_cap() {
        let config = noise_free_config(3);
        let record = generate_scenario(&config, 0).unwrap();
        let params = FilterParams::from_scenario(&config);
        let runs = build_mmq_series(&record, MAX_HYPOTHESES, &params, &scorer()).unwrap();
        let true_run = runs
            .iter()
            .find(|r| r.lane_index == record.truth_lane)
            .expect("one hypothesis per lane covers the truth");
        assert_eq!(true_run.mmq.len(), record.frames.len());
        for frame in &true_run.mmq {
            for channel in [Channel::EgoLeftGeometry, Channel::EgoRightGeometry] {
                assert_eq!(frame.channels[channel.index()], Some(crate::mmq::MMQ_CAP));
            }
        }
        for (lat, pose) in true_run.global_lateral.iter().zip(&record.truth_pose) {
            assert!((lat - pose.lateral).abs() < 1e-9);
        }
    }

    #[test]
    fn type_scoring_matches_the_pseudo_nis_operation() {
        let s = scorer();
        for (observed, expected) in [(1u8, 1u8), (1, 2)] {
            let (pseudo, dof) =
                crate::mmq::type_pseudo_nis(&[observed], &[expected], s.probability()).unwrap();
            let via_op = s.score(pseudo, 0, dof).unwrap();
            let mismatches = usize::from(observed != expected);
            let via_cache = s.score(mismatches as f64 * s.penalty_quantum(), 0, 1).unwrap();
            assert!((via_op - via_cache).abs() < 1e-12);
        }
    }

    #[test]
    fn deactivated_hypothesis_series_stops_at_the_deactivation_frame() {
        let config = noise_free_config(5);
        let mut record = generate_scenario(&config, 0).unwrap();
        // Shrink the map so the shared station leaves it mid-sequence.
        let cutoff_frame = 400usize;
        record.map.map_extent = record.truth_pose[cutoff_frame].station;
        let params = FilterParams::from_scenario(&config);
        let runs = build_mmq_series(&record, MAX_HYPOTHESES, &params, &scorer()).unwrap();
        for run in &runs {
            assert!(run.mmq.len() <= cutoff_frame + 1);
            assert!(run.mmq.len() >= cutoff_frame - 1);
        }
    }

    #[test]
    fn labeling_picks_the_all_frames_singular_closest() {
        let truth = vec![0.0; 100];
        let traces =
            vec![(0u32, vec![0.05; 100]), (1u32, vec![3.5; 100]), (2u32, vec![-3.5; 100])];
        assert_eq!(singular_closest_all_frames(&truth, &traces), Some(0));
    }

    #[test]
    fn equidistant_frame_invalidates_the_sequence() {
        let truth = vec![0.0; 10];
        let traces = vec![(0u32, vec![1.0; 10]), (1u32, vec![-1.0; 10])];
        assert_eq!(singular_closest_all_frames(&truth, &traces), None);
    }

    #[test]
    fn winner_must_hold_every_frame() {
        let truth = vec![0.0; 10];
        let mut near = vec![0.1; 10];
        near[7] = 5.0; // loses frame 7
        let traces = vec![(0u32, near), (1u32, vec![1.0; 10])];
        assert_eq!(singular_closest_all_frames(&truth, &traces), None);
    }

    #[test]
    fn second_place_ties_do_not_invalidate() {
        let truth = vec![0.0; 10];
        let traces = vec![(0u32, vec![0.0; 10]), (1u32, vec![3.5; 10]), (2u32, vec![-3.5; 10])];
        assert_eq!(singular_closest_all_frames(&truth, &traces), Some(0));
    }

    #[test]
    fn pipeline_labels_are_valid_and_single_true_on_default_noise() {
        let config = ScenarioConfig { seed: 7, ..ScenarioConfig::default() };
        let labeled = label_dataset(&config, 12).unwrap();
        let mut valid_count = 0;
        for ls in &labeled {
            if ls.valid {
                valid_count += 1;
                assert_eq!(ls.hypotheses.iter().filter(|h| h.label).count(), 1);
            } else {
                assert!(ls.hypotheses.iter().all(|h| !h.label));
            }
        }
        assert!(valid_count >= 10, "only {valid_count} of 12 valid");
    }

    #[test]
    fn split_is_deterministic_disjoint_and_sized() {
        let ids: Vec<u64> = (0..100).collect();
        let ratios = SplitRatios::default();
        let a = split_dataset(&ids, &ratios).unwrap();
        let b = split_dataset(&ids, &ratios).unwrap();
        assert_eq!(a, b);
        let count = |bucket: SplitBucket| a.iter().filter(|&&x| x == bucket).count();
        let (tr, op, te) =
            (count(SplitBucket::Train), count(SplitBucket::Opt), count(SplitBucket::Test));
        assert_eq!(tr + op + te, 100);
        assert!((tr as i64 - 49).abs() <= 1, "train {tr}");
        assert!((op as i64 - 33).abs() <= 1, "opt {op}");
        assert!((te as i64 - 18).abs() <= 1, "test {te}");
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        let ids: Vec<u64> = (0..9).collect();
        assert!(split_dataset(&ids, &SplitRatios::default()).is_err());
    }
}
