//! File formats: scenario JSON-lines, model / front / report JSON, the
//! comparison curve CSV and the key-value scenario config.
//!
//! A scenario file holds one JSON object per line: a header carrying the
//! config, map and truth lane, then one line per frame with the sensor data
//! and reference pose. Floats round-trip exactly.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::BoostedModel;
use crate::error::{Error, Result};
use crate::harness::{CurvePoint, EvalReport};
use crate::moo::{CostPoint, ParetoFront};
use crate::sim::{MapModel, Pose, ScenarioConfig, SensorFrame, SequenceRecord};
use crate::trigger::TriggerVariant;

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioHeader {
    scenario_id: u64,
    config: ScenarioConfig,
    map: MapModel,
    truth_lane: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameLine {
    #[serde(flatten)]
    frame: SensorFrame,
    truth: Pose,
}

/// File name for one scenario inside a dataset directory.
pub fn scenario_file_name(scenario_id: u64) -> String {
    format!("scenario_{scenario_id:06}.jsonl")
}

/// Write one scenario as JSON-lines: header, then one frame per line.
pub fn write_scenario_jsonl(record: &SequenceRecord, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header = ScenarioHeader {
        scenario_id: record.scenario_id,
        config: record.config.clone(),
        map: record.map.clone(),
        truth_lane: record.truth_lane,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for (frame, truth) in record.frames.iter().zip(&record.truth_pose) {
        serde_json::to_writer(&mut out, &FrameLine { frame: frame.clone(), truth: *truth })?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read one scenario back from JSON-lines.
pub fn read_scenario_jsonl(path: &Path) -> Result<SequenceRecord> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty scenario file", path.display())))??;
    let header: ScenarioHeader = serde_json::from_str(&header_line)?;
    let mut frames = Vec::new();
    let mut truth_pose = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameLine = serde_json::from_str(&line)?;
        frames.push(parsed.frame);
        truth_pose.push(parsed.truth);
    }
    Ok(SequenceRecord {
        scenario_id: header.scenario_id,
        config: header.config,
        map: header.map,
        frames,
        truth_lane: header.truth_lane,
        truth_pose,
    })
}

/// All scenario files in a directory, ordered by scenario id.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<SequenceRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .jsonl scenario files in {}", dir.display())));
    }
    let mut records: Vec<SequenceRecord> =
        paths.iter().map(|p| read_scenario_jsonl(p)).collect::<Result<_>>()?;
    records.sort_by_key(|r| r.scenario_id);
    Ok(records)
}

pub fn write_model(model: &BoostedModel, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<BoostedModel> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// On-disk form of an optimized front: the evaluated points, the variant's
/// hypervolume and the selected operating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontFile {
    pub variant: TriggerVariant,
    pub points: Vec<CostPoint>,
    pub hypervolume: f64,
    pub selected_index: usize,
}

impl FrontFile {
    pub fn from_front(variant: TriggerVariant, front: &ParetoFront) -> Result<FrontFile> {
        Ok(FrontFile {
            variant,
            points: front.points.clone(),
            hypervolume: front.hypervolume,
            selected_index: crate::moo::select_operating_index(front)?,
        })
    }

    pub fn selected(&self) -> Result<&CostPoint> {
        self.points
            .get(self.selected_index)
            .ok_or_else(|| Error::Data("front selected_index out of range".into()))
    }
}

pub fn write_front(front: &FrontFile, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(front)?)?;
    Ok(())
}

pub fn read_front(path: &Path) -> Result<FrontFile> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Serialize the comparison report; the byte output is deterministic for a
/// fixed report.
pub fn report_to_bytes(report: &EvalReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report_to_bytes(report)?)?;
    Ok(())
}

/// Write the trigger-vs-no-trigger curve as CSV:
/// `t,no_trigger_accuracy,cumulative_trigger_fraction`.
pub fn write_curves_csv(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "t,no_trigger_accuracy,cumulative_trigger_fraction")?;
    for point in curve {
        writeln!(out, "{},{},{}", point.t, point.no_trigger_accuracy, point.cumulative_trigger_fraction)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse the key-value scenario config format: one `key = value` per line,
/// `#` comments, keys mirroring the config fields. Unknown keys are errors.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = |field: &'static str| -> Result<f64> {
            value.parse::<f64>().map_err(|_| Error::config(field, format!("bad float `{value}`")))
        };
        match key {
            "num_lanes" => {
                config.num_lanes = value
                    .parse()
                    .map_err(|_| Error::config("num_lanes", format!("bad integer `{value}`")))?
            }
            "lane_width" => config.lane_width = parse_f64("lane_width")?,
            "duration_s" => config.duration_s = parse_f64("duration_s")?,
            "sample_rate_hz" => {
                config.sample_rate_hz = value
                    .parse()
                    .map_err(|_| Error::config("sample_rate_hz", format!("bad integer `{value}`")))?
            }
            "point_noise_sigma" => config.point_noise_sigma = parse_f64("point_noise_sigma")?,
            "type_confusion_prob" => config.type_confusion_prob = parse_f64("type_confusion_prob")?,
            "gnss_bias_range" => config.gnss_bias_range = parse_f64("gnss_bias_range")?,
            "gnss_noise_sigma" => config.gnss_noise_sigma = parse_f64("gnss_noise_sigma")?,
            "missing_prob" => config.missing_prob = parse_f64("missing_prob")?,
            "seed" => {
                config.seed = value
                    .parse()
                    .map_err(|_| Error::config("seed", format!("bad integer `{value}`")))?
            }
            other => return Err(Error::Data(format!("unknown config key `{other}`"))),
        }
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate_scenario;

    #[test]
    fn scenario_round_trips_bit_exactly() {
        let config = ScenarioConfig { seed: 31, ..ScenarioConfig::default() };
        let record = generate_scenario(&config, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(scenario_file_name(record.scenario_id));
        write_scenario_jsonl(&record, &path).unwrap();
        let back = read_scenario_jsonl(&path).unwrap();
        assert_eq!(back, record);

        // Writing the same record twice produces identical bytes.
        let path2 = dir.path().join("again.jsonl");
        write_scenario_jsonl(&record, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn dataset_dir_reads_in_scenario_order() {
        let config = ScenarioConfig { seed: 8, ..ScenarioConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        for id in [3u64, 1, 2] {
            let record = generate_scenario(&config, id).unwrap();
            write_scenario_jsonl(&record, &dir.path().join(scenario_file_name(id))).unwrap();
        }
        let records = read_dataset_dir(dir.path()).unwrap();
        let ids: Vec<u64> = records.iter().map(|r| r.scenario_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn config_parser_round_trip_and_errors() {
        let text = "\
# benchmark setup
num_lanes = 6
lane_width = 3.75
duration_s = 30
sample_rate_hz = 40
point_noise_sigma = 0.2
type_confusion_prob = 0.1
gnss_bias_range = 4.0
gnss_noise_sigma = 0.5
missing_prob = 0.2
seed = 99
";
        let config = parse_scenario_config(text).unwrap();
        assert_eq!(config.num_lanes, 6);
        assert_eq!(config.lane_width, 3.75);
        assert_eq!(config.seed, 99);

        assert!(parse_scenario_config("bogus_key = 1").is_err());
        assert!(parse_scenario_config("num_lanes = twelve").is_err());
        assert!(parse_scenario_config("num_lanes = 12").is_err()); // out of range
    }

    #[test]
    fn empty_directory_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset_dir(dir.path()), Err(Error::Data(_))));
    }
}
