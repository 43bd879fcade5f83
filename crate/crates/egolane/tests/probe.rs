use egolane::harness::{run_benchmark, PipelineConfig};
use egolane::sim::ScenarioConfig;

fn probe(seed: u64, count: u64, scenario: &ScenarioConfig, tag: &str) {
    let config = PipelineConfig {
        scenario: ScenarioConfig { seed, ..scenario.clone() },
        scenario_count: count,
        ..PipelineConfig::default()
    };
    let out = run_benchmark(&config).unwrap();
    eprint!("{tag} seed {seed} valid {:3}:", out.report.sequences_valid);
    for row in &out.report.rows {
        eprint!("  {} {:6.3}s av {:.3} ac {:.3} hv {:.3} |", row.method, row.earliness_s, row.availability, row.accuracy, row.hypervolume);
    }
    let pts: Vec<String> = [1usize, 40, 120, 400, 1200]
        .iter()
        .filter_map(|&t| out.curve.get(t - 1).map(|p| format!("{:.2}", p.no_trigger_accuracy)))
        .collect();
    eprintln!(" curve {}", pts.join("/"));
}

#[test]
fn probe_benchmark() {
    for (q, miss) in [(0.1, 0.93), (0.1, 0.95)] {
        let scenario = ScenarioConfig {
            point_noise_sigma: 0.2,
            type_confusion_prob: q,
            missing_prob: miss,
            gnss_noise_sigma: 0.8,
            ..ScenarioConfig::default()
        };
        for seed in [1, 2, 3] {
            probe(seed, 300, &scenario, &format!("q={q} m={miss}"));
        }
    }
}
