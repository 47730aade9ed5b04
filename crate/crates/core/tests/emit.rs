use timeframe::analysis::{analyze, AnalysisReport, AnalysisRequest, LambdaSpec, ModelChoice};
use timeframe::bootstrap::simulate_dataset;
use timeframe::io::{band_csv, dataset_csv, parse_reader, report_svg, to_json, Input};
use timeframe::rng::StreamSeed;
use timeframe::simulate::{builtin_scenario, SigmaLevel};
use timeframe::{BootstrapConfig, Dataset};

fn scenario_two() -> Dataset {
    let s2 = builtin_scenario(2, SigmaLevel::Small).unwrap();
    let mut rng = StreamSeed::new(2024).rng();
    simulate_dataset(&s2.model, &s2.params, s2.sigma, &s2.design, &mut rng)
}

fn report(data: &Dataset) -> AnalysisReport {
    let req = AnalysisRequest {
        model: ModelChoice::FourPll,
        lambda: LambdaSpec::Absolute(vec![0.005, 0.013]),
        band: BootstrapConfig {
            b1: 80,
            b2: 8,
            seed: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    analyze(data, &req).unwrap()
}

#[test]
fn json_round_trip_is_exact() {
    let data = scenario_two();
    let r = report(&data);
    let back: AnalysisReport = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn dataset_csv_round_trip() {
    let data = scenario_two();
    match parse_reader(dataset_csv(&data).as_bytes()).unwrap() {
        Input::Single(back) => assert_eq!(back, data),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn band_csv_has_one_row_per_grid_point() {
    let r = report(&scenario_two());
    let text = band_csv(&r.band);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,estimate,sd,lower"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), r.band.grid.len());
    for row in rows {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 4);
    }
}

#[test]
fn svg_rules_match_thresholds_and_subsets() {
    let data = scenario_two();
    let r = report(&data);
    let svg = report_svg(Some(&data), &r);
    let subsets: usize = r.thresholds.iter().map(|t| t.report.count()).sum();
    assert!(subsets > 0);
    assert_eq!(svg.matches("class=\"lambda-rule\"").count(), 2);
    assert_eq!(svg.matches("class=\"region-rule\"").count(), 2 * subsets);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}
