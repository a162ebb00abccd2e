use std::fs;

use dampsite::io::{bundled, emit_results, parse_case, parse_case_str, Summary, CONDITIONAL_FILE, HISTOGRAM_FILE, SUMMARY_FILE};
use dampsite::siting::{chance_constrained_site, SitingOptions};

fn run(name: &str, candidates: Option<&[usize]>) -> dampsite::SitingResult {
    let case = bundled::case(name).unwrap();
    let dist = bundled::disturbances(name).unwrap();
    let cands = candidates.map(<[usize]>::to_vec).unwrap_or_else(|| case.candidate_buses.clone());
    chance_constrained_site(&case, &cands, &dist, &case.wind, 500, 1, &SitingOptions::default()).unwrap()
}

#[test]
fn summary_survives_a_round_trip() {
    let r = run("two-area", None);
    let dir = tempfile::tempdir().unwrap();
    emit_results(&r, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    let parsed = Summary::parse(&text).unwrap();
    assert_eq!(parsed, Summary::from_result(&r));
    assert_eq!(parsed.to_toml(), text);
}

#[test]
fn conditional_rows_sum_to_one() {
    let r = run("three-machine", None);
    let dir = tempfile::tempdir().unwrap();
    emit_results(&r, dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join(CONDITIONAL_FILE)).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 2 + r.candidates.len());
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let sum: f64 = rec.iter().skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        rows += 1;
    }
    assert_eq!(rows, r.disturbance_ids.len());
}

#[test]
fn histograms_hold_every_sample() {
    let r = run("two-machine", None);
    let dir = tempfile::tempdir().unwrap();
    emit_results(&r, dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join(HISTOGRAM_FILE)).unwrap();
    let mut total = 0u64;
    for rec in reader.records() {
        total += rec.unwrap()[5].parse::<u64>().unwrap();
    }
    let groups = (r.disturbance_ids.len() * r.candidates.len()) as u64;
    assert_eq!(total, groups * r.samples as u64);
}

#[test]
fn single_candidate_always_wins() {
    let r = run("two-area", Some(&[3]));
    assert_eq!(r.phi, vec![1.0]);
    assert_eq!(r.winner, 3);
}

#[test]
fn bundled_files_match_their_sources() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("cases");
    for (name, file) in [("two-machine", "two_machine.toml"), ("three-machine", "three_machine.toml"), ("two-area", "two_area.toml")] {
        assert_eq!(parse_case(&root.join(file)).unwrap(), bundled::case(name).unwrap());
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = include_str!("../cases/two_machine.toml").replacen("base_mva", "bogus = 1\nbase_mva", 1);
    assert_eq!(parse_case_str(&text, "x").unwrap_err().code(), "parse");
}
