//! The checked-in fuzz corpus must stay valid input for its parser.

use std::fs;
use std::path::PathBuf;

use nalgebra::DMatrix;
use proptest::prelude::*;
use stvol::config::{ExperimentConfig, SynthConfig};
use stvol::networks::read_weight_csv;
use stvol::panel::{parse_wide_csv, ReturnsPanel};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn panel_seeds_parse() {
    for (p, b) in seeds("panel_csv") {
        parse_wide_csv(b.as_slice()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn weight_seeds_parse() {
    for (p, b) in seeds("weight_csv") {
        read_weight_csv(b.as_slice()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn experiment_seeds_parse() {
    for (p, b) in seeds("experiment_config") {
        ExperimentConfig::from_toml_str(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn synth_seeds_parse() {
    for (p, b) in seeds("synth_config") {
        SynthConfig::from_toml_str(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

proptest! {
    #[test]
    fn panel_csv_round_trip(t in 1usize..30, n in 1usize..5, seed in any::<u64>()) {
        let mut state = seed;
        let values = DMatrix::from_fn(t, n, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let panel = ReturnsPanel::synthetic(values).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let again = parse_wide_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(again.dates(), panel.dates());
        prop_assert_eq!(again.tickers(), panel.tickers());
        prop_assert_eq!(again.values(), panel.values());
    }
}
