#![no_main]

use libfuzzer_sys::fuzz_target;
use stvol::config::ExperimentConfig;

fuzz_target!(|data: &str| {
    let _ = ExperimentConfig::from_toml_str(data);
});
