#![no_main]

use libfuzzer_sys::fuzz_target;
use stvol::config::SynthConfig;

fuzz_target!(|data: &str| {
    let _ = SynthConfig::from_toml_str(data);
});
