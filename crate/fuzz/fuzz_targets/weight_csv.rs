#![no_main]

use libfuzzer_sys::fuzz_target;
use stvol::networks::read_weight_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = read_weight_csv(data) {
        let n = w.n();
        for i in 0..n {
            assert_eq!(w.w[(i, i)], 0.0);
            let s: f64 = (0..n).map(|j| w.w[(i, j)]).sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
        }
    }
});
