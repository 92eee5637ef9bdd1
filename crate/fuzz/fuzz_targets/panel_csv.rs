#![no_main]

use libfuzzer_sys::fuzz_target;
use stvol::panel::parse_wide_csv;

fuzz_target!(|data: &[u8]| {
    // A panel that parses must survive a write/parse round trip.
    if let Ok(panel) = parse_wide_csv(data) {
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).expect("write parsed panel");
        let again = parse_wide_csv(buf.as_slice()).expect("reparse written panel");
        assert_eq!(again.tickers(), panel.tickers());
        assert_eq!(again.dates(), panel.dates());
        assert_eq!(again.t(), panel.t());
    }
});
