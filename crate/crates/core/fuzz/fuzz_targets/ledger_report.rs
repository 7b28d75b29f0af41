#![no_main]
use dpfl::mechanism::LedgerReport;
use libfuzzer_sys::fuzz_target;

// Anything that parses must survive a round trip unchanged.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = LedgerReport::from_json(text) {
            let again = LedgerReport::from_json(&report.to_json()).expect("own output parses");
            assert_eq!(report, again);
        }
    }
});
