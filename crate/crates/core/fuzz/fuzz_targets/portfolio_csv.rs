#![no_main]

use climate_credit::io::{parse_portfolio, parse_portfolio_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if parse_portfolio_records(text).is_err() {
        return;
    }
    let groups = ["G1".to_string(), "G2".to_string()];
    let ratings = ["A", "B", "C", "D"].map(String::from);
    if let Ok(p) = parse_portfolio(text, &groups, &ratings, 3) {
        for t in 0..=3 {
            let _ = climate_credit::portfolio::herfindahl(&p, t);
        }
    }
});
