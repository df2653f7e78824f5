#![no_main]

use climate_credit::io::MigrationTable;
use climate_credit::migration::thresholds;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((table, _)) = MigrationTable::parse_csv(text) {
        assert_eq!(table.groups.len(), table.matrices.len());
        for m in &table.matrices {
            assert_eq!(m.k(), table.ratings.len());
            let _ = thresholds(m);
        }
    }
});
