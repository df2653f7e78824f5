#![no_main]

use climate_credit::factors::loadings_proposed;
use climate_credit::io::Scenario;
use libfuzzer_sys::fuzz_target;

// Parses a scenario and, when it carries inline matrices, resolves it all
// the way to a recovery table.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scenario) = Scenario::parse(text) else { return };
    let Ok(factors) = scenario.factor_model() else { return };
    let Ok(zeta) = scenario.macro_trajectory(&factors) else { return };
    let Some(Ok((table, _))) = scenario.inline_migration() else { return };
    let Ok(alpha) = scenario.micro_adjustments(&factors, &table) else { return };
    let _ = scenario.renewal(&table);
    let Ok(schedule) = loadings_proposed(&zeta, &alpha, &table.matrices, factors.corr(), scenario.basel3) else {
        return;
    };
    let _ = scenario.recovery_table(&table, &schedule, factors.corr());
});
