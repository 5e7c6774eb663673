//! Recalibrates the intercepts of the bundled DGP presets so that a period
//! carries about 5 treatment and 30 outcome events, and rewrites the files.
//!
//! cargo run --release -p stcate-core --example calibrate [PRESET...]
//!
//! Without arguments every preset is recalibrated.

use std::path::Path;

use stcate::sim::panel::calibrate_intercepts;
use stcate::sim::DgpConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let chosen: Vec<String> = std::env::args().skip(1).collect();
    for name in DgpConfig::preset_names() {
        if !chosen.is_empty() && !chosen.iter().any(|c| c == name) {
            continue;
        }
        let cfg = DgpConfig::preset(name)?;
        let cal = calibrate_intercepts(cfg, 5.0, 30.0, 600, 10, 2024)?;
        println!(
            "{name}: alpha0 = {:.4}, gamma0 = {:.4}",
            cal.treatment.alpha0, cal.outcome.gamma0
        );
        stcate::io::write_json(&dir.join(format!("{name}.json")), &cal)?;
    }
    Ok(())
}
