//! Compose the frequency and severity coefficient fixtures into a tariff and
//! print the factor table.

use std::path::Path;

use autorate::glm::ModelDocument;
use autorate::tariff::build_tariff;

fn main() -> autorate::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let frequency = ModelDocument::load(&fixtures.join("freq_table6.json"))?;
    let severity = ModelDocument::load(&fixtures.join("sev_table9.json"))?;
    let table = build_tariff(&frequency, &severity)?;

    println!(
        "base premium = {:.3} x {:.3} = {:.3} SMMLV\n",
        table.base_frequency, table.base_severity, table.base_premium_smmlv
    );
    print!("{}", table.render());
    for e in &table.exclusions {
        println!("{} {}: {:?} ({})", e.key, e.level, e.kind, e.reason);
    }
    Ok(())
}
