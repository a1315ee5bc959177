//! Parse policy and claim CSVs, report rejected rows and show how raw fields
//! map to tariff levels.

use std::collections::BTreeMap;
use std::path::Path;

use autorate::ingest::{
    band_fields, band_policy, link_claims, load_schemes, parse_claims, parse_policies, take_scheme,
};

const POLICIES: &str = "\
policy_id,exposure,claim_count,class,make,model_year_offset,policy_class,region,gender,age,insured_value
1,1.0,1,camioneta,japonesa,3,individual,bogota,M,21,160
2,0.5,0,automovil,chevrolet,0,individual,antioquia,F,40,55.2
3,0.0,0,automovil,chevrolet,0,individual,antioquia,F,40,55.2
4,1.0,0,automovil,chevrolet,0,individual,atlantis,F,40,55.2
5,1.0,0,pickup_doble,otras,12,collective,eje_cafetero,M,abc,80
";

const CLAIMS: &str = "\
policy_id,amount
1,3.25
2,0
9,1.5
";

fn main() -> autorate::Result<()> {
    let bands = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bands.toml");
    let scheme = take_scheme(load_schemes(&bands)?, "tariff")?;

    let policies = parse_policies(POLICIES.as_bytes(), &scheme)?;
    println!("policies: {} read, {} accepted", policies.rows, policies.accepted.len());
    for r in &policies.rejected {
        println!("  row {}: {} ({})", r.row, r.reason, r.detail);
    }
    let claims = parse_claims(CLAIMS.as_bytes())?;
    println!("claims: {} read, {} accepted", claims.rows, claims.accepted.len());
    for r in &claims.rejected {
        println!("  row {}: {} ({})", r.row, r.reason, r.detail);
    }
    let linked = link_claims(&policies.accepted, &claims.accepted);
    println!("linked claims: {}, unmatched: {}", linked.pairs.len(), linked.rejected.len());

    for p in &policies.accepted {
        let levels = band_policy(p, &scheme)?;
        let shown: Vec<String> = levels.iter().map(|(d, l)| format!("{d}={l}")).collect();
        println!("policy {}: {}", p.policy_id, shown.join(" "));
    }

    let fields: BTreeMap<String, String> = [("age", "67"), ("insured_value", "20"), ("make", "renault")]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let levels = band_fields(&fields, &scheme)?;
    println!("raw fields {fields:?} -> {levels:?}");
    Ok(())
}
