//! Draw a synthetic portfolio from the demo generator and write it as CSV.
//!
//! `cargo run --example simulate_portfolio -- 20000 out/demo`

use std::fs::File;
use std::path::{Path, PathBuf};

use autorate::ingest::{load_schemes, take_scheme, write_claims, write_policies};
use autorate::synth::{Generator, GeneratorSpec};

fn main() -> autorate::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(20_000, |s| s.parse().expect("policy count"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/demo".into()));

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let spec = GeneratorSpec::load(&fixtures.join("demo_generator.toml"))?;
    let scheme = take_scheme(load_schemes(&fixtures.join("bands.toml"))?, &spec.scheme)?;
    let generator = Generator::new(&spec, scheme)?;

    let portfolio = generator.portfolio(n, 20_080_101)?;
    std::fs::create_dir_all(&out)?;
    write_policies(File::create(out.join("policies.csv"))?, &portfolio.policies)?;
    write_claims(File::create(out.join("claims.csv"))?, &portfolio.claims)?;

    println!(
        "{} policies, {} claims ({:.4} per policy, {:.4} expected)",
        portfolio.policies.len(),
        portfolio.claims.len(),
        portfolio.claims.len() as f64 / n.max(1) as f64,
        generator.implied_claim_mean()
    );
    for (level, p) in generator.level_distribution("region")? {
        println!("  region {level}: {p:.3}");
    }
    println!("written to {}", out.display());
    Ok(())
}
