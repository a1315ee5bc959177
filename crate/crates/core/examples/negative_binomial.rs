//! Overdispersed claim counts: the negative binomial fit estimates `v` in
//! `Var = mu + v mu^2`, and falls back to Poisson when the data show none.

use autorate::design::{build_design, Formula, Observation};
use autorate::glm::{fit_family, sample_response, Family, FamilyKind, FitControl};
use autorate::ingest::{Catalog, FactorSpec, RatingFactors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(family: Family, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates = [("u1", 0.8), ("u2", 1.5), ("u3", 3.0)];
    (0..3_000)
        .map(|i| {
            let (level, rate) = rates[i % 3];
            let exposure: f64 = rng.gen_range(0.5..1.0);
            Observation {
                factors: RatingFactors::new().with("use", level),
                response: sample_response(family, rate * exposure, 1.0, 1.0, &mut rng),
                exposure,
                weight: 1.0,
            }
        })
        .collect()
}

fn main() -> autorate::Result<()> {
    let mut catalog = Catalog::new();
    catalog.insert(
        "use".into(),
        FactorSpec {
            name: "use".into(),
            levels: vec!["u1".into(), "u2".into(), "u3".into()],
            reference: "u1".into(),
            ordered: false,
        },
    );
    let formula: Formula = "count ~ use".parse()?;
    for (name, family) in [("v = 0.5", Family::NegativeBinomial { v: 0.5 }), ("Poisson", Family::Poisson)] {
        let design = build_design(&data(family, 5), &formula, &catalog)?;
        let poisson = fit_family(&design, FamilyKind::Poisson, None, &FitControl::default())?;
        let nb = fit_family(&design, FamilyKind::NegativeBinomial, None, &FitControl::default())?;
        println!("data {name}:");
        println!("  Poisson  AIC {:.1}  deviance/df {:.3}", poisson.aic(), poisson.deviance / poisson.residual_df() as f64);
        println!(
            "  NegBin   AIC {:.1}  v = {:.3}  Poisson limit: {}",
            nb.aic(),
            nb.nb_v().unwrap_or(0.0),
            nb.poisson_limit
        );
    }
    Ok(())
}
