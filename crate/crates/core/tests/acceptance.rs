//! Acceptance criteria 1-12. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use autorate::design::{
    aggregate_cells, build_design, cells_to_observations, prepare_rows, DropRule, Formula, Observation, ResponseRole,
};
use autorate::diagnostics::{leverage, residuals, simulated_envelope, EnvelopeConfig, ResidualKind};
use autorate::glm::{fit_family, sample_response, Family, FamilyKind, FitControl, FittedModel, Link, ModelDocument};
use autorate::ingest::{load_schemes, take_scheme, BandingScheme, RatingFactors};
use autorate::selection::{compare_models, merge_levels, Criterion};
use autorate::special::chi_square_survival;
use autorate::synth::{Generator, GeneratorSpec};
use autorate::tariff::{build_tariff, QuoteRequest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = (bool, String);

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn scheme(name: &str) -> BandingScheme {
    take_scheme(load_schemes(&fixture("bands.toml")).unwrap(), name).unwrap()
}

fn spec() -> GeneratorSpec {
    GeneratorSpec::load(&fixture("demo_generator.toml")).unwrap()
}

fn generator() -> Generator {
    Generator::new(&spec(), scheme("tariff")).unwrap()
}

fn documents() -> (ModelDocument, ModelDocument) {
    (
        ModelDocument::load(&fixture("freq_table6.json")).unwrap(),
        ModelDocument::load(&fixture("sev_table9.json")).unwrap(),
    )
}

fn fit(rows: &[Observation], scheme: &BandingScheme, formula: &Formula, kind: FamilyKind, control: &FitControl) -> FittedModel {
    let design = build_design(rows, formula, &scheme.catalog()).unwrap();
    fit_family(&design, kind, Some(Link::Log), control).unwrap()
}

fn dims(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn close(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn c1_base_premium() -> Outcome {
    let (freq, sev) = documents();
    let table = build_tariff(&freq, &sev).unwrap();
    let printed = (-1.95f64).exp();
    let rendered = format!("{:.3}", table.base_frequency);
    let ok = close(printed, 0.143, 0.001)
        && rendered == "0.143"
        && close(table.base_frequency * table.base_severity, 0.951, 0.001)
        && close(table.base_premium_smmlv, 0.951, 0.001)
        && close(0.143 * 6.649, 0.951, 0.001);
    (
        ok,
        format!(
            "e^-1.95 = {printed:.4}, base frequency {rendered}, base severity {:.3}, base premium {:.4}",
            table.base_severity, table.base_premium_smmlv
        ),
    )
}

fn c2_table10() -> Outcome {
    let start = Instant::now();
    let (freq, sev) = documents();
    let table = build_tariff(&freq, &sev).unwrap();
    let freq_grid: [(&str, [f64; 3]); 7] = [
        ("M1", [1.195, 1.162, 0.814]),
        ("M2", [1.201, 1.000, 0.737]),
        ("M3", [1.094, 0.771, 0.703]),
        ("M4", [0.986, 0.718, 0.580]),
        ("M5", [1.004, 0.621, 0.576]),
        ("M6", [0.863, 0.547, 0.487]),
        ("M7", [0.646, 0.393, 0.346]),
    ];
    let sev_grid: [(&str, [f64; 3]); 4] = [
        ("B1", [1.000, 1.440, 1.652]),
        ("B2", [1.197, 1.513, 1.754]),
        ("B3", [1.116, 1.237, 1.066]),
        ("B5", [0.776, 1.248, 1.282]),
    ];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let mut check = |key: &str, cell: String, want: f64| {
        checked += 1;
        match table.factor(key, &cell) {
            Some(got) => {
                worst = worst.max((got - want).abs());
                if !close(got, want, 0.002) {
                    bad.push(format!("{cell}: {got:.4} vs {want}"));
                }
            }
            None => bad.push(format!("{cell}: missing")),
        }
    };
    for (m, row) in freq_grid {
        for (r, want) in ["R1", "R2", "R3"].iter().zip(row) {
            check("model:region", format!("{m}:{r}"), want);
        }
    }
    for (b, row) in sev_grid {
        for (c, want) in ["C1", "C2", "C3"].iter().zip(row) {
            check("make:class", format!("{b}:{c}"), want);
        }
    }
    for (level, want) in [("E1", 1.349), ("E2", 1.178), ("E3", 1.069), ("E4", 1.0), ("E5", 0.867), ("E6", 0.721)] {
        check("age", level.to_string(), want);
    }
    for (level, want) in [("V1", 0.605), ("V2", 0.901), ("V3", 1.0), ("V4", 1.013)] {
        check("value_sev", level.to_string(), want);
    }
    for (level, want) in [("F", 0.915), ("M", 1.0)] {
        check("gender", level.to_string(), want);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = bad.is_empty() && elapsed < 1.0;
    (
        ok,
        format!("{checked} cells (21 frequency + 12 severity joint), max |diff| {worst:.4}, {elapsed:.3}s {bad:?}"),
    )
}

fn c3_quote() -> Outcome {
    let (freq, sev) = documents();
    let table = build_tariff(&freq, &sev).unwrap();
    let factors = RatingFactors::new()
        .with("age", "E1")
        .with("model", "M5")
        .with("region", "R2")
        .with("make", "B2")
        .with("class", "C2")
        .with("value_sev", "V3")
        .with("gender", "M");
    let mut request = QuoteRequest::new(factors);
    request.conversion = Some(0.433);
    let quote = table.quote(&request).unwrap();
    let currency = quote.premium_currency.unwrap_or(f64::NAN);
    let ok = close(quote.premium_smmlv, 1.206, 0.002) && close(currency, 0.522, 0.01) && quote.mains_only.is_empty();
    (ok, format!("{} (published 1.206 / 0.522)", quote.render().replace('\n', "; ")))
}

fn c4_chi_square() -> Outcome {
    let cases = [(106.5, 100.0, 0.31), (105.9, 100.0, 0.32), (9563.6, 9761.0, 0.92), (9646.4, 9761.0, 0.79)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (x, df, want) in cases {
        let p = chi_square_survival(x, df);
        ok &= close(p, want, 0.01);
        detail.push(format!("Q({x}, {df}) = {p:.4}"));
    }
    (ok, detail.join(", "))
}

fn c5_parameter_counts() -> Outcome {
    let gen = generator();
    let tariff = scheme("tariff");
    let (freq, sev) = documents();
    let portfolio = gen.portfolio(50_000, 5).unwrap();
    let f_formula = freq.formula.clone();
    let rows = prepare_rows(
        ResponseRole::Frequency,
        &portfolio.policies,
        &[],
        &tariff,
        &[],
        &f_formula.dimensions(),
    )
    .unwrap();
    let f_model = fit(&rows, &tariff, &f_formula, FamilyKind::Poisson, &FitControl::default());
    let s_formula = sev.formula.clone();
    let claims = gen.portfolio_with_claims(10_000, 5).unwrap();
    let drops: Vec<DropRule> = sev
        .data
        .iter()
        .flat_map(|d| d.drops.iter().map(|r| r.parse().unwrap()))
        .collect();
    let s_rows = prepare_rows(
        ResponseRole::Severity,
        &claims.policies,
        &claims.claims,
        &tariff,
        &drops,
        &[],
    )
    .unwrap();
    let s_model = fit(&s_rows, &tariff, &s_formula, FamilyKind::Gamma, &FitControl::default());
    let ok = rows.len() == 126 && f_model.p() == 26 && s_model.p() == 16 && freq.coefficients.len() == 26;
    (
        ok,
        format!(
            "frequency cells {} p {}, severity p {} (n {})",
            rows.len(),
            f_model.p(),
            s_model.p(),
            s_model.n()
        ),
    )
}

fn c6_intercept_only() -> Outcome {
    let tariff = scheme("tariff");
    let formula: Formula = "count ~ 1".parse().unwrap();
    let portfolio = generator().portfolio(20_000, 6).unwrap();
    let rows = prepare_rows(ResponseRole::Frequency, &portfolio.policies, &[], &tariff, &[], &[]).unwrap();
    let model = fit(&rows, &tariff, &formula, FamilyKind::Poisson, &FitControl::default());
    let ratio = rows.iter().map(|r| r.response).sum::<f64>() / rows.iter().map(|r| r.exposure).sum::<f64>();
    let synthetic_err = (model.coefficients[0].exp() - ratio).abs();

    // portfolio totals 19682 claims over 184693 policy-years, split over two rows
    let totals = vec![
        Observation {
            factors: RatingFactors::new(),
            response: 12_000.0,
            exposure: 100_000.0,
            weight: 1.0,
        },
        Observation {
            factors: RatingFactors::new(),
            response: 7_682.0,
            exposure: 84_693.0,
            weight: 1.0,
        },
    ];
    let table3 = fit(&totals, &tariff, &formula, FamilyKind::Poisson, &FitControl::default());
    let rate = table3.coefficients[0].exp();
    let table3_err = (rate - 19_682.0 / 184_693.0).abs();
    let ok = synthetic_err <= 1e-10 && table3_err <= 1e-10 && format!("{rate:.4}") == "0.1066" && format!("{rate:.3}") == "0.107";
    (
        ok,
        format!("synthetic |e^b0 - sum y/sum e| = {synthetic_err:.1e}, portfolio rate {rate:.6} (err {table3_err:.1e})"),
    )
}

/// Share of replications in which each true coefficient lies within 3 SE.
fn coverage(hits: &[Vec<bool>], labels: &[String]) -> (f64, String) {
    let reps = hits.len() as f64;
    let mut worst = (1.0, String::new());
    for (j, label) in labels.iter().enumerate() {
        let share = hits.iter().filter(|h| h[j]).count() as f64 / reps;
        if share < worst.0 {
            worst = (share, label.clone());
        }
    }
    worst
}

fn within_three_se(model: &FittedModel, truth: &BTreeMap<String, f64>) -> Vec<bool> {
    let se = model.std_errors();
    model
        .labels()
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let beta = truth.get(label).copied().unwrap_or(0.0);
            (model.coefficients[j] - beta).abs() <= 3.0 * se[j]
        })
        .collect()
}

fn c7_recovery() -> Outcome {
    const REPS: u64 = 100;
    let spec = spec();
    let gen = generator();
    let tariff = scheme("tariff");
    let f_formula = spec.frequency.formula.clone();
    let s_formula = spec.severity.formula.clone();
    let control = FitControl::default();
    let runs: Vec<(Vec<String>, Vec<bool>, Vec<String>, Vec<bool>)> = (0..REPS)
        .into_par_iter()
        .map(|r| {
            let p = gen.portfolio(50_000, 7_000 + r).unwrap();
            let rows = prepare_rows(ResponseRole::Frequency, &p.policies, &[], &tariff, &[], &f_formula.dimensions())
                .unwrap();
            let f = fit(&rows, &tariff, &f_formula, FamilyKind::Poisson, &control);
            assert!(f.converged);
            let f_hits = within_three_se(&f, &spec.frequency.coefficients);

            let mut p = gen.portfolio_with_claims(10_000, 17_000 + r).unwrap();
            p.claims.truncate(10_000);
            let rows = prepare_rows(ResponseRole::Severity, &p.policies, &p.claims, &tariff, &[], &[]).unwrap();
            assert_eq!(rows.len(), 10_000);
            let s = fit(&rows, &tariff, &s_formula, FamilyKind::Gamma, &control);
            assert!(s.converged);
            let s_hits = within_three_se(&s, &spec.severity.coefficients);
            (f.labels().to_vec(), f_hits, s.labels().to_vec(), s_hits)
        })
        .collect();
    let f_labels = runs[0].0.clone();
    let s_labels = runs[0].2.clone();
    let same = runs.iter().all(|r| r.0 == f_labels && r.2 == s_labels);
    let f_hits: Vec<Vec<bool>> = runs.iter().map(|r| r.1.clone()).collect();
    let s_hits: Vec<Vec<bool>> = runs.iter().map(|r| r.3.clone()).collect();
    let (f_share, f_label) = coverage(&f_hits, &f_labels);
    let (s_share, s_label) = coverage(&s_hits, &s_labels);
    let ok = same && f_share >= 0.95 && s_share >= 0.95;
    (
        ok,
        format!(
            "{REPS} reps; lowest 3-SE coverage: frequency {f_share:.2} ({f_label}, {} coefs), severity {s_share:.2} ({s_label}, {} coefs)",
            f_labels.len(),
            s_labels.len()
        ),
    )
}

fn c8_aggregation() -> Outcome {
    let spec = spec();
    let tariff = scheme("tariff");
    let formula = spec.frequency.formula.clone();
    let portfolio = generator().portfolio(50_000, 8).unwrap();
    let rows = prepare_rows(ResponseRole::Frequency, &portfolio.policies, &[], &tariff, &[], &[]).unwrap();
    let cells = cells_to_observations(&aggregate_cells(&rows, &formula.dimensions()).unwrap());
    let control = FitControl {
        tolerance: 1e-14,
        ..FitControl::default()
    };
    let individual = fit(&rows, &tariff, &formula, FamilyKind::Poisson, &control);
    let aggregated = fit(&cells, &tariff, &formula, FamilyKind::Poisson, &control);
    let diff = individual
        .coefficients
        .iter()
        .zip(&aggregated.coefficients)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ok = individual.labels() == aggregated.labels() && diff <= 1e-8;
    (
        ok,
        format!("{} rows vs {} cells, max |diff| {diff:.2e}", rows.len(), cells.len()),
    )
}

fn c9_selection() -> Outcome {
    const REPS: u64 = 100;
    let gen = generator();
    let tariff = scheme("tariff");
    let raw = scheme("raw");
    let candidates: Vec<Formula> = [
        "count ~ model",
        "count ~ value_freq",
        "count ~ model + region + model:region",
        "count ~ model + age",
        "count ~ model + region + age + model:region",
        "count ~ model + region + policy_class + model:region + region:policy_class + model:policy_class + model:region:policy_class",
    ]
    .iter()
    .map(|f| f.parse().unwrap())
    .collect();
    let truth = candidates[4].to_string();
    let mut union = BTreeSet::new();
    for f in &candidates {
        union.extend(f.dimensions());
    }
    let union: Vec<String> = union.into_iter().collect();
    let planted: BTreeSet<BTreeSet<String>> = [
        vec!["antioquia"],
        vec!["bogota", "costa_atlantica", "cundinamarca_meta_tolima_huila", "santanderes_boyaca"],
        vec!["eje_cafetero", "valle_cauca_narino"],
    ]
    .iter()
    .map(|g| g.iter().map(|s| s.to_string()).collect())
    .collect();
    let merge_formula: Formula = "count ~ model + region + age".parse().unwrap();
    let control = FitControl::default();
    let runs: Vec<(bool, bool)> = (0..REPS)
        .into_par_iter()
        .map(|r| {
            let p = gen.portfolio(50_000, 9_000 + r).unwrap();
            let rows = prepare_rows(ResponseRole::Frequency, &p.policies, &[], &tariff, &[], &union).unwrap();
            let table =
                compare_models(&rows, &tariff.catalog(), FamilyKind::Poisson, None, &candidates, &control).unwrap();
            let aic_ok = table.best(Criterion::Aic).map(|row| row.formula == truth).unwrap_or(false);

            let p = gen.portfolio(200_000, 19_000 + r).unwrap();
            let rows = prepare_rows(
                ResponseRole::Frequency,
                &p.policies,
                &[],
                &raw,
                &[],
                &dims(&["model", "region", "age"]),
            )
            .unwrap();
            let grouping = merge_levels(
                &rows,
                &raw.catalog(),
                FamilyKind::Poisson,
                None,
                &merge_formula,
                "region",
                0.01,
                &control,
            )
            .unwrap();
            let found: BTreeSet<BTreeSet<String>> =
                grouping.groups().into_iter().map(|g| g.into_iter().collect()).collect();
            (aic_ok, found == planted)
        })
        .collect();
    let aic_wins = runs.iter().filter(|r| r.0).count();
    let merges = runs.iter().filter(|r| r.1).count();
    (
        aic_wins >= 90 && merges >= 90,
        format!("true formula minimum AIC in {aic_wins}/{REPS}; planted 3-group region structure recovered in {merges}/{REPS}"),
    )
}

/// Cell-level counts redrawn around the true cell means.
fn redraw(truth: &FittedModel, family: Family, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truth
        .fitted
        .iter()
        .map(|&mu| sample_response(family, mu, 1.0, 1.0, &mut rng))
        .collect()
}

fn c10_diagnostics() -> Outcome {
    let spec = spec();
    let tariff = scheme("tariff");
    let formula = spec.frequency.formula.clone();
    let portfolio = generator().portfolio(50_000, 10).unwrap();
    let cells = prepare_rows(ResponseRole::Frequency, &portfolio.policies, &[], &tariff, &[], &formula.dimensions())
        .unwrap();
    let model = fit(&cells, &tariff, &formula, FamilyKind::Poisson, &FitControl::default());
    let h_sum: f64 = leverage(&model).iter().sum();
    let rd2: f64 = residuals(&model, ResidualKind::Deviance).iter().map(|r| r * r).sum();
    let score = model.score().iter().map(|s| s * s).sum::<f64>().sqrt();

    // true cell means: the fit evaluated at the true coefficients
    let mut truth = model.clone();
    let x = &model.design;
    for i in 0..model.n() {
        let eta: f64 = model
            .labels()
            .iter()
            .enumerate()
            .map(|(j, l)| x.x[(i, j)] * spec.frequency.coefficients.get(l).copied().unwrap_or(0.0))
            .sum::<f64>()
            + x.offset[i];
        truth.fitted[i] = eta.exp();
    }
    const DATASETS: u64 = 20;
    let results: Vec<(f64, f64)> = (0..DATASETS)
        .into_par_iter()
        .map(|d| {
            let clean = model.refit_with_response(redraw(&truth, Family::Poisson, 100 + d)).unwrap();
            let noisy = model
                .refit_with_response(redraw(&truth, Family::NegativeBinomial { v: 1.0 }, 200 + d))
                .unwrap();
            let config = EnvelopeConfig {
                seed: 300 + d,
                ..EnvelopeConfig::default()
            };
            let inside = simulated_envelope(&clean, &config).unwrap().coverage();
            let escape = 1.0 - simulated_envelope(&noisy, &config).unwrap().coverage();
            (inside, escape)
        })
        .collect();
    let self_coverage = results.iter().map(|r| r.0).sum::<f64>() / DATASETS as f64;
    let escape = results.iter().map(|r| r.1).sum::<f64>() / DATASETS as f64;
    let min_escape = results.iter().map(|r| r.1).fold(1.0, f64::min);
    let ok = (h_sum - model.p() as f64).abs() <= 1e-8
        && (rd2 - model.deviance).abs() <= 1e-8 * model.deviance
        && score < 1e-6
        && self_coverage >= 0.90
        && min_escape > 0.10;
    (
        ok,
        format!(
            "sum h {h_sum:.10} (p {}), sum rD^2 - D {:.1e}, |score| {score:.1e}, self-coverage {self_coverage:.3}, NB(v=1) escape mean {escape:.3} min {min_escape:.3} over {DATASETS} datasets",
            model.p(),
            rd2 - model.deviance
        ),
    )
}

fn c11_dispersion() -> Outcome {
    let mut spec = spec();
    spec.severity.dispersion = 1.0;
    let gen = Generator::new(&spec, scheme("tariff")).unwrap();
    let tariff = scheme("tariff");
    let mut p = gen.portfolio_with_claims(10_000, 11).unwrap();
    p.claims.truncate(10_000);
    let rows = prepare_rows(ResponseRole::Severity, &p.policies, &p.claims, &tariff, &[], &[]).unwrap();
    let model = fit(&rows, &tariff, &spec.severity.formula, FamilyKind::Gamma, &FitControl::default());
    let phi = model.dispersion;
    (
        (0.9..=1.1).contains(&phi) && rows.len() == 10_000,
        format!("gamma shape 1, n {}: Pearson phi {phi:.4}", rows.len()),
    )
}

fn run_cli(args: &[&str], out: &Path, jobs: usize) -> (i32, Vec<u8>) {
    let output = Command::new(env!("CARGO_BIN_EXE_autorate"))
        .arg("--seed")
        .arg("424242")
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    (output.status.code().unwrap_or(-1), output.stdout)
}

fn pipeline(root: &Path, jobs: usize) -> Vec<(String, i32, Vec<u8>)> {
    let out = root.join("out");
    let data = root.join("data");
    let spec = fixture("demo_generator.toml");
    let freq = fixture("freq_table6.json");
    let sev = fixture("sev_table9.json");
    let policies = data.join("policies.csv");
    let claims = data.join("claims.csv");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let steps: Vec<(&str, Vec<String>, &Path)> = vec![
        ("simulate", vec!["simulate".into(), "--spec".into(), s(&spec), "--n".into(), "20000".into()], &data),
        (
            "fit",
            vec![
                "fit".into(),
                "--policies".into(),
                s(&policies),
                "--formula".into(),
                "count ~ model + region + age + model:region".into(),
                "--aggregate".into(),
                "--name".into(),
                "frequency".into(),
            ],
            &out,
        ),
        (
            "fit",
            vec![
                "fit".into(),
                "--policies".into(),
                s(&policies),
                "--claims".into(),
                s(&claims),
                "--family".into(),
                "gamma".into(),
                "--formula".into(),
                "amount ~ value_sev + gender + make + class + make:class".into(),
                "--name".into(),
                "severity".into(),
            ],
            &out,
        ),
        (
            "select",
            vec![
                "select".into(),
                "--policies".into(),
                s(&policies),
                "--formula".into(),
                "count ~ model + age".into(),
                "--formula".into(),
                "count ~ model + region + age + model:region".into(),
                "--formula".into(),
                "count ~ model + region + policy_class + model:region".into(),
                "--aggregate".into(),
            ],
            &out,
        ),
        (
            "select",
            vec![
                "select".into(),
                "--policies".into(),
                s(&policies),
                "--scheme".into(),
                "raw".into(),
                "--formula".into(),
                "count ~ model + region + age".into(),
                "--aggregate".into(),
                "--merge".into(),
                "region".into(),
                "--alpha".into(),
                "0.01".into(),
            ],
            &out,
        ),
        (
            "diagnose",
            vec![
                "diagnose".into(),
                "--model".into(),
                s(&out.join("frequency.json")),
                "--policies".into(),
                s(&policies),
                "--replicates".into(),
                "40".into(),
            ],
            &out,
        ),
        (
            "diagnose",
            vec![
                "diagnose".into(),
                "--model".into(),
                s(&out.join("severity.json")),
                "--policies".into(),
                s(&policies),
                "--claims".into(),
                s(&claims),
                "--replicates".into(),
                "19".into(),
                "--min-max".into(),
            ],
            &out,
        ),
        (
            "tariff",
            vec!["tariff".into(), "--frequency".into(), s(&freq), "--severity".into(), s(&sev)],
            &out,
        ),
        (
            "quote",
            vec![
                "quote".into(),
                "--tariff".into(),
                s(&out.join("tariff.json")),
                "--conversion".into(),
                "0.433".into(),
                "--age".into(),
                "E1".into(),
                "--model-region".into(),
                "M5:R2".into(),
                "--make-class".into(),
                "B2:C2".into(),
                "--value-sev".into(),
                "V3".into(),
                "--gender".into(),
                "M".into(),
            ],
            &out,
        ),
    ];
    steps
        .into_iter()
        .map(|(name, args, dir)| {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let (code, stdout) = run_cli(&args, dir, jobs);
            let text = String::from_utf8_lossy(&stdout).replace(root.to_str().unwrap(), "<root>");
            (name.to_string(), code, text.into_bytes())
        })
        .collect()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["data", "out"] {
        for entry in std::fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
        }
    }
    out
}

fn c12_determinism() -> Outcome {
    let roots: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let runs: Vec<_> = roots
        .iter()
        .zip([1, 1, 4])
        .map(|(root, jobs)| (pipeline(root.path(), jobs), files(root.path())))
        .collect();
    let commands: BTreeSet<&str> = runs[0].0.iter().map(|s| s.0.as_str()).collect();
    let exit_ok = runs.iter().all(|r| r.0.iter().all(|s| s.1 == 0));
    let same_stdout = runs[1].0 == runs[0].0 && runs[2].0 == runs[0].0;
    let same_files = runs[1].1 == runs[0].1 && runs[2].1 == runs[0].1;
    (
        exit_ok && same_stdout && same_files && commands.len() == 6,
        format!(
            "{} subcommands, {} invocations, {} output files; all exit 0 {exit_ok}, stdout identical {same_stdout}, files identical {same_files} (--jobs 1, 1, 4)",
            commands.len(),
            runs[0].0.len(),
            runs[0].1.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("base premium", c1_base_premium),
        ("tariff factor table", c2_table10),
        ("worked quote", c3_quote),
        ("goodness-of-fit p-values", c4_chi_square),
        ("parameter counts", c5_parameter_counts),
        ("intercept-only closed form", c6_intercept_only),
        ("coefficient recovery", c7_recovery),
        ("aggregation invariance", c8_aggregation),
        ("selection oracle", c9_selection),
        ("diagnostics invariants", c10_diagnostics),
        ("gamma dispersion", c11_dispersion),
        ("CLI determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = run();
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
