//! Command-line front end.
//!
//! Every subcommand writes its artifacts under `--out` and prints a text
//! summary. Identical arguments and seed give byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::design::{build_design, prepare_rows, DropRule, Formula, Observation, ResponseRole};
use crate::diagnostics::{diagnose, goodness_of_fit, simulated_envelope, EnvelopeConfig, Thresholds};
use crate::error::{Error, Result};
use crate::glm::{fit_family, DataView, DispersionMethod, FamilyKind, FitControl, FittedModel, Link, ModelDocument};
use crate::ingest::{
    band_fields, load_schemes, load_schemes_str, parse_claims, parse_policies, rejection_counts, take_scheme,
    write_claims, write_policies, BandingScheme, ClaimRecord, Parsed, PolicyRecord, RatingFactors, SourceField,
    DEFAULT_SCHEMES,
};
use crate::selection::{compare_models, merge_levels};
use crate::synth::{Generator, GeneratorSpec};
use crate::tariff::{build_tariff, QuoteRequest, TariffTable};

pub const DEFAULT_SEED: u64 = 20_080_101;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Input = 2,
    NotConverged = 3,
    Excluded = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn for_error(e: &Error) -> Self {
        match e {
            Error::Excluded(_) => Exit::Excluded,
            _ => Exit::Input,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "autorate", version, about = "GLM ratemaking for motor insurance")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write its JSON document and coefficient table.
    Fit(FitArgs),
    /// Compare candidate formulas, or merge the levels of one dimension.
    Select(SelectArgs),
    /// Residuals, influence flags, goodness of fit and a simulated envelope.
    Diagnose(DiagnoseArgs),
    /// Compose a tariff from frequency and severity model documents.
    Tariff(TariffArgs),
    /// Price one risk: `--age E1 --model-region M5:R2 ...` or raw values such as `--region bogota`.
    Quote(QuoteArgs),
    /// Draw a synthetic portfolio from a generator spec.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long)]
    pub claims: Option<PathBuf>,
    /// Scheme file; the shipped schemes when absent.
    #[arg(long)]
    pub bands: Option<PathBuf>,
    #[arg(long, default_value = "tariff")]
    pub scheme: String,
    /// Drop rows matching `dim=level&dim=level`; repeatable.
    #[arg(long = "drop")]
    pub drops: Vec<String>,
    /// Aggregate claim counts into cells over the formula dimensions.
    #[arg(long)]
    pub aggregate: bool,
    /// Fail when any input row is rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "poisson")]
    pub family: FamilyKind,
    #[arg(long)]
    pub link: Option<Link>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

impl ModelArgs {
    fn control(&self) -> FitControl {
        let mut c = FitControl::default();
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        if let Some(t) = self.tolerance {
            c.tolerance = t;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub formula: Formula,
    /// Output file stem.
    #[arg(long, default_value = "model")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Candidate formula; repeatable.
    #[arg(long = "formula", required = true)]
    pub formulas: Vec<Formula>,
    /// Merge levels of this dimension in the first formula instead of comparing.
    #[arg(long)]
    pub merge: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long)]
    pub claims: Option<PathBuf>,
    #[arg(long)]
    pub bands: Option<PathBuf>,
    #[arg(long)]
    pub cook: Option<f64>,
    #[arg(long)]
    pub leverage: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub abs_residual: f64,
    /// Dispersion for the goodness-of-fit statistics: `model` (1 for count
    /// families), `pearson`, `deviance`, `ml` or a number.
    #[arg(long, default_value = "model")]
    pub phi: String,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Classical 19-replicate min/max envelope.
    #[arg(long)]
    pub min_max: bool,
    /// Skip the simulated envelope.
    #[arg(long)]
    pub no_envelope: bool,
}

#[derive(Debug, Args)]
pub struct TariffArgs {
    #[arg(long)]
    pub frequency: PathBuf,
    #[arg(long)]
    pub severity: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuoteArgs {
    #[arg(long)]
    pub tariff: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
    /// Currency units per SMMLV.
    #[arg(long)]
    pub conversion: Option<f64>,
    /// Scheme file for raw values.
    #[arg(long)]
    pub bands: Option<PathBuf>,
    #[arg(long, default_value = "tariff")]
    pub scheme: String,
    /// `--<dimension> LEVEL`, `--<dim>-<dim> L1:L2` or `--<column> RAW`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    pub levels: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub bands: Option<PathBuf>,
}

/// Parse arguments, run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Input.code() } else { Exit::Ok.code() };
        }
    };
    match run(&cli) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("error: {e}");
            Exit::for_error(&e).code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Exit> {
    if cli.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if !matches!(cli.command, Command::Quote(_)) {
        fs::create_dir_all(&cli.out)?;
    }
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Select(a) => cmd_select(cli, a),
        Command::Diagnose(a) => cmd_diagnose(cli, a),
        Command::Tariff(a) => cmd_tariff(cli, a),
        Command::Quote(a) => cmd_quote(a),
        Command::Simulate(a) => cmd_simulate(cli, a),
    })
}

fn load_scheme(bands: Option<&Path>, name: &str) -> Result<BandingScheme> {
    let schemes = match bands {
        Some(p) => load_schemes(p)?,
        None => load_schemes_str(DEFAULT_SCHEMES)?,
    };
    take_scheme(schemes, name)
}

fn report_rejections<T>(what: &str, parsed: &Parsed<T>, strict: bool) -> Result<()> {
    if parsed.rejected.is_empty() {
        return Ok(());
    }
    eprintln!("{what}: rejected {} of {} rows", parsed.rejected.len(), parsed.rows);
    for (reason, count) in rejection_counts(&parsed.rejected) {
        eprintln!("  {reason}: {count}");
    }
    if strict {
        return Err(Error::InvalidArgument(format!("{what} has rejected rows")));
    }
    Ok(())
}

struct Loaded {
    policies: Vec<PolicyRecord>,
    claims: Vec<ClaimRecord>,
}

fn load_data(policies: &Path, claims: Option<&Path>, scheme: &BandingScheme, strict: bool) -> Result<Loaded> {
    let parsed = parse_policies(fs::File::open(policies)?, scheme)?;
    report_rejections("policies", &parsed, strict)?;
    if parsed.accepted.is_empty() {
        return Err(Error::InvalidArgument(format!("no usable rows in {}", policies.display())));
    }
    let claims = match claims {
        Some(path) => {
            let c = parse_claims(fs::File::open(path)?)?;
            report_rejections("claims", &c, strict)?;
            c.accepted
        }
        None => Vec::new(),
    };
    Ok(Loaded {
        policies: parsed.accepted,
        claims,
    })
}

fn parse_drops(drops: &[String]) -> Result<Vec<DropRule>> {
    drops.iter().map(|d| d.parse()).collect()
}

/// Modelling rows; with `--aggregate`, cells over `dims`.
fn rows_for(
    data: &DataArgs,
    role: ResponseRole,
    dims: Vec<String>,
    scheme: &BandingScheme,
) -> Result<(Vec<Observation>, DataView)> {
    if role == ResponseRole::Severity && data.claims.is_none() {
        return Err(Error::InvalidArgument("severity models need --claims".into()));
    }
    let loaded = load_data(&data.policies, data.claims.as_deref(), scheme, data.strict)?;
    let drops = parse_drops(&data.drops)?;
    let aggregate = if data.aggregate { dims } else { Vec::new() };
    let rows = prepare_rows(role, &loaded.policies, &loaded.claims, scheme, &drops, &aggregate)?;
    let view = DataView {
        scheme: scheme.name.clone(),
        aggregate,
        drops: drops.iter().map(ToString::to_string).collect(),
    };
    Ok((rows, view))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(out.join(name), contents)?;
    Ok(())
}

fn print(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<Exit> {
    let scheme = load_scheme(a.data.bands.as_deref(), &a.data.scheme)?;
    let (rows, view) = rows_for(&a.data, a.formula.response, a.formula.dimensions(), &scheme)?;
    let design = build_design(&rows, &a.formula, &scheme.catalog())?;
    let model = fit_family(&design, a.model.family, a.model.link, &a.model.control())?;
    let doc = model.to_document(Some(view));
    doc.save(&cli.out.join(format!("{}.json", a.name)))?;
    write(&cli.out, &format!("{}_coefficients.csv", a.name), &doc.coefficients_csv()?)?;
    print(&doc.render_table());
    if !model.converged {
        eprintln!("warning: fit did not converge in {} iterations", model.iterations);
        return Ok(Exit::NotConverged);
    }
    Ok(Exit::Ok)
}

fn cmd_select(cli: &Cli, a: &SelectArgs) -> Result<Exit> {
    let scheme = load_scheme(a.data.bands.as_deref(), &a.data.scheme)?;
    let catalog = scheme.catalog();
    let control = a.model.control();
    if let Some(dim) = &a.merge {
        let formula = &a.formulas[0];
        let (rows, _) = rows_for(&a.data, formula.response, formula.dimensions(), &scheme)?;
        let grouping = merge_levels(&rows, &catalog, a.model.family, a.model.link, formula, dim, a.alpha, &control)?;
        let mut json = serde_json::to_string_pretty(&grouping)?;
        json.push('\n');
        write(&cli.out, &format!("merge_{dim}.json"), &json)?;
        print(&grouping.render());
        return Ok(Exit::Ok);
    }
    // one row set for every candidate: cells over the union of dimensions
    let mut union: Vec<String> = Vec::new();
    for d in a.formulas.iter().flat_map(Formula::dimensions) {
        if !union.contains(&d) {
            union.push(d);
        }
    }
    let (rows, _) = rows_for(&a.data, a.formulas[0].response, union, &scheme)?;
    let table = compare_models(&rows, &catalog, a.model.family, a.model.link, &a.formulas, &control)?;
    write(&cli.out, "selection.csv", &table.to_csv()?)?;
    print(&table.render());
    if table.rows.iter().any(|r| !r.converged) {
        return Ok(Exit::NotConverged);
    }
    Ok(Exit::Ok)
}

/// Refit a model document on the data it describes.
fn refit(doc: &ModelDocument, policies: &Path, claims: Option<&Path>, bands: Option<&Path>) -> Result<FittedModel> {
    let view = doc.data.clone().unwrap_or_else(|| DataView {
        scheme: "tariff".into(),
        ..DataView::default()
    });
    let scheme = load_scheme(bands, &view.scheme)?;
    if doc.formula.response == ResponseRole::Severity && claims.is_none() {
        return Err(Error::InvalidArgument("severity models need --claims".into()));
    }
    let loaded = load_data(policies, claims, &scheme, false)?;
    let drops = parse_drops(&view.drops)?;
    let rows = prepare_rows(doc.formula.response, &loaded.policies, &loaded.claims, &scheme, &drops, &view.aggregate)?;
    let design = build_design(&rows, &doc.formula, &scheme.catalog())?;
    let model = fit_family(&design, doc.family.kind(), Some(doc.link), &FitControl::default())?;
    for row in &doc.coefficients {
        let refit = model.coefficient(&row.label);
        let same = match (row.estimate, refit) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-6 * (1.0 + a.abs()),
            (None, None) => true,
            _ => false,
        };
        if !same {
            return Err(Error::Mismatch(format!(
                "coefficient `{}` is {:?} in the document but {:?} on this data",
                row.label, row.estimate, refit
            )));
        }
    }
    if model.labels().len() != doc.coefficients.iter().filter(|r| r.estimate.is_some()).count() {
        return Err(Error::Mismatch("design columns differ from the document".into()));
    }
    Ok(model)
}

fn cmd_diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<Exit> {
    let doc = ModelDocument::load(&a.model)?;
    let model = refit(&doc, &a.policies, a.claims.as_deref(), a.bands.as_deref())?;
    let thresholds = Thresholds {
        cook: a.cook,
        leverage: a.leverage,
        abs_residual: a.abs_residual,
    };
    let mut report = diagnose(&model, &thresholds);
    let phi = match a.phi.as_str() {
        "model" => model.dispersion,
        "pearson" => model.estimate_dispersion(DispersionMethod::Pearson)?,
        "deviance" => model.estimate_dispersion(DispersionMethod::Deviance)?,
        "ml" => model.estimate_dispersion(DispersionMethod::MaximumLikelihood)?,
        other => other
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad --phi `{other}`")))?,
    };
    report.gof = Some(goodness_of_fit(&model, None, Some(phi))?);
    if !a.no_envelope {
        let config = if a.min_max {
            EnvelopeConfig::classical(cli.seed)
        } else {
            EnvelopeConfig {
                replicates: a.replicates,
                seed: cli.seed,
                ..EnvelopeConfig::default()
            }
        };
        let env = simulated_envelope(&model, &config)?;
        write(&cli.out, "envelope.csv", &env.to_csv()?)?;
        write(&cli.out, "envelope.svg", &env.to_svg())?;
        report.envelope = Some(env);
    }
    write(&cli.out, "diagnostics.csv", &report.to_csv()?)?;
    let mut text = String::new();
    if let Some(g) = &report.gof {
        text.push_str(&format!(
            "D* = {:.1}  X2 = {:.1}  df = {}  p = {:.2}, {:.2}  (phi {:.4})\n",
            g.scaled_deviance, g.pearson_chi2, g.df, g.p_deviance, g.p_pearson, g.dispersion
        ));
    }
    text.push_str(&report.flags.summary());
    let both = report.flags.both_influential_and_leverage();
    text.push_str(&format!("influential and high leverage: {}\n", both.len()));
    if let Some(env) = &report.envelope {
        text.push_str(&format!(
            "envelope: {} replicates, {:.1}% of points inside the band\n",
            env.replicates,
            100.0 * env.coverage()
        ));
    }
    print(&text);
    Ok(Exit::Ok)
}

fn cmd_tariff(cli: &Cli, a: &TariffArgs) -> Result<Exit> {
    let freq = ModelDocument::load(&a.frequency)?;
    let sev = ModelDocument::load(&a.severity)?;
    let table = build_tariff(&freq, &sev)?;
    table.save(&cli.out.join("tariff.json"))?;
    let text = table.render();
    write(&cli.out, "tariff.txt", &text)?;
    print(&text);
    Ok(Exit::Ok)
}

/// Split `--key value` pairs into rating levels, routing values that are not
/// tariff levels through the banding scheme.
pub fn quote_factors(table: &TariffTable, scheme: &BandingScheme, args: &[String]) -> Result<RatingFactors> {
    let mut factors = RatingFactors::new();
    let mut raw = BTreeMap::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::InvalidArgument(format!("expected `--<dimension>`, got `{flag}`")))?;
        let value = it
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("`{flag}` needs a value")))?;
        let key = key.replace('-', "_");
        let joint = key.replace('_', ":");
        if let Some(k) = table.keys.iter().find(|k| k.key == joint && k.dimensions.len() > 1) {
            let levels: Vec<&str> = value.split(':').collect();
            if levels.len() != k.dimensions.len() {
                return Err(Error::InvalidArgument(format!("`{flag}` expects {} levels", k.dimensions.len())));
            }
            for (d, l) in k.dimensions.iter().zip(levels) {
                factors.insert(d, l);
            }
            continue;
        }
        let rated = table.keys.iter().any(|k| k.dimensions.contains(&key));
        let is_level = table.keys.iter().any(|k| {
            k.dimensions.iter().position(|d| *d == key).is_some_and(|i| {
                table
                    .factor_map(&k.key)
                    .is_some_and(|m| m.keys().any(|cell| cell.split(':').nth(i) == Some(value)))
            }) || table.exclusions.iter().any(|e| e.key == key && e.level == *value)
        });
        if rated && is_level {
            factors.insert(&key, value);
        } else if SourceField::from_column(&key).is_some() {
            raw.insert(key, value.clone());
        } else if rated {
            factors.insert(&key, value);
        } else {
            return Err(Error::UnknownDimension(key));
        }
    }
    for (d, l) in band_fields(&raw, scheme)?.iter() {
        if table.keys.iter().any(|k| k.dimensions.iter().any(|x| x == d)) && factors.get(d).is_none() {
            factors.insert(d, l);
        }
    }
    Ok(factors)
}

fn cmd_quote(a: &QuoteArgs) -> Result<Exit> {
    let table = TariffTable::load(&a.tariff)?;
    let scheme = load_scheme(a.bands.as_deref(), &a.scheme)?;
    let factors = quote_factors(&table, &scheme, &a.levels)?;
    let quote = table.quote(&QuoteRequest {
        factors,
        exposure: a.exposure,
        conversion: a.conversion,
    })?;
    print(&quote.render());
    Ok(Exit::Ok)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<Exit> {
    let spec = GeneratorSpec::load(&a.spec)?;
    let scheme = load_scheme(a.bands.as_deref(), &spec.scheme)?;
    let generator = Generator::new(&spec, scheme)?;
    let portfolio = generator.portfolio(a.n, cli.seed)?;
    write_policies(fs::File::create(cli.out.join("policies.csv"))?, &portfolio.policies)?;
    write_claims(fs::File::create(cli.out.join("claims.csv"))?, &portfolio.claims)?;
    print(&format!(
        "{} policies, {} claims (seed {})\n",
        portfolio.policies.len(),
        portfolio.claims.len(),
        cli.seed
    ));
    Ok(Exit::Ok)
}
