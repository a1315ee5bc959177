//! Residuals, leverage, influence, goodness of fit and simulated envelopes.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{fit, FittedModel};
use crate::special::{chi_square_survival, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Pearson,
    Deviance,
}

/// Pearson residuals `(y − μ̂)√w / √V(μ̂)`, or deviance residuals
/// `sign(y − μ̂)√(w d(y, μ̂))`. Neither is divided by `√φ̂`.
pub fn residuals(model: &FittedModel, kind: ResidualKind) -> Vec<f64> {
    let d = &model.design;
    (0..model.n())
        .map(|i| {
            let (y, mu, w) = (d.y[i], model.fitted[i], d.weights[i]);
            match kind {
                ResidualKind::Pearson => (y - mu) * w.sqrt() / model.family.variance(mu).sqrt(),
                ResidualKind::Deviance => {
                    let r = (w * model.family.unit_deviance(y, mu)).sqrt();
                    if y < mu {
                        -r
                    } else {
                        r
                    }
                }
            }
        })
        .collect()
}

/// Diagonal of `W^½ X (XᵀWX)⁻¹ XᵀW^½`.
pub fn leverage(model: &FittedModel) -> Vec<f64> {
    let x = &model.design.x;
    let (n, p) = x.shape();
    let mut a = x.clone();
    for j in 0..p {
        for i in 0..n {
            a[(i, j)] *= model.working_weights[i].sqrt();
        }
    }
    let b: DMatrix<f64> = a * &model.r_inv;
    b.row_iter().map(|r| r.norm_squared()).collect()
}

/// Standardized deviance residuals `r_D / √(φ̂(1 − h))`.
pub fn standardized_deviance_residuals(model: &FittedModel, h: &[f64]) -> Vec<f64> {
    let phi = model.dispersion;
    residuals(model, ResidualKind::Deviance)
        .iter()
        .zip(h)
        .map(|(r, h)| r / (phi * (1.0 - h)).max(0.0).sqrt())
        .collect()
}

/// `r_P² h / (p φ̂ (1 − h)²)`; `+∞` where `h = 1`.
pub fn cooks_distance(model: &FittedModel) -> Vec<f64> {
    let h = leverage(model);
    cooks_from(model, &h, &residuals(model, ResidualKind::Pearson))
}

fn cooks_from(model: &FittedModel, h: &[f64], pearson: &[f64]) -> Vec<f64> {
    let p = model.p() as f64;
    let phi = model.dispersion;
    pearson
        .iter()
        .zip(h)
        .map(|(r, &h)| {
            if h >= 1.0 - 1e-12 {
                f64::INFINITY
            } else {
                r * r * h / (p * phi * (1.0 - h).powi(2))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    /// `D / φ`
    pub scaled_deviance: f64,
    /// `X² / φ`
    pub pearson_chi2: f64,
    pub dispersion: f64,
    pub df: usize,
    pub p_deviance: f64,
    pub p_pearson: f64,
}

/// Compare `D/φ` and `X²/φ` with χ²(df). `df` defaults to `n − p` and `phi`
/// to the model's dispersion.
pub fn goodness_of_fit(model: &FittedModel, df: Option<usize>, phi: Option<f64>) -> Result<GoodnessOfFit> {
    let df = df.unwrap_or(model.residual_df());
    if df == 0 {
        return Err(Error::NoResidualDf {
            n: model.n(),
            p: model.p(),
        });
    }
    let phi = phi.unwrap_or(model.dispersion);
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidArgument(format!("dispersion must be positive, got {phi}")));
    }
    let scaled_deviance = model.deviance / phi;
    let pearson_chi2 = model.pearson_chi2 / phi;
    Ok(GoodnessOfFit {
        scaled_deviance,
        pearson_chi2,
        dispersion: phi,
        df,
        p_deviance: chi_square_survival(scaled_deviance, df as f64),
        p_pearson: chi_square_survival(pearson_chi2, df as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Cook's distance; defaults to `8 / (n − 2p)`.
    pub cook: Option<f64>,
    /// Leverage; defaults to `2p / n`.
    pub leverage: Option<f64>,
    /// Absolute standardized deviance residual.
    pub abs_residual: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            cook: None,
            leverage: None,
            abs_residual: 2.0,
        }
    }
}

impl Thresholds {
    pub fn resolve(&self, n: usize, p: usize) -> (f64, f64, f64) {
        let cook = self.cook.unwrap_or_else(|| {
            let denom = n as f64 - 2.0 * p as f64;
            if denom > 0.0 {
                8.0 / denom
            } else {
                f64::INFINITY
            }
        });
        let lev = self.leverage.unwrap_or(2.0 * p as f64 / n as f64);
        (cook, lev, self.abs_residual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPoints {
    pub influential: Vec<usize>,
    pub leverage: Vec<usize>,
    pub outlier: Vec<usize>,
    pub cook_threshold: f64,
    pub leverage_threshold: f64,
    pub residual_threshold: f64,
    pub n: usize,
}

impl FlaggedPoints {
    pub fn both_influential_and_leverage(&self) -> Vec<usize> {
        self.influential
            .iter()
            .filter(|i| self.leverage.binary_search(i).is_ok())
            .copied()
            .collect()
    }

    fn pct(&self, k: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * k as f64 / self.n as f64
        }
    }

    /// One line per flag set with count and share of rows.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (name, set, t) in [
            ("influential", &self.influential, self.cook_threshold),
            ("leverage", &self.leverage, self.leverage_threshold),
            ("outlier", &self.outlier, self.residual_threshold),
        ] {
            let _ = writeln!(
                out,
                "{name:<12} {:>6} of {} ({:.1}%)  threshold {t:.4}",
                set.len(),
                self.n,
                self.pct(set.len())
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub y: Vec<f64>,
    pub fitted: Vec<f64>,
    pub pearson: Vec<f64>,
    pub deviance: Vec<f64>,
    pub standardized: Vec<f64>,
    pub leverage: Vec<f64>,
    pub cook: Vec<f64>,
    pub gof: Option<GoodnessOfFit>,
    pub flags: FlaggedPoints,
    pub envelope: Option<Envelope>,
}

pub fn diagnose(model: &FittedModel, thresholds: &Thresholds) -> DiagnosticsReport {
    let h = leverage(model);
    let pearson = residuals(model, ResidualKind::Pearson);
    let deviance = residuals(model, ResidualKind::Deviance);
    let standardized = standardized_deviance_residuals(model, &h);
    let cook = cooks_from(model, &h, &pearson);
    let mut report = DiagnosticsReport {
        y: model.design.y.clone(),
        fitted: model.fitted.clone(),
        pearson,
        deviance,
        standardized,
        leverage: h,
        cook,
        gof: goodness_of_fit(model, None, None).ok(),
        flags: FlaggedPoints {
            influential: Vec::new(),
            leverage: Vec::new(),
            outlier: Vec::new(),
            cook_threshold: 0.0,
            leverage_threshold: 0.0,
            residual_threshold: 0.0,
            n: model.n(),
        },
        envelope: None,
    };
    report.flags = flag_points(&report, thresholds, model.p());
    report
}

/// Indices whose Cook's distance, leverage or absolute standardized
/// residual exceed the thresholds.
pub fn flag_points(report: &DiagnosticsReport, thresholds: &Thresholds, p: usize) -> FlaggedPoints {
    let n = report.y.len();
    let (cook_t, lev_t, res_t) = thresholds.resolve(n, p);
    let above = |v: &[f64], t: f64| -> Vec<usize> {
        v.iter()
            .enumerate()
            .filter(|(_, x)| x.abs() > t)
            .map(|(i, _)| i)
            .collect()
    };
    FlaggedPoints {
        influential: above(&report.cook, cook_t),
        leverage: above(&report.leverage, lev_t),
        outlier: above(&report.standardized, res_t),
        cook_threshold: cook_t,
        leverage_threshold: lev_t,
        residual_threshold: res_t,
        n,
    }
}

impl DiagnosticsReport {
    /// `index,y,mu,pearson,deviance,h,cook,flags`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "y", "mu", "pearson", "deviance", "h", "cook", "flags"])?;
        for i in 0..self.y.len() {
            let mut flags = Vec::new();
            if self.flags.influential.binary_search(&i).is_ok() {
                flags.push("influential");
            }
            if self.flags.leverage.binary_search(&i).is_ok() {
                flags.push("leverage");
            }
            if self.flags.outlier.binary_search(&i).is_ok() {
                flags.push("outlier");
            }
            w.write_record([
                i.to_string(),
                format!("{:.10}", self.y[i]),
                format!("{:.10}", self.fitted[i]),
                format!("{:.10}", self.pearson[i]),
                format!("{:.10}", self.deviance[i]),
                format!("{:.10}", self.leverage[i]),
                format!("{:.10}", self.cook[i]),
                flags.join("|"),
            ])?;
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Change in β̂ from deleting row `index`: the one-step approximation
/// `−(XᵀWX)⁻¹ xᵢ wᵢ eᵢ / (1 − hᵢ)` or an exact refit.
pub fn deletion_influence(model: &FittedModel, index: usize, exact: bool) -> Result<Vec<f64>> {
    if index >= model.n() {
        return Err(Error::InvalidArgument(format!("row {index} out of range")));
    }
    if exact {
        let reduced = model.design.without_row(index);
        let refit = fit(&reduced, model.family, model.link, &model.control)?;
        return Ok(refit
            .coefficients
            .iter()
            .zip(&model.coefficients)
            .map(|(a, b)| a - b)
            .collect());
    }
    let x = model.design.x.row(index).transpose();
    let mu = model.fitted[index];
    let e = (model.design.y[index] - mu) * model.link.derivative(mu);
    let w = model.working_weights[index];
    let a = &model.r_inv.transpose() * &x * w.sqrt();
    let h = a.norm_squared();
    let step = model.covariance_unscaled() * x * (w * e / (1.0 - h));
    Ok(step.iter().map(|s| -s).collect())
}

/// `Δβᵀ Cov⁻¹ Δβ / p`, the covariance-metric size of a coefficient change.
pub fn influence_norm(model: &FittedModel, delta: &[f64]) -> f64 {
    let d = DVector::from_column_slice(delta);
    let unscaled_inv = {
        let r = model.r_inv.clone().try_inverse().expect("R is invertible");
        r.transpose() * r
    };
    (d.transpose() * unscaled_inv * &d)[(0, 0)] / (model.p() as f64 * model.dispersion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    pub replicates: usize,
    /// Percentile bands; ignored when `min_max` is set.
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    /// Band from the replicate minimum and maximum.
    pub min_max: bool,
    pub seed: u64,
    /// Draws tried per replicate before it is counted as failed.
    pub max_attempts: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            replicates: 100,
            lower_percentile: 2.5,
            upper_percentile: 97.5,
            min_max: false,
            seed: 20_080_101,
            max_attempts: 5,
        }
    }
}

impl EnvelopeConfig {
    /// Nineteen replicates with min/max bands.
    pub fn classical(seed: u64) -> Self {
        EnvelopeConfig {
            replicates: 19,
            min_max: true,
            seed,
            ..EnvelopeConfig::default()
        }
    }
}

/// Half-normal plot of sorted absolute standardized deviance residuals
/// with simulated bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub theoretical: Vec<f64>,
    pub observed: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
    pub failed: usize,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub min_max: bool,
    pub seed: u64,
}

fn sorted_abs(v: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| x.total_cmp(y));
    a
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Half-normal quantiles `Φ⁻¹((i + n − 1/8) / (2n + 1/2))`, `i = 1..n`.
pub fn half_normal_quantiles(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (1..=n)
        .map(|i| normal_quantile((i as f64 + nf - 0.125) / (2.0 * nf + 0.5)))
        .collect()
}

fn replicate_residuals(model: &FittedModel, config: &EnvelopeConfig, r: usize) -> Option<Vec<f64>> {
    for attempt in 0..config.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream((r * config.max_attempts + attempt) as u64);
        let y = model.simulate(&mut rng);
        if let Ok(m) = model.refit_with_response(y) {
            if m.converged && m.dispersion.is_finite() {
                let h = leverage(&m);
                return Some(sorted_abs(&standardized_deviance_residuals(&m, &h)));
            }
        }
    }
    None
}

/// Simulate at μ̂, refit the same design and collect order statistics of
/// the absolute standardized deviance residuals. Replicates run on the
/// current rayon pool; results do not depend on scheduling.
pub fn simulated_envelope(model: &FittedModel, config: &EnvelopeConfig) -> Result<Envelope> {
    if config.replicates < 19 {
        return Err(Error::InvalidArgument(format!(
            "envelope needs at least 19 replicates, got {}",
            config.replicates
        )));
    }
    if !(0.0 <= config.lower_percentile
        && config.lower_percentile < config.upper_percentile
        && config.upper_percentile <= 100.0)
    {
        return Err(Error::InvalidArgument("band percentiles must satisfy 0 ≤ lower < upper ≤ 100".into()));
    }
    let n = model.n();
    let h = leverage(model);
    let observed = sorted_abs(&standardized_deviance_residuals(model, &h));
    let draws: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| replicate_residuals(model, config, r))
        .collect();
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failed = config.replicates - ok.len();
    if ok.len() < 2 {
        return Err(Error::InvalidArgument(format!("{failed} of {} envelope replicates failed", config.replicates)));
    }
    let (mut lower, mut median, mut upper) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut column = vec![0.0; ok.len()];
    for i in 0..n {
        for (c, rep) in column.iter_mut().zip(&ok) {
            *c = rep[i];
        }
        column.sort_by(|a, b| a.total_cmp(b));
        if config.min_max {
            lower.push(column[0]);
            upper.push(column[column.len() - 1]);
        } else {
            lower.push(percentile(&column, config.lower_percentile));
            upper.push(percentile(&column, config.upper_percentile));
        }
        median.push(percentile(&column, 50.0));
    }
    Ok(Envelope {
        theoretical: half_normal_quantiles(n),
        observed,
        lower,
        median,
        upper,
        replicates: ok.len(),
        failed,
        lower_percentile: config.lower_percentile,
        upper_percentile: config.upper_percentile,
        min_max: config.min_max,
        seed: config.seed,
    })
}

impl Envelope {
    /// Share of observed order statistics inside the band.
    pub fn coverage(&self) -> f64 {
        let inside = self
            .observed
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(o, (l, u))| *o >= *l && *o <= *u)
            .count();
        inside as f64 / self.observed.len() as f64
    }

    /// `theoretical,observed,lower,median,upper`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["theoretical", "observed", "lower", "median", "upper"])?;
        for i in 0..self.observed.len() {
            w.write_record([
                format!("{:.10}", self.theoretical[i]),
                format!("{:.10}", self.observed[i]),
                format!("{:.10}", self.lower[i]),
                format!("{:.10}", self.median[i]),
                format!("{:.10}", self.upper[i]),
            ])?;
        }
        csv_string(w)
    }

    /// Scatter of observed points against half-normal quantiles with the
    /// band drawn as lines.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 480.0, 50.0);
        let x_max = self.theoretical.last().copied().unwrap_or(1.0).max(1e-9) * 1.05;
        let y_max = self
            .observed
            .iter()
            .chain(&self.upper)
            .fold(0.0f64, |a, b| a.max(*b))
            .max(1e-9)
            * 1.05;
        let px = |x: f64| m + x / x_max * (w - 2.0 * m);
        let py = |y: f64| h - m - y / y_max * (h - 2.0 * m);
        let line = |v: &[f64]| -> String {
            self.theoretical
                .iter()
                .zip(v)
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
        );
        let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            h - m,
            w - m,
            h - m
        );
        let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m);
        for v in [&self.lower, &self.upper] {
            let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"gray\" points=\"{}\"/>", line(v));
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"gray\" stroke-dasharray=\"4 3\" points=\"{}\"/>",
            line(&self.median)
        );
        for (x, y) in self.theoretical.iter().zip(&self.observed) {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"black\"/>", px(*x), py(*y));
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">half-normal quantile</text>",
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            s,
            "<text x=\"15\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">|standardized deviance residual|</text>",
            h / 2.0,
            h / 2.0
        );
        s.push_str("</svg>\n");
        s
    }
}
