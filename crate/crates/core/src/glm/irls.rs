use nalgebra::{DMatrix, DVector};

use super::{dispersion_ml, FitControl, FittedModel};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::family::{Family, Link};

/// `|R_jj|` below this fraction of the weighted column norm marks the column
/// as linearly dependent on earlier ones.
const RANK_TOLERANCE: f64 = 1e-9;

/// Upper-triangular factor of `√W X` together with the WLS solution.
pub(crate) struct Wls {
    pub beta: Vec<f64>,
    pub r: DMatrix<f64>,
}

fn scaled(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut a = x.clone();
    let sw: Vec<f64> = w.iter().map(|w| w.sqrt()).collect();
    for mut col in a.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(&sw) {
            *v *= s;
        }
    }
    a
}

/// Minimise `Σ wᵢ (zᵢ − xᵢβ)²` by Householder QR of `√W X`.
pub(crate) fn solve_wls(x: &DMatrix<f64>, z: &[f64], w: &[f64], labels: &[String]) -> Result<Wls> {
    let (n, p) = x.shape();
    let a = scaled(x, w);
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut b = DVector::from_iterator(n, z.iter().zip(w).map(|(z, w)| z * w.sqrt()));
    let qr = a.qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..p)
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOLERANCE * norms[j]))
        .map(|j| labels[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::Singular(dependent));
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Singular(labels.to_vec()))?;
    Ok(Wls {
        beta: beta.iter().copied().collect(),
        r,
    })
}

struct State {
    eta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
}

pub(crate) fn deviance(family: Family, y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .zip(w)
        .map(|((&y, &m), &w)| w * family.unit_deviance(y, m))
        .sum()
}

fn evaluate(design: &DesignMatrix, family: Family, link: Link, beta: &[f64], eps: f64) -> State {
    let b = DVector::from_column_slice(beta);
    let lin = &design.x * b;
    let eta: Vec<f64> = lin.iter().copied().collect();
    let mu: Vec<f64> = eta
        .iter()
        .zip(&design.offset)
        .map(|(e, o)| family.clamp_mean(link.inverse(e + o), eps))
        .collect();
    let deviance = deviance(family, &design.y, &mu, &design.weights);
    State { eta, mu, deviance }
}

/// Working weights `w / (g′(μ)² V(μ))`.
pub(crate) fn working_weights(family: Family, link: Link, mu: &[f64], w: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(w)
        .map(|(&m, &w)| {
            let g = link.derivative(m);
            w / (g * g * family.variance(m))
        })
        .collect()
}

fn check_inputs(design: &DesignMatrix, family: Family, link: Link) -> Result<()> {
    if design.nrows() == 0 {
        return Err(Error::Unidentifiable {
            rows: 0,
            columns: design.ncols(),
        });
    }
    if let Family::NegativeBinomial { v } = family {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("negative binomial v must be ≥ 0, got {v}")));
        }
    }
    if link == Link::Logit && family != Family::Bernoulli {
        return Err(Error::InvalidArgument(format!(
            "logit link requires a bernoulli response, not {}",
            family.name()
        )));
    }
    for (i, &y) in design.y.iter().enumerate() {
        if !family.valid_response(y) {
            return Err(Error::InvalidResponse {
                row: i + 1,
                value: y,
                family: family.name(),
            });
        }
    }
    for (i, &w) in design.weights.iter().enumerate() {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidArgument(format!("row {}: bad prior weight {w}", i + 1)));
        }
    }
    Ok(())
}

/// Fit by iteratively reweighted least squares, halving steps that raise the
/// deviance.
pub fn fit(design: &DesignMatrix, family: Family, link: Link, control: &FitControl) -> Result<FittedModel> {
    fit_from(design, family, link, control, None)
}

/// As [`fit`], starting from the means `start` instead of the response.
pub(crate) fn fit_from(
    design: &DesignMatrix,
    family: Family,
    link: Link,
    control: &FitControl,
    start: Option<&[f64]>,
) -> Result<FittedModel> {
    check_inputs(design, family, link)?;
    let eps = control.mean_floor;
    let mu: Vec<f64> = match start {
        Some(m) => m.iter().map(|&m| family.clamp_mean(m, eps)).collect(),
        None => design.y.iter().map(|&y| family.initial_mean(y, eps)).collect(),
    };
    let eta: Vec<f64> = mu
        .iter()
        .zip(&design.offset)
        .map(|(&m, o)| link.link(m) - o)
        .collect();
    let deviance = deviance(family, &design.y, &mu, &design.weights);
    let mut state = State { eta, mu, deviance };
    let mut beta: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < control.max_iter {
        iterations += 1;
        let z: Vec<f64> = (0..design.nrows())
            .map(|i| state.eta[i] + (design.y[i] - state.mu[i]) * link.derivative(state.mu[i]))
            .collect();
        let ww = working_weights(family, link, &state.mu, &design.weights);
        let mut cand = solve_wls(&design.x, &z, &ww, &design.labels)?.beta;
        let mut next = evaluate(design, family, link, &cand, eps);
        let change_of = |d: f64| (d - state.deviance).abs() / (d.abs() + 0.1);
        // rounding noise near a zero deviance is not a divergent step
        let accept = |d: f64| d <= state.deviance * (1.0 + 1e-14) || change_of(d) < control.tolerance;
        if let Some(prev) = &beta {
            let mut halvings = 0;
            while !accept(next.deviance) && halvings < control.max_halving {
                for (c, p) in cand.iter_mut().zip(prev) {
                    *c = 0.5 * (*c + p);
                }
                next = evaluate(design, family, link, &cand, eps);
                halvings += 1;
            }
            if !accept(next.deviance) {
                break;
            }
        }
        let change = change_of(next.deviance);
        trace.push(next.deviance);
        state = next;
        beta = Some(cand);
        if change < control.tolerance {
            converged = true;
            break;
        }
    }

    let beta = match beta {
        Some(b) => b,
        None => solve_wls(
            &design.x,
            &state.eta,
            &working_weights(family, link, &state.mu, &design.weights),
            &design.labels,
        )?
        .beta,
    };
    finish(design, family, link, control, beta, state, iterations, converged, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    design: &DesignMatrix,
    family: Family,
    link: Link,
    control: &FitControl,
    beta: Vec<f64>,
    state: State,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
) -> Result<FittedModel> {
    let (n, p) = design.x.shape();
    let ww = working_weights(family, link, &state.mu, &design.weights);
    let zeros = vec![0.0; n];
    let r = solve_wls(&design.x, &zeros, &ww, &design.labels)?.r;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Singular(design.labels.clone()))?;
    let cov_unscaled = &r_inv * r_inv.transpose();

    let pearson_chi2: f64 = (0..n)
        .map(|i| design.weights[i] * (design.y[i] - state.mu[i]).powi(2) / family.variance(state.mu[i]))
        .sum();
    let (dispersion, ml) = if family.estimates_dispersion() {
        let phi = if n > p {
            pearson_chi2 / (n - p) as f64
        } else {
            f64::NAN
        };
        let ml = dispersion_ml(family, &design.y, &state.mu, &design.weights);
        (phi, Some(ml))
    } else {
        (1.0, None)
    };
    let phi_ll = ml.unwrap_or(1.0);
    let log_likelihood = (0..n)
        .map(|i| family.log_density(design.y[i], state.mu[i], design.weights[i], phi_ll))
        .sum();

    Ok(FittedModel {
        design: design.clone(),
        family,
        link,
        control: control.clone(),
        coefficients: beta,
        cov_unscaled,
        r_inv,
        linear_predictor: state.eta,
        fitted: state.mu,
        working_weights: ww,
        deviance: state.deviance,
        pearson_chi2,
        dispersion,
        dispersion_ml: ml,
        log_likelihood,
        iterations,
        converged,
        poisson_limit: false,
        deviance_trace: trace,
    })
}
