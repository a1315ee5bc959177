use super::{fit, fit_from, FitControl, FittedModel};
use crate::design::DesignMatrix;
use crate::error::Result;
use crate::glm::family::{negbin_log_density, Family, Link};

/// Estimates of `v` below this are treated as zero.
pub const POISSON_LIMIT_FLOOR: f64 = 1e-8;

/// Upper 10% point of χ²₁: the 5% critical value for `v = 0` on the boundary.
pub const POISSON_LIMIT_LR: f64 = 2.705_543_454_095_404;

const SERIES_CUTOFF: f64 = 0.1;
const SERIES_TERMS: i32 = 40;

/// `(ln(1+a) − a/(1+a)) / a²`
fn f_over_a2(a: f64) -> f64 {
    if a < SERIES_CUTOFF {
        (2..SERIES_TERMS)
            .map(|k| {
                let k = k as f64;
                let sign = if k as i64 % 2 == 0 { 1.0 } else { -1.0 };
                sign * (k - 1.0) / k * a.powf(k - 2.0)
            })
            .sum()
    } else {
        (a.ln_1p() - a / (1.0 + a)) / (a * a)
    }
}

/// `(−2 ln(1+a) + 2a/(1+a) + a²/(1+a)²) / a³`
fn g_over_a3(a: f64) -> f64 {
    if a < SERIES_CUTOFF {
        (3..SERIES_TERMS)
            .map(|k| {
                let k = k as f64;
                let sign = if k as i64 % 2 == 0 { 1.0 } else { -1.0 };
                sign * (k - 1.0) * (k - 2.0) / k * a.powf(k - 3.0)
            })
            .sum()
    } else {
        let b = 1.0 + a;
        (-2.0 * a.ln_1p() + 2.0 * a / b + a * a / (b * b)) / (a * a * a)
    }
}

/// Log-likelihood in `v` with the means held fixed, with first and second derivatives.
fn profile(y: &[f64], mu: &[f64], w: &[f64], v: f64) -> (f64, f64, f64) {
    let (mut ll, mut g, mut h) = (0.0, 0.0, 0.0);
    for ((&y, &m), &w) in y.iter().zip(mu).zip(w) {
        ll += w * negbin_log_density(y, m, v);
        let a = v * m;
        let (mut s1, mut s2) = (0.0, 0.0);
        for j in 0..y as u64 {
            let j = j as f64;
            let d = 1.0 + j * v;
            s1 += j / d;
            s2 += j * j / (d * d);
        }
        let b = 1.0 + a;
        g += w * (s1 + m * m * f_over_a2(a) - y * m / b);
        h += w * (-s2 + y * m * m / (b * b) + m * m * m * g_over_a3(a));
    }
    (ll, g, h)
}

/// Maximise the likelihood over `v ≥ 0` for fixed means; 0 when the maximum is on the boundary.
pub(crate) fn maximize_v(y: &[f64], mu: &[f64], w: &[f64], start: Option<f64>) -> f64 {
    let (_, g0, _) = profile(y, mu, w, 0.0);
    if g0 <= 0.0 {
        return 0.0;
    }
    let moment = {
        let num: f64 = (0..y.len()).map(|i| w[i] * ((y[i] - mu[i]).powi(2) - y[i])).sum();
        let den: f64 = (0..y.len()).map(|i| w[i] * mu[i] * mu[i]).sum();
        num / den
    };
    let v0 = start.filter(|v| *v > 0.0).unwrap_or(moment).max(1e-6);
    let mut u = v0.ln();
    let lower = (POISSON_LIMIT_FLOOR * 1e-4).ln();
    for _ in 0..500 {
        let v = u.exp();
        let (ll, g, h) = profile(y, mu, w, v);
        let gu = v * g;
        let hu = v * v * h + v * g;
        let step = if hu < 0.0 { -gu / hu } else { gu.signum() }.clamp(-3.0, 3.0);
        let mut t = 1.0;
        loop {
            let cand = u + t * step;
            let (ll_c, _, _) = profile(y, mu, w, cand.exp());
            if ll_c >= ll - 1e-13 * ll.abs() {
                u = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return v;
            }
        }
        if (t * step).abs() < 1e-11 {
            break;
        }
        if u < lower {
            return 0.0;
        }
        if u > 30.0 {
            break;
        }
    }
    u.exp()
}

fn poisson_limit(mut model: FittedModel) -> FittedModel {
    model.poisson_limit = true;
    model
}

/// Negative binomial fit alternating IRLS for β with Newton steps for `v`.
///
/// When `v̂` falls below [`POISSON_LIMIT_FLOOR`] or the likelihood-ratio
/// statistic against the Poisson fit is under [`POISSON_LIMIT_LR`], the
/// Poisson fit is returned with `poisson_limit` set.
pub fn fit_negbin(design: &DesignMatrix, link: Link, control: &FitControl) -> Result<FittedModel> {
    let pois = fit(design, Family::Poisson, link, control)?;
    let (y, w) = (&design.y, &design.weights);
    let mut v = maximize_v(y, &pois.fitted, w, None);
    if v < POISSON_LIMIT_FLOOR {
        return Ok(poisson_limit(pois));
    }
    let mut model = fit_from(design, Family::NegativeBinomial { v }, link, control, Some(&pois.fitted))?;
    for _ in 0..control.max_iter {
        let next = maximize_v(y, &model.fitted, w, Some(v));
        if next < POISSON_LIMIT_FLOOR {
            return Ok(poisson_limit(pois));
        }
        let settled = (next - v).abs() <= 1e-9 * v;
        v = next;
        model = fit_from(design, Family::NegativeBinomial { v }, link, control, Some(&model.fitted))?;
        if settled {
            break;
        }
    }
    if 2.0 * (model.log_likelihood - pois.log_likelihood) < POISSON_LIMIT_LR {
        return Ok(poisson_limit(pois));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_closed_forms_agree_at_the_cutoff() {
        for a in [0.05f64, 0.0999, 0.1001, 0.2] {
            let f = (a.ln_1p() - a / (1.0 + a)) / (a * a);
            let b = 1.0 + a;
            let g = (-2.0 * a.ln_1p() + 2.0 * a / b + a * a / (b * b)) / (a * a * a);
            assert!((f_over_a2(a) - f).abs() < 1e-9, "{a}");
            assert!((g_over_a3(a) - g).abs() < 1e-6, "{a}");
        }
        assert!((f_over_a2(0.0) - 0.5).abs() < 1e-15);
        assert!((g_over_a3(0.0) + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn profile_derivatives_match_finite_differences() {
        let y = [0.0, 1.0, 3.0, 0.0, 7.0, 2.0];
        let mu = [0.4, 1.2, 2.0, 0.9, 3.5, 1.1];
        let w = [1.0, 1.0, 2.0, 1.0, 1.0, 0.5];
        for v in [1e-5f64, 0.03, 0.4, 2.5] {
            let h = 1e-5 * v.max(1e-3);
            let (_, g, hh) = profile(&y, &mu, &w, v);
            let (lp, gp, _) = profile(&y, &mu, &w, v + h);
            let (lm, gm, _) = profile(&y, &mu, &w, v - h);
            let fd_g = (lp - lm) / (2.0 * h);
            let fd_h = (gp - gm) / (2.0 * h);
            assert!((g - fd_g).abs() < 1e-5 * g.abs().max(1.0), "g at {v}: {g} vs {fd_g}");
            assert!((hh - fd_h).abs() < 1e-4 * hh.abs().max(1.0), "h at {v}: {hh} vs {fd_h}");
        }
        let (_, g0, _) = profile(&y, &mu, &w, 0.0);
        let direct: f64 = (0..6).map(|i| 0.5 * w[i] * ((y[i] - mu[i]).powi(2) - y[i])).sum();
        assert!((g0 - direct).abs() < 1e-12);
    }

    #[test]
    fn maximizer_zeroes_the_score() {
        let y = [0.0, 4.0, 0.0, 6.0, 1.0, 0.0, 9.0, 2.0];
        let mu = [1.5; 8];
        let w = [1.0; 8];
        let v = maximize_v(&y, &mu, &w, None);
        assert!(v > 0.0);
        let (_, g, h) = profile(&y, &mu, &w, v);
        assert!(g.abs() < 1e-8, "score {g}");
        assert!(h < 0.0);
    }

    #[test]
    fn underdispersed_counts_hit_the_boundary() {
        let y = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let mu = [1.5; 6];
        assert_eq!(maximize_v(&y, &mu, &[1.0; 6], None), 0.0);
    }
}
