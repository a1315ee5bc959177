//! Chi-square tail probabilities behind the scaled deviance and Pearson tests.

use autorate::special::{chi_square_survival, gamma_p, ln_gamma};

fn main() {
    for (x, df) in [(106.5, 100.0), (105.9, 100.0), (9563.6, 9761.0), (9646.4, 9761.0)] {
        println!("P(chi2_{df} > {x}) = {:.4}", chi_square_survival(x, df));
    }
    println!("P(3, 2.5) = {:.6}", gamma_p(3.0, 2.5));
    println!("ln Gamma(0.5) = {:.12} (ln sqrt(pi) = {:.12})", ln_gamma(0.5), std::f64::consts::PI.sqrt().ln());
}
