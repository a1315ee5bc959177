use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Poisson};

use crate::glm::family::Family;

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// One draw with mean `mu`, prior weight `w` and dispersion `phi`.
pub fn sample_response<R: Rng + ?Sized>(family: Family, mu: f64, w: f64, phi: f64, rng: &mut R) -> f64 {
    match family {
        Family::Poisson => poisson(mu, rng),
        Family::NegativeBinomial { v } if v > 0.0 => {
            let lambda = Gamma::new(1.0 / v, v * mu).expect("valid gamma").sample(rng);
            poisson(lambda, rng)
        }
        Family::NegativeBinomial { .. } => poisson(mu, rng),
        Family::Gamma => {
            let shape = w / phi;
            Gamma::new(shape, mu / shape).expect("valid gamma").sample(rng)
        }
        Family::InverseGaussian => InverseGaussian::new(mu, w / phi)
            .expect("valid inverse gaussian")
            .sample(rng),
        Family::Bernoulli => {
            if rng.gen::<f64>() < mu {
                1.0
            } else {
                0.0
            }
        }
    }
}
