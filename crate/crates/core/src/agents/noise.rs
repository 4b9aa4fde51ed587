//! Ornstein-Uhlenbeck exploration noise for the continuous action.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mean-reverting noise process: `x += theta*(mu - x)*dt + sigma*sqrt(dt)*N`.
#[derive(Debug, Clone)]
pub struct OuNoise {
    state: f64,
    mean: f64,
    theta: f64,
    sigma: f64,
    dt: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64, dt: f64) -> Self {
        Self {
            state: 0.0,
            mean: 0.0,
            theta,
            sigma,
            dt,
        }
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    pub fn value(&self) -> f64 {
        self.state
    }

    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let shock: f64 = StandardNormal.sample(rng);
        self.state += self.theta * (self.mean - self.state) * self.dt
            + self.sigma * self.dt.sqrt() * shock;
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_volatility_decays_toward_mean() {
        let mut noise = OuNoise::new(0.15, 0.0, 1.0);
        noise.state = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut previous = 1.0f64;
        for _ in 0..50 {
            let value = noise.sample(&mut rng);
            assert!(value.abs() < previous.abs() || value == 0.0);
            previous = value;
        }
        assert!(previous.abs() < 1e-3);
    }

    #[test]
    fn identical_rngs_give_identical_paths() {
        let mut a = OuNoise::new(0.15, 0.2, 1.0);
        let mut b = OuNoise::new(0.15, 0.2, 1.0);
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(a.sample(&mut rng_a), b.sample(&mut rng_b));
        }
    }
}
