//! Two-sided exponential (asymmetric Laplace) family.
//!
//! Density `K·exp(λ_L·(x−θ))` left of the location θ and `K·exp(−λ_R·(x−θ))`
//! right of it, with `K = λ_L·λ_R / (λ_L + λ_R)`. The plain Laplace
//! distribution is the symmetric case `λ_L = λ_R = 1/b`; the attacker's tilted
//! density is `λ_L = 1/b + 1/c`, `λ_R = 1/b − 1/c`.
//!
//! All sampling goes through a single uniform so that draws are monotone in
//! the uniform (handy for common-random-number comparisons).

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymmetricLaplace {
    pub loc: f64,
    pub left_rate: f64,
    pub right_rate: f64,
}

impl AsymmetricLaplace {
    pub fn laplace(mean: f64, scale: f64) -> Self {
        AsymmetricLaplace {
            loc: mean,
            left_rate: 1.0 / scale,
            right_rate: 1.0 / scale,
        }
    }

    fn norm(&self) -> f64 {
        self.left_rate * self.right_rate / (self.left_rate + self.right_rate)
    }

    /// Probability mass left of the location.
    fn left_mass(&self) -> f64 {
        self.right_rate / (self.left_rate + self.right_rate)
    }

    pub fn mean(&self) -> f64 {
        self.loc + 1.0 / self.right_rate - 1.0 / self.left_rate
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let d = x - self.loc;
        if d < 0.0 {
            self.norm() * (self.left_rate * d).exp()
        } else {
            self.norm() * (-self.right_rate * d).exp()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let d = x - self.loc;
        if d < 0.0 {
            self.left_mass() * (self.left_rate * d).exp()
        } else {
            1.0 - (1.0 - self.left_mass()) * (-self.right_rate * d).exp()
        }
    }

    /// Inverse CDF on `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        let pl = self.left_mass();
        if p < pl {
            self.loc + (p / pl).ln() / self.left_rate
        } else {
            self.loc - ((1.0 - p) / (1.0 - pl)).ln() / self.right_rate
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }

    /// Inverse CDF of the distribution conditioned on `[lo, hi]`, evaluated
    /// at `u ∈ [0, 1]`. Works deep in either tail without cancellation.
    pub fn truncated_quantile(&self, u: f64, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        if lo >= hi {
            return lo;
        }
        let (theta, ll, lr) = (self.loc, self.left_rate, self.right_rate);
        let x = if lo >= theta {
            // right branch only: exponential tail starting at lo
            lo - (-u * exp_tail_mass(lr, hi - lo)).ln_1p() / lr
        } else if hi <= theta {
            // left branch only: reflected exponential ending at hi
            hi + (-(1.0 - u) * exp_tail_mass(ll, hi - lo)).ln_1p() / ll
        } else {
            // unnormalized masses of [lo, θ] and [θ, hi]
            let wl = exp_tail_mass(ll, theta - lo) / ll;
            let wr = exp_tail_mass(lr, hi - theta) / lr;
            let p = u * (wl + wr);
            if p < wl {
                let left = wl - p; // mass between x and θ
                theta + (-left * ll).ln_1p() / ll
            } else {
                theta - (-(p - wl) * lr).ln_1p() / lr
            }
        };
        x.clamp(lo, hi)
    }

    /// Exact draw from the distribution conditioned on `[lo, hi]`.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        self.truncated_quantile(rng.random::<f64>(), lo, hi)
    }
}

/// `1 − exp(−rate·width)`, accurate for tiny arguments; 1 for infinite width.
fn exp_tail_mass(rate: f64, width: f64) -> f64 {
    -(-rate * width).exp_m1()
}

/// Uniform on the open interval `(0, 1)`.
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn density_integrates_to_one_and_mean_matches() {
        let d = AsymmetricLaplace {
            loc: 0.7,
            left_rate: 2.0,
            right_rate: 0.5,
        };
        let (a, b) = (0.7 - 40.0, 0.7 + 120.0);
        let left = simpson(|x| d.pdf(x), a, 0.7, 200_000);
        let right = simpson(|x| d.pdf(x), 0.7, b, 200_000);
        assert!((left + right - 1.0).abs() < 1e-9);
        let mean = simpson(|x| x * d.pdf(x), a, 0.7, 200_000) + simpson(|x| x * d.pdf(x), 0.7, b, 200_000);
        assert!((mean - d.mean()).abs() < 1e-7);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = AsymmetricLaplace {
            loc: -1.0,
            left_rate: 1.3,
            right_rate: 0.2,
        };
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_quantile_matches_conditional_cdf() {
        let d = AsymmetricLaplace::laplace(2.0, 1.15);
        for &(lo, hi) in &[(-1.5, 10.0), (3.0, 6.0), (-5.0, 1.0), (2.0, 2.5)] {
            let (fa, fb) = (d.cdf(lo), d.cdf(hi));
            for i in 0..=20 {
                let u = i as f64 / 20.0;
                let x = d.truncated_quantile(u, lo, hi);
                assert!((lo..=hi).contains(&x));
                let p = (d.cdf(x) - fa) / (fb - fa);
                assert!((p - u).abs() < 1e-9, "lo={lo} hi={hi} u={u} p={p}");
            }
        }
    }

    #[test]
    fn truncated_quantile_deep_in_tail() {
        // 800 scales into the right tail; cdf-differencing would give 0/0
        let d = AsymmetricLaplace::laplace(0.0, 1.0);
        let x = d.truncated_quantile(0.5, 800.0, 801.0);
        let expected = 800.0 - (0.5 * (-1.0f64).exp() + 0.5).ln();
        assert!((x - expected).abs() < 1e-9);
        let y = d.truncated_quantile(0.5, -801.0, -800.0);
        assert!((y + expected).abs() < 1e-9);
    }

    #[test]
    fn truncated_quantile_is_monotone() {
        let d = AsymmetricLaplace {
            loc: 0.0,
            left_rate: 1.6,
            right_rate: 0.05,
        };
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let x = d.truncated_quantile(i as f64 / 1000.0, -3.0, 9.0);
            assert!(x >= prev);
            prev = x;
        }
    }

    #[test]
    fn samples_have_expected_mean() {
        let d = AsymmetricLaplace {
            loc: 0.0,
            left_rate: 1.0,
            right_rate: 0.5,
        };
        let mut rng = substream(5, Stream::Attack(0));
        let n = 200_000;
        let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - d.mean()).abs() < 0.03, "{m}");
    }
}
