//! Closed-form Black-Scholes call price and Greeks (zero rates).

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn d1(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    ((s / k).ln() + 0.5 * sigma * sigma * tau) / (sigma * tau.sqrt())
}

/// Call price with time to maturity `tau`. Degenerate inputs fall back to the intrinsic value.
pub fn bs_call_price(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return (s - k).max(0.0);
    }
    let n = std_normal();
    let d1 = d1(s, k, sigma, tau);
    let d2 = d1 - sigma * tau.sqrt();
    s * n.cdf(d1) - k * n.cdf(d2)
}

pub fn bs_call_delta(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    std_normal().cdf(d1(s, k, sigma, tau))
}

pub fn bs_call_gamma(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return 0.0;
    }
    std_normal().pdf(d1(s, k, sigma, tau)) / (s * sigma * tau.sqrt())
}
