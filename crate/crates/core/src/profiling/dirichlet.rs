use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardUniform};

use super::ProfilingError;

/// Log of one Gamma(shape, 1) variate. Shapes below one use
/// `G(a) = G(a + 1) * U^(1/a)`, evaluated in log space so tiny shapes do
/// not underflow to zero.
fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape checked positive");
        return g.sample(rng).ln();
    }
    let g = Gamma::new(shape + 1.0, 1.0).expect("shape checked positive");
    let u: f64 = StandardUniform.sample(rng);
    // u in [0, 1); map 0 to the smallest positive double.
    let ln_u = u.max(f64::MIN_POSITIVE).ln();
    g.sample(rng).ln() + ln_u / shape
}

fn log_draw_once<R: Rng + ?Sized>(shape: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = shape.iter().map(|&a| log_gamma_variate(a, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logs.into_iter().map(|l| l - norm).collect()
}

/// Log-probabilities of one Dirichlet(shape) draw.
pub fn dirichlet_log_draw<R: Rng + ?Sized>(shape: &[f64], rng: &mut R) -> Result<Vec<f64>, ProfilingError> {
    if shape.is_empty() || shape.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(ProfilingError::BadShape);
    }
    for _ in 0..2 {
        let logs = log_draw_once(shape, rng);
        if logs.iter().all(|l| l.is_finite() || *l == f64::NEG_INFINITY) && logs.iter().any(|l| l.is_finite()) {
            return Ok(logs);
        }
        log::warn!("non-finite Dirichlet draw; retrying once");
    }
    Err(ProfilingError::NonFinite)
}

/// One Dirichlet(shape) draw: independent Gamma(shape_i, 1) variates,
/// normalised to sum to one.
pub fn dirichlet_draw<R: Rng + ?Sized>(shape: &[f64], rng: &mut R) -> Result<Vec<f64>, ProfilingError> {
    Ok(dirichlet_log_draw(shape, rng)?.into_iter().map(f64::exp).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Closed-form Dirichlet moments.
    fn moments(shape: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a0: f64 = shape.iter().sum();
        let mean = shape.iter().map(|a| a / a0).collect();
        let var = shape.iter().map(|a| a * (a0 - a) / (a0 * a0 * (a0 + 1.0))).collect();
        (mean, var)
    }

    fn empirical(shape: &[f64], draws: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut r = rng::stream(seed);
        let k = shape.len();
        let (mut s1, mut s2) = (vec![0.0; k], vec![0.0; k]);
        for _ in 0..draws {
            let x = dirichlet_draw(shape, &mut r).unwrap();
            for i in 0..k {
                s1[i] += x[i];
                s2[i] += x[i] * x[i];
            }
        }
        let n = draws as f64;
        let mean: Vec<f64> = s1.iter().map(|s| s / n).collect();
        let var = s2.iter().zip(&mean).map(|(s, m)| s / n - m * m).collect();
        (mean, var)
    }

    #[test]
    fn draws_sum_to_one() {
        let mut r = rng::stream(1);
        for shape in [vec![0.001; 60], vec![5.0, 0.2, 1.0], vec![1e6, 1e-6]] {
            let x = dirichlet_draw(&shape, &mut r).unwrap();
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_shapes_keep_finite_logs() {
        let mut r = rng::stream(5);
        let logs = dirichlet_log_draw(&[1e-4; 60], &mut r).unwrap();
        assert!(logs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn concentration_limit() {
        let mut shape = vec![1e-3; 10];
        shape[4] = 1e6;
        let x = dirichlet_draw(&shape, &mut rng::stream(2)).unwrap();
        assert!(x[4] > 0.9999);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut r = rng::stream(0);
        assert!(dirichlet_draw(&[], &mut r).is_err());
        assert!(dirichlet_draw(&[1.0, 0.0], &mut r).is_err());
        assert!(dirichlet_draw(&[1.0, f64::NAN], &mut r).is_err());
    }

    #[test]
    fn moments_match_closed_form() {
        for (seed, shape) in [
            (11, vec![0.3, 1.0, 2.5, 6.0]),
            (12, vec![0.05, 0.05, 0.9]),
            (13, (1..=12).map(|i| i as f64 * 0.4).collect()),
        ] {
            let (m, v) = moments(&shape);
            let (em, ev) = empirical(&shape, 100_000, seed);
            for i in 0..shape.len() {
                assert!((em[i] - m[i]).abs() < 1e-2, "mean {i}: {} vs {}", em[i], m[i]);
                assert!((ev[i] - v[i]).abs() / v[i] < 0.2, "var {i}: {} vs {}", ev[i], v[i]);
            }
        }
    }
}
