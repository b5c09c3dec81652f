//! Privacy budget of the differentially private solver, noise calibration and
//! Laplace sampling statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Scalars entering the budget bound. `c` may be omitted for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInput {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub psi: f64,
    #[serde(default)]
    pub c: Option<f64>,
    pub phi: f64,
    /// `sup_{v ∈ Ω} ‖v‖`.
    #[serde(rename = "B", alias = "sup_norm")]
    pub sup_norm: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    pub sigma_min_w: f64,
}

impl BudgetInput {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("n and m must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("psi", self.psi),
            ("phi", self.phi),
            ("B", self.sup_norm),
            ("delta_a", self.delta_a),
            ("delta_b", self.delta_b),
            ("sigma_min_w", self.sigma_min_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.psi >= self.phi {
            return Err(Error::InfiniteBudget {
                psi: self.psi,
                phi: self.phi,
            });
        }
        Ok(())
    }

    /// Everything except `λ / c` and the schedule factor.
    fn sensitivity(&self) -> f64 {
        ((self.n * self.m) as f64).sqrt() * (self.sup_norm * self.delta_a + self.delta_b)
            / self.sigma_min_w
    }

    fn schedule_factor(&self) -> f64 {
        self.phi / (self.phi - self.psi)
    }
}

/// Left side of the privacy certificate; the run is ε-private when this is at most ε.
pub fn budget_lhs(inp: &BudgetInput) -> Result<f64> {
    inp.validate()?;
    let c = inp
        .c
        .ok_or_else(|| Error::InvalidParameter("c is required".into()))?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    Ok(inp.schedule_factor() * (inp.lambda / c) * inp.sensitivity())
}

/// Smallest noise base `c` certifying `target_eps`.
pub fn calibrate_c(target_eps: f64, inp: &BudgetInput) -> Result<f64> {
    inp.validate()?;
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("target epsilon {target_eps}")));
    }
    Ok(inp.schedule_factor() * inp.lambda * inp.sensitivity() / target_eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceRow {
    pub t: usize,
    pub scale: f64,
    pub expected_variance: f64,
    pub variance: f64,
    pub mean: f64,
    /// `|var / expected − 1|`, computed on samples divided by the scale.
    pub variance_rel_error: f64,
    /// Mean of the scaled samples in units of its standard error.
    pub mean_z: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub samples: usize,
    pub rows: Vec<LaplaceRow>,
    pub all_ok: bool,
}

/// Empirical moments of `Lap(c φ^t)` draws for `t = 0..=t_max`.
pub fn laplace_stats_check(c: f64, phi: f64, t_max: usize, samples: usize, seed: u64) -> Result<LaplaceReport> {
    if samples < 1000 {
        return Err(Error::InvalidParameter("at least 1000 samples needed".into()));
    }
    if !(c >= 0.0 && c.is_finite() && phi >= 0.0 && phi.is_finite()) {
        return Err(Error::InvalidParameter("c and phi must be finite and non-negative".into()));
    }
    let mut rows = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let scale = c * phi.powi(t as i32);
        let mut r = rng::stream(seed, &[t as u64]);
        let draws: Vec<f64> = (0..samples).map(|_| rng::laplace(&mut r, scale)).collect();
        let mean = draws.iter().sum::<f64>() / samples as f64;
        let variance = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let (variance_rel_error, mean_z, ok) = if scale > 0.0 {
            let unit: Vec<f64> = draws.iter().map(|x| x / scale).collect();
            let um = unit.iter().sum::<f64>() / samples as f64;
            let uv = unit.iter().map(|x| (x - um).powi(2)).sum::<f64>() / (samples - 1) as f64;
            let rel = (uv / 2.0 - 1.0).abs();
            let z = um / (uv / samples as f64).sqrt();
            (rel, z, rel <= 0.1 && z.abs() <= 4.0)
        } else {
            let exact = draws.iter().all(|&x| x == 0.0);
            (0.0, 0.0, exact)
        };
        rows.push(LaplaceRow {
            t,
            scale,
            expected_variance: 2.0 * scale * scale,
            variance,
            mean,
            variance_rel_error,
            mean_z,
            ok,
        });
    }
    let all_ok = rows.iter().all(|r| r.ok);
    Ok(LaplaceReport { samples, rows, all_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> BudgetInput {
        BudgetInput {
            n: 4,
            m: 2,
            lambda: 1.0,
            psi: 0.45,
            c: Some(1.0),
            phi: 0.9,
            sup_norm: 1.0,
            delta_a: 0.5,
            delta_b: 0.5,
            sigma_min_w: 1.0,
        }
    }

    #[test]
    fn tiny_step_means_tiny_budget() {
        let inp = BudgetInput { lambda: 1e-300, ..base() };
        assert!(budget_lhs(&inp).unwrap() < 1e-290);
    }

    #[test]
    fn hand_computed_value() {
        // B δ_A + δ_b = σ_m(W) and λ = c leave (φ/(φ−ψ))·√(nm) = 2√8.
        let lhs = budget_lhs(&base()).unwrap();
        assert!((lhs - 2.0 * 8f64.sqrt()).abs() < 1e-12);
        assert!((lhs - 5.657).abs() < 1e-3);
    }

    #[test]
    fn equal_decays_are_rejected() {
        let inp = BudgetInput { psi: 0.9, ..base() };
        assert!(matches!(budget_lhs(&inp), Err(Error::InfiniteBudget { .. })));
        assert!(calibrate_c(1.0, &inp).is_err());
    }

    #[test]
    fn doubling_epsilon_halves_c() {
        let a = calibrate_c(2.0, &base()).unwrap();
        let b = calibrate_c(4.0, &base()).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn budget_input_json_uses_capital_b() {
        let s = r#"{"n":4,"m":2,"lambda":1,"psi":0.45,"phi":0.9,"B":1,"delta_a":0.5,"delta_b":0.5,"sigma_min_w":1}"#;
        let inp: BudgetInput = serde_json::from_str(s).unwrap();
        assert_eq!(inp.c, None);
        assert_eq!(inp.sup_norm, 1.0);
        assert!(budget_lhs(&inp).is_err());
    }

    #[test]
    fn laplace_variance_at_unit_scale() {
        let r = laplace_stats_check(1.0, 1.0, 0, 100_000, 1).unwrap();
        assert!((r.rows[0].variance - 2.0).abs() < 0.2);
        assert!(r.all_ok);
    }

    #[test]
    fn laplace_variance_after_decay() {
        let r = laplace_stats_check(1.0, 0.5, 2, 100_000, 2).unwrap();
        assert!((r.rows[2].expected_variance - 0.125).abs() < 1e-15);
        assert!((r.rows[2].variance / 0.125 - 1.0).abs() < 0.1);
        assert!(r.all_ok);
    }

    #[test]
    fn laplace_vanishing_scale() {
        let r = laplace_stats_check(1e-300, 0.5, 3, 1000, 3).unwrap();
        assert!(r.rows.iter().all(|row| row.variance < 1e-300));
        let r = laplace_stats_check(0.0, 0.5, 1, 1000, 3).unwrap();
        assert!(r.all_ok);
    }

    proptest! {
        #[test]
        fn budget_is_monotone(
            lambda in 0.01f64..10.0, c in 0.01f64..10.0, b in 0.1f64..10.0,
            da in 0.01f64..2.0, db in 0.01f64..2.0, s in 0.05f64..1.0,
            phi in 0.2f64..0.99, frac in 0.05f64..0.95, k in 1.01f64..3.0,
        ) {
            let inp = BudgetInput {
                n: 3, m: 2, lambda, psi: phi * frac, c: Some(c), phi,
                sup_norm: b, delta_a: da, delta_b: db, sigma_min_w: s,
            };
            let v = budget_lhs(&inp).unwrap();
            let up = [
                BudgetInput { lambda: lambda * k, ..inp },
                BudgetInput { delta_a: da * k, ..inp },
                BudgetInput { delta_b: db * k, ..inp },
                BudgetInput { sup_norm: b * k, ..inp },
            ];
            let down = [
                BudgetInput { c: Some(c * k), ..inp },
                BudgetInput { sigma_min_w: s * k, ..inp },
            ];
            for u in &up {
                prop_assert!(budget_lhs(u).unwrap() > v);
            }
            for d in &down {
                prop_assert!(budget_lhs(d).unwrap() < v);
            }
            let back = calibrate_c(v, &inp).unwrap();
            prop_assert!((back / c - 1.0).abs() < 1e-12);
        }
    }
}
