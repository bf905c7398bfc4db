//! Two four-variable Gaussian systems with identical per-coordinate
//! marginals but different joints: per-factor MIC cannot tell them apart.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mic::{self, MicParams};
use crate::seed::{self, Stream};
use crate::stats;
use crate::Matrix;

/// How the coupled variables are built from `A'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// `V' = mu_v + rho * sigma_v * (A' - mu_a) / sigma_a + sqrt(1 - rho^2) * sigma_v * N(0,1)`;
    /// preserves every marginal exactly.
    #[default]
    Correlated,
    /// `V' = (mu_v / mu_a) A' + (sigma_v - (mu_v / mu_a) sigma_a) N(0,1)`,
    /// which only preserves the variance when `(mu_v / mu_a) sigma_a = sigma_v`.
    RatioScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    pub means: [f64; 4],
    pub sds: [f64; 4],
    pub rho: f64,
    #[serde(default)]
    pub construction: Construction,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        Self {
            means: [1.0, 2.0, -1.0, 3.0],
            sds: [1.0, 0.5, 2.0, 1.5],
            rho: 0.9,
            construction: Construction::Correlated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleBundle {
    /// Columns A, B, C, D: independent.
    pub original: Matrix,
    /// Columns A', B', C', D': coupled through A'.
    pub constructed: Matrix,
    pub params: CounterexampleParams,
}

pub fn gaussian_counterexample(
    params: CounterexampleParams,
    n: usize,
    seed_value: u64,
) -> Result<CounterexampleBundle> {
    if params.sds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(invalid("standard deviations must be positive"));
    }
    if !(params.rho > 0.0 && params.rho < 1.0) {
        return Err(invalid(format!(
            "coupling must lie in (0, 1), got {}",
            params.rho
        )));
    }
    if params.construction == Construction::RatioScaled && params.means[0] == 0.0 {
        return Err(invalid("ratio-scaled construction divides by mu_a"));
    }
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut rng = seed::stream_rng(seed_value, Stream::Counterexample);
    let mut original = Matrix::zeros(n, 4);
    let mut constructed = Matrix::zeros(n, 4);
    let normals: Vec<Normal<f64>> = (0..4)
        .map(|i| Normal::new(params.means[i], params.sds[i]).unwrap())
        .collect();
    let (mu_a, sd_a) = (params.means[0], params.sds[0]);
    let rho = params.rho;
    for r in 0..n {
        for c in 0..4 {
            original[(r, c)] = normals[c].sample(&mut rng);
        }
        let a = normals[0].sample(&mut rng);
        constructed[(r, 0)] = a;
        for c in 1..4 {
            let (mu, sd) = (params.means[c], params.sds[c]);
            let e: f64 = StandardNormal.sample(&mut rng);
            constructed[(r, c)] = match params.construction {
                Construction::Correlated => {
                    mu + rho * sd * (a - mu_a) / sd_a + (1.0 - rho * rho).sqrt() * sd * e
                }
                Construction::RatioScaled => {
                    let k = mu / mu_a;
                    k * a + (sd - k * sd_a) * e
                }
            };
        }
    }
    Ok(CounterexampleBundle {
        original,
        constructed,
        params,
    })
}

/// Marginal and joint comparison of the two systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSummary {
    pub ks: Vec<f64>,
    pub ks_critical: f64,
    pub mean_pairwise_mic_original: f64,
    pub mean_pairwise_mic_constructed: f64,
}

impl CounterexampleSummary {
    pub fn marginals_match(&self) -> bool {
        self.ks.iter().all(|&d| d < self.ks_critical)
    }

    pub fn mic_gap(&self) -> f64 {
        self.mean_pairwise_mic_constructed - self.mean_pairwise_mic_original
    }
}

fn mean_pairwise_mic(m: &Matrix, params: MicParams) -> Result<f64> {
    let cols: Vec<Vec<f64>> = (0..m.ncols())
        .map(|c| m.column(c).iter().copied().collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            total += mic::mic_with(&cols[i], &cols[j], params)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub fn summarize(
    bundle: &CounterexampleBundle,
    params: MicParams,
) -> Result<CounterexampleSummary> {
    let n = bundle.original.nrows();
    let ks = (0..4)
        .map(|c| {
            let a: Vec<f64> = bundle.original.column(c).iter().copied().collect();
            let b: Vec<f64> = bundle.constructed.column(c).iter().copied().collect();
            stats::ks_statistic(&a, &b)
        })
        .collect();
    Ok(CounterexampleSummary {
        ks,
        ks_critical: stats::ks_critical_value_5pct(n, n),
        mean_pairwise_mic_original: mean_pairwise_mic(&bundle.original, params)?,
        mean_pairwise_mic_constructed: mean_pairwise_mic(&bundle.constructed, params)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        let mut p = CounterexampleParams::default();
        p.rho = 1.0;
        assert!(gaussian_counterexample(p, 10, 0).is_err());
        let mut p = CounterexampleParams::default();
        p.sds[2] = 0.0;
        assert!(gaussian_counterexample(p, 10, 0).is_err());
        let mut p = CounterexampleParams::default();
        p.means[0] = 0.0;
        p.construction = Construction::RatioScaled;
        assert!(gaussian_counterexample(p, 10, 0).is_err());
    }

    #[test]
    fn weak_coupling_is_nearly_independent() {
        let mut p = CounterexampleParams::default();
        p.rho = 1e-9;
        let b = gaussian_counterexample(p, 4000, 5).unwrap();
        let a: Vec<f64> = b.constructed.column(0).iter().copied().collect();
        let c: Vec<f64> = b.constructed.column(1).iter().copied().collect();
        let (ma, va) = stats::mean_var(&a);
        let (mc, vc) = stats::mean_var(&c);
        let cov = a
            .iter()
            .zip(&c)
            .map(|(x, y)| (x - ma) * (y - mc))
            .sum::<f64>()
            / (a.len() - 1) as f64;
        assert!((cov / (va * vc).sqrt()).abs() < 0.05);
    }

    #[test]
    fn ratio_scaled_variance_formula() {
        // Var(B') = k^2 sa^2 + (sb - k sa)^2 for k = mu_b / mu_a
        let p = CounterexampleParams {
            means: [1.0, 3.0, 1.0, 1.0],
            sds: [1.0, 1.0, 1.0, 1.0],
            rho: 0.5,
            construction: Construction::RatioScaled,
        };
        let b = gaussian_counterexample(p, 40_000, 2).unwrap();
        let col: Vec<f64> = b.constructed.column(1).iter().copied().collect();
        let (_, v) = stats::mean_var(&col);
        let expected = 9.0 + 4.0;
        assert!((v - expected).abs() / expected < 0.05, "variance {v}");
    }
}
