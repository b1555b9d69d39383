//! Empirical surrogates for the terms of the transfer bound: the on/off
//! manifold risk split, the consistency gap ε_c, the geometric discrepancy
//! and an oracle upper bound on the joint-hypothesis risk λ*.
//!
//! Every field is an empirical quantity measured on finite samples, never
//! the population value the theory refers to.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradcore::sq_dist;
use crate::losses::loss_adv;
use crate::manifold::{geo_discrepancy, GeoDBreakdown};
use crate::model::{self, input_gradients, InputLoss, ModelParams};
use crate::trainer::{evaluate, perturb_batch, train_erm, ChartCache, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSplit {
    /// Mean cross-entropy on the raw target test points.
    pub on_manifold_error: f64,
    /// Mean of `CE(f(x_off), y) + |f(x_off) - f(x)|²` over the same points.
    pub off_manifold_sensitivity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonC {
    pub mean: f64,
    pub max: f64,
}

/// The sample-complexity term `C/(ε²n)`. Its constant is unknown, so only
/// the substituted symbols are reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicTerm {
    pub expression: String,
    pub epsilon: f64,
    pub n: usize,
    pub computable: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// 0-1 error of the model on the labeled source set.
    pub r_hat_s: f64,
    pub epsilon_c: EpsilonC,
    pub geod: GeoDBreakdown,
    /// Pooled-ERM risk sum; an upper bound on the ideal joint risk.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_star_upper: Option<f64>,
    pub c_over_eps2n: SymbolicTerm,
    /// Sum of the numeric terms above.
    pub rhs_partial: f64,
}

fn input_loss<'a>(labels: &'a Option<Vec<usize>>) -> InputLoss<'a> {
    match labels {
        Some(y) => InputLoss::Labels(y),
        None => InputLoss::Entropy,
    }
}

/// Splits the target risk into its on-manifold and off-manifold parts.
/// Off-manifold points use charts computed on `target_test` itself and
/// step `beta` along the normalized off-manifold gradient component.
pub fn risk_split(params: &ModelParams, target_test: &Dataset, beta: f64, k: usize, m: usize) -> Result<RiskSplit> {
    if target_test.is_empty() {
        return Err(Error::Data("risk split needs a nonempty target test set".into()));
    }
    let labels = target_test.labels()?;
    let x = &target_test.x;
    let on = model::cross_entropy(params, x, &labels)?;
    let mut cache = ChartCache::new(x, k, m)?;
    let idx: Vec<usize> = (0..x.rows()).collect();
    let g = input_gradients(params, x, InputLoss::Labels(&labels))?;
    let (_, x_off) = perturb_batch(&mut cache, &idx, x, &g, 0.0, beta, crate::perturb::DEFAULT_NORM_FLOOR)?;
    let off = loss_adv(params, x, &labels, &x_off)?;
    Ok(RiskSplit {
        on_manifold_error: on,
        off_manifold_sensitivity: off,
    })
}

/// Per-point `|f(x) - f(x_on)|` for an on-manifold step of size `alpha`.
/// Labeled sets use the cross-entropy gradient, unlabeled ones the
/// prediction entropy, matching how the trainer treats source and target.
pub fn consistency_gaps(params: &ModelParams, points: &Dataset, alpha: f64, k: usize, m: usize) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Data("consistency gap needs a nonempty point set".into()));
    }
    let x = &points.x;
    let labels = points.is_fully_labeled().then(|| points.labels()).transpose()?;
    let g = input_gradients(params, x, input_loss(&labels))?;
    let mut cache = ChartCache::new(x, k, m)?;
    let idx: Vec<usize> = (0..x.rows()).collect();
    let (x_on, _) = perturb_batch(&mut cache, &idx, x, &g, alpha, 0.0, crate::perturb::DEFAULT_NORM_FLOOR)?;
    let p = model::predict_proba(params, x)?;
    let p_on = model::predict_proba(params, &x_on)?;
    Ok((0..x.rows()).map(|i| sq_dist(p.row(i), p_on.row(i)).sqrt()).collect())
}

/// Mean and max of [`consistency_gaps`].
pub fn measure_epsilon_c(params: &ModelParams, points: &Dataset, alpha: f64, k: usize, m: usize) -> Result<EpsilonC> {
    let gaps = consistency_gaps(params, points, alpha, k, m)?;
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let max = gaps.iter().copied().fold(0.0, f64::max);
    Ok(EpsilonC { mean, max })
}

/// Trains a fresh ERM model on source plus oracle-labeled target and
/// returns the sum of its source and target 0-1 errors.
pub fn estimate_lambda_star(config: &TrainConfig, source: &Dataset, target_oracle: &Dataset) -> Result<f64> {
    if !target_oracle.is_fully_labeled() || target_oracle.is_empty() {
        return Err(Error::Data("lambda* estimate needs oracle labels on every target point".into()));
    }
    let pooled = source.concat(target_oracle, "pooled")?;
    let (params, _) = train_erm(&config.erm_baseline(), &pooled)?;
    let (acc_s, _) = evaluate(&params, source)?;
    let (acc_t, _) = evaluate(&params, target_oracle)?;
    Ok((1.0 - acc_s) + (1.0 - acc_t))
}

/// Assembles the bound terms. ε_c is measured on the target cloud at step
/// `config.alpha`; λ* is estimated only when `target_oracle` is given.
pub fn bound_report(
    params: &ModelParams,
    source: &Dataset,
    target: &Dataset,
    target_oracle: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<BoundReport> {
    let (acc_s, _) = evaluate(params, source)?;
    let r_hat_s = 1.0 - acc_s;
    let epsilon_c = measure_epsilon_c(params, target, config.alpha, config.k, config.m)?;
    let geod = geo_discrepancy(&source.x, &target.x, config.k, config.m)?;
    let lambda_star_upper = target_oracle
        .map(|t| estimate_lambda_star(config, source, t))
        .transpose()?;
    let mut rhs_partial = r_hat_s + epsilon_c.mean + geod.total;
    if let Some(l) = lambda_star_upper {
        rhs_partial += l;
    }
    let n = source.len();
    let c_over_eps2n = SymbolicTerm {
        expression: format!("C / ({}^2 * {n})", config.beta),
        epsilon: config.beta,
        n,
        computable: false,
        note: "not computable: the constant C is unknown; excluded from rhs_partial".into(),
    };
    Ok(BoundReport {
        r_hat_s,
        epsilon_c,
        geod,
        lambda_star_upper,
        c_over_eps2n,
        rhs_partial,
    })
}

impl BoundReport {
    /// The numeric terms in the order they are summed into `rhs_partial`.
    pub fn components(&self) -> Vec<f64> {
        let mut c = vec![self.r_hat_s, self.epsilon_c.mean, self.geod.total];
        c.extend(self.lambda_star_upper);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, rotate, Domain};
    use crate::model::init_mlp;

    fn moons(seed: u64) -> Dataset {
        gen_two_moons(60, 0.1, seed).unwrap()
    }

    #[test]
    fn zero_beta_split_collapses() {
        let ds = moons(3);
        let p = init_mlp(&[2, 16, 2], 1).unwrap();
        let r = risk_split(&p, &ds, 0.0, 5, 1).unwrap();
        assert_eq!(r.on_manifold_error, r.off_manifold_sensitivity);
        assert!(r.on_manifold_error >= 0.0);
    }

    #[test]
    fn split_needs_labels() {
        let ds = moons(3).without_labels();
        let p = init_mlp(&[2, 16, 2], 1).unwrap();
        assert!(matches!(risk_split(&p, &ds, 0.1, 5, 1), Err(Error::Data(_))));
    }

    #[test]
    fn epsilon_c_degenerate_cases() {
        let ds = moons(4);
        let p = init_mlp(&[2, 16, 2], 1).unwrap();
        let e = measure_epsilon_c(&p, &ds, 0.0, 5, 1).unwrap();
        assert_eq!((e.mean, e.max), (0.0, 0.0));
        let e = measure_epsilon_c(&p.zeros_like(), &ds, 0.3, 5, 1).unwrap();
        assert_eq!((e.mean, e.max), (0.0, 0.0));
    }

    #[test]
    fn epsilon_c_recomputed_by_hand() {
        let ds = moons(5).without_labels();
        let p = init_mlp(&[2, 16, 2], 2).unwrap();
        let gaps = consistency_gaps(&p, &ds, 0.2, 5, 1).unwrap();
        assert!(gaps.iter().all(|&g| g >= 0.0));
        let e = measure_epsilon_c(&p, &ds, 0.2, 5, 1).unwrap();
        assert!(e.max >= e.mean);
        assert!(e.mean > 0.0);
        assert_eq!(e.max, gaps.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn report_on_identical_clouds() {
        let s = moons(6);
        let cfg = TrainConfig {
            layer_sizes: vec![2, 8, 2],
            k: 5,
            epochs: 2,
            ..Default::default()
        };
        let p = init_mlp(&cfg.layer_sizes, 0).unwrap();
        let r = bound_report(&p, &s, &s, None, &cfg).unwrap();
        assert_eq!(r.geod.supinf, 0.0);
        assert!(r.geod.curvgap < 1e-9);
        assert!(r.lambda_star_upper.is_none());
        assert!((r.rhs_partial - (r.r_hat_s + r.epsilon_c.mean + r.geod.total)).abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("lambda_star_upper").is_none());
        assert_eq!(json["c_over_eps2n"]["computable"], false);
    }

    #[test]
    fn lambda_star_requires_oracle_labels() {
        let s = moons(7);
        let t = rotate(&s, 0.3, Some(Domain::Target), true).unwrap();
        let cfg = TrainConfig {
            layer_sizes: vec![2, 8, 2],
            k: 5,
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(estimate_lambda_star(&cfg, &s, &t), Err(Error::Data(_))));
    }
}
