//! The four objective terms and their weighted total.
//!
//! Every term is recorded on a [`Tape`] by a builder shared between the
//! value functions (`loss_*`) and [`objective_gradient`], so the value that
//! is reported is exactly the value that is differentiated. Model outputs
//! `f(x)` inside the consistency and alignment terms are softmax
//! probabilities. Perturbed inputs and the kernel bandwidth enter the tape
//! as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{sq_dist, Inputs, Matrix, Tape, Var};
use crate::model::{check_labels, one_hot, predict_proba, ModelParams, ParamGradients, ParamVars};

/// Regularizer weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cons: f64,
    pub lambda_align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_cons: 1.0,
            lambda_align: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_adv: 0.0,
        lambda_cons: 0.0,
        lambda_align: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_cons", self.lambda_cons),
            ("lambda_align", self.lambda_align),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("weights.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_src: f64,
    pub l_adv: f64,
    pub l_cons: f64,
    pub l_align: f64,
}

/// Term values plus their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_src: f64,
    pub l_adv: f64,
    pub l_cons: f64,
    pub l_align: f64,
    pub l_total: f64,
}

/// Weighted sum `l_src + l_adv*adv + l_cons*cons + l_align*align`.
pub fn loss_total(c: LossComponents, w: LossWeights) -> Result<LossBreakdown> {
    for (term, v) in [
        ("l_src", c.l_src),
        ("l_adv", c.l_adv),
        ("l_cons", c.l_cons),
        ("l_align", c.l_align),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: term.into() });
        }
    }
    let l_total = c.l_src + w.lambda_adv * c.l_adv + w.lambda_cons * c.l_cons + w.lambda_align * c.l_align;
    if !l_total.is_finite() {
        return Err(Error::NonFinite { term: "l_total".into() });
    }
    Ok(LossBreakdown {
        l_src: c.l_src,
        l_adv: c.l_adv,
        l_cons: c.l_cons,
        l_align: c.l_align,
        l_total,
    })
}

/// Gaussian-kernel bandwidth selection for MMD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance over the pooled sample, floored at 1e-6.
    Median,
}

pub const MEDIAN_BANDWIDTH_FLOOR: f64 = 1e-6;

/// Median of all pairwise Euclidean distances among the rows of `a` and `b`
/// together.
pub fn median_heuristic(a: &Matrix, b: &Matrix) -> f64 {
    let rows: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).chain((0..b.rows()).map(|i| b.row(i))).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return MEDIAN_BANDWIDTH_FLOOR;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    med.max(MEDIAN_BANDWIDTH_FLOOR)
}

fn resolve_bandwidth(bw: Bandwidth, a: &Matrix, b: &Matrix) -> Result<f64> {
    match bw {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
        Bandwidth::Fixed(s) => Err(Error::Config(format!("MMD bandwidth must be > 0, got {s}"))),
        Bandwidth::Median => Ok(median_heuristic(a, b)),
    }
}

fn check_same_width(a: &Matrix, b: &Matrix, op: &'static str) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Data(format!("{op}: both samples must be nonempty")));
    }
    if a.cols() != b.cols() {
        return Err(Error::dim(op, format!("widths {} and {}", a.cols(), b.cols())));
    }
    Ok(())
}

/// Biased MMD² estimate with kernel `exp(-|u - v|² / 2σ²)`.
pub fn mmd_rbf(a: &Matrix, b: &Matrix, bandwidth: Bandwidth) -> Result<f64> {
    check_same_width(a, b, "mmd_rbf")?;
    let sigma = resolve_bandwidth(bandwidth, a, b)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let mean_k = |x: &Matrix, y: &Matrix| {
        let mut s = 0.0;
        for i in 0..x.rows() {
            for j in 0..y.rows() {
                s += (-gamma * sq_dist(x.row(i), y.row(j))).exp();
            }
        }
        s / (x.rows() * y.rows()) as f64
    };
    Ok(mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b))
}

/// Tape builders for the individual terms.
struct TermBuilder<'t> {
    tape: &'t mut Tape,
    pv: ParamVars,
}

impl TermBuilder<'_> {
    fn mean_ce(&mut self, log_p: Var, onehot: Matrix) -> Var {
        let n = onehot.rows() as f64;
        let oh = self.tape.constant(onehot);
        let picked = self.tape.mul(oh, log_p);
        let s = self.tape.sum(picked);
        self.tape.scale(s, -1.0 / n)
    }

    /// Sum over rows of `|p1 - p0|²`.
    fn sum_sq_diff(&mut self, p1: Var, p0: Var) -> Var {
        let d = self.tape.sub(p1, p0);
        let d2 = self.tape.square(d);
        self.tape.sum(d2)
    }

    /// Mean kernel value between the rows of `a` (n x c) and `b` (m x c).
    fn mean_kernel(&mut self, a: Var, b: Var, n: usize, m: usize, gamma: f64) -> Var {
        let t = &mut *self.tape;
        let a2 = t.square(a);
        let an = t.row_sum(a2);
        let b2 = t.square(b);
        let bn = t.row_sum(b2);
        let ones_m = t.constant(Matrix::filled(1, m, 1.0));
        let ones_n = t.constant(Matrix::filled(n, 1, 1.0));
        let left = t.matmul(an, ones_m);
        let bnt = t.transpose(bn);
        let right = t.matmul(ones_n, bnt);
        let bt = t.transpose(b);
        let ab = t.matmul(a, bt);
        let cross = t.scale(ab, -2.0);
        let s = t.add(left, right);
        let d2 = t.add(s, cross);
        let arg = t.scale(d2, -gamma);
        let k = t.exp(arg);
        t.mean(k)
    }

    fn mmd(&mut self, a: Var, b: Var, n: usize, m: usize, sigma: f64) -> Var {
        let gamma = 1.0 / (2.0 * sigma * sigma);
        let kaa = self.mean_kernel(a, a, n, n, gamma);
        let kbb = self.mean_kernel(b, b, m, m, gamma);
        let kab = self.mean_kernel(a, b, n, m, gamma);
        let s = self.tape.add(kaa, kbb);
        let k2 = self.tape.scale(kab, -2.0);
        self.tape.add(s, k2)
    }

    fn align(&mut self, ps: Var, pt: Var, n: usize, m: usize, sigma: f64) -> Var {
        let mmd = self.mmd(ps, pt, n, m, sigma);
        let mu_s = self.tape.col_mean(ps);
        let mu_t = self.tape.col_mean(pt);
        let centre = self.sum_sq_diff(mu_s, mu_t);
        self.tape.add(mmd, centre)
    }
}

fn new_builder<'t>(tape: &'t mut Tape, params: &ModelParams) -> TermBuilder<'t> {
    let pv = ParamVars::register(tape, params.layers().len());
    TermBuilder { tape, pv }
}

fn check_batch(params: &ModelParams, x: &Matrix, what: &str) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Data(format!("{what} batch is empty")));
    }
    if x.cols() != params.input_dim() {
        return Err(Error::dim(
            "losses",
            format!("{what} batch has {} features, model expects {}", x.cols(), params.input_dim()),
        ));
    }
    Ok(())
}

fn check_paired(x: &Matrix, xp: &Matrix, what: &str) -> Result<()> {
    if x.shape() != xp.shape() {
        return Err(Error::dim(
            "losses",
            format!("{what}: perturbed batch {:?} does not match {:?}", xp.shape(), x.shape()),
        ));
    }
    Ok(())
}

fn eval_scalar(tape: &Tape, pv: &ParamVars, params: &ModelParams, data: &[(&'static str, &Matrix)]) -> Result<f64> {
    let mut inputs = Inputs::new();
    for (n, m) in data {
        inputs.insert(n, m);
    }
    pv.bind(params, &mut inputs);
    tape.forward_eval(&inputs)?.scalar()
}

/// Mean cross-entropy on labeled source points.
pub fn loss_src(params: &ModelParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
    check_batch(params, x, "source")?;
    check_labels(labels, x.rows(), params.n_classes())?;
    let mut tape = Tape::new();
    let mut b = new_builder(&mut tape, params);
    let xv = b.tape.input("x");
    let lp = b.pv.log_proba(b.tape, xv);
    b.mean_ce(lp, one_hot(labels, params.n_classes()));
    let pv = b.pv;
    eval_scalar(&tape, &pv, params, &[("x", x)])
}

/// Mean of `CE(f(x_off), y) + |f(x_off) - f(x)|²`.
pub fn loss_adv(params: &ModelParams, x: &Matrix, labels: &[usize], x_off: &Matrix) -> Result<f64> {
    check_batch(params, x, "source")?;
    check_paired(x, x_off, "loss_adv")?;
    check_labels(labels, x.rows(), params.n_classes())?;
    let mut tape = Tape::new();
    let mut b = new_builder(&mut tape, params);
    let xv = b.tape.input("x");
    let xo = b.tape.input("x_off");
    let p = b.pv.proba(b.tape, xv);
    let lpo = b.pv.log_proba(b.tape, xo);
    let po = b.tape.exp(lpo);
    let ce = b.mean_ce(lpo, one_hot(labels, params.n_classes()));
    let sq = b.sum_sq_diff(po, p);
    let cons = b.tape.scale(sq, 1.0 / x.rows() as f64);
    b.tape.add(ce, cons);
    let pv = b.pv;
    eval_scalar(&tape, &pv, params, &[("x", x), ("x_off", x_off)])
}

/// Mean `|f(x_on) - f(x)|²`; labels are not needed.
pub fn loss_cons(params: &ModelParams, x: &Matrix, x_on: &Matrix) -> Result<f64> {
    check_batch(params, x, "consistency")?;
    check_paired(x, x_on, "loss_cons")?;
    let mut tape = Tape::new();
    let mut b = new_builder(&mut tape, params);
    let xv = b.tape.input("x");
    let xo = b.tape.input("x_on");
    let p = b.pv.proba(b.tape, xv);
    let po = b.pv.proba(b.tape, xo);
    let sq = b.sum_sq_diff(po, p);
    b.tape.scale(sq, 1.0 / x.rows() as f64);
    let pv = b.pv;
    eval_scalar(&tape, &pv, params, &[("x", x), ("x_on", x_on)])
}

/// MMD² between probability embeddings (median bandwidth) plus the squared
/// distance between the mean embeddings.
pub fn loss_align(params: &ModelParams, xs: &Matrix, xt: &Matrix) -> Result<f64> {
    check_batch(params, xs, "source")?;
    check_batch(params, xt, "target")?;
    let sigma = median_heuristic(&predict_proba(params, xs)?, &predict_proba(params, xt)?);
    let mut tape = Tape::new();
    let mut b = new_builder(&mut tape, params);
    let sv = b.tape.input("xs");
    let tv = b.tape.input("xt");
    let ps = b.pv.proba(b.tape, sv);
    let pt = b.pv.proba(b.tape, tv);
    b.align(ps, pt, xs.rows(), xt.rows(), sigma);
    let pv = b.pv;
    eval_scalar(&tape, &pv, params, &[("xs", xs), ("xt", xt)])
}

/// Perturbed batches and weights for the regularized objective.
#[derive(Clone, Copy, Debug)]
pub struct Regularizers<'a> {
    pub source_off: &'a Matrix,
    pub source_on: &'a Matrix,
    pub target_x: &'a Matrix,
    pub target_on: &'a Matrix,
    pub weights: LossWeights,
    pub bandwidth: Bandwidth,
}

/// One minibatch of the training objective. Without regularizers this is
/// plain source cross-entropy.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub source_x: &'a Matrix,
    pub source_y: &'a [usize],
    pub regularizers: Option<Regularizers<'a>>,
}

/// Total-loss value and parameter gradient. The perturbed inputs and the
/// bandwidth are held fixed.
pub fn objective_gradient(params: &ModelParams, obj: &Objective<'_>) -> Result<(LossBreakdown, ParamGradients)> {
    let xs = obj.source_x;
    check_batch(params, xs, "source")?;
    check_labels(obj.source_y, xs.rows(), params.n_classes())?;
    let n_s = xs.rows();
    let onehot = one_hot(obj.source_y, params.n_classes());

    let mut tape = Tape::new();
    let mut b = new_builder(&mut tape, params);
    let sv = b.tape.input("xs");
    let lps = b.pv.log_proba(b.tape, sv);
    let src = b.mean_ce(lps, onehot.clone());

    let mut terms: Option<(Var, Var, Var, LossWeights)> = None;
    if let Some(r) = &obj.regularizers {
        r.weights.validate()?;
        check_paired(xs, r.source_off, "source x_off")?;
        check_paired(xs, r.source_on, "source x_on")?;
        check_batch(params, r.target_x, "target")?;
        check_paired(r.target_x, r.target_on, "target x_on")?;
        let n_t = r.target_x.rows();
        let sigma = match r.bandwidth {
            Bandwidth::Median => median_heuristic(&predict_proba(params, xs)?, &predict_proba(params, r.target_x)?),
            bw => resolve_bandwidth(bw, xs, xs)?,
        };

        let ps = b.tape.exp(lps);
        let s_off = b.tape.input("xs_off");
        let lp_off = b.pv.log_proba(b.tape, s_off);
        let p_off = b.tape.exp(lp_off);
        let ce_off = b.mean_ce(lp_off, onehot);
        let sq_off = b.sum_sq_diff(p_off, ps);
        let cons_off = b.tape.scale(sq_off, 1.0 / n_s as f64);
        let adv = b.tape.add(ce_off, cons_off);

        let s_on = b.tape.input("xs_on");
        let p_s_on = b.pv.proba(b.tape, s_on);
        let tv = b.tape.input("xt");
        let pt = b.pv.proba(b.tape, tv);
        let t_on = b.tape.input("xt_on");
        let p_t_on = b.pv.proba(b.tape, t_on);
        let sq_s = b.sum_sq_diff(p_s_on, ps);
        let sq_t = b.sum_sq_diff(p_t_on, pt);
        let sq = b.tape.add(sq_s, sq_t);
        let cons = b.tape.scale(sq, 1.0 / (n_s + n_t) as f64);

        let align = b.align(ps, pt, n_s, n_t, sigma);

        let w = r.weights;
        let wa = b.tape.scale(adv, w.lambda_adv);
        let t1 = b.tape.add(src, wa);
        let wc = b.tape.scale(cons, w.lambda_cons);
        let t2 = b.tape.add(t1, wc);
        let wl = b.tape.scale(align, w.lambda_align);
        let total = b.tape.add(t2, wl);
        b.tape.set_output(total);
        terms = Some((adv, cons, align, w));
    }
    let pv = b.pv;

    let mut inputs = Inputs::new().bind("xs", xs);
    if let Some(r) = &obj.regularizers {
        inputs.insert("xs_off", r.source_off);
        inputs.insert("xs_on", r.source_on);
        inputs.insert("xt", r.target_x);
        inputs.insert("xt_on", r.target_on);
    }
    pv.bind(params, &mut inputs);
    let eval = tape.forward_eval(&inputs)?;

    let scalar = |v: Var| eval.value(v).get(0, 0);
    let (components, weights) = match terms {
        Some((adv, cons, align, w)) => (
            LossComponents {
                l_src: scalar(src),
                l_adv: scalar(adv),
                l_cons: scalar(cons),
                l_align: scalar(align),
            },
            w,
        ),
        None => (
            LossComponents {
                l_src: scalar(src),
                ..Default::default()
            },
            LossWeights::ZERO,
        ),
    };
    let breakdown = loss_total(components, weights)?;

    let names: Vec<&str> = pv.names().collect();
    let mut grads = tape.backward_grad(&eval, &names)?;
    let grads = pv.collect(&mut grads)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite { term: "gradient".into() });
    }
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{finite_diff_grad, relative_l2_error};
    use crate::model::{cross_entropy, init_mlp};

    fn batch() -> (Matrix, Vec<usize>) {
        (
            Matrix::from_rows(&[[0.1, 0.5], [1.2, -0.4], [-0.8, 0.3], [0.0, 1.0]]),
            vec![0, 1, 1, 0],
        )
    }

    #[test]
    fn loss_src_zero_net_is_ln2() {
        let m = init_mlp(&[2, 4, 2], 0).unwrap().zeros_like();
        let (x, y) = batch();
        assert!((loss_src(&m, &x, &y).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_src_is_cross_entropy_and_brute_sum() {
        let m = init_mlp(&[2, 5, 2], 3).unwrap();
        let (x, y) = batch();
        let a = loss_src(&m, &x, &y).unwrap();
        assert_eq!(a, cross_entropy(&m, &x, &y).unwrap());
        let mut hand = 0.0;
        for i in 0..x.rows() {
            let p = predict_proba(&m, &x.select_rows(&[i])).unwrap();
            hand += -p.get(0, y[i]).ln();
        }
        assert!((a - hand / 4.0).abs() < 1e-12);
    }

    #[test]
    fn loss_src_errors() {
        let m = init_mlp(&[2, 2], 0).unwrap();
        let (x, _) = batch();
        assert!(matches!(loss_src(&m, &x, &[0, 1]), Err(Error::Data(_))));
        assert!(matches!(loss_src(&m, &Matrix::zeros(0, 2), &[]), Err(Error::Data(_))));
    }

    #[test]
    fn loss_adv_without_perturbation_is_loss_src() {
        let m = init_mlp(&[2, 6, 2], 7).unwrap();
        let (x, y) = batch();
        assert_eq!(loss_adv(&m, &x, &y, &x).unwrap(), loss_src(&m, &x, &y).unwrap());
    }

    #[test]
    fn loss_adv_two_point_hand_computation() {
        let m = init_mlp(&[2, 4, 3], 8).unwrap();
        let x = Matrix::from_rows(&[[0.2, 0.1], [-0.5, 0.9]]);
        let xo = Matrix::from_rows(&[[0.3, 0.0], [-0.4, 1.0]]);
        let y = [2usize, 0];
        let p = predict_proba(&m, &x).unwrap();
        let po = predict_proba(&m, &xo).unwrap();
        let mut hand = 0.0;
        for i in 0..2 {
            hand += -po.get(i, y[i]).ln() + sq_dist(po.row(i), p.row(i));
        }
        hand /= 2.0;
        assert!((loss_adv(&m, &x, &y, &xo).unwrap() - hand).abs() < 1e-12);
    }

    #[test]
    fn loss_cons_cases() {
        let m = init_mlp(&[2, 4, 3], 9).unwrap();
        let x = Matrix::row_vector(&[0.4, -0.6]);
        assert_eq!(loss_cons(&m, &x, &x).unwrap(), 0.0);
        let xo = Matrix::row_vector(&[0.5, -0.5]);
        let hand = sq_dist(predict_proba(&m, &xo).unwrap().row(0), predict_proba(&m, &x).unwrap().row(0));
        let v = loss_cons(&m, &x, &xo).unwrap();
        assert!(v >= 0.0);
        assert!((v - hand).abs() < 1e-12);
    }

    #[test]
    fn mmd_identities() {
        let a = Matrix::from_rows(&[[0.1, 0.2], [0.5, -0.3], [1.0, 1.0]]);
        assert!(mmd_rbf(&a, &a, Bandwidth::Median).unwrap().abs() < 1e-12);
        let b = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.5]]);
        let ab = mmd_rbf(&a, &b, Bandwidth::Fixed(0.7)).unwrap();
        let ba = mmd_rbf(&b, &a, Bandwidth::Fixed(0.7)).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab >= -1e-12);
    }

    #[test]
    fn mmd_two_point_closed_form() {
        let a = Matrix::row_vector(&[1.0, 2.0]);
        let b = Matrix::row_vector(&[4.0, 6.0]); // D = 5
        for sigma in [0.5f64, 1.0, 3.0, 10.0] {
            let expect = 2.0 * (1.0 - (-25.0 / (2.0 * sigma * sigma)).exp());
            let got = mmd_rbf(&a, &b, Bandwidth::Fixed(sigma)).unwrap();
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_rejects_zero_bandwidth() {
        let a = Matrix::row_vector(&[1.0]);
        assert!(matches!(mmd_rbf(&a, &a, Bandwidth::Fixed(0.0)), Err(Error::Config(_))));
    }

    #[test]
    fn median_heuristic_small() {
        // pairwise distances 1, 2, 3 -> median 2
        let a = Matrix::from_rows(&[[0.0], [1.0]]);
        let b = Matrix::from_rows(&[[3.0]]);
        assert_eq!(median_heuristic(&a, &b), 2.0);
        let z = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(median_heuristic(&z, &z), MEDIAN_BANDWIDTH_FLOOR);
    }

    #[test]
    fn tape_mmd_matches_direct_mmd() {
        let m = init_mlp(&[2, 6, 3], 10).unwrap();
        let (xs, _) = batch();
        let xt = Matrix::from_rows(&[[2.0, 2.0], [1.5, -1.0], [0.3, 0.3]]);
        let ps = predict_proba(&m, &xs).unwrap();
        let pt = predict_proba(&m, &xt).unwrap();
        let mu = |p: &Matrix| -> Vec<f64> { (0..p.cols()).map(|c| p.col(c).iter().sum::<f64>() / p.rows() as f64).collect() };
        let direct = mmd_rbf(&ps, &pt, Bandwidth::Median).unwrap() + sq_dist(&mu(&ps), &mu(&pt));
        let via_tape = loss_align(&m, &xs, &xt).unwrap();
        assert!((direct - via_tape).abs() < 1e-10, "{direct} vs {via_tape}");
    }

    #[test]
    fn loss_align_identical_batches() {
        let m = init_mlp(&[2, 6, 2], 12).unwrap();
        let (x, _) = batch();
        assert!(loss_align(&m, &x, &x).unwrap().abs() < 1e-10);
    }

    #[test]
    fn loss_align_two_point_hand_computation() {
        let m = init_mlp(&[2, 4, 2], 13).unwrap();
        let xs = Matrix::from_rows(&[[0.0, 1.0]]);
        let xt = Matrix::from_rows(&[[1.0, 0.0]]);
        let ps = predict_proba(&m, &xs).unwrap();
        let pt = predict_proba(&m, &xt).unwrap();
        let d2 = sq_dist(ps.row(0), pt.row(0));
        // pooled sample of two points -> median distance is their distance
        let sigma = d2.sqrt().max(MEDIAN_BANDWIDTH_FLOOR);
        let hand = 2.0 * (1.0 - (-d2 / (2.0 * sigma * sigma)).exp()) + d2;
        assert!((loss_align(&m, &xs, &xt).unwrap() - hand).abs() < 1e-10);
    }

    #[test]
    fn loss_total_arithmetic() {
        let c = LossComponents { l_src: 1.0, l_adv: 2.0, l_cons: 3.0, l_align: 4.0 };
        let w1 = LossWeights { lambda_adv: 1.0, lambda_cons: 1.0, lambda_align: 1.0 };
        assert_eq!(loss_total(c, w1).unwrap().l_total, 10.0);
        assert_eq!(loss_total(c, LossWeights::ZERO).unwrap().l_total, 1.0);
        let bad = LossComponents { l_cons: f64::NAN, ..c };
        match loss_total(bad, w1) {
            Err(Error::NonFinite { term }) => assert_eq!(term, "l_cons"),
            other => panic!("{other:?}"),
        }
    }

    fn reg_fixture() -> (Matrix, Vec<usize>, Matrix, Matrix, Matrix, Matrix) {
        let (xs, ys) = batch();
        let off = xs.map(|v| v + 0.05);
        let on = xs.map(|v| v - 0.03);
        let xt = Matrix::from_rows(&[[1.0, 1.0], [0.5, -0.5], [-1.0, 0.2]]);
        let xt_on = xt.map(|v| v * 1.02);
        (xs, ys, off, on, xt, xt_on)
    }

    #[test]
    fn objective_terms_match_value_functions() {
        let m = init_mlp(&[2, 6, 2], 14).unwrap();
        let (xs, ys, off, on, xt, xt_on) = reg_fixture();
        let w = LossWeights { lambda_adv: 0.7, lambda_cons: 1.3, lambda_align: 0.4 };
        let obj = Objective {
            source_x: &xs,
            source_y: &ys,
            regularizers: Some(Regularizers {
                source_off: &off,
                source_on: &on,
                target_x: &xt,
                target_on: &xt_on,
                weights: w,
                bandwidth: Bandwidth::Median,
            }),
        };
        let (br, _) = objective_gradient(&m, &obj).unwrap();
        assert!((br.l_src - loss_src(&m, &xs, &ys).unwrap()).abs() < 1e-14);
        assert!((br.l_adv - loss_adv(&m, &xs, &ys, &off).unwrap()).abs() < 1e-14);
        let all = xs.vstack(&xt).unwrap();
        let all_on = on.vstack(&xt_on).unwrap();
        assert!((br.l_cons - loss_cons(&m, &all, &all_on).unwrap()).abs() < 1e-14);
        assert!((br.l_align - loss_align(&m, &xs, &xt).unwrap()).abs() < 1e-12);
        let resum = br.l_src + 0.7 * br.l_adv + 1.3 * br.l_cons + 0.4 * br.l_align;
        assert!((br.l_total - resum).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let m = init_mlp(&[2, 4, 2], 15).unwrap();
        let (xs, ys, off, on, xt, xt_on) = reg_fixture();
        let w = LossWeights { lambda_adv: 0.5, lambda_cons: 2.0, lambda_align: 0.3 };
        let obj = Objective {
            source_x: &xs,
            source_y: &ys,
            regularizers: Some(Regularizers {
                source_off: &off,
                source_on: &on,
                target_x: &xt,
                target_on: &xt_on,
                weights: w,
                bandwidth: Bandwidth::Fixed(0.4),
            }),
        };
        let (_, g) = objective_gradient(&m, &obj).unwrap();
        let flat = Matrix::row_vector(&m.to_flat());
        let sizes = m.layer_sizes();
        let fd = finite_diff_grad(
            |p| {
                let mp = ModelParams::from_flat(&sizes, p.data())?;
                Ok(objective_gradient(&mp, &obj)?.0.l_total)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        assert!(relative_l2_error(&g.to_flat(), fd.data()) < 1e-4);
    }

    #[test]
    fn erm_objective_equals_zero_weight_objective() {
        let m = init_mlp(&[2, 6, 2], 16).unwrap();
        let (xs, ys, off, on, xt, xt_on) = reg_fixture();
        let erm = Objective { source_x: &xs, source_y: &ys, regularizers: None };
        let (b0, g0) = objective_gradient(&m, &erm).unwrap();
        let zero = Objective {
            regularizers: Some(Regularizers {
                source_off: &off,
                source_on: &on,
                target_x: &xt,
                target_on: &xt_on,
                weights: LossWeights::ZERO,
                bandwidth: Bandwidth::Median,
            }),
            ..erm
        };
        let (b1, g1) = objective_gradient(&m, &zero).unwrap();
        assert_eq!(b0.l_total, b1.l_total);
        let e = relative_l2_error(&g0.to_flat(), &g1.to_flat());
        assert!(e < 1e-12, "{e}");
    }

    #[test]
    fn weights_reject_negative() {
        let w = LossWeights { lambda_adv: -1.0, ..Default::default() };
        assert!(w.validate().is_err());
    }
}
