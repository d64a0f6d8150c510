//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numerical side only ever evaluates the loss function forward, so it is
//! independent of every backward rule it checks.

use super::{no_grad, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative-error pass threshold.
    pub tolerance: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`. Keeps entries whose
    /// true gradient is ~0 from dividing round-off noise by round-off noise.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamGradReport {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamGradReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn checked_entries(&self) -> usize {
        self.params.iter().map(|p| p.numel).sum()
    }

    pub fn worst(&self) -> Option<&ParamGradReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `d loss / d param` for every entry of every named parameter.
///
/// `loss` receives the full parameter list (in the given order) and must
/// return a scalar built from it.
pub fn check_gradients<F>(params: &[(String, Tensor)], loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = params
        .iter()
        .map(|(_, t)| t.detach().requires_grad_(true))
        .collect();
    loss(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|t| t.grad_or_zeros()).collect();

    let _guard = no_grad();
    let mut reports = Vec::with_capacity(params.len());
    let mut current: Vec<Tensor> = params.iter().map(|(_, t)| t.detach()).collect();
    for (p, (name, base)) in params.iter().enumerate() {
        let mut report = ParamGradReport {
            name: name.clone(),
            numel: base.numel(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut data = base.to_vec();
        for i in 0..data.len() {
            let orig = data[i];
            data[i] = orig + cfg.step;
            current[p] = Tensor::new(base.shape(), data.clone())?;
            let up = loss(&current)?.item();
            data[i] = orig - cfg.step;
            current[p] = Tensor::new(base.shape(), data.clone())?;
            let down = loss(&current)?.item();
            data[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[p][i];
            let err = relative_error(a, numeric, cfg.floor);
            if err > report.max_rel_err || i == 0 {
                report.max_rel_err = err;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        current[p] = base.detach();
        reports.push(report);
    }
    Ok(GradCheckReport {
        params: reports,
        tolerance: cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
    }

    /// Weighted sum with fixed random weights so every output entry matters.
    fn project(y: &Tensor, seed: u64) -> Result<Tensor> {
        let mut rng = Rng::new(seed);
        y.mul(&rand(y.shape(), &mut rng))?.sum()
    }

    fn check(params: Vec<(&str, Tensor)>, f: impl Fn(&[Tensor]) -> Result<Tensor>) {
        let params: Vec<(String, Tensor)> = params.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
        let report = check_gradients(&params, f, &GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = Rng::new(1);
        let a = rand(&[3, 4], &mut rng);
        let b = rand(&[4], &mut rng);
        let c = rand(&[3, 1], &mut rng);
        check(vec![("a", a), ("b", b), ("c", c)], |p| {
            let y = p[0].add(&p[1])?.mul(&p[2])?.sub(&p[0].scale(0.3)?)?;
            let y = y.relu()?.add(&p[0].square()?)?.div(&p[2].square()?.add_scalar(1.0)?)?;
            project(&y.exp()?.scale(0.1)?, 2)
        });
    }

    #[test]
    fn matmul_variants() {
        let mut rng = Rng::new(3);
        let a = rand(&[2, 3, 4], &mut rng);
        let b = rand(&[4, 5], &mut rng);
        let c = rand(&[2, 6, 5], &mut rng);
        check(vec![("a", a), ("b", b), ("c", c)], |p| {
            let y = p[0].matmul(&p[1])?; // [2,3,5]
            let z = y.matmul_nt(&p[2])?; // [2,3,6]
            project(&z, 4)
        });
    }

    #[test]
    fn large_matmul_uses_blocked_kernel() {
        let mut rng = Rng::new(5);
        let a = rand(&[20, 24], &mut rng);
        let b = rand(&[3, 24, 18], &mut rng);
        check(vec![("a", a), ("b", b)], |p| project(&p[0].matmul(&p[1])?, 6));
    }

    #[test]
    fn fused_linear() {
        let mut rng = Rng::new(19);
        let x = rand(&[3, 4, 6], &mut rng);
        let w = rand(&[6, 5], &mut rng);
        let b = rand(&[5], &mut rng);
        check(vec![("x", x), ("w", w), ("b", b)], |p| {
            let y = p[0].linear(&p[1], Some(&p[2]))?.add(&p[0].linear(&p[1], None)?)?;
            project(&y, 20)
        });
        let x = rand(&[40, 30], &mut rng);
        let w = rand(&[30, 20], &mut rng);
        check(vec![("x", x), ("w", w)], |p| project(&p[0].linear(&p[1], None)?, 21));
    }

    #[test]
    fn softmax_and_layer_norm() {
        let mut rng = Rng::new(7);
        let x = rand(&[2, 3, 5], &mut rng);
        let g = rand(&[3], &mut rng);
        let b = rand(&[3], &mut rng);
        check(vec![("x", x), ("g", g), ("b", b)], |p| {
            let y = p[0].layer_norm(&p[1], &p[2], 1)?;
            project(&y.softmax(-1)?, 8)
        });
    }

    #[test]
    fn layer_norm_last_axis() {
        let mut rng = Rng::new(23);
        let x = rand(&[3, 2, 6], &mut rng);
        let g = rand(&[6], &mut rng);
        let b = rand(&[6], &mut rng);
        check(vec![("x", x), ("g", g), ("b", b)], |p| project(&p[0].layer_norm(&p[1], &p[2], -1)?, 24));
    }

    #[test]
    fn fused_attention() {
        use crate::tensor::multi_head_attention;
        let mut rng = Rng::new(29);
        let q = rand(&[2, 3, 4], &mut rng);
        let k = rand(&[2, 5, 4], &mut rng);
        let v = rand(&[2, 5, 4], &mut rng);
        let shared = rand(&[2, 3, 5], &mut rng);
        let full = rand(&[2, 2, 3, 5], &mut rng);
        check(vec![("q", q), ("k", k), ("v", v), ("s", shared), ("f", full)], |p| {
            let a = multi_head_attention(&p[0], &p[1], &p[2], 2, Some(&p[3]))?.output;
            let b = multi_head_attention(&p[0], &p[1], &p[2], 2, Some(&p[4]))?.output;
            let c = multi_head_attention(&p[0], &p[1], &p[2], 2, None)?.output;
            project(&a.add(&b)?.add(&c)?, 30)
        });
        // large enough for the blocked kernel
        let q = rand(&[1, 20, 32], &mut rng);
        let kv = rand(&[1, 20, 32], &mut rng);
        check(vec![("q", q), ("kv", kv)], |p| {
            project(&multi_head_attention(&p[0], &p[1], &p[1], 2, None)?.output, 31)
        });
    }

    #[test]
    fn shape_ops() {
        let mut rng = Rng::new(9);
        let x = rand(&[2, 3, 4], &mut rng);
        let y = rand(&[2, 2, 4], &mut rng);
        check(vec![("x", x), ("y", y)], |p| {
            let c = Tensor::concat(&[p[0].clone(), p[1].clone()], 1)?; // [2,5,4]
            let s = c.permute(&[2, 0, 1])?.slice(2, 1, 4)?; // [4,2,3]
            let r = s.reshape(&[8, 3])?.index_select(0, &[7, 0, 0, 3])?;
            let m = r.mean_axis(1)?.add(&p[0].sum_axis(-1)?.mean()?)?;
            project(&m, 10)
        });
    }

    #[test]
    fn convolutions() {
        let mut rng = Rng::new(11);
        let x = rand(&[2, 7, 3], &mut rng);
        let k = rand(&[3, 3, 2], &mut rng);
        let k2 = rand(&[2, 3, 4], &mut rng);
        let dw = rand(&[3, 3], &mut rng);
        check(vec![("x", x), ("k", k), ("k2", k2), ("dw", dw)], |p| {
            let a = project(&p[0].strided_conv1d(&p[1], 2)?, 12)?;
            let b = project(&p[0].slice(1, 0, 6)?.strided_conv1d(&p[2], 2)?, 13)?;
            let c = project(&p[0].depthwise_conv1d(&p[3])?, 14)?;
            a.add(&b)?.add(&c)
        });
    }

    #[test]
    fn cross_entropy_with_smoothing() {
        let mut rng = Rng::new(15);
        let logits = rand(&[4, 5], &mut rng);
        check(vec![("logits", logits)], |p| p[0].cross_entropy(&[0, 4, 2, 2], 0.1));
    }

    #[test]
    fn embedding_lookup() {
        let mut rng = Rng::new(17);
        let table = rand(&[5, 3], &mut rng);
        check(vec![("table", table)], |p| project(&p[0].embedding_lookup(&[1, 1, 4])?, 18));
    }
}
