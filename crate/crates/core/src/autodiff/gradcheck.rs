use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::{Error, Result};

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is (numerically) zero are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked per tensor (all of them for smaller tensors).
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_tensor: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Norm of the full analytic gradient of this tensor.
    pub grad_norm: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.value(loss).scalar();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Compares analytic parameter gradients of the scalar built by `f` with
/// central finite differences.
pub fn grad_check<F>(store: &ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    if !g.value(loss).scalar().is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grads = g.backward(loss)?;
    let mut analytic = store.zeros_like();
    grads.accumulate_params(&g, &mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for id in store.ids() {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, cfg.samples_per_tensor).into_vec()
        };
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = store.value(id).data[c];
            probe.value_mut(id).data[c] = orig + cfg.step;
            let up = evaluate(&probe, &f)?;
            probe.value_mut(id).data[c] = orig - cfg.step;
            let down = evaluate(&probe, &f)?;
            probe.value_mut(id).data[c] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            worst = worst.max(relative_error(analytic[id.index()].data[c], numeric));
        }
        report.params.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: worst,
            grad_norm: analytic[id.index()].norm(),
            checked: coords.len(),
        });
    }
    Ok(report)
}
