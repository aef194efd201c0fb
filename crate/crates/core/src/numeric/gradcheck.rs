//! Central finite-difference oracle for reverse-mode gradients.

use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates checked per tensor; tensors at or below this size are checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so coordinates whose true
    /// gradient is zero are judged on absolute error.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            samples_per_tensor: 200,
            seed: 0,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`, zero when all three vanish.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for one coordinate.
pub fn central_difference<F>(f: &F, params: &mut ParamStore<f64>, id: ParamId, coord: usize, h: f64) -> Result<f64>
where
    F: Fn(&ParamStore<f64>) -> Result<f64>,
{
    let orig = params.get(id).value.data()[coord];
    params.get_mut(id).value.data_mut()[coord] = orig + h;
    let plus = f(params);
    params.get_mut(id).value.data_mut()[coord] = orig - h;
    let minus = f(params);
    params.get_mut(id).value.data_mut()[coord] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Loss value of a graph builder, for use as a finite-difference objective.
pub fn eval_loss<B>(build: &B, params: &ParamStore<f64>) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    Ok(tape.value(loss).data()[0])
}

/// Compares `analytic(id)` against central differences of `f` over sampled
/// coordinates of every parameter, returning the worst relative error.
pub fn compare_gradients<F, A>(
    f: F,
    params: &ParamStore<f64>,
    analytic: A,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<f64>,
    A: Fn(ParamId) -> Vec<f64>,
{
    let mut work = params.clone();
    let mut rng = Rng::new(cfg.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let grad = analytic(id);
        let n = grad.len();
        let coords: Vec<usize> = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            (0..cfg.samples_per_tensor).map(|_| rng.below(n)).collect()
        };
        for c in coords {
            let num = central_difference(&f, &mut work, id, c, cfg.step)?;
            let err = relative_error(grad[c], num, cfg.abs_floor);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.get(id).name.clone(), c));
            }
        }
    }
    Ok(report)
}

/// Full check in 64-bit: reverse-mode gradients of `build` against central
/// differences of the same graph.
pub fn grad_check<B>(build: B, params: &ParamStore<f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut with_grads = params.clone();
    let mut tape = Tape::new();
    let loss = build(&mut tape, &with_grads)?;
    tape.backward(loss, &mut with_grads)?;
    compare_gradients(
        |p| eval_loss(&build, p),
        params,
        |id| with_grads.get(id).grad.to_f64_vec(),
        cfg,
    )
}
