//! Central finite-difference verification of reverse-mode gradients, in
//! 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Coordinates with `|x|` at or below this are skipped (kinks at zero).
    pub kink_margin: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            kink_margin: 0.0,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// (tensor index, flat coordinate) of the largest error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    fn merge(&mut self, other: GradCheckReport) {
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn check_tensor(
    index: usize,
    value: &Tensor<f64>,
    analytic: &Tensor<f64>,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
    mut eval: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheckReport> {
    let n = value.len();
    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < n => {
            let mut c = sample(rng, n, m).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..n).collect(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for c in coords {
        let x = value.data()[c];
        if x.abs() <= opts.kink_margin && opts.kink_margin > 0.0 {
            report.skipped += 1;
            continue;
        }
        let h = 1e-5 * x.abs().max(1.0);
        let (up, down) = (x + h, x - h);
        let numeric = (eval(c, up)? - eval(c, down)?) / (up - down);
        let err = relative_error(analytic.data()[c], numeric);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((index, c));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks `d f / d inputs` where `f` records a scalar loss on a fresh tape
/// from variable nodes holding `inputs`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let run = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.variable(v.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        Ok((tape, ids, loss))
    };
    let (tape, ids, loss) = run(inputs)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, v)| grads.wrt(id).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut total = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let report = check_tensor(i, &inputs[i], &analytic[i], opts, &mut rng, |c, x| {
            let saved = work[i].data()[c];
            work[i].data_mut()[c] = x;
            let out = run(&work).map(|(t, _, l)| t.value(l).item());
            work[i].data_mut()[c] = saved;
            out
        })?;
        total.merge(report);
    }
    Ok(total)
}

/// Checks the gradient of every trainable parameter in `store` for the loss
/// recorded by `f`. Returns one report per checked parameter.
pub fn grad_check_params<F>(
    store: &ParamStore<f64>,
    opts: &GradCheckOptions,
    f: F,
) -> Result<Vec<(String, GradCheckReport)>>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let mut probe = store.clone();
    probe.zero_grad();
    probe.accumulate(&tape.backward(loss)?.params(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut out = Vec::new();
    for i in 0..store.len() {
        let pid = ParamId(i);
        let param = store.get(pid);
        if param.frozen {
            continue;
        }
        let analytic = probe.get(pid).grad.clone();
        let report = check_tensor(i, &param.value, &analytic, opts, &mut rng, |c, x| {
            let saved = work.get(pid).value.data()[c];
            work.get_mut(pid).value.data_mut()[c] = x;
            let mut tape = Tape::new();
            let out = f(&mut tape, &work).map(|l| tape.value(l).item());
            work.get_mut(pid).value.data_mut()[c] = saved;
            out
        })?;
        out.push((param.name.clone(), report));
    }
    Ok(out)
}
