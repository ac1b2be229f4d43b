//! Central finite-difference check of tape gradients.
//!
//! The numeric side only evaluates the forward pass, so it is independent
//! of the reverse-mode rules it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Which parameter elements to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// Up to `per_tensor` elements of every tensor, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor, element, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with an absolute floor so that vanishing gradients do not
/// blow the ratio up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn check_gradients<F>(params: &[Tensor], f: F, eps: f64, coords: Coords) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&tape, &leaves)?;
        let grads = tape.backward(loss)?;
        leaves.iter().map(|&v| grads.wrt(v)).collect()
    };
    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &leaves)?.item())
    };

    let mut rng = match coords {
        Coords::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coords::All => None,
    };
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = params.to_vec();
    for (ti, p) in params.iter().enumerate() {
        let elems: Vec<usize> = match (&coords, rng.as_mut()) {
            (Coords::Sample { per_tensor, .. }, Some(rng)) if *per_tensor < p.len() => {
                sample(rng, p.len(), *per_tensor).into_vec()
            }
            _ => (0..p.len()).collect(),
        };
        for e in elems {
            let orig = p.data()[e];
            let mut at = |step: f64| -> Result<f64> {
                work[ti].data_mut()[e] = orig + step * eps;
                eval(&work)
            };
            // Fourth-order stencil: rounding noise, not truncation, dominates.
            let numeric = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * eps);
            work[ti].data_mut()[e] = orig;
            let a = analytic[ti].data()[e];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((ti, e, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
