//! Censored and uncensored training objectives.
//!
//! Each loss comes in two forms: a plain version over slices, used for
//! evaluation, and a version that records onto a [`Tape`] so it can be
//! differentiated. Thresholds are right-censoring points: where a flag is
//! set the observation equals its threshold and the latent value lies at or
//! above it. Threshold entries for unflagged points are ignored.

use crate::error::{Error, Result};
use crate::tensor::{standard_log_pdf, standard_log_survival, Tape, Tensor, Var};

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("quantile level {q} outside (0, 1)")))
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: vec![a],
            right: vec![b],
        })
    }
}

fn check_nonempty(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::validation("loss over an empty batch"))
    } else {
        Ok(())
    }
}

/// Errors where a censored observation differs from its threshold.
pub fn check_censored_consistency(y: &[f64], tau: &[f64], flags: &[bool]) -> Result<()> {
    check_len("censored_consistency", y.len(), tau.len())?;
    check_len("censored_consistency", y.len(), flags.len())?;
    for (i, ((&y, &t), &l)) in y.iter().zip(tau).zip(flags).enumerate() {
        if l && (y - t).abs() > 1e-12 * t.abs().max(1.0) {
            return Err(Error::validation(format!(
                "point {i} is flagged censored but observation {y} differs from threshold {t}"
            )));
        }
    }
    Ok(())
}

/// Pinball loss of one residual.
pub fn rho(q: f64, e: f64) -> f64 {
    (q * e).max((q - 1.0) * e)
}

/// Mean pinball loss of `f` as the `q`-quantile of `y`.
pub fn tilted_loss(y: &[f64], f: &[f64], q: f64) -> Result<f64> {
    check_level(q)?;
    check_len("tilted_loss", y.len(), f.len())?;
    check_nonempty(y.len())?;
    Ok(y.iter().zip(f).map(|(y, f)| rho(q, y - f)).sum::<f64>() / y.len() as f64)
}

/// Sum over levels of the mean censored pinball loss. `f[j]` holds the
/// predictions for `levels[j]`. A censored point only penalises predictions
/// below its threshold.
pub fn censored_tilted_loss(y: &[f64], f: &[Vec<f64>], tau: &[f64], flags: &[bool], levels: &[f64]) -> Result<f64> {
    check_len("censored_tilted_loss", f.len(), levels.len())?;
    check_censored_consistency(y, tau, flags)?;
    check_nonempty(y.len())?;
    let mut total = 0.0;
    for (fq, &q) in f.iter().zip(levels) {
        check_level(q)?;
        check_len("censored_tilted_loss", y.len(), fq.len())?;
        let s: f64 = (0..y.len())
            .map(|i| {
                let g = if flags[i] { fq[i].min(tau[i]) } else { fq[i] };
                rho(q, y[i] - g)
            })
            .sum();
        total += s / y.len() as f64;
    }
    Ok(total)
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    match sigma.iter().find(|&&s| !(s > 0.0)) {
        Some(s) => Err(Error::domain(format!("sigma must be positive, got {s}"))),
        None => Ok(()),
    }
}

/// Mean negative Gaussian log density.
pub fn gaussian_nll(y: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    check_len("gaussian_nll", y.len(), mu.len())?;
    check_len("gaussian_nll", y.len(), sigma.len())?;
    check_nonempty(y.len())?;
    check_sigma(sigma)?;
    let s: f64 = (0..y.len())
        .map(|i| sigma[i].ln() - standard_log_pdf((y[i] - mu[i]) / sigma[i]))
        .sum();
    Ok(s / y.len() as f64)
}

/// Summed negative Tobit log-likelihood: density for uncensored points,
/// survival for censored ones.
pub fn tobit_loss(y: &[f64], mu: &[f64], sigma: &[f64], flags: &[bool]) -> Result<f64> {
    check_len("tobit_loss", y.len(), mu.len())?;
    check_len("tobit_loss", y.len(), sigma.len())?;
    check_len("tobit_loss", y.len(), flags.len())?;
    check_nonempty(y.len())?;
    check_sigma(sigma)?;
    Ok((0..y.len())
        .map(|i| {
            let z = (y[i] - mu[i]) / sigma[i];
            if flags[i] {
                -standard_log_survival(z)
            } else {
                sigma[i].ln() - standard_log_pdf(z)
            }
        })
        .sum())
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn same_shape(op: &'static str, y: &Tensor, v: Var<'_>) -> Result<()> {
    let shape = v.shape();
    if y.shape() == shape.as_slice() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: y.shape().to_vec(),
            right: shape,
        })
    }
}

/// Pinball loss per element of `y - f`, as `q e + relu(-e)`.
fn rho_var<'t>(tape: &'t Tape, y: &Tensor, f: Var<'t>, q: f64) -> Result<Var<'t>> {
    let e = tape.constant(y.clone()).sub(f)?;
    e.scale(q).add(e.neg().relu())
}

/// Tape form of [`tilted_loss`].
pub fn tilted_loss_var<'t>(tape: &'t Tape, y: &Tensor, f: Var<'t>, q: f64) -> Result<Var<'t>> {
    check_level(q)?;
    same_shape("tilted_loss", y, f)?;
    check_nonempty(y.len())?;
    Ok(rho_var(tape, y, f, q)?.mean())
}

/// Negated thresholds with `-inf` on unflagged points, so that
/// `-max(-f, neg_tau)` is `min(f, tau)` where censored and `f` elsewhere.
fn negated_thresholds(y: &Tensor, tau: &Tensor, flags: &[bool]) -> Result<Tensor> {
    check_censored_consistency(y.data(), tau.data(), flags)?;
    let data = tau
        .data()
        .iter()
        .zip(flags)
        .map(|(&t, &l)| if l { -t } else { f64::NEG_INFINITY })
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

/// Tape form of [`censored_tilted_loss`]; `f[j]` are predictions for `levels[j]`.
pub fn censored_tilted_loss_var<'t>(
    tape: &'t Tape,
    y: &Tensor,
    f: &[Var<'t>],
    tau: &Tensor,
    flags: &[bool],
    levels: &[f64],
) -> Result<Var<'t>> {
    check_len("censored_tilted_loss", f.len(), levels.len())?;
    check_len("censored_tilted_loss", y.len(), tau.len())?;
    check_nonempty(y.len())?;
    let neg_tau = negated_thresholds(y, tau, flags)?;
    let mut total: Option<Var<'t>> = None;
    for (&fq, &q) in f.iter().zip(levels) {
        check_level(q)?;
        same_shape("censored_tilted_loss", y, fq)?;
        let g = fq.neg().max_const(&neg_tau)?.neg();
        let term = rho_var(tape, y, g, q)?.mean();
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::validation("censored_tilted_loss needs at least one quantile level"))
}

/// Sum over levels of [`tilted_loss_var`].
pub fn multi_tilted_loss_var<'t>(tape: &'t Tape, y: &Tensor, f: &[Var<'t>], levels: &[f64]) -> Result<Var<'t>> {
    let flags = vec![false; y.len()];
    censored_tilted_loss_var(tape, y, f, y, &flags, levels)
}

fn check_sigma_var(sigma: Var<'_>) -> Result<()> {
    sigma.with_value(|s| check_sigma(s.data()))
}

/// Per-element negative Gaussian log density.
fn neg_log_density<'t>(tape: &'t Tape, y: &Tensor, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
    let z = tape.constant(y.clone()).sub(mu)?.div(sigma)?;
    Ok(z.square().scale(0.5).add(sigma.log())?.offset(HALF_LN_2PI))
}

/// Tape form of [`gaussian_nll`].
pub fn gaussian_nll_var<'t>(tape: &'t Tape, y: &Tensor, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
    same_shape("gaussian_nll", y, mu)?;
    same_shape("gaussian_nll", y, sigma)?;
    check_nonempty(y.len())?;
    check_sigma_var(sigma)?;
    Ok(neg_log_density(tape, y, mu, sigma)?.mean())
}

/// Tape form of [`tobit_loss`] (summed).
pub fn tobit_loss_var<'t>(tape: &'t Tape, y: &Tensor, mu: Var<'t>, sigma: Var<'t>, flags: &[bool]) -> Result<Var<'t>> {
    same_shape("tobit_loss", y, mu)?;
    same_shape("tobit_loss", y, sigma)?;
    check_len("tobit_loss", y.len(), flags.len())?;
    check_nonempty(y.len())?;
    check_sigma_var(sigma)?;
    let censored = Tensor::new(y.shape().to_vec(), flags.iter().map(|&l| f64::from(u8::from(l))).collect())?;
    let uncensored = censored.map(|l| 1.0 - l);
    let density = neg_log_density(tape, y, mu, sigma)?.mul(tape.constant(uncensored))?;
    let z = tape.constant(y.clone()).sub(mu)?.div(sigma)?;
    let survival = z.std_log_survival().neg().mul(tape.constant(censored))?;
    Ok(density.add(survival)?.sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, Coords};

    fn col(v: &[f64]) -> Tensor {
        Tensor::column(v.to_vec())
    }

    #[test]
    fn tilted_hand_values() {
        assert_eq!(tilted_loss(&[1.0], &[1.0], 0.3).unwrap(), 0.0);
        assert_eq!(tilted_loss(&[0.0], &[2.0], 0.5).unwrap(), 1.0);
        assert!((tilted_loss(&[2.0], &[0.0], 0.9).unwrap() - 1.8).abs() < 1e-15);
        assert!((tilted_loss(&[0.0], &[2.0], 0.9).unwrap() - 0.2).abs() < 1e-15);
        assert!(tilted_loss(&[0.0], &[0.0], 1.0).is_err());
        assert!(tilted_loss(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn censored_tilted_hand_batch() {
        // q = 0.5, points (y, f, tau, flag):
        // (1.0, 0.4, -, no)  e = 0.6   -> 0.30
        // (2.0, 2.5, -, no)  e = -0.5  -> 0.25
        // (3.0, 3.5, 3, yes) min(3.5, 3) = 3, e = 0 -> 0
        // (3.0, 2.0, 3, yes) e = 1     -> 0.50
        // (0.5, 0.5, -, no)  e = 0     -> 0
        // mean = 1.05 / 5 = 0.21
        let y = [1.0, 2.0, 3.0, 3.0, 0.5];
        let f = [0.4, 2.5, 3.5, 2.0, 0.5];
        let tau = [0.0, 0.0, 3.0, 3.0, 0.0];
        let flags = [false, false, true, true, false];
        let got = censored_tilted_loss(&y, &[f.to_vec()], &tau, &flags, &[0.5]).unwrap();
        assert!((got - 0.21).abs() < 1e-15);
        let tape = Tape::new();
        let v = censored_tilted_loss_var(&tape, &col(&y), &[tape.constant(col(&f))], &col(&tau), &flags, &[0.5]).unwrap();
        assert!((v.item() - 0.21).abs() < 1e-15);
    }

    #[test]
    fn censored_point_above_threshold_is_free() {
        let l = censored_tilted_loss(&[3.0], &[vec![5.0]], &[3.0], &[true], &[0.9]).unwrap();
        assert_eq!(l, 0.0);
        let l = censored_tilted_loss(&[3.0], &[vec![2.0]], &[3.0], &[true], &[0.9]).unwrap();
        assert!((l - 0.9).abs() < 1e-15);
    }

    #[test]
    fn censored_needs_consistent_threshold() {
        let err = censored_tilted_loss(&[2.0], &[vec![1.0]], &[3.0], &[true], &[0.5]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn gaussian_constants() {
        let v = gaussian_nll(&[1.3], &[1.3], &[1.0]).unwrap();
        assert!((v - 0.9189385332046727).abs() < 1e-15);
        let near = gaussian_nll(&[1.0], &[0.0], &[1.0]).unwrap();
        let far = gaussian_nll(&[2.0], &[0.0], &[1.0]).unwrap();
        assert!(far > near);
        assert!(gaussian_nll(&[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn gaussian_random_batch_closed_form() {
        // values precomputed with scipy.stats.norm.logpdf
        let y = [0.3, -1.2, 2.5, 0.0];
        let mu = [0.1, -0.7, 1.0, 0.4];
        let sigma = [0.5, 2.0, 1.5, 0.25];
        let v = gaussian_nll(&y, &mu, &sigma).unwrap();
        assert!((v - 1.1465437199517412).abs() < 1e-10, "{v}");
    }

    #[test]
    fn tobit_hand_batch() {
        // (y, mu, sigma, flag) evaluated with scipy.stats.norm logpdf/logsf
        let y = [0.5, 1.0, 0.2, 0.8];
        let mu = [0.4, 1.5, 0.0, 0.1];
        let sigma = [0.3, 0.5, 1.0, 0.2];
        let flags = [false, true, false, true];
        let v = tobit_loss(&y, &mu, &sigma, &flags).unwrap();
        assert!((v - 9.248278905006508).abs() < 1e-8, "{v}");
        let tape = Tape::new();
        let t = tobit_loss_var(
            &tape,
            &col(&y),
            tape.constant(col(&mu)),
            tape.constant(col(&sigma)),
            &flags,
        )
        .unwrap();
        assert!((t.item() - v).abs() < 1e-12);
    }

    #[test]
    fn tobit_survival_vanishes_far_above() {
        let v = tobit_loss(&[1.0], &[50.0], &[1.0], &[true]).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(tobit_loss(&[1.0], &[0.0], &[-1.0], &[true]).is_err());
    }

    #[test]
    fn reductions_without_censoring() {
        let y = [0.1, 0.7, -0.3, 1.1];
        let mu = [0.0, 0.9, -0.1, 1.0];
        let sigma = [0.2, 0.4, 1.1, 0.6];
        let flags = [false; 4];
        let g = gaussian_nll(&y, &mu, &sigma).unwrap();
        let t = tobit_loss(&y, &mu, &sigma, &flags).unwrap();
        assert!((t - 4.0 * g).abs() < 1e-12);
        let levels = [0.05, 0.5, 0.95];
        let f = vec![mu.to_vec(), sigma.to_vec(), y.to_vec()];
        let c = censored_tilted_loss(&y, &f, &y, &flags, &levels).unwrap();
        let s: f64 = f.iter().zip(levels).map(|(f, q)| tilted_loss(&y, f, q).unwrap()).sum();
        assert!((c - s).abs() < 1e-12);
    }

    #[test]
    fn tape_forms_agree_with_plain() {
        let y = [0.2, 0.9, 0.4];
        let mu = [0.3, 0.5, 0.4];
        let sigma = [0.1, 0.3, 0.7];
        let tape = Tape::new();
        let (m, s) = (tape.constant(col(&mu)), tape.constant(col(&sigma)));
        let g = gaussian_nll_var(&tape, &col(&y), m, s).unwrap().item();
        assert!((g - gaussian_nll(&y, &mu, &sigma).unwrap()).abs() < 1e-14);
        let t = tilted_loss_var(&tape, &col(&y), m, 0.2).unwrap().item();
        assert!((t - tilted_loss(&y, &mu, 0.2).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn gradients_near_the_kink() {
        let y = col(&[1.0, 1.0, 0.5, 0.3]);
        let tau = col(&[1.0, 1.0, 0.0, 0.3]);
        let flags = [true, true, false, true];
        // predictions within 1e-3 of the censoring point on both sides
        let f = col(&[1.0005, 0.9993, 0.7, 0.2]);
        let report = check_gradients(
            std::slice::from_ref(&f),
            |tape, v| censored_tilted_loss_var(tape, &y, &[v[0]], &tau, &flags, &[0.3]),
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let sigma = col(&[0.3, 0.5, 0.2, 0.9]);
        let report = check_gradients(
            &[f, sigma],
            |tape, v| tobit_loss_var(tape, &y, v[0], v[1], &flags),
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
