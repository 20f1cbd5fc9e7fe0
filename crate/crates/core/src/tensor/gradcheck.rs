use super::{Tape, Tensor, Var};
use crate::error::{Result, RfnError};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked entries of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose one-sided differences disagree, i.e. a kink of the
    /// function lies within `h` of the evaluation point.
    pub skipped_kinks: usize,
    /// `(parameter index, entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

/// Relative disagreement between forward and backward differences above
/// which an entry is treated as sitting on a non-differentiable point.
const KINK_TOLERANCE: f64 = 1e-3;

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.shape() != (1, 1) {
        return Err(RfnError::contract("gradient check needs a scalar function"));
    }
    Ok(v.data()[0])
}

/// Compares the tape's gradients of `f` with central finite differences at
/// step `h` for every entry of every parameter tensor.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(RfnError::contract(format!("step h must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).data()[0];
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.len() {
            let orig = p.data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[ei] = orig;

            let central = (plus - minus) / (2.0 * h);
            let forward = (plus - base) / h;
            let backward = (base - minus) / h;
            if (forward - backward).abs() > KINK_TOLERANCE * central.abs().max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
            let a = analytic[pi][ei];
            let err = (a - central).abs() / a.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
