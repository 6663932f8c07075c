//! Central-difference gradient checking against the tape.

use super::{NodeId, Scalar, Tape, Tensor};
use crate::error::Result;

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every
/// coordinate `i` for which `include(i)` holds; other entries are zero.
pub fn central_difference<T, F>(
    mut f: F,
    x: &Tensor<T>,
    eps: f64,
    include: impl Fn(usize) -> bool,
) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    let h = T::from_f64_lossy(eps);
    let two_h = h + h;
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        if !include(i) {
            continue;
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / two_h;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn compare<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>, include: impl Fn(usize) -> bool) -> Self {
        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
        };
        for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            if !include(i) {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let err = relative_error(a.to_f64_lossy(), n.to_f64_lossy());
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(i);
            }
        }
        report
    }
}

/// Maximum relative error between the tape gradient of `f` at `x` and central
/// differences with step `eps`. `f` records a scalar function of its input
/// node on the tape it is given.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let input = tape.param(x.clone());
    let loss = f(&mut tape, input)?;
    let analytic = tape.backward(loss)?.wrt(input);

    let eval = |probe: &Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let input = tape.constant(probe.clone());
        let out = f(&mut tape, input)?;
        tape.value(out).item()
    };
    let numeric = central_difference(eval, x, eps, |_| true)?;
    Ok(GradCheckReport::compare(&analytic, &numeric, |_| true).max_rel_err)
}
