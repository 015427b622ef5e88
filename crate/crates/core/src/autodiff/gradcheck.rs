use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared on an absolute scale.
const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_element: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| p.max_rel_error >= self.tolerance)
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares tape gradients of the scalar function `f` against central
/// finite differences, parameter by parameter.
///
/// The relative error of an element is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn grad_check<F>(f: F, params: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        tolerance,
        params: Vec::with_capacity(params.len()),
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).expect("leaf gradient").clone();
        let mut check = ParamCheck {
            index: pi,
            max_rel_error: 0.0,
            worst_element: 0,
        };
        for e in 0..params[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + FD_STEP;
            let up = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig - FD_STEP;
            let down = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[e];
            let scale = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            let err = (a - numeric).abs() / scale;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_element = e;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
