//! Central finite-difference gradient checking.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOpts {
    /// Central-difference step.
    pub step: f64,
    /// Relative-error threshold for `pass`.
    pub tol: f64,
    /// Absolute floor of the relative-error denominator; near-zero gradient
    /// pairs are compared against this scale instead of their own magnitude.
    pub floor: f64,
    /// Check at most this many elements per input, evenly spaced. `None`
    /// checks every element.
    pub max_elems_per_input: Option<usize>,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-5,
            max_elems_per_input: None,
        }
    }
}

/// Worst analytic-vs-numeric disagreement found by [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct WorstOffender {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<WorstOffender>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

// Relative error with an absolute floor, so near-zero gradient pairs with
// tiny absolute disagreement do not dominate the report.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare the analytic gradient of a scalar-valued tensor function against
/// central finite differences, element by element.
///
/// `f` receives one `Var` per input tensor and must return a scalar node.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor],
    opts: &GradCheckOpts,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.var(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::NotScalar {
            shape: g.value(out).shape().to_vec(),
        });
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| g.grad_slice(*v).expect("leaf grad").to_vec())
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
        tol: opts.tol,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let indices: Vec<usize> = match opts.max_elems_per_input {
            Some(m) if m < n => {
                let stride = n as f64 / m as f64;
                (0..m).map(|i| (i as f64 * stride) as usize).collect()
            }
            _ => (0..n).collect(),
        };
        for ei in indices {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + opts.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[ei] = orig - opts.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = rel_err(analytic[ti][ei], numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(WorstOffender {
                    input: ti,
                    index: ei,
                    analytic: analytic[ti][ei],
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
