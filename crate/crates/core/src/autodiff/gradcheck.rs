//! Central finite-difference verification of recorded gradients.
//!
//! The builder closure reconstructs the computation from scratch on a fresh
//! tape at every probe, so the numeric path shares no state with the
//! analytic one. Runs in `f64`; probing uses `h = 1e-5` by default.

use super::{Tape, Tensor, TensorError, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// (input index, element index) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= rel_tol
    }
}

/// Compare recorded adjoints of `inputs` against central differences.
///
/// `build` receives the inputs as leaves in order and returns the scalar
/// loss. `skip(input, element)` masks coordinates near non-smooth points
/// of the builder (kinks of |.| and rectifiers).
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
    h: f64,
    skip: &dyn Fn(usize, usize) -> bool,
) -> Result<GradCheckReport, TensorError> {
    let eval = |probe: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).scalar_value())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            if skip(i, j) {
                report.skipped += 1;
                continue;
            }
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let fp = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let fm = eval(&probe)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let recorded = analytic[i].data()[j];
            let denom = recorded.abs().max(numeric.abs()).max(1e-6);
            let rel = (recorded - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// No coordinates masked.
pub fn skip_none(_: usize, _: usize) -> bool {
    false
}
