//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Outcome of a gradient check. Coordinates where the two one-sided
/// difference quotients disagree (a kink, e.g. ReLU at zero) are skipped
/// rather than counted as failures.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

const KINK_TOL: f64 = 0.05;

/// Check d(f)/d(point) for a scalar-valued `f` against central differences.
/// Dropout must be inactive inside `f`; the tape is run in eval mode.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, Var) -> Var,
{
    assert!(eps > 0.0, "grad_check eps must be positive");
    let eval = |t: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let out = f(&mut tape, x);
        assert_eq!(
            tape.value(out).shape(),
            (1, 1),
            "grad_check requires a scalar-valued function"
        );
        tape.value(out).at(0, 0)
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x);
    assert_eq!(
        tape.value(out).shape(),
        (1, 1),
        "grad_check requires a scalar-valued function"
    );
    let f0 = tape.value(out).at(0, 0);
    let grads = tape.backward(out);
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.rows(), point.cols()));

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe);
        probe.data_mut()[i] = orig;

        let fwd = (fp - f0) / eps;
        let bwd = (f0 - fm) / eps;
        if (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(1.0) {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    report
}

/// Multi-tensor variant: checks the gradient with respect to every tensor in
/// `points`, treating `f` as a function of all of them jointly.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert!(eps > 0.0, "grad_check eps must be positive");
    let eval = |ts: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).at(0, 0)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    assert_eq!(
        tape.value(out).shape(),
        (1, 1),
        "grad_check requires a scalar-valued function"
    );
    let f0 = tape.value(out).at(0, 0);
    let grads = tape.backward(out);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe: Vec<Tensor> = points.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(points[ti].rows(), points[ti].cols()));
        for i in 0..points[ti].len() {
            let orig = probe[ti].data()[i];
            probe[ti].data_mut()[i] = orig + eps;
            let fp = eval(&probe);
            probe[ti].data_mut()[i] = orig - eps;
            let fm = eval(&probe);
            probe[ti].data_mut()[i] = orig;

            let fwd = (fp - f0) / eps;
            let bwd = (f0 - fm) / eps;
            if (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(1.0) {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    report
}
