//! Central finite-difference verification of analytic gradients.

/// Perturbation used for central differences.
pub const STEP: f64 = 1e-4;

/// Gradients with magnitude below this are compared on an absolute scale,
/// where roundoff in the difference quotient would dominate a relative one.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// A loss with analytic gradients over a fixed list of parameter tensors.
pub trait Differentiable: Clone {
    type Sample;

    fn loss(&self, sample: &Self::Sample) -> f64;

    /// One gradient vector per tensor, in `tensors_mut` order.
    fn gradient(&self, sample: &Self::Sample) -> Vec<Vec<f64>>;

    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor, index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares every analytic parameter gradient against
/// `(L(θ+h) − L(θ−h)) / 2h` and reports the worst relative error.
pub fn grad_check<M: Differentiable>(model: &M, sample: &M::Sample) -> GradCheckReport {
    let analytic = model.gradient(sample);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let n_tensors = probe.tensors_mut().len();
    assert_eq!(n_tensors, analytic.len(), "gradient/tensor count mismatch");
    for t in 0..n_tensors {
        let len = probe.tensors_mut()[t].len();
        assert_eq!(len, analytic[t].len(), "gradient shape mismatch in tensor {t}");
        for i in 0..len {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + STEP;
            let plus = probe.loss(sample);
            probe.tensors_mut()[t][i] = orig - STEP;
            let minus = probe.loss(sample);
            probe.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic[t][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (t, i);
                report.analytic = analytic[t][i];
                report.numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(a, b) = a²·b + sin(b)
    #[derive(Clone)]
    struct Toy {
        p: Vec<f64>,
        corrupt: bool,
    }

    impl Differentiable for Toy {
        type Sample = ();

        fn loss(&self, _: &()) -> f64 {
            self.p[0] * self.p[0] * self.p[1] + self.p[1].sin()
        }

        fn gradient(&self, _: &()) -> Vec<Vec<f64>> {
            let (a, b) = (self.p[0], self.p[1]);
            let mut g = vec![2.0 * a * b, a * a + b.cos()];
            if self.corrupt {
                g[1] *= 1.5;
            }
            vec![g]
        }

        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.p]
        }
    }

    #[test]
    fn accepts_correct_gradient() {
        let r = grad_check(&Toy { p: vec![0.7, -1.3], corrupt: false }, &());
        assert!(r.within(1e-8), "{r:?}");
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn flags_corrupted_gradient() {
        let r = grad_check(&Toy { p: vec![0.7, -1.3], corrupt: true }, &());
        assert!(r.max_rel_error > 0.1, "{r:?}");
        assert_eq!(r.worst, (0, 1));
    }
}
