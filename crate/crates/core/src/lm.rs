//! Small dense Levenberg-Marquardt stepper.
//!
//! Minimizes `||r(p)||^2` with Marquardt's diagonal scaling. The stepper is
//! driven one accepted step at a time so callers can interleave their own
//! bookkeeping (cost traces, branch lookahead).

use nalgebra::{DMatrix, DVector};

/// Residual vector and Jacobian of a least-squares objective.
pub(crate) trait ResidualModel {
    /// `None` when `params` lies outside the admissible domain.
    fn residuals(&self, params: &[f64]) -> Option<DVector<f64>>;
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64>;
}

const DAMPING_MIN: f64 = 1e-15;
const DAMPING_MAX: f64 = 1e16;

pub(crate) enum Step {
    Accepted { previous_cost: f64, cost: f64 },
    /// No damping level produced a decrease.
    Stalled,
}

pub(crate) struct LmState {
    pub params: Vec<f64>,
    pub residuals: DVector<f64>,
    pub cost: f64,
    pub damping: f64,
}

impl LmState {
    pub fn new(model: &impl ResidualModel, params: Vec<f64>, damping: f64) -> Option<Self> {
        let residuals = model.residuals(&params)?;
        let cost = residuals.norm_squared();
        cost.is_finite().then_some(Self {
            params,
            residuals,
            cost,
            damping,
        })
    }

    /// `||J^T r|| / (||J|| ||r||)`: how far the residual is from orthogonal to
    /// the tangent space. Near zero only at a stationary point.
    pub fn gradient_cosine(&self, model: &impl ResidualModel) -> f64 {
        let jac = model.jacobian(&self.params);
        let denom = jac.norm() * self.residuals.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (jac.transpose() * &self.residuals).norm() / denom
    }

    pub fn step(&mut self, model: &impl ResidualModel) -> Step {
        let jac = model.jacobian(&self.params);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &self.residuals;
        let diag_floor = jtj.diagonal().max().max(1.0) * 1e-12;

        while self.damping <= DAMPING_MAX {
            let mut lhs = jtj.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += self.damping * jtj[(i, i)].max(diag_floor);
            }
            let Some(delta) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
                self.damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = self
                .params
                .iter()
                .zip(delta.iter())
                .map(|(p, d)| p + d)
                .collect();
            if let Some(r) = model.residuals(&trial) {
                let cost = r.norm_squared();
                if cost.is_finite() && cost < self.cost {
                    let previous_cost = self.cost;
                    self.params = trial;
                    self.residuals = r;
                    self.cost = cost;
                    self.damping = (self.damping / 10.0).max(DAMPING_MIN);
                    return Step::Accepted {
                        previous_cost,
                        cost,
                    };
                }
            }
            self.damping *= 10.0;
        }
        Step::Stalled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals (1 - x, 10 (y - x^2)).
    struct Rosenbrock;

    impl ResidualModel for Rosenbrock {
        fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
            Some(DVector::from_vec(vec![1.0 - p[0], 10.0 * (p[1] - p[0] * p[0])]))
        }
        fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * p[0], 10.0])
        }
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let mut state = LmState::new(&Rosenbrock, vec![-1.2, 1.0], 1e-3).unwrap();
        let mut last = state.cost;
        for _ in 0..200 {
            match state.step(&Rosenbrock) {
                Step::Accepted { cost, .. } => {
                    assert!(cost < last);
                    last = cost;
                }
                Step::Stalled => break,
            }
        }
        assert!((state.params[0] - 1.0).abs() < 1e-8);
        assert!((state.params[1] - 1.0).abs() < 1e-8);
    }
}
