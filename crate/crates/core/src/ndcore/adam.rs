use crate::error::{Error, Result};
use crate::ndcore::Matrix;

/// Adam moment estimates for a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    /// Zeroed moments shaped like `params`, default betas and epsilon.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        AdamState {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected Adam update, applied in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "adam: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let before = p.clone();
        let g = Matrix::zeros(1, 2);
        let mut s = AdamState::new(0.1, [&p]);
        s.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_learning_rate_sized() {
        let mut p = Matrix::from_rows(&[[0.0]]);
        let g = Matrix::from_rows(&[[1.0]]);
        let mut s = AdamState::new(0.1, [&p]);
        s.step(&mut [&mut p], &[&g]).unwrap();
        // m̂ = 1, v̂ = 1, so Δ = -0.1 / (1 + 1e-8)
        assert!((p.get(0, 0) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        fn reference(mut theta: f64, grads: &[f64], lr: f64) -> f64 {
            let (mut m, mut v) = (0.0, 0.0);
            for (t, &g) in grads.iter().enumerate() {
                let t = (t + 1) as i32;
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                theta -= lr * mh / (vh.sqrt() + 1e-8);
            }
            theta
        }
        let mut p = Matrix::from_rows(&[[0.7]]);
        let g = Matrix::from_rows(&[[0.3]]);
        let mut s = AdamState::new(0.05, [&p]);
        s.step(&mut [&mut p], &[&g]).unwrap();
        s.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.get(0, 0) - reference(0.7, &[0.3, 0.3], 0.05)).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 1);
        let mut s = AdamState::new(0.1, [&p]);
        assert!(s.step(&mut [&mut p], &[&g]).is_err());
        assert_eq!(s.step, 0);
    }
}
