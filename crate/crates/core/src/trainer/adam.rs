//! Adam with bias correction and per-tensor state.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};

use crate::real::Real;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ArrayD<F>,
    pub v: ArrayD<F>,
    pub t: u64,
}

/// One optimizer instance per parameter group. Tensors are keyed by name
/// and get their state on first update, so a group can be stepped on a
/// subset of its tensors without disturbing the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub learning_rate: f64,
    states: BTreeMap<String, AdamState<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdamState<F>> {
        self.states.get(name)
    }

    pub fn states(&self) -> impl Iterator<Item = (&String, &AdamState<F>)> {
        self.states.iter()
    }

    pub fn insert_state(&mut self, name: String, state: AdamState<F>) {
        self.states.insert(name, state);
    }

    /// Applies one update to every tensor in `params` from the gradient of
    /// the same name.
    pub fn step(
        &mut self,
        params: Vec<(String, ArrayViewMutD<'_, F>)>,
        grads: &[(String, ArrayViewD<'_, F>)],
    ) -> Result<()> {
        let lr = F::of(self.learning_rate);
        let (b1, b2, eps) = (F::of(BETA1), F::of(BETA2), F::of(EPSILON));
        for (name, mut p) in params {
            let g = grads
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, g)| g)
                .ok_or_else(|| Error::Consistency(format!("no gradient for {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let st = self.states.entry(name).or_insert_with(|| AdamState {
                m: ArrayD::zeros(p.raw_dim()),
                v: ArrayD::zeros(p.raw_dim()),
                t: 0,
            });
            st.t += 1;
            let c1 = F::one() - b1.powi(st.t as i32);
            let c2 = F::one() - b2.powi(st.t as i32);
            Zip::from(&mut p)
                .and(&mut st.m)
                .and(&mut st.v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, ArrayD, IxDyn};

    fn one(v: &[f64]) -> ArrayD<f64> {
        arr1(v).into_dyn()
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        let mut opt = Adam::new(1e-4);
        let mut p = one(&[1.0, -2.0, 0.5]);
        let g = one(&[0.3, -7.0, 1e-2]);
        opt.step(vec![("w".into(), p.view_mut())], &[("w".into(), g.view())]).unwrap();
        for (i, (&after, &before)) in p.iter().zip(&[1.0, -2.0, 0.5]).enumerate() {
            let want = 1e-4 * g[i] / (g[i].abs() + 1e-8);
            assert!(((before - after) - want).abs() < 1e-12);
            assert!(((before - after).abs() - 1e-4).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_but_counts() {
        let mut opt = Adam::new(1e-3);
        let mut p = one(&[1.0, 2.0]);
        let g = ArrayD::zeros(IxDyn(&[2]));
        opt.step(vec![("w".into(), p.view_mut())], &[("w".into(), g.view())]).unwrap();
        opt.step(vec![("w".into(), p.view_mut())], &[("w".into(), g.view())]).unwrap();
        assert_eq!(p, one(&[1.0, 2.0]));
        assert_eq!(opt.state("w").unwrap().t, 2);
    }

    #[test]
    fn separate_groups_keep_separate_state() {
        let mut a = Adam::new(1e-3);
        let b = Adam::<f64>::new(1e-3);
        let mut p = one(&[1.0]);
        let g = one(&[1.0]);
        a.step(vec![("w".into(), p.view_mut())], &[("w".into(), g.view())]).unwrap();
        assert!(b.state("w").is_none());
        assert_eq!(a.state("w").unwrap().t, 1);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut opt = Adam::new(1e-3);
        let mut p = one(&[1.0]);
        let err = opt.step(vec![("w".into(), p.view_mut())], &[]).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }
}
