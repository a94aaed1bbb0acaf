use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{he_normal, Module};
use crate::real::Real;

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Clone, Debug)]
pub struct DenseCache<F> {
    input: Array2<F>,
}

impl<F: Real> Dense<F> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: he_normal((inputs, outputs), inputs, gain, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> (Array2<F>, DenseCache<F>) {
        assert_eq!(x.ncols(), self.inputs(), "dense input width");
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        (y, DenseCache { input: x.to_owned() })
    }

    pub fn backward(
        &self,
        cache: &DenseCache<F>,
        dout: ArrayView2<'_, F>,
        grads: &mut Self,
        input_grad: bool,
    ) -> Option<Array2<F>> {
        grads.weight += &cache.input.t().dot(&dout);
        grads.bias += &dout.sum_axis(Axis(0));
        input_grad.then(|| dout.dot(&self.weight.t()).as_standard_layout().into_owned())
    }
}

impl<F: Real> Module<F> for Dense<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        vec![
            ("weight".into(), self.weight.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        vec![
            ("weight".into(), self.weight.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
        ]
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
        }
    }
}
