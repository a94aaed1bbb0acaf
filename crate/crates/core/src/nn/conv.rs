use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{he_normal, Module};
use crate::real::Real;

/// Output side length of a square convolution.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

/// Unfolds NHWC patches into rows: `[b*oh*ow, k*k*c]`, column order `(ky, kx, c)`.
pub fn im2col<F: Real>(
    x: ArrayView4<'_, F>,
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array2<F> {
    let (b, h, w, c) = x.dim();
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let kkc = kernel * kernel * c;
    let mut cols = vec![F::zero(); b * oh * ow * kkc];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * kkc;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * kernel + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((b * oh * ow, kkc), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters and sums rows back onto an NHWC canvas.
pub fn col2im<F: Real>(
    cols: ArrayView2<'_, F>,
    shape: (usize, usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array4<F> {
    let (b, h, w, c) = shape;
    let kkc = kernel * kernel * c;
    assert_eq!(cols.dim(), (b * oh * ow, kkc), "col2im shape");
    let cs = cols.as_standard_layout();
    let cs = cs.as_slice().expect("standard layout");
    let mut out = vec![F::zero(); b * h * w * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * kkc;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * kernel + kx) * c;
                        for (o, v) in out[dst..dst + c].iter_mut().zip(&cs[src..src + c]) {
                            *o += *v;
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((b, h, w, c), out).expect("col2im shape")
}

/// Square 2-D convolution. Weight layout `[k, k, c_in, c_out]`.
#[derive(Clone, Debug)]
pub struct Conv2d<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache<F> {
    cols: Array2<F>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<F: Real> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: he_normal((kernel, kernel, c_in, c_out), kernel * kernel * c_in, 1.0, rng),
            bias: Array1::zeros(c_out),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().3
    }

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let (k, _, ci, co) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((k * k * ci, co))
            .expect("contiguous weight")
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> (Array4<F>, ConvCache<F>) {
        let (b, h, w, c) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let k = self.kernel();
        let oh = conv_out(h, k, self.stride, self.padding);
        let ow = conv_out(w, k, self.stride, self.padding);
        let cols = im2col(x, k, self.stride, self.padding, oh, ow);
        let mut out = cols.dot(&self.weight_matrix());
        out += &self.bias;
        let out = out
            .into_shape_with_order((b, oh, ow, self.out_channels()))
            .expect("conv output shape");
        (
            out,
            ConvCache {
                cols,
                in_shape: (b, h, w, c),
                out_hw: (oh, ow),
            },
        )
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient
    /// when `input_grad` is set.
    pub fn backward(
        &self,
        cache: &ConvCache<F>,
        dout: ArrayView4<'_, F>,
        grads: &mut Self,
        input_grad: bool,
    ) -> Option<Array4<F>> {
        let (b, oh, ow, co) = dout.dim();
        assert_eq!((oh, ow), cache.out_hw, "conv gradient shape");
        let d2 = dout.as_standard_layout();
        let d2 = d2
            .view()
            .into_shape_with_order((b * oh * ow, co))
            .expect("contiguous gradient");
        let dw = cache.cols.t().dot(&d2);
        let (k, _, ci, _) = self.weight.dim();
        {
            let mut gw = grads
                .weight
                .view_mut()
                .into_shape_with_order((k * k * ci, co))
                .expect("contiguous weight gradient");
            gw += &dw;
        }
        grads.bias += &d2.sum_axis(Axis(0));
        if !input_grad {
            return None;
        }
        let dcols = d2.dot(&self.weight_matrix().t());
        Some(col2im(
            dcols.view(),
            cache.in_shape,
            k,
            self.stride,
            self.padding,
            oh,
            ow,
        ))
    }
}

impl<F: Real> Module<F> for Conv2d<F> {
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
            weight: Array4::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Transposed convolution, defined as the adjoint of a [`Conv2d`] with the
/// same kernel/stride/padding that maps the output canvas back to the input.
/// Weight layout `[c_in, k, k, c_out]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvTransposeCache<F> {
    input: Array2<F>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        // each output pixel receives about k*k*c_in/stride^2 contributions
        let fan_in = (kernel * kernel * c_in / (stride * stride)).max(1);
        Self {
            weight: he_normal((c_in, kernel, kernel, c_out), fan_in, 1.0, rng),
            bias: Array1::zeros(c_out),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().1
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().3
    }

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let (ci, k, _, co) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((ci, k * k * co))
            .expect("contiguous weight")
    }

    /// `out_hw` must be a canvas that the matching convolution maps onto the
    /// input's spatial size.
    pub fn forward(
        &self,
        x: ArrayView4<'_, F>,
        out_hw: (usize, usize),
    ) -> (Array4<F>, ConvTransposeCache<F>) {
        let (b, h, w, c) = x.dim();
        assert_eq!(c, self.in_channels(), "transposed conv input channels");
        let k = self.kernel();
        assert_eq!(
            (
                conv_out(out_hw.0, k, self.stride, self.padding),
                conv_out(out_hw.1, k, self.stride, self.padding)
            ),
            (h, w),
            "transposed conv geometry"
        );
        let input = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * h * w, c))
            .expect("contiguous input");
        let cols = input.dot(&self.weight_matrix());
        let mut out = col2im(
            cols.view(),
            (b, out_hw.0, out_hw.1, self.out_channels()),
            k,
            self.stride,
            self.padding,
            h,
            w,
        );
        out += &self.bias;
        (
            out,
            ConvTransposeCache {
                input,
                in_hw: (h, w),
                out_hw,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ConvTransposeCache<F>,
        dout: ArrayView4<'_, F>,
        grads: &mut Self,
        input_grad: bool,
    ) -> Option<Array4<F>> {
        let (b, oh, ow, co) = dout.dim();
        assert_eq!((oh, ow), cache.out_hw, "transposed conv gradient shape");
        let (h, w) = cache.in_hw;
        let k = self.kernel();
        let dcols = im2col(dout, k, self.stride, self.padding, h, w);
        let dw = cache.input.t().dot(&dcols);
        let ci = self.in_channels();
        {
            let mut gw = grads
                .weight
                .view_mut()
                .into_shape_with_order((ci, k * k * co))
                .expect("contiguous weight gradient");
            gw += &dw;
        }
        grads.bias += &dout.sum_axis(Axis(0)).sum_axis(Axis(0)).sum_axis(Axis(0));
        if !input_grad {
            return None;
        }
        let dx = dcols.dot(&self.weight_matrix().t());
        Some(
            dx.into_shape_with_order((b, h, w, ci))
                .expect("input gradient shape"),
        )
    }
}

impl<F: Real> Module<F> for ConvTranspose2d<F> {
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
            weight: Array4::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct_conv(x: &Array4<f64>, conv: &Conv2d<f64>) -> Array4<f64> {
        let (b, h, w, ci) = x.dim();
        let k = conv.kernel();
        let (s, p) = (conv.stride, conv.padding);
        let (oh, ow) = (conv_out(h, k, s, p), conv_out(w, k, s, p));
        let co = conv.out_channels();
        let mut out = Array4::zeros((b, oh, ow, co));
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for o in 0..co {
                        let mut acc = conv.bias[o];
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for c in 0..ci {
                                    acc += x[[bi, iy as usize, ix as usize, c]]
                                        * conv.weight[[ky, kx, c, o]];
                                }
                            }
                        }
                        out[[bi, oy, ox, o]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, &mut rng);
        let x = Array::from_shape_fn((2, 7, 6, 3), |(a, b, c, d)| {
            ((a * 31 + b * 7 + c * 3 + d) % 11) as f64 / 11.0 - 0.4
        });
        let (fast, _) = conv.forward(x.view());
        let slow = direct_conv(&x, &conv);
        assert_eq!(fast.dim(), slow.dim());
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let convt = ConvTranspose2d {
            weight: conv.weight.clone().permuted_axes([3, 0, 1, 2]).as_standard_layout().into_owned(),
            bias: Array1::zeros(2),
            stride: 2,
            padding: 1,
        };
        let x = Array::from_shape_fn((1, 8, 8, 2), |(_, b, c, d)| (b as f64 - c as f64 * 0.5 + d as f64).sin());
        let y = Array::from_shape_fn((1, 4, 4, 3), |(_, b, c, d)| (b as f64 * 0.3 + c as f64 + d as f64 * 2.0).cos());
        let mut conv0 = conv.clone();
        conv0.bias.fill(0.0);
        let (cx, _) = conv0.forward(x.view());
        let (ty, _) = convt.forward(y.view(), (8, 8));
        let lhs: f64 = (&cx * &y).sum();
        let rhs: f64 = (&x * &ty).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn stride_two_halves_the_canvas() {
        assert_eq!(conv_out(32, 3, 2, 1), 16);
        assert_eq!(conv_out(2, 3, 2, 1), 1);
        assert_eq!(conv_out(1, 3, 2, 1), 1);
        assert_eq!(conv_out(16, 3, 1, 1), 16);
    }
}
