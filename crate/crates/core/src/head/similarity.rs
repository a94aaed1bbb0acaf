//! Pairwise t-kernel similarity distributions and their cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::real::Real;
use crate::{Error, Result};

/// Floor applied to off-diagonal Q entries before taking logs.
pub const Q_FLOOR: f64 = 1e-12;

/// Nonnegative `[M, M]` matrix with zero diagonal, normalized over all
/// ordered pairs `i != j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<F> {
    values: Array2<F>,
}

impl<F: Real> SimilarityMatrix<F> {
    /// Wraps a matrix after checking shape, sign, diagonal and total mass.
    pub fn new(values: Array2<F>) -> Result<Self> {
        let (m, n) = values.dim();
        if m != n || m < 2 {
            return Err(Error::Shape(format!("similarity matrix must be square with M >= 2, got {m}x{n}")));
        }
        if values.iter().any(|v| !(*v >= F::zero())) {
            return Err(Error::Consistency("similarity entries must be finite and >= 0".into()));
        }
        if values.diag().iter().any(|v| *v != F::zero()) {
            return Err(Error::Consistency("similarity diagonal must be 0".into()));
        }
        let total = values.sum().as_f64();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Consistency(format!("similarity mass is {total}, expected 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> ArrayView2<'_, F> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_inner(self) -> Array2<F> {
        self.values
    }
}

pub(crate) fn sq_distances<F: Real>(x: ArrayView2<'_, F>) -> Array2<F> {
    let norms: Array1<F> = x.map_axis(Axis(1), |r| r.iter().map(|&v| v * v).sum());
    let gram = x.dot(&x.t());
    let m = x.nrows();
    Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            F::zero()
        } else {
            (norms[i] + norms[j] - F::of(2.0) * gram[[i, j]]).max(F::zero())
        }
    })
}

struct Kernel<F> {
    dist: Array2<F>,
    kernel: Array2<F>,
    total: F,
}

fn t_kernel<F: Real>(x: ArrayView2<'_, F>, dof: F) -> Result<Kernel<F>> {
    if x.nrows() < 2 {
        return Err(Error::Config(format!("pairwise similarities need M >= 2, got {}", x.nrows())));
    }
    if !(dof > F::zero()) {
        return Err(Error::Config(format!("degrees of freedom must be > 0, got {dof}")));
    }
    let dist = sq_distances(x);
    let expo = -(dof + F::one()) / F::of(2.0);
    let mut kernel = dist.mapv(|d| (F::one() + d / dof).powf(expo));
    kernel.diag_mut().fill(F::zero());
    let total = kernel.sum();
    if !(total > F::zero() && total.is_finite()) {
        return Err(Error::Numeric {
            term: "similarity",
            detail: format!("kernel mass {total}"),
        });
    }
    Ok(Kernel { dist, kernel, total })
}

/// Student-t similarities with `rho` degrees of freedom over the rows of `mu`.
pub fn pairwise_p<F: Real>(mu: ArrayView2<'_, F>, rho: F) -> Result<SimilarityMatrix<F>> {
    let k = t_kernel(mu, rho)?;
    Ok(SimilarityMatrix {
        values: k.kernel / k.total,
    })
}

/// Cauchy (one degree of freedom) similarities over the rows of `c`.
pub fn pairwise_q<F: Real>(c: ArrayView2<'_, F>) -> Result<SimilarityMatrix<F>> {
    let k = t_kernel(c, F::one())?;
    Ok(SimilarityMatrix {
        values: k.kernel / k.total,
    })
}

/// Cross-entropy `-sum_{i != j} P_ij log Q_ij` with Q floored.
pub fn clustering_loss<F: Real>(p: &SimilarityMatrix<F>, q: &SimilarityMatrix<F>) -> Result<F> {
    if p.values.dim() != q.values.dim() {
        return Err(Error::Shape(format!(
            "P is {:?} but Q is {:?}",
            p.values.dim(),
            q.values.dim()
        )));
    }
    let floor = F::of(Q_FLOOR);
    let m = p.len();
    let mut loss = F::zero();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                loss -= p.values[[i, j]] * q.values[[i, j]].max(floor).ln();
            }
        }
    }
    Ok(loss)
}

pub struct ClusteringLossGrad<F> {
    pub value: F,
    pub p: SimilarityMatrix<F>,
    pub q: SimilarityMatrix<F>,
    /// d loss / d c.
    pub dc: Array2<F>,
    /// d loss / d mu through P; `None` when P is treated as a constant.
    pub dmu: Option<Array2<F>>,
}

/// Given a symmetric-or-not weight matrix `w = dL/d dist_ij`, returns
/// dL/dx for dist_ij = |x_i - x_j|^2.
fn dist_backward<F: Real>(w: &Array2<F>, x: ArrayView2<'_, F>) -> Array2<F> {
    let a = w + &w.t();
    let rows = a.sum_axis(Axis(1));
    let ax = a.dot(&x);
    let mut out = x.to_owned();
    for (mut r, (&s, ar)) in out.outer_iter_mut().zip(rows.iter().zip(ax.outer_iter())) {
        r.zip_mut_with(&ar, |v, &q| *v = F::of(2.0) * (s * *v - q));
    }
    out
}

/// Loss plus analytic gradients with respect to `c` and (optionally) `mu`.
pub fn clustering_loss_grad<F: Real>(
    mu: ArrayView2<'_, F>,
    c: ArrayView2<'_, F>,
    rho: F,
    through_p: bool,
) -> Result<ClusteringLossGrad<F>> {
    if mu.nrows() != c.nrows() {
        return Err(Error::Shape(format!("mu has {} rows but c has {}", mu.nrows(), c.nrows())));
    }
    let kp = t_kernel(mu, rho)?;
    let kq = t_kernel(c, F::one())?;
    let p = &kp.kernel / kp.total;
    let q = &kq.kernel / kq.total;
    let floor = F::of(Q_FLOOR);
    let m = p.nrows();
    let mut value = F::zero();
    // G_ij = -log Q_ij
    let mut g = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                g[[i, j]] = -q[[i, j]].max(floor).ln();
                value += p[[i, j]] * g[[i, j]];
            }
        }
    }
    let p_mass = p.sum();

    // Q path: dL/dK_ij = -P_ij/K_ij + S/Zq, dK/dd = -K^2.
    let mut wq = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i != j && q[[i, j]] > floor {
                let kk = kq.kernel[[i, j]];
                wq[[i, j]] = kk * (p[[i, j]] - p_mass * q[[i, j]]);
            }
        }
    }
    let dc = dist_backward(&wq, c);

    let dmu = through_p.then(|| {
        // dL/dK_ij = (G_ij - sum P G) / Zp ; dK/dd = -(rho+1)/(2 rho) K / (1 + d/rho)
        let coef = (rho + F::one()) / (F::of(2.0) * rho);
        let mut wp = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let kk = kp.kernel[[i, j]];
                    let dk = -coef * kk / (F::one() + kp.dist[[i, j]] / rho);
                    wp[[i, j]] = (g[[i, j]] - value) / kp.total * dk;
                }
            }
        }
        dist_backward(&wp, mu)
    });

    Ok(ClusteringLossGrad {
        value,
        p: SimilarityMatrix { values: p },
        q: SimilarityMatrix { values: q },
        dc,
        dmu,
    })
}
