//! Correlation-plus-area objective and its gradient.

use nalgebra::DMatrix;
use ndarray::{s, Array2};

use super::net::TransformNet;
use crate::correlation::{
    cca_all_lags, center_rows, lag_covariances, standardize_rows, whiten, Ridge,
};
use crate::error::{Error, Result};
use crate::segmentation::WindowPair;

/// Which network of a pair receives gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

/// Loss terms of one window at its best lag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub correlation: f64,
    pub area: f64,
    pub lag: i64,
}

/// Correlation at lag `c` and its gradients with respect to the two
/// centered blocks (full width, zero outside the overlap).
pub(crate) fn correlation_grad(
    u: &Array2<f64>,
    v: &Array2<f64>,
    c: i64,
    ridge: Ridge,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = u.ncols();
    let (s11, s12, s22) = lag_covariances(u.view(), v.view(), c);
    let (l1, l2) = (u.nrows(), v.nrows());
    let w = whiten(&s11, &s12, &s22, ridge)?;
    let signed = l1 == 1 && l2 == 1;
    let (uvt, udu, vdv, corr) = if signed {
        let t = w.singular[0] * (w.u[(0, 0)] * w.v_t[(0, 0)]).signum();
        let one = DMatrix::from_element(1, 1, 1.0);
        let d = DMatrix::from_element(1, 1, t);
        (one, d.clone(), d, t)
    } else {
        let k = w.singular.len();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.singular.clone()));
        let uk = w.u.columns(0, k).into_owned();
        let vk = w.v_t.rows(0, k).transpose();
        (&uk * vk.transpose(), &uk * &d * uk.transpose(), &vk * &d * vk.transpose(), w.singular.iter().sum())
    };
    let l1_inv = w.l1.clone().try_inverse().ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let l2_inv = w.l2.clone().try_inverse().ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let g12 = l1_inv.transpose() * uvt * &l2_inv;
    let mut g11 = l1_inv.transpose() * udu * &l1_inv * -0.5;
    let mut g22 = l2_inv.transpose() * vdv * &l2_inv * -0.5;
    if let Ridge::Relative(f) = ridge {
        let t11 = g11.trace() * f / l1 as f64;
        let t22 = g22.trace() * f / l2 as f64;
        for i in 0..l1 {
            g11[(i, i)] += t11;
        }
        for i in 0..l2 {
            g22[(i, i)] += t22;
        }
    }
    let (x0, x1, y0, y1) = if c >= 0 {
        (0, n - c as usize, c as usize, n)
    } else {
        ((-c) as usize, n, 0, (n as i64 + c) as usize)
    };
    let h1 = u.slice(s![.., x0..x1]);
    let h2 = v.slice(s![.., y0..y1]);
    let to_nd = |m: &DMatrix<f64>| Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)]);
    let (g11, g12, g22) = (to_nd(&g11), to_nd(&g12), to_nd(&g22));
    let d1 = g11.dot(&h1) * 2.0 + g12.dot(&h2);
    let d2 = g22.dot(&h2) * 2.0 + g12.t().dot(&h1);
    let mut gu = Array2::zeros(u.raw_dim());
    gu.slice_mut(s![.., x0..x1]).assign(&d1);
    let mut gv = Array2::zeros(v.raw_dim());
    gv.slice_mut(s![.., y0..y1]).assign(&d2);
    Ok((corr, gu, gv))
}

/// Loss and parameter gradient for one standardized window pair.
///
/// `input` is the trainable side's standardized block and `other` the
/// already transformed block of the fixed side.
pub(crate) fn window_loss_and_grad(
    net: &TransformNet,
    input: &Array2<f64>,
    other: &Array2<f64>,
    side: Side,
    max_lag: usize,
    beta: f64,
    ridge: Ridge,
) -> Result<(PairLoss, Vec<f64>)> {
    let (out, tape) = net.forward_taped(input)?;
    let (l, n) = (out.nrows(), out.ncols());
    let diff = &out - input;
    let area = diff.iter().map(|d| d * d).sum::<f64>() / (l * n) as f64;
    let mut grad_out = diff * (2.0 * beta / (l * n) as f64);

    let mine = center_rows(&out);
    let theirs = center_rows(other);
    let (u, v) = match side {
        Side::First => (&mine, &theirs),
        Side::Second => (&theirs, &mine),
    };
    let max_lag = max_lag.min(n.saturating_sub(1));
    let scan = cca_all_lags(u.view(), v.view(), max_lag, ridge)?;
    let (lag, _) = scan.argmax();
    let mut correlation = 0.0;
    if !scan.degenerate && beta < 1.0 {
        let (corr, gu, gv) = correlation_grad(u, v, lag, ridge)?;
        correlation = corr;
        let g = match side {
            Side::First => gu,
            Side::Second => gv,
        };
        grad_out = grad_out - center_rows(&g) * (1.0 - beta);
    }
    let loss = (1.0 - beta) * -correlation + beta * area;
    let grad = net.backward(&tape, &grad_out);
    Ok((PairLoss { loss, correlation, area, lag }, grad))
}

/// Loss of a window pair and the gradient for the trainable network.
pub fn loss_and_grad(
    net1: &TransformNet,
    net2: Option<&TransformNet>,
    pair: &WindowPair,
    trainable: Side,
    beta: f64,
    ridge: Ridge,
    max_lag: usize,
) -> Result<(PairLoss, Vec<f64>)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must be in [0, 1], got {beta}")));
    }
    let x = standardize_rows(&pair.x);
    let y = standardize_rows(&pair.y);
    let fixed = |net: Option<&TransformNet>, b: &Array2<f64>| match net {
        Some(n) => n.forward(b),
        None => Ok(b.clone()),
    };
    match trainable {
        Side::First => {
            let other = fixed(net2, &y)?;
            window_loss_and_grad(net1, &x, &other, Side::First, max_lag, beta, ridge)
        }
        Side::Second => {
            let net2 = net2.ok_or_else(|| Error::invalid("second network required to train it"))?;
            let other = net1.forward(&x)?;
            window_loss_and_grad(net2, &y, &other, Side::Second, max_lag, beta, ridge)
        }
    }
}
