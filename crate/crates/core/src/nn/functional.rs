//! Validated, graph-free entry points for the numeric primitives.
//!
//! These run the same kernels as the graph ops (each builds a one-shot graph
//! internally), adding the input validation that model code performs at
//! configuration time.

use crate::{Error, Result};

use super::array::{Array, Scalar};
use super::graph::{Graph, GruWeightIds, Pad, ParamSet};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel standardization of `k: [C, U, V]` (Eqs. of the reference
/// encoder's normalization): `(k[c] - mean_c) / max(std_c, eps)`.
pub fn instance_norm_2d<S: Scalar>(k: &Array<S>) -> Result<Array<S>> {
    if k.rank() != 3 {
        return Err(Error::InvalidInput(format!("instance_norm_2d expects [C, U, V], got {:?}", k.dims())));
    }
    if k.dims()[1] * k.dims()[2] < 1 {
        return Err(Error::InvalidInput("instance_norm_2d needs at least one element per channel".into()));
    }
    if !k.all_finite() {
        return Err(Error::InvalidInput("instance_norm_2d input contains non-finite values".into()));
    }
    let mut g = Graph::new();
    let x = g.input(k.clone());
    let y = g.instance_norm(x);
    Ok(g.value(y).clone())
}

/// Cross-correlation over time. `x: [T, Cin]`, `kernels: [Cout, Cin, K]`,
/// `bias: [Cout]`; output `[T', Cout]`.
pub fn conv1d_forward<S: Scalar>(
    x: &Array<S>,
    kernels: &Array<S>,
    bias: &Array<S>,
    stride: usize,
    pad: Pad,
) -> Result<Array<S>> {
    if x.rank() != 2 || kernels.rank() != 3 {
        return Err(Error::InvalidConfig("conv1d shapes: x [T, Cin], kernels [Cout, Cin, K]".into()));
    }
    let (cout, cin, k) = (kernels.dims()[0], kernels.dims()[1], kernels.dims()[2]);
    if x.cols() != cin {
        return Err(Error::InvalidConfig(format!("conv1d channel mismatch: x has {}, kernels expect {cin}", x.cols())));
    }
    if bias.len() != cout {
        return Err(Error::InvalidConfig("conv1d bias length must equal Cout".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidConfig("conv1d stride must be positive".into()));
    }
    match pad {
        Pad::Valid => {
            if k > x.rows() {
                return Err(Error::InvalidConfig(format!("kernel width {k} exceeds padded input length {}", x.rows())));
            }
        }
        Pad::SameZero | Pad::SameEdge => {
            if k % 2 == 0 {
                return Err(Error::InvalidConfig("same padding requires an odd kernel width".into()));
            }
        }
    }
    let mut g = Graph::new();
    let xn = g.input(x.clone());
    let wn = g.input(kernels.clone());
    let bn = g.input(bias.clone());
    let y = g.conv1d(xn, wn, bn, stride, pad);
    Ok(g.value(y).clone())
}

/// Two-axis convolution. `x: [Cin, U, V]`, `kernels: [Cout, Cin, Kh, Kw]`,
/// `bias: [Cout]`; output `[Cout, U', V']`.
pub fn conv2d_forward<S: Scalar>(
    x: &Array<S>,
    kernels: &Array<S>,
    bias: &Array<S>,
    strides: (usize, usize),
    pad: Pad,
) -> Result<Array<S>> {
    if x.rank() != 3 || kernels.rank() != 4 {
        return Err(Error::InvalidConfig("conv2d shapes: x [Cin, U, V], kernels [Cout, Cin, Kh, Kw]".into()));
    }
    let (cout, cin, kh, kw) = (kernels.dims()[0], kernels.dims()[1], kernels.dims()[2], kernels.dims()[3]);
    if x.dims()[0] != cin {
        return Err(Error::InvalidConfig("conv2d channel mismatch".into()));
    }
    if bias.len() != cout {
        return Err(Error::InvalidConfig("conv2d bias length must equal Cout".into()));
    }
    if strides.0 == 0 || strides.1 == 0 {
        return Err(Error::InvalidConfig("conv2d strides must be positive".into()));
    }
    match pad {
        Pad::Valid => {
            if kh > x.dims()[1] || kw > x.dims()[2] {
                return Err(Error::InvalidConfig("kernel exceeds input extent in valid mode".into()));
            }
        }
        Pad::SameZero | Pad::SameEdge => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::InvalidConfig("same padding requires odd kernel extents".into()));
            }
        }
    }
    let mut g = Graph::new();
    let xn = g.input(x.clone());
    let wn = g.input(kernels.clone());
    let bn = g.input(bias.clone());
    let y = g.conv2d(xn, wn, bn, strides, pad);
    Ok(g.value(y).clone())
}

/// Processing direction for a single GRU pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Weights for one GRU direction; `w*: [D, H]`, `u*: [H, H]`, `b*: [H]`.
#[derive(Debug, Clone)]
pub struct GruWeights<S: Scalar> {
    pub wr: Array<S>,
    pub ur: Array<S>,
    pub br: Array<S>,
    pub wu: Array<S>,
    pub uu: Array<S>,
    pub bu: Array<S>,
    pub wn: Array<S>,
    pub un: Array<S>,
    pub bn: Array<S>,
}

impl<S: Scalar> GruWeights<S> {
    pub fn zeros(d: usize, h: usize) -> Self {
        GruWeights {
            wr: Array::zeros(&[d, h]),
            ur: Array::zeros(&[h, h]),
            br: Array::zeros(&[h]),
            wu: Array::zeros(&[d, h]),
            uu: Array::zeros(&[h, h]),
            bu: Array::zeros(&[h]),
            wn: Array::zeros(&[d, h]),
            un: Array::zeros(&[h, h]),
            bn: Array::zeros(&[h]),
        }
    }

    fn insert_into(&self, g: &mut Graph<S>) -> GruWeightIds {
        GruWeightIds {
            wr: g.input(self.wr.clone()),
            ur: g.input(self.ur.clone()),
            br: g.input(self.br.clone()),
            wu: g.input(self.wu.clone()),
            uu: g.input(self.uu.clone()),
            bu: g.input(self.bu.clone()),
            wn: g.input(self.wn.clone()),
            un: g.input(self.un.clone()),
            bn: g.input(self.bn.clone()),
        }
    }
}

/// One GRU pass over `x: [T, D]` from a zero initial state; outputs `[T, H]`
/// time-aligned in both directions.
pub fn gru_forward<S: Scalar>(x: &Array<S>, weights: &GruWeights<S>, direction: Direction) -> Result<Array<S>> {
    if x.rank() != 2 || x.rows() < 1 {
        return Err(Error::InvalidInput("gru input must be [T, D] with T >= 1".into()));
    }
    if weights.wr.dims()[0] != x.cols() {
        return Err(Error::InvalidConfig("gru input width does not match weights".into()));
    }
    let mut g = Graph::new();
    let xn = g.input(x.clone());
    let ids = weights.insert_into(&mut g);
    let y = g.gru(xn, ids, direction == Direction::Backward);
    Ok(g.value(y).clone())
}

/// Row-wise affine map: `x: [R, D] -> x·w + b` with `w: [D, H]`, `b: [H]`.
pub fn dense_forward<S: Scalar>(x: &Array<S>, weights: &Array<S>, bias: &Array<S>) -> Result<Array<S>> {
    if x.rank() != 2 || weights.rank() != 2 || x.cols() != weights.rows() || bias.len() != weights.cols() {
        return Err(Error::InvalidConfig(format!(
            "dense shape mismatch: x {:?}, w {:?}, b {:?}",
            x.dims(),
            weights.dims(),
            bias.dims()
        )));
    }
    let mut g = Graph::new();
    let xn = g.input(x.clone());
    let wn = g.input(weights.clone());
    let bn = g.input(bias.clone());
    let mm = g.matmul(xn, wn);
    let y = g.add_bias(mm, bn);
    Ok(g.value(y).clone())
}

/// Max-shifted softmax of a rank-1 vector.
pub fn softmax<S: Scalar>(x: &Array<S>) -> Result<Array<S>> {
    if x.rank() != 1 || x.is_empty() {
        return Err(Error::InvalidInput("softmax expects a non-empty rank-1 array".into()));
    }
    let mut g = Graph::new();
    let xn = g.input(x.clone());
    let y = g.softmax_rows(xn);
    Ok(g.value(y).clone())
}

/// KL divergence of `N(mean, diag(exp(logvar)))` from `N(0, I)`:
/// `0.5 * sum(mean^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_diag_std_normal<S: Scalar>(mean: &Array<S>, logvar: &Array<S>) -> Result<S> {
    if mean.dims() != logvar.dims() {
        return Err(Error::InvalidInput("kl: mean and logvar dims differ".into()));
    }
    if !logvar.all_finite() || !mean.all_finite() {
        return Err(Error::InvalidInput("kl: non-finite input".into()));
    }
    let mut total = S::zero();
    for (&m, &lv) in mean.data().iter().zip(logvar.data()) {
        total = total + m * m + lv.exp() - S::one() - lv;
    }
    // per-term values are nonnegative in exact arithmetic; guard the rounding
    Ok((total * S::of_f64(0.5)).max(S::zero()))
}

/// Convenience: registers a full GRU weight group under `prefix` and returns
/// the node handles. Shared by every model that owns a GRU.
pub fn gru_param_ids<S: Scalar>(g: &mut Graph<S>, params: &ParamSet<S>, prefix: &str) -> GruWeightIds {
    GruWeightIds {
        wr: g.param(params, &format!("{prefix}.wr")),
        ur: g.param(params, &format!("{prefix}.ur")),
        br: g.param(params, &format!("{prefix}.br")),
        wu: g.param(params, &format!("{prefix}.wu")),
        uu: g.param(params, &format!("{prefix}.uu")),
        bu: g.param(params, &format!("{prefix}.bu")),
        wn: g.param(params, &format!("{prefix}.wn")),
        un: g.param(params, &format!("{prefix}.un")),
        bn: g.param(params, &format!("{prefix}.bn")),
    }
}

/// Registers initialized GRU weights under `prefix` into a parameter set.
pub fn init_gru_params<S: Scalar>(params: &mut ParamSet<S>, prefix: &str, seed: u64, d: usize, h: usize) {
    use super::init::{glorot, param_rng};
    for (suffix, dims, fi, fo) in [
        ("wr", vec![d, h], d, h),
        ("ur", vec![h, h], h, h),
        ("wu", vec![d, h], d, h),
        ("uu", vec![h, h], h, h),
        ("wn", vec![d, h], d, h),
        ("un", vec![h, h], h, h),
    ] {
        let name = format!("{prefix}.{suffix}");
        let w = glorot(&mut param_rng(seed, &name), &dims, fi, fo);
        params.insert(&name, w);
    }
    for suffix in ["br", "bu", "bn"] {
        params.insert(&format!("{prefix}.{suffix}"), Array::zeros(&[h]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::{param_rng, uniform};
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Independent scalar-loop evaluation of the per-channel normalization.
    fn oracle_instance_norm(k: &[f64], c: usize, n: usize, eps: f64) -> Vec<f64> {
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            let s = &k[ch * n..(ch + 1) * n];
            let mu = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let denom = var.sqrt().max(eps);
            for (o, v) in out[ch * n..(ch + 1) * n].iter_mut().zip(s) {
                *o = (v - mu) / denom;
            }
        }
        out
    }

    #[test]
    fn instance_norm_matches_scalar_oracle() {
        let k = Array::from_vec(&[1, 2, 2], vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        let out = instance_norm_2d(&k).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0, -1.0, 1.0]);

        let mut rng = param_rng(11, "in_oracle");
        let k: Array<f64> = uniform(&mut rng, &[3, 4, 5], -2.0, 2.0);
        let out = instance_norm_2d(&k).unwrap();
        let expect = oracle_instance_norm(k.data(), 3, 20, INSTANCE_NORM_EPS);
        for (a, b) in out.data().iter().zip(&expect) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn instance_norm_identity_and_degenerate_cases() {
        // already zero-mean unit-std stays put (sigma=1 > eps)
        let k = Array::from_vec(&[1, 1, 4], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let out = instance_norm_2d(&k).unwrap();
        for (a, b) in out.data().iter().zip(k.data()) {
            assert!(close(*a, *b, 1e-9));
        }
        // constant channel maps to zeros through the epsilon guard
        let k = Array::from_vec(&[1, 2, 2], vec![5.0f64; 4]).unwrap();
        let out = instance_norm_2d(&k).unwrap();
        assert_eq!(out.data(), &[0.0; 4]);
        // non-finite input is rejected
        let k = Array::from_vec(&[1, 1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(instance_norm_2d(&k).is_err());
    }

    fn oracle_conv1d(x: &[f64], t: usize, cin: usize, w: &[f64], cout: usize, k: usize, stride: usize, pad: usize, bias: &[f64]) -> Vec<f64> {
        let t_out = (t + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; t_out * cout];
        for to in 0..t_out {
            for o in 0..cout {
                let mut acc = bias[o];
                for c in 0..cin {
                    for kk in 0..k {
                        let i = (to * stride + kk) as isize - pad as isize;
                        if i >= 0 && (i as usize) < t {
                            acc += x[i as usize * cin + c] * w[o * cin * k + c * k + kk];
                        }
                    }
                }
                out[to * cout + o] = acc;
            }
        }
        out
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = Array::from_vec(&[4, 1], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let w = Array::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let b = Array::zeros(&[1]);
        let y = conv1d_forward(&x, &w, &b, 1, Pad::SameZero).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_known_values_and_shapes() {
        let x = Array::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Array::from_vec(&[1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let b = Array::zeros(&[1]);
        let y = conv1d_forward(&x, &w, &b, 1, Pad::SameZero).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);

        let x = Array::from_vec(&[5, 1], vec![1.0; 5]).unwrap();
        let w = Array::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let y = conv1d_forward(&x, &w, &b, 2, Pad::SameZero).unwrap();
        assert_eq!(y.dims(), &[3, 1]);
    }

    #[test]
    fn conv1d_random_matches_scalar_oracle() {
        let mut rng = param_rng(5, "conv1d_oracle");
        let x: Array<f64> = uniform(&mut rng, &[7, 3], -1.0, 1.0);
        let w: Array<f64> = uniform(&mut rng, &[4, 3, 5], -1.0, 1.0);
        let b: Array<f64> = uniform(&mut rng, &[4], -0.5, 0.5);
        let y = conv1d_forward(&x, &w, &b, 1, Pad::SameZero).unwrap();
        let expect = oracle_conv1d(x.data(), 7, 3, w.data(), 4, 5, 1, 2, b.data());
        for (a, e) in y.data().iter().zip(&expect) {
            assert!(close(*a, *e, 1e-12));
        }
    }

    #[test]
    fn conv1d_rejects_wide_kernel_in_valid_mode() {
        let x = Array::<f64>::zeros(&[2, 1]);
        let w = Array::<f64>::zeros(&[1, 1, 3]);
        let b = Array::<f64>::zeros(&[1]);
        assert!(matches!(conv1d_forward(&x, &w, &b, 1, Pad::Valid), Err(crate::Error::InvalidConfig(_))));
    }

    #[test]
    fn conv2d_identity_sum_and_shapes() {
        let x = Array::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Array::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Array::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, (1, 1), Pad::Valid).unwrap();
        assert_eq!(y.data(), x.data());

        let x = Array::from_vec(&[1, 2, 2], vec![1.0; 4]).unwrap();
        let w = Array::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = conv2d_forward(&x, &w, &b, (2, 2), Pad::Valid).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);

        let x = Array::<f64>::zeros(&[1, 8, 8]);
        let w = Array::<f64>::zeros(&[2, 1, 3, 3]);
        let b = Array::<f64>::zeros(&[2]);
        let y = conv2d_forward(&x, &w, &b, (2, 2), Pad::SameZero).unwrap();
        assert_eq!(y.dims(), &[2, 4, 4]);
    }

    fn oracle_conv2d(
        x: &[f64], cin: usize, u: usize, v: usize,
        w: &[f64], cout: usize, kh: usize, kw: usize,
        su: usize, sv: usize, pu: usize, pv: usize, bias: &[f64],
    ) -> Vec<f64> {
        let uo = (u + 2 * pu - kh) / su + 1;
        let vo = (v + 2 * pv - kw) / sv + 1;
        let mut out = vec![0.0; cout * uo * vo];
        for o in 0..cout {
            for i in 0..uo {
                for j in 0..vo {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for a in 0..kh {
                            for bk in 0..kw {
                                let si = (i * su + a) as isize - pu as isize;
                                let sj = (j * sv + bk) as isize - pv as isize;
                                if si >= 0 && (si as usize) < u && sj >= 0 && (sj as usize) < v {
                                    acc += x[c * u * v + si as usize * v + sj as usize]
                                        * w[o * cin * kh * kw + c * kh * kw + a * kw + bk];
                                }
                            }
                        }
                    }
                    out[o * uo * vo + i * vo + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_random_matches_scalar_oracle() {
        let mut rng = param_rng(9, "conv2d_oracle");
        let x: Array<f64> = uniform(&mut rng, &[2, 5, 6], -1.0, 1.0);
        let w: Array<f64> = uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b: Array<f64> = uniform(&mut rng, &[3], -0.5, 0.5);
        let y = conv2d_forward(&x, &w, &b, (2, 2), Pad::SameZero).unwrap();
        let expect = oracle_conv2d(x.data(), 2, 5, 6, w.data(), 3, 3, 3, 2, 2, 1, 1, b.data());
        for (a, e) in y.data().iter().zip(&expect) {
            assert!(close(*a, *e, 1e-12));
        }
    }

    #[test]
    fn gru_zero_weights_and_single_frame() {
        let x = Array::from_vec(&[3, 2], vec![1.0, -1.0, 0.5, 0.25, 2.0, -2.0]).unwrap();
        let w = GruWeights::<f64>::zeros(2, 4);
        let y = gru_forward(&x, &w, Direction::Forward).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x1 = Array::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap();
        let mut rng = param_rng(21, "gru_t1");
        let mut w = GruWeights::<f64>::zeros(2, 3);
        w.wr = uniform(&mut rng, &[2, 3], -1.0, 1.0);
        w.wu = uniform(&mut rng, &[2, 3], -1.0, 1.0);
        w.wn = uniform(&mut rng, &[2, 3], -1.0, 1.0);
        w.ur = uniform(&mut rng, &[3, 3], -1.0, 1.0);
        w.uu = uniform(&mut rng, &[3, 3], -1.0, 1.0);
        w.un = uniform(&mut rng, &[3, 3], -1.0, 1.0);
        let f = gru_forward(&x1, &w, Direction::Forward).unwrap();
        let b = gru_forward(&x1, &w, Direction::Backward).unwrap();
        assert_eq!(f.data(), b.data());
    }

    // Step-by-step scalar recurrence, written independently of the graph op.
    fn oracle_gru(x: &[f64], t_len: usize, d: usize, h: usize, w: &GruWeights<f64>, reversed: bool) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut y = vec![0.0; t_len * h];
        let mut hs = vec![0.0; h];
        let order: Vec<usize> = if reversed { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for &t in &order {
            let mut r = vec![0.0; h];
            let mut u = vec![0.0; h];
            let mut n = vec![0.0; h];
            for j in 0..h {
                let mut ar = w.br.data()[j];
                let mut au = w.bu.data()[j];
                for dd in 0..d {
                    ar += x[t * d + dd] * w.wr.data()[dd * h + j];
                    au += x[t * d + dd] * w.wu.data()[dd * h + j];
                }
                for hh in 0..h {
                    ar += hs[hh] * w.ur.data()[hh * h + j];
                    au += hs[hh] * w.uu.data()[hh * h + j];
                }
                r[j] = sig(ar);
                u[j] = sig(au);
            }
            for j in 0..h {
                let mut an = w.bn.data()[j];
                for dd in 0..d {
                    an += x[t * d + dd] * w.wn.data()[dd * h + j];
                }
                for hh in 0..h {
                    an += r[hh] * hs[hh] * w.un.data()[hh * h + j];
                }
                n[j] = an.tanh();
            }
            for j in 0..h {
                hs[j] = u[j] * hs[j] + (1.0 - u[j]) * n[j];
                y[t * h + j] = hs[j];
            }
        }
        y
    }

    #[test]
    fn gru_matches_recurrence_oracle() {
        let mut rng = param_rng(42, "gru_oracle");
        let x: Array<f64> = uniform(&mut rng, &[3, 2], -1.0, 1.0);
        let mut w = GruWeights::<f64>::zeros(2, 2);
        for m in [&mut w.wr, &mut w.wu, &mut w.wn] {
            *m = uniform(&mut rng, &[2, 2], -1.0, 1.0);
        }
        for m in [&mut w.ur, &mut w.uu, &mut w.un] {
            *m = uniform(&mut rng, &[2, 2], -1.0, 1.0);
        }
        for m in [&mut w.br, &mut w.bu, &mut w.bn] {
            *m = uniform(&mut rng, &[2], -0.5, 0.5);
        }
        for (dir, rev) in [(Direction::Forward, false), (Direction::Backward, true)] {
            let y = gru_forward(&x, &w, dir).unwrap();
            let expect = oracle_gru(x.data(), 3, 2, 2, &w, rev);
            for (a, e) in y.data().iter().zip(&expect) {
                assert!(close(*a, *e, 1e-6), "gru mismatch {a} vs {e}");
            }
        }
    }

    #[test]
    fn dense_identity_bias_and_oracle() {
        let x = Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Array::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b0 = Array::zeros(&[2]);
        assert_eq!(dense_forward(&x, &eye, &b0).unwrap().data(), x.data());

        let wz = Array::zeros(&[2, 2]);
        let b = Array::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        assert_eq!(dense_forward(&x, &wz, &b).unwrap().data(), &[0.5, -0.5, 0.5, -0.5]);

        let mut rng = param_rng(3, "dense_oracle");
        let x: Array<f64> = uniform(&mut rng, &[2, 2], -1.0, 1.0);
        let w: Array<f64> = uniform(&mut rng, &[2, 2], -1.0, 1.0);
        let bb: Array<f64> = uniform(&mut rng, &[2], -1.0, 1.0);
        let y = dense_forward(&x, &w, &bb).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let expect = bb.data()[c] + x.at2(r, 0) * w.at2(0, c) + x.at2(r, 1) * w.at2(1, c);
                assert!(close(y.at2(r, c), expect, 1e-12));
            }
        }
    }

    #[test]
    fn softmax_reference_cases() {
        let y = softmax(&Array::from_vec(&[2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);

        let y = softmax(&Array::from_vec(&[2], vec![1e4, -1e4]).unwrap()).unwrap();
        assert!(y.all_finite());
        assert!(close(y.data()[0], 1.0, 1e-9) && close(y.data()[1], 0.0, 1e-9));

        let y = softmax(&Array::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (a, e) in y.data().iter().zip(&exps) {
            assert!(close(*a, e / denom, 1e-12));
        }
    }

    fn mc_kl(mu: f64, logvar: f64, samples: usize, seed: u64) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = param_rng(seed, "mc_kl");
        let sigma = (0.5 * logvar).exp();
        let mut acc = 0.0;
        for _ in 0..samples {
            let n: f64 = StandardNormal.sample(&mut rng);
            let z = mu + sigma * n;
            let log_q = -0.5 * ((z - mu).powi(2) / sigma.powi(2) + (2.0 * std::f64::consts::PI).ln() + logvar);
            let log_p = -0.5 * (z * z + (2.0 * std::f64::consts::PI).ln());
            acc += log_q - log_p;
        }
        acc / samples as f64
    }

    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        let zero = Array::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(kl_diag_std_normal(&zero, &zero).unwrap(), 0.0);

        let mu = Array::from_vec(&[1], vec![1.0]).unwrap();
        let kl = kl_diag_std_normal(&mu, &zero).unwrap();
        assert!(close(kl, 0.5, 1e-12));
        assert!(close(kl, mc_kl(1.0, 0.0, 1_000_000, 7), 1e-2));

        let lv = Array::from_vec(&[1], vec![4.0f64.ln()]).unwrap();
        let kl = kl_diag_std_normal(&zero, &lv).unwrap();
        assert!(close(kl, 0.5 * (4.0 - 1.0 - 4.0f64.ln()), 1e-12));
        assert!(close(kl, 0.8069, 5e-4));
        assert!(close(kl, mc_kl(0.0, 4.0f64.ln(), 1_000_000, 8), 1e-2));
    }

    #[test]
    fn kl_is_nonnegative_everywhere() {
        let mut rng = param_rng(99, "kl_prop");
        for _ in 0..200 {
            let h = rng.gen_range(1..6);
            let mu: Array<f64> = uniform(&mut rng, &[h], -3.0, 3.0);
            let lv: Array<f64> = uniform(&mut rng, &[h], -4.0, 3.0);
            assert!(kl_diag_std_normal(&mu, &lv).unwrap() >= 0.0);
        }
    }
}
