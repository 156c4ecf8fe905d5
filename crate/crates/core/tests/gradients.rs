//! Finite-difference verification of every differentiable primitive.
//!
//! Each case wires a small graph from named parameters to a scalar loss,
//! runs the reverse pass, and compares against central differences in f64.

use refrain_core::nn::check::assert_gradients_match;
use refrain_core::nn::init::{param_rng, uniform};
use refrain_core::nn::{gru_param_ids, init_gru_params, Array, Graph, Pad, ParamSet};

const TOL: f64 = 1e-4;

fn insert_uniform(params: &mut ParamSet<f64>, name: &str, dims: &[usize], seed: u64) {
    let v = uniform(&mut param_rng(seed, name), dims, -1.0, 1.0);
    params.insert(name, v);
}

#[test]
fn dense_chain_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "x", &[3, 4], 1);
    insert_uniform(&mut params, "w", &[4, 2], 1);
    insert_uniform(&mut params, "b", &[2], 1);

    let forward = |p: &ParamSet<f64>| {
        let mut g = Graph::new();
        let x = g.param(p, "x");
        let w = g.param(p, "w");
        let b = g.param(p, "b");
        let mm = g.matmul(x, w);
        let biased = g.add_bias(mm, b);
        let act = g.tanh(biased);
        g.mean_all(act)
    };

    let mut g = Graph::new();
    let loss = {
        let x = g.param(&params, "x");
        let w = g.param(&params, "w");
        let b = g.param(&params, "b");
        let mm = g.matmul(x, w);
        let biased = g.add_bias(mm, b);
        let act = g.tanh(biased);
        g.mean_all(act)
    };
    g.backward_params(loss, &mut params);
    assert_gradients_match(
        &mut params,
        |p| {
            let mut g = Graph::new();
            let l = {
                let x = g.param(p, "x");
                let w = g.param(p, "w");
                let b = g.param(p, "b");
                let mm = g.matmul(x, w);
                let biased = g.add_bias(mm, b);
                let act = g.tanh(biased);
                g.mean_all(act)
            };
            g.value(l).item()
        },
        TOL,
    );
    let _ = forward;
}

fn check<F>(params: &mut ParamSet<f64>, build: F)
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> refrain_core::nn::NodeId,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params);
    params.zero_grads();
    g.backward_params(loss, params);
    assert_gradients_match(
        params,
        |p| {
            let mut g = Graph::new();
            let l = build(&mut g, p);
            g.value(l).item()
        },
        TOL,
    );
}

#[test]
fn elementwise_chain_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "a", &[2, 3], 2);
    insert_uniform(&mut params, "b", &[2, 3], 3);
    check(&mut params, |g, p| {
        let a = g.param(p, "a");
        let b = g.param(p, "b");
        let s = g.sigmoid(a);
        let t = g.tanh(b);
        let m = g.mul(s, t);
        let lr = g.leaky_relu(m, 0.2);
        let e = g.exp(lr);
        let d = g.sub(e, t);
        let aff = g.affine(d, 1.5, 0.25);
        let ab = g.abs(aff);
        let lg = g.log(ab);
        let mz = g.min_zero(lg);
        let add = g.add(mz, m);
        g.mean_all(add)
    });
}

#[test]
fn softmax_and_cross_entropy_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "logits", &[4, 5], 4);
    check(&mut params, |g, p| {
        let x = g.param(p, "logits");
        let sm = g.softmax_rows(x);
        let lg = g.log(sm);
        let first = g.slice_cols(lg, 0, 2);
        let a = g.mean_all(first);
        let ce = g.cross_entropy(x, vec![0, 3, 2, 4]);
        g.add(a, ce)
    });
}

#[test]
fn instance_norm_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "k", &[2, 3, 4], 5);
    insert_uniform(&mut params, "post", &[2, 3, 4], 6);
    check(&mut params, |g, p| {
        let k = g.param(p, "k");
        let norm = g.instance_norm(k);
        let w = g.param(p, "post");
        let prod = g.mul(norm, w);
        g.mean_all(prod)
    });
}

#[test]
fn conv1d_gradients_all_pads() {
    for (pad, stride, seed) in [(Pad::SameZero, 1, 7), (Pad::SameEdge, 1, 8), (Pad::Valid, 2, 9), (Pad::SameZero, 2, 10)] {
        let mut params = ParamSet::new();
        insert_uniform(&mut params, "x", &[6, 2], seed);
        insert_uniform(&mut params, "w", &[3, 2, 3], seed + 1);
        insert_uniform(&mut params, "b", &[3], seed + 2);
        check(&mut params, move |g, p| {
            let x = g.param(p, "x");
            let w = g.param(p, "w");
            let b = g.param(p, "b");
            let y = g.conv1d(x, w, b, stride, pad);
            let a = g.tanh(y);
            g.mean_all(a)
        });
    }
}

#[test]
fn conv2d_gradients() {
    for (pad, strides, seed) in [(Pad::SameZero, (2, 2), 11), (Pad::Valid, (1, 1), 12)] {
        let mut params = ParamSet::new();
        insert_uniform(&mut params, "x", &[2, 5, 4], seed);
        insert_uniform(&mut params, "w", &[3, 2, 3, 3], seed + 1);
        insert_uniform(&mut params, "b", &[3], seed + 2);
        check(&mut params, move |g, p| {
            let x = g.param(p, "x");
            let w = g.param(p, "w");
            let b = g.param(p, "b");
            let y = g.conv2d(x, w, b, strides, pad);
            let a = g.sigmoid(y);
            g.mean_all(a)
        });
    }
}

#[test]
fn gru_gradients_both_directions() {
    for (reversed, seed) in [(false, 13), (true, 14)] {
        let mut params = ParamSet::new();
        insert_uniform(&mut params, "x", &[5, 3], seed);
        init_gru_params(&mut params, "gru", seed as u64, 3, 4);
        check(&mut params, move |g, p| {
            let x = g.param(p, "x");
            let ids = gru_param_ids(g, p, "gru");
            let y = g.gru(x, ids, reversed);
            g.mean_all(y)
        });
    }
}

#[test]
fn bigru_single_frame_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "x", &[1, 2], 15);
    init_gru_params(&mut params, "f", 15, 2, 3);
    init_gru_params(&mut params, "b", 16, 2, 3);
    check(&mut params, |g, p| {
        let x = g.param(p, "x");
        let f = gru_param_ids(g, p, "f");
        let b = gru_param_ids(g, p, "b");
        let y = g.bigru(x, f, b);
        g.mean_all(y)
    });
}

#[test]
fn structural_op_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "x", &[4, 6], 17);
    insert_uniform(&mut params, "v", &[3], 18);
    insert_uniform(&mut params, "s", &[], 19);
    check(&mut params, |g, p| {
        let x = g.param(p, "x");
        let v = g.param(p, "v");
        let s = g.param(p, "s");
        let gathered = g.gather_rows(x, vec![0, 2, 2, 3]);
        let left = g.slice_cols(gathered, 0, 3);
        let right = g.slice_cols(gathered, 3, 6);
        let bro = g.broadcast_rows(v, 4);
        let cat = g.concat_cols(&[left, bro, right]);
        let t = g.transpose(cat);
        let back = g.transpose(t);
        let scaled = g.scale_by(back, s);
        let rows = g.mean_rows(scaled);
        let stacked = g.concat_rows(&[rows, rows]);
        let r = g.reshape(stacked, &[2, 9]);
        let total = g.sum_all(r);
        let half = g.affine(total, 0.5, 0.0);
        let m = g.mean_all(half);
        g.add(m, m)
    });
}

#[test]
fn kl_composition_gradients() {
    let mut params = ParamSet::new();
    insert_uniform(&mut params, "mean", &[3, 4], 20);
    insert_uniform(&mut params, "logvar", &[3, 4], 21);
    check(&mut params, |g, p| {
        let m = g.param(p, "mean");
        let lv = g.param(p, "logvar");
        g.kl_diag_std_normal(m, lv)
    });
}
