//! Differentiable numeric primitives: dense arrays, an eager reverse-mode
//! graph, initializers, and finite-difference verification.

pub mod array;
pub mod check;
pub mod functional;
pub mod graph;
pub mod init;

pub use array::{Array, Dtype, Scalar};
pub use functional::{
    conv1d_forward, conv2d_forward, dense_forward, gru_forward, gru_param_ids, init_gru_params,
    instance_norm_2d, kl_diag_std_normal, softmax, Direction, GruWeights, INSTANCE_NORM_EPS,
};
pub use graph::{Grads, Graph, GruWeightIds, NodeId, Pad, ParamSet, Parameter};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = g.sum_all(x);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_loss_leaves_params_untouched() {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Array::filled(&[3], 2.0));
        let mut g = Graph::new();
        let _w = g.param(&params, "w");
        let c = g.input(Array::scalar(5.0));
        g.backward_params(c, &mut params);
        assert_eq!(params.get("w").grad.data(), &[0.0, 0.0, 0.0]);
    }
}
