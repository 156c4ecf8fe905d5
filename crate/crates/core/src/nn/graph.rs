//! Reverse-mode computation graph.
//!
//! Values are computed eagerly as nodes are added; `backward` walks the tape
//! in reverse creation order (creation order is topological by construction)
//! and accumulates gradients for every reachable node, including named
//! parameters.

use std::collections::HashMap;

use super::array::{Array, Scalar};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

/// Named trainable parameters with persistent gradient buffers.
///
/// Ordered by name so checkpoint layout and optimizer walks are deterministic.
#[derive(Debug, Clone)]
pub struct ParamSet<S: Scalar> {
    entries: std::collections::BTreeMap<String, Parameter<S>>,
}

/// One trainable array plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub value: Array<S>,
    pub grad: Array<S>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { entries: std::collections::BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Array<S>) {
        let grad = Array::zeros(value.dims());
        let prev = self.entries.insert(name.to_string(), Parameter { value, grad });
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Parameter<S> {
        self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Parameter<S> {
        self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn value(&self, name: &str) -> &Array<S> {
        &self.get(name).value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter<S>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(S::zero());
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, p) in self.iter() {
            out.insert(name, p.value.cast::<T>());
        }
        out
    }
}

/// Padding behaviour for convolutions.
///
/// `SameEdge` replicates boundary frames; a constant per-channel input shift
/// then stays constant across time, which instance norm removes exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Valid,
    SameZero,
    SameEdge,
}

#[derive(Debug, Clone)]
struct Conv1dSpec {
    t_in: usize,
    cin: usize,
    k: usize,
    stride: usize,
    pad: Pad,
}

#[derive(Debug, Clone)]
struct Conv2dSpec {
    cin: usize,
    u: usize,
    v: usize,
    kh: usize,
    kw: usize,
    su: usize,
    sv: usize,
    pad: Pad,
}

/// Weight node handles for one GRU direction.
#[derive(Debug, Clone, Copy)]
pub struct GruWeightIds {
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wu: NodeId,
    pub uu: NodeId,
    pub bu: NodeId,
    pub wn: NodeId,
    pub un: NodeId,
    pub bn: NodeId,
}

struct GruOp<S> {
    x: NodeId,
    w: GruWeightIds,
    reversed: bool,
    d: usize,
    h: usize,
    // caches in processing order, T×H each
    r: Vec<S>,
    u: Vec<S>,
    n: Vec<S>,
    hp: Vec<S>,
}

enum Op<S: Scalar> {
    Input,
    Param(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// k * x + c, elementwise with constant k, c.
    Affine(NodeId, S, S),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, S),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    /// min(0, x)
    MinZero(NodeId),
    SoftmaxRows(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Array<S> },
    InstanceNorm { x: NodeId, denoms: Vec<S>, active: Vec<bool> },
    Gru(Box<GruOp<S>>),
    Im2col1d { x: NodeId, spec: Conv1dSpec },
    Im2col2d { x: NodeId, spec: Conv2dSpec },
    GatherRows { x: NodeId, idx: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, lo: usize, hi: usize },
    BroadcastRows { v: NodeId, rows: usize },
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanRows(NodeId),
    ScaleBy { x: NodeId, s: NodeId },
}

struct Node<S: Scalar> {
    value: Array<S>,
    op: Op<S>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads<S: Scalar> {
    by_node: Vec<Option<Array<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, id: NodeId) -> Option<&Array<S>> {
        self.by_node[id.0].as_ref()
    }
}

/// Eager tape of differentiable operations.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    param_nodes: HashMap<String, NodeId>,
    /// Epsilon guard inside the instance-norm denominator.
    pub instance_norm_eps: f64,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), param_nodes: HashMap::new(), instance_norm_eps: 1e-5 }
    }

    pub fn value(&self, id: NodeId) -> &Array<S> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; gradients flow to it but nowhere further.
    pub fn input(&mut self, value: Array<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Named parameter leaf. Repeated calls with the same name share one node.
    pub fn param(&mut self, params: &ParamSet<S>, name: &str) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let value = params.value(name).clone();
        let id = self.push(value, Op::Param(name.to_string()));
        self.param_nodes.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Elementwise `k * x + c`.
    pub fn affine(&mut self, x: NodeId, k: S, c: S) -> NodeId {
        let v = self.value(x).map(|e| k * e + c);
        self.push(v, Op::Affine(x, k, c))
    }

    /// Row-broadcast bias add: `x[r, j] + b[j]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xa = self.value(x);
        let ba = self.value(b);
        let cols = *xa.dims().last().expect("add_bias on scalar");
        assert_eq!(ba.len(), cols, "bias length must match trailing dim");
        let rows = xa.len() / cols;
        let mut v = xa.clone();
        for r in 0..rows {
            for j in 0..cols {
                let i = r * cols + j;
                v.data_mut()[i] = v.data()[i] + ba.data()[j];
            }
        }
        self.push(v, Op::AddBias(x, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (k2, n) = (self.value(b).rows(), self.value(b).cols());
        assert_eq!(k, k2, "matmul inner dims differ");
        let data = matmul_kernel(self.value(a).data(), m, k, self.value(b).data(), n);
        let v = Array::from_vec(&[m, n], data).unwrap();
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let a = self.value(x);
        let (m, n) = (a.rows(), a.cols());
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data()[i * n + j];
            }
        }
        let v = Array::from_vec(&[n, m], out).unwrap();
        self.push(v, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        let v = self.value(x).reshaped(dims);
        self.push(v, Op::Reshape(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid_scalar);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.tanh());
        self.push(v, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: S) -> NodeId {
        let v = self.value(x).map(|e| if e > S::zero() { e } else { slope * e });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.exp());
        self.push(v, Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.ln());
        self.push(v, Op::Log(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.abs());
        self.push(v, Op::Abs(x))
    }

    /// Elementwise `min(0, x)`; the building block of hinge losses.
    pub fn min_zero(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.min(S::zero()));
        self.push(v, Op::MinZero(x))
    }

    /// Numerically safe softmax along the trailing dimension.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let a = self.value(x);
        let cols = *a.dims().last().expect("softmax on scalar");
        let rows = a.len() / cols;
        let mut out = a.clone();
        for r in 0..rows {
            softmax_row(&mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let a = self.value(logits);
        let (rows, cols) = (a.rows(), a.cols());
        assert_eq!(rows, targets.len());
        let mut probs = a.clone();
        let mut total = S::zero();
        for r in 0..rows {
            let row = &mut probs.data_mut()[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                denom = denom + *v;
            }
            for v in row.iter_mut() {
                *v = *v / denom;
            }
            total = total - row[targets[r]].ln();
        }
        let loss = total / S::from_usize(rows).unwrap();
        self.push(Array::scalar(loss), Op::CrossEntropy { logits, targets, probs })
    }

    /// Per-channel standardization of a `[C, U, V]` input over its U*V
    /// elements, with an epsilon guard on the denominator.
    pub fn instance_norm(&mut self, x: NodeId) -> NodeId {
        let a = self.value(x);
        assert_eq!(a.rank(), 3, "instance_norm expects [C, U, V]");
        let c = a.dims()[0];
        let n = a.dims()[1] * a.dims()[2];
        assert!(n >= 1);
        let eps = S::of_f64(self.instance_norm_eps);
        let inv_n = S::one() / S::from_usize(n).unwrap();
        let mut out = a.clone();
        let mut denoms = Vec::with_capacity(c);
        let mut active = Vec::with_capacity(c);
        for ch in 0..c {
            let s = &mut out.data_mut()[ch * n..(ch + 1) * n];
            let mut mean = S::zero();
            for &v in s.iter() {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = S::zero();
            for &v in s.iter() {
                let d = v - mean;
                var = var + d * d;
            }
            let sigma = (var * inv_n).sqrt();
            let denom = sigma.max(eps);
            for v in s.iter_mut() {
                *v = (*v - mean) / denom;
            }
            denoms.push(denom);
            active.push(sigma > eps);
        }
        self.push(out, Op::InstanceNorm { x, denoms, active })
    }

    /// Single-direction GRU over a `[T, D]` sequence; output is `[T, H]` and
    /// time-aligned for both directions (the reversed pass re-reverses).
    pub fn gru(&mut self, x: NodeId, w: GruWeightIds, reversed: bool) -> NodeId {
        let xa = self.value(x);
        let (t_len, d) = (xa.rows(), xa.cols());
        assert!(t_len >= 1, "gru needs at least one frame");
        let h = self.value(w.br).len();
        assert_eq!(self.value(w.wr).dims(), &[d, h]);
        assert_eq!(self.value(w.ur).dims(), &[h, h]);

        let mut y = vec![S::zero(); t_len * h];
        let mut cache = GruOp {
            x,
            w,
            reversed,
            d,
            h,
            r: vec![S::zero(); t_len * h],
            u: vec![S::zero(); t_len * h],
            n: vec![S::zero(); t_len * h],
            hp: vec![S::zero(); t_len * h],
        };
        {
            let xv = self.value(x).data();
            let wr = self.value(w.wr).data();
            let ur = self.value(w.ur).data();
            let br = self.value(w.br).data();
            let wu = self.value(w.wu).data();
            let uu = self.value(w.uu).data();
            let bu = self.value(w.bu).data();
            let wn = self.value(w.wn).data();
            let un = self.value(w.un).data();
            let bn = self.value(w.bn).data();

            let mut hstate = vec![S::zero(); h];
            let mut hr = vec![S::zero(); h];
            for s in 0..t_len {
                let t = if reversed { t_len - 1 - s } else { s };
                let xrow = &xv[t * d..(t + 1) * d];
                cache.hp[s * h..(s + 1) * h].copy_from_slice(&hstate);

                let rr = &mut cache.r[s * h..(s + 1) * h];
                let uu_row = &mut cache.u[s * h..(s + 1) * h];
                let nn = &mut cache.n[s * h..(s + 1) * h];
                rr.copy_from_slice(br);
                uu_row.copy_from_slice(bu);
                nn.copy_from_slice(bn);
                affine_acc(rr, xrow, wr);
                affine_acc(rr, &hstate, ur);
                affine_acc(uu_row, xrow, wu);
                affine_acc(uu_row, &hstate, uu);
                for j in 0..h {
                    rr[j] = sigmoid_scalar(rr[j]);
                    uu_row[j] = sigmoid_scalar(uu_row[j]);
                    hr[j] = rr[j] * hstate[j];
                }
                affine_acc(nn, xrow, wn);
                affine_acc(nn, &hr, un);
                for j in 0..h {
                    nn[j] = nn[j].tanh();
                    hstate[j] = uu_row[j] * hstate[j] + (S::one() - uu_row[j]) * nn[j];
                }
                y[t * h..(t + 1) * h].copy_from_slice(&hstate);
            }
        }
        let v = Array::from_vec(&[t_len, h], y).unwrap();
        self.push(v, Op::Gru(Box::new(cache)))
    }

    /// Bi-directional GRU: forward and backward outputs concatenated along
    /// the feature axis, forward half first.
    pub fn bigru(&mut self, x: NodeId, fwd: GruWeightIds, bwd: GruWeightIds) -> NodeId {
        let f = self.gru(x, fwd, false);
        let b = self.gru(x, bwd, true);
        self.concat_cols(&[f, b])
    }

    fn im2col1d(&mut self, x: NodeId, k: usize, stride: usize, pad: Pad) -> NodeId {
        let a = self.value(x);
        let (t_in, cin) = (a.rows(), a.cols());
        let spec = Conv1dSpec { t_in, cin, k, stride, pad };
        let t_out = conv_out_len(t_in, k, stride, pad);
        let mut out = vec![S::zero(); t_out * cin * k];
        {
            let xv = a.data();
            for t in 0..t_out {
                let row = &mut out[t * cin * k..(t + 1) * cin * k];
                for kk in 0..k {
                    if let Some(src) = conv_src_index(t, kk, t_in, k, stride, pad) {
                        for c in 0..cin {
                            row[c * k + kk] = xv[src * cin + c];
                        }
                    }
                }
            }
        }
        let v = Array::from_vec(&[t_out, cin * k], out).unwrap();
        self.push(v, Op::Im2col1d { x, spec })
    }

    /// 1-D convolution over time: `x` is `[T, Cin]`, `w` is `[Cout, Cin, K]`,
    /// `b` is `[Cout]`. Output `[T', Cout]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: Pad) -> NodeId {
        let wd = self.value(w).dims().to_vec();
        assert_eq!(wd.len(), 3, "conv1d weight must be [Cout, Cin, K]");
        let (cout, cin, k) = (wd[0], wd[1], wd[2]);
        assert_eq!(self.value(x).cols(), cin, "conv1d channel mismatch");
        let cols = self.im2col1d(x, k, stride, pad);
        let w2 = self.reshape(w, &[cout, cin * k]);
        let wt = self.transpose(w2);
        let mm = self.matmul(cols, wt);
        self.add_bias(mm, b)
    }

    fn im2col2d(&mut self, x: NodeId, kh: usize, kw: usize, su: usize, sv: usize, pad: Pad) -> NodeId {
        let a = self.value(x);
        assert_eq!(a.rank(), 3, "conv2d input must be [Cin, U, V]");
        let (cin, u, v) = (a.dims()[0], a.dims()[1], a.dims()[2]);
        let spec = Conv2dSpec { cin, u, v, kh, kw, su, sv, pad };
        let uo = conv_out_len(u, kh, su, pad);
        let vo = conv_out_len(v, kw, sv, pad);
        let patch = cin * kh * kw;
        let mut out = vec![S::zero(); uo * vo * patch];
        {
            let xv = a.data();
            for pu in 0..uo {
                for pv in 0..vo {
                    let row = &mut out[(pu * vo + pv) * patch..(pu * vo + pv + 1) * patch];
                    for ku in 0..kh {
                        let Some(si) = conv_src_index(pu, ku, u, kh, su, pad) else { continue };
                        for kv in 0..kw {
                            let Some(sj) = conv_src_index(pv, kv, v, kw, sv, pad) else { continue };
                            for c in 0..cin {
                                row[c * kh * kw + ku * kw + kv] = xv[c * u * v + si * v + sj];
                            }
                        }
                    }
                }
            }
        }
        let val = Array::from_vec(&[uo * vo, patch], out).unwrap();
        self.push(val, Op::Im2col2d { x, spec })
    }

    /// 2-D convolution: `x` is `[Cin, U, V]`, `w` is `[Cout, Cin, Kh, Kw]`,
    /// `b` is `[Cout]`. Output `[Cout, U', V']`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        strides: (usize, usize),
        pad: Pad,
    ) -> NodeId {
        let wd = self.value(w).dims().to_vec();
        assert_eq!(wd.len(), 4, "conv2d weight must be [Cout, Cin, Kh, Kw]");
        let (cout, cin, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
        let xd = self.value(x).dims().to_vec();
        assert_eq!(xd[0], cin, "conv2d channel mismatch");
        let uo = conv_out_len(xd[1], kh, strides.0, pad);
        let vo = conv_out_len(xd[2], kw, strides.1, pad);
        let cols = self.im2col2d(x, kh, kw, strides.0, strides.1, pad);
        let w2 = self.reshape(w, &[cout, cin * kh * kw]);
        let wt = self.transpose(w2);
        let mm = self.matmul(cols, wt);
        let biased = self.add_bias(mm, b);
        let tr = self.transpose(biased);
        self.reshape(tr, &[cout, uo, vo])
    }

    /// Row gather; indices may repeat (replication) and must be in range.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let a = self.value(x);
        let cols = a.cols();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            out.extend_from_slice(a.row(i));
        }
        let v = Array::from_vec(&[idx.len(), cols], out).unwrap();
        self.push(v, Op::GatherRows { x, idx })
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let a = self.value(p);
            assert_eq!(a.cols(), cols, "concat_rows column mismatch");
            rows += a.rows();
            data.extend_from_slice(a.data());
        }
        let v = Array::from_vec(&[rows, cols], data).unwrap();
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = vec![S::zero(); rows * total];
        let mut off = 0;
        for &p in parts {
            let a = self.value(p);
            assert_eq!(a.rows(), rows, "concat_cols row mismatch");
            let c = a.cols();
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(a.row(r));
            }
            off += c;
        }
        let v = Array::from_vec(&[rows, total], out).unwrap();
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, lo: usize, hi: usize) -> NodeId {
        let a = self.value(x);
        let (rows, cols) = (a.rows(), a.cols());
        assert!(lo < hi && hi <= cols);
        let mut out = Vec::with_capacity(rows * (hi - lo));
        for r in 0..rows {
            out.extend_from_slice(&a.row(r)[lo..hi]);
        }
        let v = Array::from_vec(&[rows, hi - lo], out).unwrap();
        self.push(v, Op::SliceCols { x, lo, hi })
    }

    /// Repeat a length-C vector as R identical rows.
    pub fn broadcast_rows(&mut self, v: NodeId, rows: usize) -> NodeId {
        let a = self.value(v);
        let cols = a.len();
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            out.extend_from_slice(a.data());
        }
        let val = Array::from_vec(&[rows, cols], out).unwrap();
        self.push(val, Op::BroadcastRows { v, rows })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().fold(S::zero(), |a, &b| a + b);
        self.push(Array::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let a = self.value(x);
        let s = a.data().iter().fold(S::zero(), |acc, &b| acc + b);
        let m = s / S::from_usize(a.len()).unwrap();
        self.push(Array::scalar(m), Op::MeanAll(x))
    }

    /// Column means of a `[R, C]` input, as a `[1, C]` row.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let a = self.value(x);
        let (rows, cols) = (a.rows(), a.cols());
        let mut out = vec![S::zero(); cols];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(a.row(r)) {
                *o = *o + v;
            }
        }
        let inv = S::one() / S::from_usize(rows).unwrap();
        out.iter_mut().for_each(|v| *v = *v * inv);
        let v = Array::from_vec(&[1, cols], out).unwrap();
        self.push(v, Op::MeanRows(x))
    }

    /// Multiply every element of `x` by a rank-0 node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let sv = self.value(s).item();
        let v = self.value(x).map(|e| e * sv);
        self.push(v, Op::ScaleBy { x, s })
    }

    /// Summed KL divergence of diagonal Gaussians `N(mean, exp(logvar))` from
    /// the standard normal: `0.5 * sum(mean^2 + exp(logvar) - 1 - logvar)`.
    pub fn kl_diag_std_normal(&mut self, mean: NodeId, logvar: NodeId) -> NodeId {
        let mu2 = self.mul(mean, mean);
        let elv = self.exp(logvar);
        let s1 = self.add(mu2, elv);
        let neg = self.affine(logvar, S::one().neg(), S::one().neg());
        let s2 = self.add(s1, neg);
        let total = self.sum_all(s2);
        self.affine(total, S::of_f64(0.5), S::zero())
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Grads<S> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Array<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(self.nodes[loss.0].value.dims(), S::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = std::mem::take(&mut grads[id]) else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { by_node: grads }
    }

    /// Reverse pass that also accumulates into `params.grad`.
    pub fn backward_params(&self, loss: NodeId, params: &mut ParamSet<S>) -> Grads<S> {
        let grads = self.backward(loss);
        for (name, &nid) in &self.param_nodes {
            if let Some(g) = grads.get(nid) {
                params.get_mut(name).grad.add_assign(g);
            }
        }
        grads
    }

    fn backprop_node(&self, id: usize, g: &Array<S>, grads: &mut [Option<Array<S>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                buf(grads, *a, self.value(*a).dims()).add_assign(g);
                buf(grads, *b, self.value(*b).dims()).add_assign(g);
            }
            Op::Sub(a, b) => {
                buf(grads, *a, self.value(*a).dims()).add_assign(g);
                let gb = buf(grads, *b, self.value(*b).dims());
                for (o, &gv) in gb.data_mut().iter_mut().zip(g.data()) {
                    *o = *o - gv;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                {
                    let ga = buf(grads, *a, av.dims());
                    for ((o, &gv), &bb) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o = *o + gv * bb;
                    }
                }
                let gb = buf(grads, *b, bv.dims());
                for ((o, &gv), &aa) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *o = *o + gv * aa;
                }
            }
            Op::Affine(x, k, _) => {
                let gx = buf(grads, *x, self.value(*x).dims());
                for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o = *o + *k * gv;
                }
            }
            Op::AddBias(x, b) => {
                buf(grads, *x, self.value(*x).dims()).add_assign(g);
                let cols = self.value(*b).len();
                let rows = g.len() / cols;
                let gb = buf(grads, *b, self.value(*b).dims());
                for r in 0..rows {
                    for j in 0..cols {
                        gb.data_mut()[j] = gb.data()[j] + g.data()[r * cols + j];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                {
                    let ga = buf(grads, *a, av.dims());
                    let gd = ga.data_mut();
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = S::zero();
                            let grow = &g.data()[i * n..(i + 1) * n];
                            let brow = &bv.data()[kk * n..(kk + 1) * n];
                            for (gv, bb) in grow.iter().zip(brow) {
                                acc = acc + *gv * *bb;
                            }
                            gd[i * k + kk] = gd[i * k + kk] + acc;
                        }
                    }
                }
                let gb = buf(grads, *b, bv.dims());
                let gd = gb.data_mut();
                for i in 0..m {
                    for kk in 0..k {
                        let avv = av.data()[i * k + kk];
                        if avv != S::zero() {
                            let grow = &g.data()[i * n..(i + 1) * n];
                            let drow = &mut gd[kk * n..(kk + 1) * n];
                            for (o, &gv) in drow.iter_mut().zip(grow) {
                                *o = *o + avv * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let xd = self.value(*x).dims().to_vec();
                let (m, n) = (xd[0], xd[1]);
                let gx = buf(grads, *x, &xd);
                for i in 0..m {
                    for j in 0..n {
                        gx.data_mut()[i * n + j] = gx.data()[i * n + j] + g.data()[j * m + i];
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = buf(grads, *x, self.value(*x).dims());
                for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o = *o + gv;
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let gx = buf(grads, *x, y.dims());
                for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o = *o + gv * yv * (S::one() - yv);
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let gx = buf(grads, *x, y.dims());
                for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o = *o + gv * (S::one() - yv * yv);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).clone();
                let gx = buf(grads, *x, xv.dims());
                for ((o, &gv), &iv) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    let d = if iv > S::zero() { S::one() } else { *slope };
                    *o = *o + gv * d;
                }
            }
            Op::Exp(x) => {
                let y = &node.value;
                let gx = buf(grads, *x, y.dims());
                for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o = *o + gv * yv;
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x).clone();
                let gx = buf(grads, *x, xv.dims());
                for ((o, &gv), &iv) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *o = *o + gv / iv;
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).clone();
                let gx = buf(grads, *x, xv.dims());
                for ((o, &gv), &iv) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    let s = if iv > S::zero() {
                        S::one()
                    } else if iv < S::zero() {
                        S::one().neg()
                    } else {
                        S::zero()
                    };
                    *o = *o + gv * s;
                }
            }
            Op::MinZero(x) => {
                let xv = self.value(*x).clone();
                let gx = buf(grads, *x, xv.dims());
                for ((o, &gv), &iv) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    if iv < S::zero() {
                        *o = *o + gv;
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let cols = *y.dims().last().unwrap();
                let rows = y.len() / cols;
                let gx = buf(grads, *x, y.dims());
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let mut dot = S::zero();
                    for (gv, yv) in gr.iter().zip(yr) {
                        dot = dot + *gv * *yv;
                    }
                    let out = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = *o + yv * (gv - dot);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = g.item() / S::from_usize(targets.len()).unwrap();
                let cols = probs.cols();
                let gx = buf(grads, *logits, probs.dims());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..cols {
                        let onehot = if j == t { S::one() } else { S::zero() };
                        let i = r * cols + j;
                        gx.data_mut()[i] = gx.data()[i] + scale * (probs.data()[i] - onehot);
                    }
                }
            }
            Op::InstanceNorm { x, denoms, active } => {
                let y = &node.value;
                let c = y.dims()[0];
                let n = y.dims()[1] * y.dims()[2];
                let inv_n = S::one() / S::from_usize(n).unwrap();
                let gx = buf(grads, *x, y.dims());
                for ch in 0..c {
                    let yr = &y.data()[ch * n..(ch + 1) * n];
                    let gr = &g.data()[ch * n..(ch + 1) * n];
                    let mut gmean = S::zero();
                    let mut gydot = S::zero();
                    for (gv, yv) in gr.iter().zip(yr) {
                        gmean = gmean + *gv;
                        gydot = gydot + *gv * *yv;
                    }
                    gmean = gmean * inv_n;
                    gydot = gydot * inv_n;
                    let inv_d = S::one() / denoms[ch];
                    let out = &mut gx.data_mut()[ch * n..(ch + 1) * n];
                    if active[ch] {
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = *o + inv_d * (gv - gmean - yv * gydot);
                        }
                    } else {
                        for (o, &gv) in out.iter_mut().zip(gr) {
                            *o = *o + inv_d * (gv - gmean);
                        }
                    }
                }
            }
            Op::Gru(op) => self.backprop_gru(op, g, grads),
            Op::Im2col1d { x, spec } => {
                let gx = buf(grads, *x, &[spec.t_in, spec.cin]);
                let t_out = conv_out_len(spec.t_in, spec.k, spec.stride, spec.pad);
                for t in 0..t_out {
                    let row = &g.data()[t * spec.cin * spec.k..(t + 1) * spec.cin * spec.k];
                    for kk in 0..spec.k {
                        if let Some(src) = conv_src_index(t, kk, spec.t_in, spec.k, spec.stride, spec.pad) {
                            for c in 0..spec.cin {
                                let i = src * spec.cin + c;
                                gx.data_mut()[i] = gx.data()[i] + row[c * spec.k + kk];
                            }
                        }
                    }
                }
            }
            Op::Im2col2d { x, spec } => {
                let gx = buf(grads, *x, &[spec.cin, spec.u, spec.v]);
                let uo = conv_out_len(spec.u, spec.kh, spec.su, spec.pad);
                let vo = conv_out_len(spec.v, spec.kw, spec.sv, spec.pad);
                let patch = spec.cin * spec.kh * spec.kw;
                for pu in 0..uo {
                    for pv in 0..vo {
                        let row = &g.data()[(pu * vo + pv) * patch..(pu * vo + pv + 1) * patch];
                        for ku in 0..spec.kh {
                            let Some(si) = conv_src_index(pu, ku, spec.u, spec.kh, spec.su, spec.pad) else {
                                continue;
                            };
                            for kv in 0..spec.kw {
                                let Some(sj) = conv_src_index(pv, kv, spec.v, spec.kw, spec.sv, spec.pad)
                                else {
                                    continue;
                                };
                                for c in 0..spec.cin {
                                    let i = c * spec.u * spec.v + si * spec.v + sj;
                                    gx.data_mut()[i] = gx.data()[i] + row[c * spec.kh * spec.kw + ku * spec.kw + kv];
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = self.value(*x).cols();
                let gx = buf(grads, *x, self.value(*x).dims());
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * cols..(r + 1) * cols];
                    let dst = &mut gx.data_mut()[i * cols..(i + 1) * cols];
                    for (o, &gv) in dst.iter_mut().zip(src) {
                        *o = *o + gv;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let cols = *node.value.dims().last().unwrap();
                let mut row = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let gp = buf(grads, p, self.value(p).dims());
                    let src = &g.data()[row * cols..(row + rows) * cols];
                    for (o, &gv) in gp.data_mut().iter_mut().zip(src) {
                        *o = *o + gv;
                    }
                    row += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let gp = buf(grads, p, self.value(p).dims());
                    for r in 0..rows {
                        let src = &g.data()[r * total + off..r * total + off + c];
                        let dst = &mut gp.data_mut()[r * c..(r + 1) * c];
                        for (o, &gv) in dst.iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, lo, hi } => {
                let cols = self.value(*x).cols();
                let rows = self.value(*x).rows();
                let gx = buf(grads, *x, self.value(*x).dims());
                let w = hi - lo;
                for r in 0..rows {
                    let src = &g.data()[r * w..(r + 1) * w];
                    let dst = &mut gx.data_mut()[r * cols + lo..r * cols + hi];
                    for (o, &gv) in dst.iter_mut().zip(src) {
                        *o = *o + gv;
                    }
                }
            }
            Op::BroadcastRows { v, rows } => {
                let cols = self.value(*v).len();
                let gv = buf(grads, *v, self.value(*v).dims());
                for r in 0..*rows {
                    for j in 0..cols {
                        gv.data_mut()[j] = gv.data()[j] + g.data()[r * cols + j];
                    }
                }
            }
            Op::SumAll(x) => {
                let gs = g.item();
                let gx = buf(grads, *x, self.value(*x).dims());
                for o in gx.data_mut() {
                    *o = *o + gs;
                }
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                let gs = g.item() / S::from_usize(n).unwrap();
                let gx = buf(grads, *x, self.value(*x).dims());
                for o in gx.data_mut() {
                    *o = *o + gs;
                }
            }
            Op::MeanRows(x) => {
                let rows = self.value(*x).rows();
                let cols = self.value(*x).cols();
                let inv = S::one() / S::from_usize(rows).unwrap();
                let gx = buf(grads, *x, self.value(*x).dims());
                for r in 0..rows {
                    for j in 0..cols {
                        let i = r * cols + j;
                        gx.data_mut()[i] = gx.data()[i] + g.data()[j] * inv;
                    }
                }
            }
            Op::ScaleBy { x, s } => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).clone();
                {
                    let gx = buf(grads, *x, xv.dims());
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o = *o + gv * sv;
                    }
                }
                let mut acc = S::zero();
                for (&gv, &iv) in g.data().iter().zip(xv.data()) {
                    acc = acc + gv * iv;
                }
                let gs = buf(grads, *s, &[]);
                gs.data_mut()[0] = gs.data()[0] + acc;
            }
        }
    }

    fn backprop_gru(&self, op: &GruOp<S>, g: &Array<S>, grads: &mut [Option<Array<S>>]) {
        let (d, h) = (op.d, op.h);
        let t_len = g.rows();
        let xv = self.value(op.x).clone();
        let wr = self.value(op.w.wr).data().to_vec();
        let ur = self.value(op.w.ur).data().to_vec();
        let wu = self.value(op.w.wu).data().to_vec();
        let uu = self.value(op.w.uu).data().to_vec();
        let wn = self.value(op.w.wn).data().to_vec();
        let un = self.value(op.w.un).data().to_vec();

        let mut dx = vec![S::zero(); t_len * d];
        let mut dwr = vec![S::zero(); d * h];
        let mut dur = vec![S::zero(); h * h];
        let mut dbr = vec![S::zero(); h];
        let mut dwu = vec![S::zero(); d * h];
        let mut duu = vec![S::zero(); h * h];
        let mut dbu = vec![S::zero(); h];
        let mut dwn = vec![S::zero(); d * h];
        let mut dun = vec![S::zero(); h * h];
        let mut dbn = vec![S::zero(); h];

        let mut dh_carry = vec![S::zero(); h];
        let mut dh = vec![S::zero(); h];
        let mut da_r = vec![S::zero(); h];
        let mut da_u = vec![S::zero(); h];
        let mut da_n = vec![S::zero(); h];
        let mut dhr = vec![S::zero(); h];

        for s in (0..t_len).rev() {
            let t = if op.reversed { t_len - 1 - s } else { s };
            let r = &op.r[s * h..(s + 1) * h];
            let u = &op.u[s * h..(s + 1) * h];
            let n = &op.n[s * h..(s + 1) * h];
            let hp = &op.hp[s * h..(s + 1) * h];
            let xrow = &xv.data()[t * d..(t + 1) * d];

            for j in 0..h {
                dh[j] = g.data()[t * h + j] + dh_carry[j];
                let dn = dh[j] * (S::one() - u[j]);
                da_n[j] = dn * (S::one() - n[j] * n[j]);
                let du = dh[j] * (hp[j] - n[j]);
                da_u[j] = du * u[j] * (S::one() - u[j]);
            }
            // dhr = da_n · Un^T
            for hh in 0..h {
                let mut acc = S::zero();
                let urow = &un[hh * h..(hh + 1) * h];
                for j in 0..h {
                    acc = acc + da_n[j] * urow[j];
                }
                dhr[hh] = acc;
            }
            for j in 0..h {
                let dr = dhr[j] * hp[j];
                da_r[j] = dr * r[j] * (S::one() - r[j]);
            }
            // carry to previous hidden state
            for hh in 0..h {
                let mut acc = dh[hh] * u[hh] + dhr[hh] * r[hh];
                let urow_r = &ur[hh * h..(hh + 1) * h];
                let urow_u = &uu[hh * h..(hh + 1) * h];
                for j in 0..h {
                    acc = acc + da_r[j] * urow_r[j] + da_u[j] * urow_u[j];
                }
                dh_carry[hh] = acc;
            }
            // input gradient
            for dd in 0..d {
                let mut acc = S::zero();
                let wrow_r = &wr[dd * h..(dd + 1) * h];
                let wrow_u = &wu[dd * h..(dd + 1) * h];
                let wrow_n = &wn[dd * h..(dd + 1) * h];
                for j in 0..h {
                    acc = acc + da_r[j] * wrow_r[j] + da_u[j] * wrow_u[j] + da_n[j] * wrow_n[j];
                }
                dx[t * d + dd] = dx[t * d + dd] + acc;
            }
            // weight gradients
            for dd in 0..d {
                let xvv = xrow[dd];
                if xvv != S::zero() {
                    for j in 0..h {
                        dwr[dd * h + j] = dwr[dd * h + j] + xvv * da_r[j];
                        dwu[dd * h + j] = dwu[dd * h + j] + xvv * da_u[j];
                        dwn[dd * h + j] = dwn[dd * h + j] + xvv * da_n[j];
                    }
                }
            }
            for hh in 0..h {
                let hv = hp[hh];
                let hrv = r[hh] * hp[hh];
                for j in 0..h {
                    dur[hh * h + j] = dur[hh * h + j] + hv * da_r[j];
                    duu[hh * h + j] = duu[hh * h + j] + hv * da_u[j];
                    dun[hh * h + j] = dun[hh * h + j] + hrv * da_n[j];
                }
            }
            for j in 0..h {
                dbr[j] = dbr[j] + da_r[j];
                dbu[j] = dbu[j] + da_u[j];
                dbn[j] = dbn[j] + da_n[j];
            }
        }

        let add = |grads: &mut [Option<Array<S>>], id: NodeId, dims: &[usize], v: Vec<S>| {
            let b = buf(grads, id, dims);
            for (o, gv) in b.data_mut().iter_mut().zip(v) {
                *o = *o + gv;
            }
        };
        add(grads, op.x, &[t_len, d], dx);
        add(grads, op.w.wr, &[d, h], dwr);
        add(grads, op.w.ur, &[h, h], dur);
        add(grads, op.w.br, &[h], dbr);
        add(grads, op.w.wu, &[d, h], dwu);
        add(grads, op.w.uu, &[h, h], duu);
        add(grads, op.w.bu, &[h], dbu);
        add(grads, op.w.wn, &[d, h], dwn);
        add(grads, op.w.un, &[h, h], dun);
        add(grads, op.w.bn, &[h], dbn);
    }
}

fn buf<'a, S: Scalar>(grads: &'a mut [Option<Array<S>>], id: NodeId, dims: &[usize]) -> &'a mut Array<S> {
    grads[id.0].get_or_insert_with(|| Array::zeros(dims))
}

fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

fn softmax_row<S: Scalar>(row: &mut [S]) {
    let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut denom = S::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        denom = denom + *v;
    }
    for v in row.iter_mut() {
        *v = *v / denom;
    }
}

/// `acc[j] += row · mat[:, j]` for a row-major `[len(row), len(acc)]` matrix.
fn affine_acc<S: Scalar>(acc: &mut [S], row: &[S], mat: &[S]) {
    let h = acc.len();
    for (i, &v) in row.iter().enumerate() {
        if v != S::zero() {
            let mrow = &mat[i * h..(i + 1) * h];
            for (o, &m) in acc.iter_mut().zip(mrow) {
                *o = *o + v * m;
            }
        }
    }
}

fn matmul_kernel<S: Scalar>(a: &[S], m: usize, k: usize, b: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != S::zero() {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    }
    out
}

/// Output length of one convolution axis.
pub(crate) fn conv_out_len(len: usize, k: usize, stride: usize, pad: Pad) -> usize {
    match pad {
        Pad::Valid => {
            assert!(len >= k, "kernel wider than input in valid mode");
            (len - k) / stride + 1
        }
        Pad::SameZero | Pad::SameEdge => {
            assert!(k % 2 == 1, "same padding requires odd kernel width");
            let p = (k - 1) / 2;
            (len + 2 * p - k) / stride + 1
        }
    }
}

/// Source index feeding output position `pos` at kernel offset `koff`;
/// `None` means a zero-padded tap.
fn conv_src_index(pos: usize, koff: usize, len: usize, k: usize, stride: usize, pad: Pad) -> Option<usize> {
    match pad {
        Pad::Valid => Some(pos * stride + koff),
        Pad::SameZero | Pad::SameEdge => {
            let p = (k - 1) / 2;
            let i = (pos * stride + koff) as isize - p as isize;
            if i >= 0 && (i as usize) < len {
                Some(i as usize)
            } else if pad == Pad::SameEdge {
                Some(i.clamp(0, len as isize - 1) as usize)
            } else {
                None
            }
        }
    }
}
