//! Dynamic computation tape with exact reverse-mode gradients.
//!
//! A tape is rebuilt per forward pass: every operation records its inputs
//! and value at construction time, and `backward` walks the recorded nodes
//! in reverse, accumulating gradients. All values are dense 2-D f64
//! tensors. Subgradients of max/gather route to exactly one source entry
//! (the lowest index on ties), which keeps repeated runs bit-identical.

use std::collections::HashMap;

use crate::param::{GradStore, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DTensor(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Detach,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    PowScalar(usize, f64),
    MaxScalar(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Elu(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Ln(usize),
    SoftmaxRows(usize),
    MaskedSoftmaxCols(usize, Vec<bool>),
    SumAll(usize),
    SumCols(usize),
    SumRows(usize),
    ScaleRows(usize, usize),
    ScaleCols(usize, usize),
    MulByScalarOf(usize, usize),
    AddRowBroadcast(usize, usize),
    GatherRows(usize, Vec<usize>),
    ScatterRows(usize, Vec<usize>),
    Submatrix(usize, Vec<usize>, Vec<usize>),
    ScatterMatrix(usize, Vec<usize>, Vec<usize>),
    MaxColsMasked(usize, Vec<Option<usize>>),
    SegmentSum(usize, Vec<usize>),
    SegmentMax(usize, Vec<Option<usize>>),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    Reshape(usize),
    Entry(usize, usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(String, usize, bool)>,
    by_key: HashMap<String, usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> DTensor {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        DTensor(self.nodes.len() - 1)
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn value(&self, t: DTensor) -> &Tensor {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: DTensor) -> (usize, usize) {
        self.nodes[t.0].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar_value(&self, t: DTensor) -> f64 {
        let v = self.value(t);
        assert_eq!(v.shape(), (1, 1), "scalar_value on non-scalar node");
        v.get(0, 0)
    }

    /// Gradient accumulated at `t` by previous `backward` calls.
    pub fn grad(&self, t: DTensor) -> Option<&Tensor> {
        self.grads[t.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    // ---- leaves and parameter bindings ----

    pub fn constant(&mut self, value: Tensor) -> DTensor {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> DTensor {
        self.push(value, Op::Leaf, trainable)
    }

    /// Binds a stored parameter onto the tape as a leaf. Binding the same
    /// key twice returns the same node, so fan-out accumulates correctly.
    pub fn param(&mut self, store: &ParamStore, key: &str, trainable: bool) -> DTensor {
        if let Some(&id) = self.by_key.get(key) {
            return DTensor(id);
        }
        let value = store.get(key).clone();
        let t = self.leaf(value, trainable);
        self.by_key.insert(key.to_string(), t.0);
        self.bindings.push((key.to_string(), t.0, trainable));
        t
    }

    /// Gradients of all trainable bound parameters, keyed as in the store.
    pub fn param_grads(&self) -> GradStore {
        let mut out = GradStore::new();
        for (key, id, trainable) in &self.bindings {
            if !*trainable {
                continue;
            }
            if let Some(g) = &self.grads[*id] {
                out.accumulate(key, g);
            }
        }
        out
    }

    // ---- elementwise and scalar ops ----

    pub fn add(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert!(va.same_shape(vb), "add shape mismatch");
            va.zip_map(vb, |x, y| x + y)
        };
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(v, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert!(va.same_shape(vb), "sub shape mismatch");
            va.zip_map(vb, |x, y| x - y)
        };
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            assert!(va.same_shape(vb), "mul shape mismatch");
            va.zip_map(vb, |x, y| x * y)
        };
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(v, Op::Mul(a.0, b.0), rg)
    }

    pub fn neg(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(|x| -x);
        let rg = self.wants(a.0);
        self.push(v, Op::Neg(a.0), rg)
    }

    pub fn add_scalar(&mut self, a: DTensor, c: f64) -> DTensor {
        let v = self.value(a).map(|x| x + c);
        let rg = self.wants(a.0);
        self.push(v, Op::AddScalar(a.0), rg)
    }

    pub fn mul_scalar(&mut self, a: DTensor, c: f64) -> DTensor {
        let v = self.value(a).map(|x| x * c);
        let rg = self.wants(a.0);
        self.push(v, Op::MulScalar(a.0, c), rg)
    }

    /// Elementwise x^p; the caller keeps x in the valid domain for p.
    pub fn pow_scalar(&mut self, a: DTensor, p: f64) -> DTensor {
        let v = self.value(a).map(|x| x.powf(p));
        let rg = self.wants(a.0);
        self.push(v, Op::PowScalar(a.0, p), rg)
    }

    /// Elementwise max(x, c); subgradient 0 at the tie.
    pub fn max_scalar(&mut self, a: DTensor, c: f64) -> DTensor {
        let v = self.value(a).map(|x| x.max(c));
        let rg = self.wants(a.0);
        self.push(v, Op::MaxScalar(a.0, c), rg)
    }

    pub fn tanh(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(f64::tanh);
        let rg = self.wants(a.0);
        self.push(v, Op::Tanh(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.wants(a.0);
        self.push(v, Op::Sigmoid(a.0), rg)
    }

    pub fn relu(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.wants(a.0);
        self.push(v, Op::Relu(a.0), rg)
    }

    pub fn elu(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        let rg = self.wants(a.0);
        self.push(v, Op::Elu(a.0), rg)
    }

    pub fn leaky_relu(&mut self, a: DTensor, slope: f64) -> DTensor {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.wants(a.0);
        self.push(v, Op::LeakyRelu(a.0, slope), rg)
    }

    pub fn exp(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(f64::exp);
        let rg = self.wants(a.0);
        self.push(v, Op::Exp(a.0), rg)
    }

    pub fn ln(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).map(f64::ln);
        let rg = self.wants(a.0);
        self.push(v, Op::Ln(a.0), rg)
    }

    /// Value pass-through that blocks gradient flow.
    pub fn detach(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).clone();
        self.push(v, Op::Detach, false)
    }

    // ---- structure ops ----

    pub fn matmul(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(v, Op::Matmul(a.0, b.0), rg)
    }

    pub fn transpose(&mut self, a: DTensor) -> DTensor {
        let v = self.value(a).transpose();
        let rg = self.wants(a.0);
        self.push(v, Op::Transpose(a.0), rg)
    }

    pub fn softmax_rows(&mut self, a: DTensor) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let row = va.row_slice(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let mut denom = 0.0;
            for j in 0..m {
                let e = (row[j] - max).exp();
                out.set(i, j, e);
                denom += e;
            }
            for j in 0..m {
                let e = out.get(i, j);
                out.set(i, j, e / denom);
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::SoftmaxRows(a.0), rg)
    }

    /// Column-wise softmax restricted to entries where `mask` is true;
    /// unmasked entries output 0. A fully-masked column outputs all zeros.
    pub fn masked_softmax_cols(&mut self, a: DTensor, mask: Vec<bool>) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        assert_eq!(mask.len(), n * m, "softmax mask shape mismatch");
        let mut out = Tensor::zeros(n, m);
        for j in 0..m {
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                if mask[i * m + j] {
                    max = max.max(va.get(i, j));
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut denom = 0.0;
            for i in 0..n {
                if mask[i * m + j] {
                    let e = (va.get(i, j) - max).exp();
                    out.set(i, j, e);
                    denom += e;
                }
            }
            for i in 0..n {
                if mask[i * m + j] {
                    let e = out.get(i, j);
                    out.set(i, j, e / denom);
                }
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::MaskedSoftmaxCols(a.0, mask), rg)
    }

    pub fn sum_all(&mut self, a: DTensor) -> DTensor {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.wants(a.0);
        self.push(v, Op::SumAll(a.0), rg)
    }

    /// Column sums: n x m -> 1 x m.
    pub fn sum_cols(&mut self, a: DTensor) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        let mut out = Tensor::zeros(1, m);
        for i in 0..n {
            for j in 0..m {
                let s = out.get(0, j) + va.get(i, j);
                out.set(0, j, s);
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::SumCols(a.0), rg)
    }

    /// Row sums: n x m -> n x 1.
    pub fn sum_rows(&mut self, a: DTensor) -> DTensor {
        let va = self.value(a);
        let n = va.rows();
        let mut out = Tensor::zeros(n, 1);
        for i in 0..n {
            out.set(i, 0, va.row_slice(i).iter().sum());
        }
        let rg = self.wants(a.0);
        self.push(out, Op::SumRows(a.0), rg)
    }

    /// Scales row i of `a` by `s[i]`; `s` is n x 1.
    pub fn scale_rows(&mut self, a: DTensor, s: DTensor) -> DTensor {
        let (va, vs) = (self.value(a), self.value(s));
        let (n, m) = va.shape();
        assert_eq!(vs.shape(), (n, 1), "scale_rows scale shape");
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let f = vs.get(i, 0);
            for j in 0..m {
                out.set(i, j, va.get(i, j) * f);
            }
        }
        let rg = self.wants(a.0) || self.wants(s.0);
        self.push(out, Op::ScaleRows(a.0, s.0), rg)
    }

    /// Scales column j of `a` by `s[j]`; `s` is 1 x m.
    pub fn scale_cols(&mut self, a: DTensor, s: DTensor) -> DTensor {
        let (va, vs) = (self.value(a), self.value(s));
        let (n, m) = va.shape();
        assert_eq!(vs.shape(), (1, m), "scale_cols scale shape");
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                out.set(i, j, va.get(i, j) * vs.get(0, j));
            }
        }
        let rg = self.wants(a.0) || self.wants(s.0);
        self.push(out, Op::ScaleCols(a.0, s.0), rg)
    }

    /// Multiplies every entry of `a` by the 1x1 node `s`.
    pub fn mul_by_scalar_of(&mut self, a: DTensor, s: DTensor) -> DTensor {
        let (va, vs) = (self.value(a), self.value(s));
        assert_eq!(vs.shape(), (1, 1), "mul_by_scalar_of needs 1x1 scale");
        let f = vs.get(0, 0);
        let out = va.map(|x| x * f);
        let rg = self.wants(a.0) || self.wants(s.0);
        self.push(out, Op::MulByScalarOf(a.0, s.0), rg)
    }

    /// Adds row vector `b` (1 x m) to every row of `a` (n x m).
    pub fn add_row_broadcast(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, m) = va.shape();
        assert_eq!(vb.shape(), (1, m), "add_row_broadcast bias shape");
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                out.set(i, j, va.get(i, j) + vb.get(0, j));
            }
        }
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(out, Op::AddRowBroadcast(a.0, b.0), rg)
    }

    /// Picks rows of `a` in the given order (duplicates allowed).
    pub fn gather_rows(&mut self, a: DTensor, idx: Vec<usize>) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        let mut out = Tensor::zeros(idx.len(), m);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < n, "gather_rows index {i} out of {n}");
            for j in 0..m {
                out.set(r, j, va.get(i, j));
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::GatherRows(a.0, idx), rg)
    }

    /// Places row r of `a` (k x m) at row idx[r] of an n x m zero tensor.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, a: DTensor, idx: Vec<usize>, n: usize) -> DTensor {
        let va = self.value(a);
        let (k, m) = va.shape();
        assert_eq!(idx.len(), k, "scatter_rows index count");
        let mut out = Tensor::zeros(n, m);
        let mut seen = vec![false; n];
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < n && !seen[i], "scatter_rows invalid or duplicate index {i}");
            seen[i] = true;
            for j in 0..m {
                out.set(i, j, va.get(r, j));
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::ScatterRows(a.0, idx), rg)
    }

    /// Submatrix a[rows, cols].
    pub fn submatrix(&mut self, a: DTensor, rows: Vec<usize>, cols: Vec<usize>) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        let mut out = Tensor::zeros(rows.len(), cols.len());
        for (r, &i) in rows.iter().enumerate() {
            assert!(i < n);
            for (c, &j) in cols.iter().enumerate() {
                assert!(j < m);
                out.set(r, c, va.get(i, j));
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::Submatrix(a.0, rows, cols), rg)
    }

    /// Embeds `a` into an n x m zero tensor at the given row/col positions.
    /// Row and column index lists must each be duplicate-free.
    pub fn scatter_matrix(
        &mut self,
        a: DTensor,
        rows: Vec<usize>,
        cols: Vec<usize>,
        n: usize,
        m: usize,
    ) -> DTensor {
        let va = self.value(a);
        assert_eq!(va.shape(), (rows.len(), cols.len()), "scatter_matrix shape");
        let mut out = Tensor::zeros(n, m);
        for (r, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                assert!(i < n && j < m);
                out.set(i, j, va.get(r, c));
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::ScatterMatrix(a.0, rows, cols), rg)
    }

    /// Per-column max over rows where `active` is true -> 1 x m. The full
    /// gradient routes to the single argmax row (lowest index on ties).
    /// Columns with no active row output 0 and receive no gradient.
    pub fn max_cols_masked(&mut self, a: DTensor, active: &[bool]) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        assert_eq!(active.len(), n, "max_cols_masked mask length");
        let mut out = Tensor::zeros(1, m);
        let mut argmax: Vec<Option<usize>> = vec![None; m];
        for j in 0..m {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                if !active[i] {
                    continue;
                }
                let v = va.get(i, j);
                match best {
                    Some((_, bv)) if v <= bv => {}
                    _ => best = Some((i, v)),
                }
            }
            if let Some((i, v)) = best {
                out.set(0, j, v);
                argmax[j] = Some(i);
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::MaxColsMasked(a.0, argmax), rg)
    }

    /// Sums rows by segment id: n x m with ids in [0, segments) -> s x m.
    pub fn segment_sum(&mut self, a: DTensor, membership: Vec<usize>, segments: usize) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        assert_eq!(membership.len(), n, "segment_sum membership length");
        let mut out = Tensor::zeros(segments, m);
        for i in 0..n {
            let s = membership[i];
            assert!(s < segments, "segment id {s} out of {segments}");
            for j in 0..m {
                let v = out.get(s, j) + va.get(i, j);
                out.set(s, j, v);
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::SegmentSum(a.0, membership), rg)
    }

    /// Per-segment, per-column max; empty segments output 0. The gradient
    /// routes to the argmax row (lowest index on ties).
    pub fn segment_max(&mut self, a: DTensor, membership: Vec<usize>, segments: usize) -> DTensor {
        let va = self.value(a);
        let (n, m) = va.shape();
        assert_eq!(membership.len(), n, "segment_max membership length");
        let mut out = Tensor::zeros(segments, m);
        let mut argmax: Vec<Option<usize>> = vec![None; segments * m];
        for i in 0..n {
            let s = membership[i];
            assert!(s < segments);
            for j in 0..m {
                let v = va.get(i, j);
                let slot = s * m + j;
                match argmax[slot] {
                    Some(prev) if va.get(prev, j) >= v => {}
                    _ => {
                        argmax[slot] = Some(i);
                        out.set(s, j, v);
                    }
                }
            }
        }
        let rg = self.wants(a.0);
        self.push(out, Op::SegmentMax(a.0, argmax), rg)
    }

    pub fn concat_cols(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), vb.rows(), "concat_cols row mismatch");
        let (n, ma, mb) = (va.rows(), va.cols(), vb.cols());
        let mut out = Tensor::zeros(n, ma + mb);
        for i in 0..n {
            for j in 0..ma {
                out.set(i, j, va.get(i, j));
            }
            for j in 0..mb {
                out.set(i, ma + j, vb.get(i, j));
            }
        }
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(out, Op::ConcatCols(a.0, b.0), rg)
    }

    pub fn concat_rows(&mut self, a: DTensor, b: DTensor) -> DTensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.cols(), "concat_rows col mismatch");
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let out = Tensor::from_vec(va.rows() + vb.rows(), va.cols(), data);
        let rg = self.wants(a.0) || self.wants(b.0);
        self.push(out, Op::ConcatRows(a.0, b.0), rg)
    }

    /// Row-major reshape; element order is preserved.
    pub fn reshape(&mut self, a: DTensor, rows: usize, cols: usize) -> DTensor {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape size mismatch");
        let out = Tensor::from_vec(rows, cols, va.data().to_vec());
        let rg = self.wants(a.0);
        self.push(out, Op::Reshape(a.0), rg)
    }

    /// Single entry as a 1x1 node.
    pub fn entry(&mut self, a: DTensor, i: usize, j: usize) -> DTensor {
        let v = Tensor::scalar(self.value(a).get(i, j));
        let rg = self.wants(a.0);
        self.push(v, Op::Entry(a.0, i, j), rg)
    }

    // ---- backward ----

    /// Backpropagates from a scalar node, seeding its gradient with `seed`.
    /// Gradients accumulate into any previous contents; call `zero_grads`
    /// between independent passes.
    pub fn backward_scaled(&mut self, out: DTensor, seed: f64) {
        assert_eq!(
            self.nodes[out.0].value.shape(),
            (1, 1),
            "backward from non-scalar node"
        );
        if !self.nodes[out.0].requires_grad {
            return;
        }
        self.grad_buf(out.0).data_mut()[0] += seed;
        for id in (0..=out.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.step_back(id, &g);
            self.grads[id] = Some(g);
        }
    }

    pub fn backward(&mut self, out: DTensor) {
        self.backward_scaled(out, 1.0);
    }

    fn grad_buf(&mut self, id: usize) -> &mut Tensor {
        let (r, c) = self.nodes[id].value.shape();
        self.grads[id].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    /// Runs `f` with the input's gradient buffer taken out of the tape, so
    /// the closure may read node values freely while accumulating.
    fn with_buf(&mut self, src: usize, f: impl FnOnce(&mut Tensor, &Tape)) {
        if !self.wants(src) {
            return;
        }
        let (r, c) = self.nodes[src].value.shape();
        let mut buf = self.grads[src]
            .take()
            .unwrap_or_else(|| Tensor::zeros(r, c));
        f(&mut buf, self);
        self.grads[src] = Some(buf);
    }

    fn step_back(&mut self, id: usize, g: &Tensor) {
        match &self.nodes[id].op {
            Op::Leaf | Op::Detach => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.with_buf(a, |buf, _| buf.add_scaled(g, 1.0));
                self.with_buf(b, |buf, _| buf.add_scaled(g, 1.0));
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.with_buf(a, |buf, _| buf.add_scaled(g, 1.0));
                self.with_buf(b, |buf, _| buf.add_scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.with_buf(a, |buf, me| {
                    let vb = &me.nodes[b].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv * vb.data()[p];
                    }
                });
                self.with_buf(b, |buf, me| {
                    let va = &me.nodes[a].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv * va.data()[p];
                    }
                });
            }
            Op::Neg(a) => {
                let a = *a;
                self.with_buf(a, |buf, _| buf.add_scaled(g, -1.0));
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.with_buf(a, |buf, _| buf.add_scaled(g, 1.0));
            }
            Op::MulScalar(a, c) => {
                let (a, c) = (*a, *c);
                self.with_buf(a, |buf, _| buf.add_scaled(g, c));
            }
            Op::PowScalar(a, p) => {
                let (a, p) = (*a, *p);
                self.with_buf(a, |buf, me| {
                    let va = &me.nodes[a].value;
                    for (pos, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[pos] += gv * p * va.data()[pos].powf(p - 1.0);
                    }
                });
            }
            Op::MaxScalar(a, c) => {
                let (a, c) = (*a, *c);
                self.with_buf(a, |buf, me| {
                    let va = &me.nodes[a].value;
                    for (pos, gv) in g.data().iter().enumerate() {
                        if va.data()[pos] > c {
                            buf.data_mut()[pos] += gv;
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                self.with_buf(a, |buf, me| {
                    let db = g.matmul(&me.nodes[b].value.transpose());
                    buf.add_scaled(&db, 1.0);
                });
                self.with_buf(b, |buf, me| {
                    let da = me.nodes[a].value.transpose().matmul(g);
                    buf.add_scaled(&da, 1.0);
                });
            }
            Op::Transpose(a) => {
                let a = *a;
                self.with_buf(a, |buf, _| buf.add_scaled(&g.transpose(), 1.0));
            }
            Op::Tanh(a) => {
                let a = *a;
                let out = id;
                self.with_buf(a, |buf, me| {
                    let y = &me.nodes[out].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        let t = y.data()[p];
                        buf.data_mut()[p] += gv * (1.0 - t * t);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let out = id;
                self.with_buf(a, |buf, me| {
                    let y = &me.nodes[out].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        let s = y.data()[p];
                        buf.data_mut()[p] += gv * s * (1.0 - s);
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                self.with_buf(a, |buf, me| {
                    let x = &me.nodes[a].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        if x.data()[p] > 0.0 {
                            buf.data_mut()[p] += gv;
                        }
                    }
                });
            }
            Op::Elu(a) => {
                let a = *a;
                let out = id;
                self.with_buf(a, |buf, me| {
                    let x = &me.nodes[a].value;
                    let y = &me.nodes[out].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        let d = if x.data()[p] > 0.0 {
                            1.0
                        } else {
                            y.data()[p] + 1.0
                        };
                        buf.data_mut()[p] += gv * d;
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let (a, s) = (*a, *slope);
                self.with_buf(a, |buf, me| {
                    let x = &me.nodes[a].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        let d = if x.data()[p] > 0.0 { 1.0 } else { s };
                        buf.data_mut()[p] += gv * d;
                    }
                });
            }
            Op::Exp(a) => {
                let a = *a;
                let out = id;
                self.with_buf(a, |buf, me| {
                    let y = &me.nodes[out].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv * y.data()[p];
                    }
                });
            }
            Op::Ln(a) => {
                let a = *a;
                self.with_buf(a, |buf, me| {
                    let x = &me.nodes[a].value;
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv / x.data()[p];
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                let out = id;
                self.with_buf(a, |buf, me| {
                    let y = &me.nodes[out].value;
                    let (n, m) = y.shape();
                    for i in 0..n {
                        let mut dot = 0.0;
                        for j in 0..m {
                            dot += g.get(i, j) * y.get(i, j);
                        }
                        for j in 0..m {
                            let v = buf.get(i, j) + y.get(i, j) * (g.get(i, j) - dot);
                            buf.set(i, j, v);
                        }
                    }
                });
            }
            Op::MaskedSoftmaxCols(a, mask) => {
                let a = *a;
                let out = id;
                let mask = mask.clone();
                self.with_buf(a, |buf, me| {
                    let y = &me.nodes[out].value;
                    let (n, m) = y.shape();
                    for j in 0..m {
                        let mut dot = 0.0;
                        for i in 0..n {
                            if mask[i * m + j] {
                                dot += g.get(i, j) * y.get(i, j);
                            }
                        }
                        for i in 0..n {
                            if mask[i * m + j] {
                                let v = buf.get(i, j) + y.get(i, j) * (g.get(i, j) - dot);
                                buf.set(i, j, v);
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let a = *a;
                let gv = g.get(0, 0);
                self.with_buf(a, |buf, _| {
                    for v in buf.data_mut() {
                        *v += gv;
                    }
                });
            }
            Op::SumCols(a) => {
                let a = *a;
                self.with_buf(a, |buf, _| {
                    let (n, m) = buf.shape();
                    for i in 0..n {
                        for j in 0..m {
                            let v = buf.get(i, j) + g.get(0, j);
                            buf.set(i, j, v);
                        }
                    }
                });
            }
            Op::SumRows(a) => {
                let a = *a;
                self.with_buf(a, |buf, _| {
                    let (n, m) = buf.shape();
                    for i in 0..n {
                        for j in 0..m {
                            let v = buf.get(i, j) + g.get(i, 0);
                            buf.set(i, j, v);
                        }
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let (a, s) = (*a, *s);
                self.with_buf(a, |buf, me| {
                    let vs = &me.nodes[s].value;
                    let m = buf.cols();
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv * vs.get(p / m, 0);
                    }
                });
                self.with_buf(s, |buf, me| {
                    let va = &me.nodes[a].value;
                    let (n, m) = va.shape();
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += g.get(i, j) * va.get(i, j);
                        }
                        let v = buf.get(i, 0) + acc;
                        buf.set(i, 0, v);
                    }
                });
            }
            Op::ScaleCols(a, s) => {
                let (a, s) = (*a, *s);
                self.with_buf(a, |buf, me| {
                    let vs = &me.nodes[s].value;
                    let m = buf.cols();
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv * vs.get(0, p % m);
                    }
                });
                self.with_buf(s, |buf, me| {
                    let va = &me.nodes[a].value;
                    let (n, m) = va.shape();
                    for j in 0..m {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += g.get(i, j) * va.get(i, j);
                        }
                        let v = buf.get(0, j) + acc;
                        buf.set(0, j, v);
                    }
                });
            }
            Op::MulByScalarOf(a, s) => {
                let (a, s) = (*a, *s);
                let f = self.nodes[s].value.get(0, 0);
                self.with_buf(a, |buf, _| buf.add_scaled(g, f));
                self.with_buf(s, |buf, me| {
                    let va = &me.nodes[a].value;
                    let mut acc = 0.0;
                    for (p, gv) in g.data().iter().enumerate() {
                        acc += gv * va.data()[p];
                    }
                    buf.data_mut()[0] += acc;
                });
            }
            Op::AddRowBroadcast(a, b) => {
                let (a, b) = (*a, *b);
                self.with_buf(a, |buf, _| buf.add_scaled(g, 1.0));
                self.with_buf(b, |buf, _| {
                    let (n, m) = g.shape();
                    for j in 0..m {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += g.get(i, j);
                        }
                        let v = buf.get(0, j) + acc;
                        buf.set(0, j, v);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let a = *a;
                let idx = idx.clone();
                self.with_buf(a, |buf, _| {
                    let m = g.cols();
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..m {
                            let v = buf.get(i, j) + g.get(r, j);
                            buf.set(i, j, v);
                        }
                    }
                });
            }
            Op::ScatterRows(a, idx) => {
                let a = *a;
                let idx = idx.clone();
                self.with_buf(a, |buf, _| {
                    let m = g.cols();
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..m {
                            let v = buf.get(r, j) + g.get(i, j);
                            buf.set(r, j, v);
                        }
                    }
                });
            }
            Op::Submatrix(a, rows, cols) => {
                let a = *a;
                let (rows, cols) = (rows.clone(), cols.clone());
                self.with_buf(a, |buf, _| {
                    for (r, &i) in rows.iter().enumerate() {
                        for (c, &j) in cols.iter().enumerate() {
                            let v = buf.get(i, j) + g.get(r, c);
                            buf.set(i, j, v);
                        }
                    }
                });
            }
            Op::ScatterMatrix(a, rows, cols) => {
                let a = *a;
                let (rows, cols) = (rows.clone(), cols.clone());
                self.with_buf(a, |buf, _| {
                    for (r, &i) in rows.iter().enumerate() {
                        for (c, &j) in cols.iter().enumerate() {
                            let v = buf.get(r, c) + g.get(i, j);
                            buf.set(r, c, v);
                        }
                    }
                });
            }
            Op::MaxColsMasked(a, argmax) => {
                let a = *a;
                let argmax = argmax.clone();
                self.with_buf(a, |buf, _| {
                    for (j, arg) in argmax.iter().enumerate() {
                        if let Some(i) = arg {
                            let v = buf.get(*i, j) + g.get(0, j);
                            buf.set(*i, j, v);
                        }
                    }
                });
            }
            Op::SegmentSum(a, membership) => {
                let a = *a;
                let membership = membership.clone();
                self.with_buf(a, |buf, _| {
                    let m = g.cols();
                    for (i, &s) in membership.iter().enumerate() {
                        for j in 0..m {
                            let v = buf.get(i, j) + g.get(s, j);
                            buf.set(i, j, v);
                        }
                    }
                });
            }
            Op::SegmentMax(a, argmax) => {
                let a = *a;
                let argmax = argmax.clone();
                self.with_buf(a, |buf, _| {
                    let m = g.cols();
                    for (slot, arg) in argmax.iter().enumerate() {
                        if let Some(i) = arg {
                            let (s, j) = (slot / m, slot % m);
                            let v = buf.get(*i, j) + g.get(s, j);
                            buf.set(*i, j, v);
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let ma = self.nodes[a].value.cols();
                self.with_buf(a, |buf, _| {
                    let n = g.rows();
                    for i in 0..n {
                        for j in 0..ma {
                            let v = buf.get(i, j) + g.get(i, j);
                            buf.set(i, j, v);
                        }
                    }
                });
                self.with_buf(b, |buf, _| {
                    let (n, m) = g.shape();
                    for i in 0..n {
                        for j in ma..m {
                            let v = buf.get(i, j - ma) + g.get(i, j);
                            buf.set(i, j - ma, v);
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (*a, *b);
                let na = self.nodes[a].value.rows();
                self.with_buf(a, |buf, _| {
                    let m = g.cols();
                    for i in 0..na {
                        for j in 0..m {
                            let v = buf.get(i, j) + g.get(i, j);
                            buf.set(i, j, v);
                        }
                    }
                });
                self.with_buf(b, |buf, _| {
                    let (n, m) = g.shape();
                    for i in na..n {
                        for j in 0..m {
                            let v = buf.get(i - na, j) + g.get(i, j);
                            buf.set(i - na, j, v);
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                let a = *a;
                self.with_buf(a, |buf, _| {
                    for (p, gv) in g.data().iter().enumerate() {
                        buf.data_mut()[p] += gv;
                    }
                });
            }
            Op::Entry(a, i, j) => {
                let (a, i, j) = (*a, *i, *j);
                let gv = g.get(0, 0);
                self.with_buf(a, |buf, _| {
                    let v = buf.get(i, j) + gv;
                    buf.set(i, j, v);
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x);
        tape.backward(y);
        assert_eq!(tape.scalar_value(y), 9.0);
        assert_eq!(tape.grad(x).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn fanout_accumulates() {
        // f = x*x + x -> f' = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let sq = tape.mul(x, x);
        let f = tape.add(sq, x);
        tape.backward(f);
        assert_eq!(tape.grad(x).unwrap().get(0, 0), 5.0);
    }

    #[test]
    fn second_backward_after_zero_is_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.3, -1.2, 2.0]), true);
        let t = tape.tanh(x);
        let s = tape.sum_all(t);
        tape.backward(s);
        let first: Vec<u64> = tape.grad(x).unwrap().data().iter().map(|v| v.to_bits()).collect();
        tape.zero_grads();
        tape.backward(s);
        let second: Vec<u64> = tape.grad(x).unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(4.0), true);
        let d = tape.detach(x);
        let y = tape.mul(x, d);
        tape.backward(y);
        // d(x * detach(x))/dx = detach(x) = 4, not 2x = 8.
        assert_eq!(tape.grad(x).unwrap().get(0, 0), 4.0);
    }

    #[test]
    fn max_routes_to_lowest_index_on_ties() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![5.0], vec![5.0]]), true);
        let m = tape.max_cols_masked(x, &[true, true, true]);
        let s = tape.sum_all(m);
        tape.backward(s);
        let g = tape.grad(x).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }
}
