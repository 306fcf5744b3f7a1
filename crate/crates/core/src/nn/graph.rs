use super::{shape_err, Gradients, NnError, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    /// `w[m, n] · x[n] (+ b[m])`
    Affine { w: NodeId, x: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Conv1d { input: NodeId, kernel: NodeId, stride: usize },
    AddRowBias { x: NodeId, bias: NodeId },
    Row { x: NodeId, index: usize },
    Pick { x: NodeId, index: usize },
    Sum(NodeId),
    Square(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, target: usize },
    BceWithLogits { logit: NodeId, target: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of operations over a borrowed parameter store.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction and cannot contain cycles.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor, NnError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(NnError::NonFinite(op))
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Tensor) -> Result<NodeId, NnError> {
        let value = finite("input", value)?;
        Ok(self.push(value, Op::Input))
    }

    /// Node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let node = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_nodes[id.0] = Some(node);
        node
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: Option<NodeId>) -> Result<NodeId, NnError> {
        let (wv, xv) = (self.v(w), self.v(x));
        if wv.shape().len() != 2 || wv.shape()[1] != xv.len() {
            return Err(shape_err("affine", format!("w {:?} · x {:?}", wv.shape(), xv.shape())));
        }
        let m = wv.shape()[0];
        let mut out: Vec<f64> = (0..m).map(|r| wv.row(r).iter().zip(xv.data()).map(|(a, b)| a * b).sum()).collect();
        if let Some(b) = b {
            let bv = self.v(b);
            if bv.len() != m {
                return Err(shape_err("affine", format!("bias {:?} for {m} outputs", bv.shape())));
            }
            out.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        let t = finite("affine", Tensor::vector(out))?;
        Ok(self.push(t, Op::Affine { w, x, b }))
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, NnError> {
        let (av, bv) = (self.v(a), self.v(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = finite(name, Tensor::new(av.shape().to_vec(), data)?)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: NodeId, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId, NnError> {
        let av = self.v(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let t = finite(name, Tensor::new(av.shape().to_vec(), data)?)?;
        Ok(self.push(t, op))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, NnError> {
        self.map(a, "scale", |x| s * x, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.map(a, "sigmoid", super::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.map(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.map(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.map(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let s = self.v(a).data().iter().sum();
        let t = finite("sum", Tensor::scalar(s))?;
        Ok(self.push(t, Op::Sum(a)))
    }

    /// Valid 1-D convolution, input `[len, in_ch]`, kernel `[k_w, in_ch, out_ch]`.
    pub fn conv1d(&mut self, input: NodeId, kernel: NodeId, stride: usize) -> Result<NodeId, NnError> {
        let t = super::conv1d(self.v(input), self.v(kernel), stride)?;
        let t = finite("conv1d", t)?;
        Ok(self.push(t, Op::Conv1d { input, kernel, stride }))
    }

    /// Adds `bias[c]` to every row of a `[len, c]` tensor.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (xv, bv) = (self.v(x), self.v(bias));
        if xv.shape().len() != 2 || xv.shape()[1] != bv.len() {
            return Err(shape_err("add_row_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let cols = bv.len();
        let data = xv.data().iter().enumerate().map(|(i, v)| v + bv.data()[i % cols]).collect();
        let t = finite("add_row_bias", Tensor::new(xv.shape().to_vec(), data)?)?;
        Ok(self.push(t, Op::AddRowBias { x, bias }))
    }

    /// Row `index` of a `[len, c]` tensor as a `[c]` vector.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId, NnError> {
        let xv = self.v(x);
        if xv.shape().len() != 2 || index >= xv.shape()[0] {
            return Err(shape_err("row", format!("row {index} of {:?}", xv.shape())));
        }
        let t = Tensor::vector(xv.row(index).to_vec());
        Ok(self.push(t, Op::Row { x, index }))
    }

    /// Element `index` of a tensor as a scalar.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId, NnError> {
        let xv = self.v(x);
        if index >= xv.len() {
            return Err(shape_err("pick", format!("index {index} of {:?}", xv.shape())));
        }
        let t = Tensor::scalar(xv.data()[index]);
        Ok(self.push(t, Op::Pick { x, index }))
    }

    /// `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId, NnError> {
        let lv = self.v(logits);
        if target >= lv.len() {
            return Err(shape_err("softmax_cross_entropy", format!("class {target} of {} logits", lv.len())));
        }
        let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let t = finite("softmax_cross_entropy", Tensor::scalar(lse - lv.data()[target]))?;
        Ok(self.push(t, Op::SoftmaxCrossEntropy { logits, target }))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target ∈ [0, 1]`.
    pub fn bce_with_logits(&mut self, logit: NodeId, target: f64) -> Result<NodeId, NnError> {
        let lv = self.v(logit);
        if lv.len() != 1 {
            return Err(shape_err("bce_with_logits", format!("logit shape {:?}", lv.shape())));
        }
        let z = lv.item();
        let loss = z.max(0.0) - target * z + (-z.abs()).exp().ln_1p();
        let t = finite("bce_with_logits", Tensor::scalar(loss))?;
        Ok(self.push(t, Op::BceWithLogits { logit, target }))
    }

    /// Gradients of a scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NnError> {
        let mut grads = Gradients::zeros_for(self.params);
        self.backward_into(loss, &mut grads, 1.0)?;
        Ok(grads)
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grads`.
    pub fn backward_into(&self, loss: NodeId, grads: &mut Gradients, scale: f64) -> Result<(), NnError> {
        let loss_value = self.v(loss);
        if loss_value.len() != 1 {
            return Err(NnError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![scale]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    grads.get_mut(pid).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Affine { w, x, b } => {
                    let (wv, xv) = (self.v(w), self.v(x));
                    let (m, n) = (wv.shape()[0], wv.shape()[1]);
                    {
                        let gw = acc(&mut adj, w, m * n);
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (o, xi) in gw[r * n..(r + 1) * n].iter_mut().zip(xv.data()) {
                                *o += gr * xi;
                            }
                        }
                    }
                    {
                        let gx = acc(&mut adj, x, n);
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (o, wi) in gx.iter_mut().zip(wv.row(r)) {
                                *o += gr * wi;
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc(&mut adj, b, m).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, a, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                    acc(&mut adj, b, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, a, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                    acc(&mut adj, b, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o -= v);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.v(a).data(), self.v(b).data());
                    acc(&mut adj, a, g.len()).iter_mut().zip(g.iter().zip(bv)).for_each(|(o, (v, y))| *o += v * y);
                    acc(&mut adj, b, g.len()).iter_mut().zip(g.iter().zip(av)).for_each(|(o, (v, x))| *o += v * x);
                }
                Op::Scale(a, s) => {
                    acc(&mut adj, a, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += s * v);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    acc(&mut adj, a, g.len()).iter_mut().zip(g.iter().zip(y)).for_each(|(o, (v, y))| *o += v * y * (1.0 - y));
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc(&mut adj, a, g.len()).iter_mut().zip(g.iter().zip(y)).for_each(|(o, (v, y))| *o += v * (1.0 - y * y));
                }
                Op::Relu(a) => {
                    let x = self.v(a).data();
                    acc(&mut adj, a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(o, (v, x))| if *x > 0.0 { *o += v });
                }
                Op::Square(a) => {
                    let x = self.v(a).data();
                    acc(&mut adj, a, g.len()).iter_mut().zip(g.iter().zip(x)).for_each(|(o, (v, x))| *o += 2.0 * x * v);
                }
                Op::Sum(a) => {
                    let len = self.v(a).len();
                    acc(&mut adj, a, len).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Conv1d { input, kernel, stride } => {
                    let (iv, kv) = (self.v(input), self.v(kernel));
                    let (len, in_ch) = (iv.shape()[0], iv.shape()[1]);
                    let (kw, out_ch) = (kv.shape()[0], kv.shape()[2]);
                    let out_len = node.value.shape()[0];
                    {
                        let gi = acc(&mut adj, input, len * in_ch);
                        for t in 0..out_len {
                            for w in 0..kw {
                                let row = t * stride + w;
                                for c in 0..in_ch {
                                    let kbase = (w * in_ch + c) * out_ch;
                                    let mut s = 0.0;
                                    for o in 0..out_ch {
                                        s += g[t * out_ch + o] * kv.data()[kbase + o];
                                    }
                                    gi[row * in_ch + c] += s;
                                }
                            }
                        }
                    }
                    let gk = acc(&mut adj, kernel, kw * in_ch * out_ch);
                    for t in 0..out_len {
                        for w in 0..kw {
                            let row = t * stride + w;
                            for c in 0..in_ch {
                                let x = iv.data()[row * in_ch + c];
                                if x == 0.0 {
                                    continue;
                                }
                                let kbase = (w * in_ch + c) * out_ch;
                                for o in 0..out_ch {
                                    gk[kbase + o] += g[t * out_ch + o] * x;
                                }
                            }
                        }
                    }
                }
                Op::AddRowBias { x, bias } => {
                    let cols = self.v(bias).len();
                    acc(&mut adj, x, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                    let gb = acc(&mut adj, bias, cols);
                    for (i, v) in g.iter().enumerate() {
                        gb[i % cols] += v;
                    }
                }
                Op::Row { x, index } => {
                    let xv = self.v(x);
                    let cols = xv.shape()[1];
                    let gx = acc(&mut adj, x, xv.len());
                    gx[index * cols..(index + 1) * cols].iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                }
                Op::Pick { x, index } => {
                    let len = self.v(x).len();
                    acc(&mut adj, x, len)[index] += g[0];
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let p = super::softmax(self.v(logits).data());
                    let gl = acc(&mut adj, logits, p.len());
                    for (k, (o, pk)) in gl.iter_mut().zip(&p).enumerate() {
                        let onehot = if k == target { 1.0 } else { 0.0 };
                        *o += g[0] * (pk - onehot);
                    }
                }
                Op::BceWithLogits { logit, target } => {
                    let z = self.v(logit).item();
                    acc(&mut adj, logit, 1)[0] += g[0] * (super::sigmoid(z) - target);
                }
            }
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("backward"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut params = ParamStore::new();
        let x = params.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new(&params);
        let xn = g.param(x);
        let loss = g.square(xn).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x), &[6.0]);
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits() {
        let mut params = ParamStore::new();
        let z = params.add("z", Tensor::vector(vec![0.0, 0.0, 0.0]));
        let mut g = Graph::new(&params);
        let zn = g.param(z);
        let loss = g.softmax_cross_entropy(zn, 0).unwrap();
        assert!((g.value(loss).item() - 3f64.ln()).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        let expected = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in grads.get(z).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut params = ParamStore::new();
        let v = params.add("v", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&params);
        let vn = g.param(v);
        assert_eq!(g.backward(vn).unwrap_err(), NnError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn non_finite_trips_immediately() {
        let params = ParamStore::new();
        let mut g = Graph::new(&params);
        let big = g.input(Tensor::vector(vec![1e200])).unwrap();
        assert_eq!(g.square(big).unwrap_err(), NnError::NonFinite("square"));
        assert_eq!(g.input(Tensor::scalar(f64::NAN)).unwrap_err(), NnError::NonFinite("input"));
    }

    #[test]
    fn shared_parameter_accumulates() {
        // loss = sum(w ⊙ w) + sum(w) at w = [1, -2] → grad = 2w + 1.
        let mut params = ParamStore::new();
        let w = params.add("w", Tensor::vector(vec![1.0, -2.0]));
        let mut g = Graph::new(&params);
        let a = g.param(w);
        let b = g.param(w);
        let prod = g.mul(a, b).unwrap();
        let s1 = g.sum(prod).unwrap();
        let s2 = g.sum(a).unwrap();
        let loss = g.add(s1, s2).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w), &[3.0, -3.0]);
    }
}
