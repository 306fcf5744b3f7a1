use rand::Rng;

use super::{shape_err, xavier_uniform, Graph, NnError, NodeId, ParamId, ParamStore, Tensor};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn conv1d_output_len(len: usize, kernel_width: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel_width == 0 || len < kernel_width {
        return None;
    }
    Some((len - kernel_width) / stride + 1)
}

/// Valid (unpadded) 1-D convolution.
///
/// `input` is `[len, in_ch]`, `kernels` is `[k_w, in_ch, out_ch]`; the output
/// is `[⌊(len − k_w)/stride⌋ + 1, out_ch]` with
/// `out[t, o] = Σ_{w,c} input[t·stride + w, c] · kernels[w, c, o]`.
pub fn conv1d(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor, NnError> {
    let (is, ks) = (input.shape(), kernels.shape());
    if is.len() != 2 || ks.len() != 3 || is[1] != ks[1] {
        return Err(shape_err("conv1d", format!("input {is:?}, kernels {ks:?}")));
    }
    let (in_ch, kw, out_ch) = (is[1], ks[0], ks[2]);
    let out_len = conv1d_output_len(is[0], kw, stride)
        .ok_or_else(|| shape_err("conv1d", format!("len {} < kernel width {kw} or stride {stride}", is[0])))?;
    let mut out = vec![0.0; out_len * out_ch];
    let (x, k) = (input.data(), kernels.data());
    for t in 0..out_len {
        let orow = &mut out[t * out_ch..(t + 1) * out_ch];
        for w in 0..kw {
            let row = t * stride + w;
            for c in 0..in_ch {
                let xv = x[row * in_ch + c];
                if xv == 0.0 {
                    continue;
                }
                let kbase = (w * in_ch + c) * out_ch;
                for (o, kv) in orow.iter_mut().zip(&k[kbase..kbase + out_ch]) {
                    *o += xv * kv;
                }
            }
        }
    }
    Tensor::new(vec![out_len, out_ch], out)
}

/// Gate order everywhere: input, forget, candidate, output.
pub const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Inference-side LSTM cell weights. `w[k]` is `[hidden, input]`,
/// `u[k]` is `[hidden, hidden]`, `b[k]` is `[hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Tensor::zeros(&[hidden, input])),
            u: std::array::from_fn(|_| Tensor::zeros(&[hidden, hidden])),
            b: std::array::from_fn(|_| Tensor::zeros(&[hidden])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b[0].len()
    }

    pub fn input(&self) -> usize {
        self.w[0].shape()[1]
    }
}

fn affine_into(out: &mut [f64], w: &Tensor, x: &[f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += crate::linalg::dot(&w.data()[r * cols..(r + 1) * cols], x);
    }
}

/// One LSTM step:
/// `i = σ(W_i x + U_i h + b_i)`, `f`, `o` likewise, `g = tanh(W_g x + U_g h + b_g)`,
/// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
pub fn lstm_step(params: &LstmCellParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let hidden = params.hidden();
    if x.len() != params.input() || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(shape_err(
            "lstm_step",
            format!("x {} h {} c {} for input {} hidden {hidden}", x.len(), h_prev.len(), c_prev.len(), params.input()),
        ));
    }
    let mut pre: [Vec<f64>; 4] = std::array::from_fn(|k| params.b[k].data().to_vec());
    for k in 0..4 {
        affine_into(&mut pre[k], &params.w[k], x);
        affine_into(&mut pre[k], &params.u[k], h_prev);
    }
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for j in 0..hidden {
        let i = sigmoid(pre[0][j]);
        let f = sigmoid(pre[1][j]);
        let g = pre[2][j].tanh();
        let o = sigmoid(pre[3][j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    if h.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("lstm_step"));
    }
    Ok((h, c))
}

/// Inference layout of an LSTM cell: one `[(input + hidden), 4·hidden]`
/// row-major matrix holding `[W; U]ᵀ` for all four gates, so a step is a
/// single sweep of contiguous axpy updates.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedLstm {
    input: usize,
    hidden: usize,
    wt: Vec<f64>,
    bias: Vec<f64>,
}

impl PackedLstm {
    pub fn new(params: &LstmCellParams) -> Self {
        let (input, hidden) = (params.input(), params.hidden());
        let width = 4 * hidden;
        let mut wt = vec![0.0; (input + hidden) * width];
        for k in 0..4 {
            let (w, u) = (params.w[k].data(), params.u[k].data());
            for r in 0..hidden {
                for c in 0..input {
                    wt[c * width + k * hidden + r] = w[r * input + c];
                }
                for c in 0..hidden {
                    wt[(input + c) * width + k * hidden + r] = u[r * hidden + c];
                }
            }
        }
        let bias = params.b.iter().flat_map(|b| b.data().iter().copied()).collect();
        Self { input, hidden, wt, bias }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Same contract as [`lstm_step`], updating `h` and `c` in place.
    /// `pre` is scratch space and is resized as needed.
    pub fn step(&self, x: &[f64], h: &mut [f64], c: &mut [f64], pre: &mut Vec<f64>) -> Result<(), NnError> {
        let hidden = self.hidden;
        if x.len() != self.input || h.len() != hidden || c.len() != hidden {
            return Err(shape_err("lstm_step", format!("x {} h {} c {} for input {} hidden {hidden}", x.len(), h.len(), c.len(), self.input)));
        }
        let width = 4 * hidden;
        pre.clear();
        pre.extend_from_slice(&self.bias);
        let z: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
        let mut blocks = self.wt.chunks_exact(4 * width);
        let mut zs = z.chunks_exact(4);
        for (block, z) in (&mut blocks).zip(&mut zs) {
            let (r0, rest) = block.split_at(width);
            let (r1, rest) = rest.split_at(width);
            let (r2, r3) = rest.split_at(width);
            for j in 0..width {
                pre[j] += z[0] * r0[j] + z[1] * r1[j] + z[2] * r2[j] + z[3] * r3[j];
            }
        }
        for (row, &z) in blocks.remainder().chunks_exact(width).zip(zs.remainder()) {
            for (p, w) in pre.iter_mut().zip(row) {
                *p += z * w;
            }
        }
        for j in 0..hidden {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[hidden + j]);
            let g = pre[2 * hidden + j].tanh();
            let o = sigmoid(pre[3 * hidden + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        if h.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("lstm_step"));
        }
        Ok(())
    }
}

/// LSTM layer parameters registered in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerIds {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayerIds {
    /// Xavier-initialized weights, zero biases except the forget gate at 1.
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = std::array::from_fn(|k| {
            store.add(format!("{prefix}.W_{}", GATES[k]), xavier_uniform(rng, &[hidden, input], input, hidden))
        });
        let u = std::array::from_fn(|k| {
            store.add(format!("{prefix}.U_{}", GATES[k]), xavier_uniform(rng, &[hidden, hidden], hidden, hidden))
        });
        let b = std::array::from_fn(|k| {
            let fill = if k == 1 { 1.0 } else { 0.0 };
            store.add(format!("{prefix}.b_{}", GATES[k]), Tensor::vector(vec![fill; hidden]))
        });
        Self { w, u, b, input, hidden }
    }

    /// Looks up an already-registered layer by prefix.
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self, NnError> {
        let find = |kind: &str, k: usize| {
            let name = format!("{prefix}.{kind}_{}", GATES[k]);
            store.id(&name).ok_or(NnError::UnknownParam(name))
        };
        let mut w = [ParamId(0); 4];
        let mut u = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for k in 0..4 {
            w[k] = find("W", k)?;
            u[k] = find("U", k)?;
            b[k] = find("b", k)?;
        }
        let ws = store.get(w[0]).shape();
        if ws.len() != 2 {
            return Err(shape_err("lstm", format!("{prefix}.W_i has shape {ws:?}")));
        }
        Ok(Self { w, u, b, input: ws[1], hidden: ws[0] })
    }

    pub fn cell(&self, store: &ParamStore) -> LstmCellParams {
        LstmCellParams {
            w: std::array::from_fn(|k| store.get(self.w[k]).clone()),
            u: std::array::from_fn(|k| store.get(self.u[k]).clone()),
            b: std::array::from_fn(|k| store.get(self.b[k]).clone()),
        }
    }

    /// Records one LSTM step on the tape.
    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId), NnError> {
        let mut gates = [x; 4];
        for k in 0..4 {
            let (w, u, b) = (g.param(self.w[k]), g.param(self.u[k]), g.param(self.b[k]));
            let wx = g.affine(w, x, Some(b))?;
            let uh = g.affine(u, h, None)?;
            let pre = g.add(wx, uh)?;
            gates[k] = if k == 2 { g.tanh(pre)? } else { g.sigmoid(pre)? };
        }
        let [i, f, cand, o] = gates;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Fully connected layer `y = W x + b`, `W` is `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl DenseParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{prefix}.W"), xavier_uniform(rng, &[output, input], input, output));
        let b = store.add(format!("{prefix}.b"), Tensor::vector(vec![0.0; output]));
        Self { w, b, input, output }
    }

    pub fn register_zeros(store: &mut ParamStore, prefix: &str, input: usize, output: usize) -> Self {
        let w = store.add(format!("{prefix}.W"), Tensor::zeros(&[output, input]));
        let b = store.add(format!("{prefix}.b"), Tensor::vector(vec![0.0; output]));
        Self { w, b, input, output }
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self, NnError> {
        let w_name = format!("{prefix}.W");
        let b_name = format!("{prefix}.b");
        let w = store.id(&w_name).ok_or(NnError::UnknownParam(w_name))?;
        let b = store.id(&b_name).ok_or(NnError::UnknownParam(b_name))?;
        let s = store.get(w).shape();
        if s.len() != 2 {
            return Err(shape_err("dense", format!("{prefix}.W has shape {s:?}")));
        }
        Ok(Self { w, b, input: s[1], output: s[0] })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, NnError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.affine(w, x, Some(b))
    }

    /// Tape-free evaluation.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut out = store.get(self.b).data().to_vec();
        affine_into(&mut out, store.get(self.w), x);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn identity_kernel_is_identity() {
        let input = Tensor::matrix(4, 1, vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv1d(&input, &kernel, 1).unwrap(), input);
    }

    #[test]
    fn hand_convolution() {
        let input = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let kernel = Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, -1.0]).unwrap();
        assert_eq!(conv1d(&input, &kernel, 1).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn output_length_formula() {
        assert_eq!(conv1d_output_len(10, 3, 2), Some(4));
        let input = Tensor::zeros(&[10, 2]);
        let kernel = Tensor::zeros(&[3, 2, 5]);
        assert_eq!(conv1d(&input, &kernel, 2).unwrap().shape(), &[4, 5]);
        assert!(matches!(conv1d(&Tensor::zeros(&[2, 2]), &kernel, 1), Err(NnError::ShapeMismatch { .. })));
        assert!(matches!(conv1d(&input, &Tensor::zeros(&[3, 3, 5]), 1), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_weight_fixed_point() {
        let p = LstmCellParams::zeros(3, 2);
        let (h, c) = lstm_step(&p, &[0.4, -1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_carries_memory() {
        let mut p = LstmCellParams::zeros(2, 3);
        p.b[1] = Tensor::vector(vec![20.0; 3]);
        let c_prev = [0.7, -0.3, 1.1];
        let (_, c) = lstm_step(&p, &[0.5, 0.5], &[0.1, 0.2, 0.3], &c_prev).unwrap();
        for (a, b) in c.iter().zip(c_prev) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn lstm_shape_errors() {
        let p = LstmCellParams::zeros(2, 3);
        assert!(matches!(lstm_step(&p, &[1.0], &[0.0; 3], &[0.0; 3]), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn tape_lstm_matches_plain_kernel() {
        let mut rng = SplitMix64::new(5);
        let mut store = ParamStore::new();
        let layer = LstmLayerIds::register(&mut store, "lstm", 3, 4, &mut rng);
        let cell = layer.cell(&store);
        let x = [0.3, -0.6, 0.9];
        let h0 = [0.1, 0.0, -0.2, 0.05];
        let c0 = [0.0, 0.5, -0.5, 0.2];
        let (h_ref, c_ref) = lstm_step(&cell, &x, &h0, &c0).unwrap();
        let mut g = Graph::new(&store);
        let xn = g.input(Tensor::vector(x.to_vec())).unwrap();
        let hn = g.input(Tensor::vector(h0.to_vec())).unwrap();
        let cn = g.input(Tensor::vector(c0.to_vec())).unwrap();
        let (h, c) = layer.step(&mut g, xn, hn, cn).unwrap();
        for (a, b) in g.value(h).data().iter().zip(&h_ref) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in g.value(c).data().iter().zip(&c_ref) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn packed_step_matches_reference() {
        let mut rng = SplitMix64::new(8);
        let mut store = ParamStore::new();
        let layer = LstmLayerIds::register(&mut store, "lstm", 5, 7, &mut rng);
        let cell = layer.cell(&store);
        let packed = PackedLstm::new(&cell);
        let (mut h, mut c) = (vec![0.0; 7], vec![0.0; 7]);
        let (mut h_ref, mut c_ref) = (h.clone(), c.clone());
        let mut pre = Vec::new();
        for t in 0..6 {
            let x: Vec<f64> = (0..5).map(|i| ((t * 5 + i) as f64 * 0.37).sin()).collect();
            (h_ref, c_ref) = lstm_step(&cell, &x, &h_ref, &c_ref).unwrap();
            packed.step(&x, &mut h, &mut c, &mut pre).unwrap();
        }
        for (a, b) in h.iter().chain(&c).zip(h_ref.iter().chain(&c_ref)) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
        assert!(packed.step(&[0.0; 4], &mut h, &mut c, &mut pre).is_err());
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, 999.0, 990.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((sigmoid(-800.0)).is_finite() && sigmoid(800.0) == 1.0);
    }
}
