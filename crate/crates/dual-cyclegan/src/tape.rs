//! A small reverse-mode differentiation engine over 2-D tensors.
//!
//! Graphs are built per evaluation on a [`Tape`]; every node stores its value
//! and the op that produced it, and [`Tape::backward`] walks the tape in
//! reverse scattering gradients to parents. The op set is exactly what the
//! generators, discriminators and losses need: dilated 1-D convolution with
//! weight normalization, GLU, leaky ReLU, fixed sinc resampling, an STFT
//! magnitude front end, and elementwise/reduction glue.

use std::sync::Arc;

use crate::dsp::{sinc_resample_adjoint, ResampleDirection, StftPlan};

/// Row-major 2-D tensor. Rows are channels (or frequency rows), columns are
/// time steps (or frames). Scalars are 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub type NodeId = usize;

enum Op {
    Leaf,
    Conv1d { input: NodeId, weight: NodeId, bias: NodeId, kernel: usize, dilation: usize },
    WeightNorm { v: NodeId, g: NodeId },
    Glu { input: NodeId },
    LeakyRelu { input: NodeId, slope: f64 },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Abs { input: NodeId },
    Square { input: NodeId },
    OneMinus { input: NodeId },
    Scale { input: NodeId, k: f64 },
    Mean { input: NodeId },
    SumList { inputs: Vec<NodeId> },
    Stack { inputs: Vec<NodeId> },
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    MatMulConst { input: NodeId, matrix: Arc<Vec<f64>>, out_rows: usize },
    StftMag { input: NodeId, plan: Arc<StftPlan> },
    LogClamp { input: NodeId, floor: f64 },
    Resample3 { input: NodeId, direction: ResampleDirection, kernel: Arc<Vec<f64>> },
}

enum Aux {
    None,
    Stft { re: Vec<f64>, im: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    aux: Aux,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.push_aux(value, op, Aux::None)
    }

    fn push_aux(&mut self, value: Tensor, op: Op, aux: Aux) -> NodeId {
        self.nodes.push(Node { value, op, aux });
        self.nodes.len() - 1
    }

    /// A leaf node. Whether it is a trainable parameter or a constant is the
    /// caller's bookkeeping; gradients are available for any leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Dilated 1-D convolution with "same" zero padding.
    /// input [Cin, T], weight [Cout, Cin*K], bias [Cout, 1] -> [Cout, T].
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        kernel: usize,
        dilation: usize,
    ) -> NodeId {
        assert!(kernel % 2 == 1, "conv kernel must be odd for same padding");
        let x = &self.nodes[input].value;
        let w = &self.nodes[weight].value;
        let b = &self.nodes[bias].value;
        let (c_in, t_len) = (x.rows, x.cols);
        assert_eq!(w.cols, c_in * kernel, "conv weight shape");
        let c_out = w.rows;
        assert_eq!(b.rows, c_out, "conv bias shape");
        let mut out = Tensor::zeros(c_out, t_len);
        conv1d_forward(
            &x.data, c_in, t_len, &w.data, &b.data, c_out, kernel, dilation, &mut out.data,
        );
        self.push(out, Op::Conv1d { input, weight, bias, kernel, dilation })
    }

    /// Effective weight w = g * v / ||v|| per output channel (row of v).
    pub fn weight_norm(&mut self, v: NodeId, g: NodeId) -> NodeId {
        let vt = &self.nodes[v].value;
        let gt = &self.nodes[g].value;
        assert_eq!(gt.rows, vt.rows, "gain per output channel");
        let mut out = Tensor::zeros(vt.rows, vt.cols);
        for r in 0..vt.rows {
            let row = vt.row(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = gt.data[r] / norm;
            for (o, &x) in out.data[r * vt.cols..(r + 1) * vt.cols].iter_mut().zip(row) {
                *o = s * x;
            }
        }
        self.push(out, Op::WeightNorm { v, g })
    }

    /// GLU over split channel halves: out = a * sigmoid(b).
    pub fn glu(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        assert!(x.rows % 2 == 0, "GLU needs an even channel count");
        let half = x.rows / 2;
        let t_len = x.cols;
        let mut out = Tensor::zeros(half, t_len);
        for c in 0..half {
            let a = x.row(c);
            let b = x.row(half + c);
            for ((o, &av), &bv) in
                out.data[c * t_len..(c + 1) * t_len].iter_mut().zip(a).zip(b)
            {
                *o = av * sigmoid(bv);
            }
        }
        self.push(out, Op::Glu { input })
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let out = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::LeakyRelu { input, slope })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (xa, xb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((xa.rows, xa.cols), (xb.rows, xb.cols), "add shape mismatch");
        let data = xa.data.iter().zip(&xb.data).map(|(x, y)| x + y).collect();
        let out = Tensor { rows: xa.rows, cols: xa.cols, data };
        self.push(out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (xa, xb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((xa.rows, xa.cols), (xb.rows, xb.cols), "sub shape mismatch");
        let data = xa.data.iter().zip(&xb.data).map(|(x, y)| x - y).collect();
        let out = Tensor { rows: xa.rows, cols: xa.cols, data };
        self.push(out, Op::Sub { a, b })
    }

    pub fn abs(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|v| v.abs()).collect();
        let out = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Abs { input })
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|v| v * v).collect();
        let out = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Square { input })
    }

    /// 1 - x, elementwise.
    pub fn one_minus(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|v| 1.0 - v).collect();
        let out = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::OneMinus { input })
    }

    pub fn scale(&mut self, input: NodeId, k: f64) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|v| k * v).collect();
        let out = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::Scale { input, k })
    }

    /// Mean over all elements -> scalar.
    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let m = x.data.iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean { input })
    }

    /// Elementwise sum of same-shaped nodes (commonly scalars).
    pub fn sum_list(&mut self, inputs: Vec<NodeId>) -> NodeId {
        assert!(!inputs.is_empty());
        let first = &self.nodes[inputs[0]].value;
        let (rows, cols) = (first.rows, first.cols);
        let mut data = vec![0.0; rows * cols];
        for &id in &inputs {
            let t = &self.nodes[id].value;
            assert_eq!((t.rows, t.cols), (rows, cols), "sum_list shape mismatch");
            for (o, &v) in data.iter_mut().zip(&t.data) {
                *o += v;
            }
        }
        self.push(Tensor { rows, cols, data }, Op::SumList { inputs })
    }

    /// Stack scalar nodes into a column vector [n, 1].
    pub fn stack_scalars(&mut self, inputs: Vec<NodeId>) -> NodeId {
        let data: Vec<f64> = inputs.iter().map(|&id| self.nodes[id].value.item()).collect();
        let n = data.len();
        self.push(Tensor { rows: n, cols: 1, data }, Op::Stack { inputs })
    }

    /// Fully connected layer: weight [m, n] x input (flattened n) + bias [m, 1].
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let w = &self.nodes[weight].value;
        let b = &self.nodes[bias].value;
        assert_eq!(w.cols, x.len(), "linear input size");
        assert_eq!(b.rows, w.rows, "linear bias size");
        let mut data = vec![0.0; w.rows];
        for (m, o) in data.iter_mut().enumerate() {
            *o = b.data[m] + dot(w.row(m), &x.data);
        }
        let rows = w.rows;
        self.push(Tensor { rows, cols: 1, data }, Op::Linear { input, weight, bias })
    }

    /// Constant matrix product: out = M x input, M is [out_rows, input.rows].
    pub fn matmul_const(&mut self, input: NodeId, matrix: Arc<Vec<f64>>, out_rows: usize) -> NodeId {
        let x = &self.nodes[input].value;
        assert_eq!(matrix.len(), out_rows * x.rows, "matmul_const shape");
        let frames = x.cols;
        let mut data = vec![0.0; out_rows * frames];
        for r in 0..out_rows {
            let mrow = &matrix[r * x.rows..(r + 1) * x.rows];
            let orow = &mut data[r * frames..(r + 1) * frames];
            for (b, &w) in mrow.iter().enumerate() {
                if w != 0.0 {
                    axpy(w, x.row(b), orow);
                }
            }
        }
        self.push(Tensor { rows: out_rows, cols: frames, data }, Op::MatMulConst { input, matrix, out_rows })
    }

    /// STFT magnitude of a [1, T] waveform -> [bins, frames]. A positive
    /// `mag_eps` smooths cells to sqrt(power + mag_eps^2) so the gradient
    /// stays bounded at spectral zeros.
    pub fn stft_mag(&mut self, input: NodeId, plan: Arc<StftPlan>, mag_eps: f64) -> NodeId {
        let x = &self.nodes[input].value;
        assert_eq!(x.rows, 1, "stft input must be a single-channel waveform");
        assert!(x.cols >= plan.win_length, "waveform shorter than one window");
        let mut out = plan.magnitudes(&x.data);
        if mag_eps > 0.0 {
            crate::dsp::smooth_magnitudes(&mut out, mag_eps);
        }
        let value = Tensor { rows: out.bins, cols: out.frames, data: out.mag };
        self.push_aux(value, Op::StftMag { input, plan }, Aux::Stft { re: out.re, im: out.im })
    }

    /// ln(max(x, floor)), elementwise. Gradient is zero below the floor.
    pub fn log_clamp(&mut self, input: NodeId, floor: f64) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|&v| v.max(floor).ln()).collect();
        let out = Tensor { rows: x.rows, cols: x.cols, data };
        self.push(out, Op::LogClamp { input, floor })
    }

    /// Fixed windowed-sinc resampling of a [1, T] waveform by 3 or 1/3.
    pub fn resample3(
        &mut self,
        input: NodeId,
        direction: ResampleDirection,
        kernel: Arc<Vec<f64>>,
    ) -> NodeId {
        let x = &self.nodes[input].value;
        assert_eq!(x.rows, 1, "resample input must be a single-channel waveform");
        let data = match direction {
            ResampleDirection::Up3 => crate::dsp::upsample3(&x.data, &kernel),
            ResampleDirection::Down3 => {
                assert!(x.cols % 3 == 0, "decimation input must be divisible by 3");
                crate::dsp::downsample3(&x.data, &kernel)
            }
        };
        let cols = data.len();
        self.push(Tensor { rows: 1, cols, data }, Op::Resample3 { input, direction, kernel })
    }

    /// Reverse pass from a scalar root. Returns one gradient slot per node;
    /// untouched slots are `None`.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Tensor>> {
        assert_eq!(self.nodes[root].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));
        for id in (0..=root).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize), add: impl FnOnce(&mut Tensor)) {
        let slot = grads[id].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
        add(slot);
    }

    fn backprop_node(&self, id: NodeId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { input, weight, bias, kernel, dilation } => {
                let x = &self.nodes[*input].value;
                let w = &self.nodes[*weight].value;
                let (c_in, t_len) = (x.rows, x.cols);
                let c_out = w.rows;
                Self::accumulate(grads, *input, (c_in, t_len), |gi| {
                    conv1d_backward_input(
                        &g.data, c_out, t_len, &w.data, c_in, *kernel, *dilation, &mut gi.data,
                    );
                });
                Self::accumulate(grads, *weight, (c_out, c_in * kernel), |gw| {
                    conv1d_backward_weight(
                        &g.data, c_out, t_len, &x.data, c_in, *kernel, *dilation, &mut gw.data,
                    );
                });
                Self::accumulate(grads, *bias, (c_out, 1), |gb| {
                    for co in 0..c_out {
                        gb.data[co] += g.row(co).iter().sum::<f64>();
                    }
                });
            }
            Op::WeightNorm { v, g: gain } => {
                let vt = &self.nodes[*v].value;
                let gt = &self.nodes[*gain].value;
                let cols = vt.cols;
                Self::accumulate(grads, *v, (vt.rows, cols), |gv| {
                    for r in 0..vt.rows {
                        let row = vt.row(r);
                        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let gw = &g.data[r * cols..(r + 1) * cols];
                        let dot_gw_v: f64 = gw.iter().zip(row).map(|(a, b)| a * b).sum();
                        let s = gt.data[r] / norm;
                        let proj = dot_gw_v / (norm * norm);
                        for ((o, &dg), &vv) in
                            gv.data[r * cols..(r + 1) * cols].iter_mut().zip(gw).zip(row)
                        {
                            *o += s * (dg - proj * vv);
                        }
                    }
                });
                Self::accumulate(grads, *gain, (gt.rows, 1), |gg| {
                    for r in 0..vt.rows {
                        let row = vt.row(r);
                        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let gw = &g.data[r * cols..(r + 1) * cols];
                        let dot_gw_v: f64 = gw.iter().zip(row).map(|(a, b)| a * b).sum();
                        gg.data[r] += dot_gw_v / norm;
                    }
                });
            }
            Op::Glu { input } => {
                let x = &self.nodes[*input].value;
                let half = x.rows / 2;
                let t_len = x.cols;
                Self::accumulate(grads, *input, (x.rows, t_len), |gi| {
                    for c in 0..half {
                        let a = x.row(c);
                        let b = x.row(half + c);
                        let go = &g.data[c * t_len..(c + 1) * t_len];
                        let (ga_part, gb_part) = gi.data.split_at_mut((half + c) * t_len);
                        let ga = &mut ga_part[c * t_len..(c + 1) * t_len];
                        let gb = &mut gb_part[..t_len];
                        for i in 0..t_len {
                            let s = sigmoid(b[i]);
                            ga[i] += go[i] * s;
                            gb[i] += go[i] * a[i] * s * (1.0 - s);
                        }
                    }
                });
            }
            Op::LeakyRelu { input, slope } => {
                let x = &self.nodes[*input].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for ((o, &xv), &gv) in gi.data.iter_mut().zip(&x.data).zip(&g.data) {
                        *o += if xv > 0.0 { gv } else { slope * gv };
                    }
                });
            }
            Op::Add { a, b } => {
                let shape = (node.value.rows, node.value.cols);
                Self::accumulate(grads, *a, shape, |ga| {
                    for (o, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *o += gv;
                    }
                });
                Self::accumulate(grads, *b, shape, |gb| {
                    for (o, &gv) in gb.data.iter_mut().zip(&g.data) {
                        *o += gv;
                    }
                });
            }
            Op::Sub { a, b } => {
                let shape = (node.value.rows, node.value.cols);
                Self::accumulate(grads, *a, shape, |ga| {
                    for (o, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *o += gv;
                    }
                });
                Self::accumulate(grads, *b, shape, |gb| {
                    for (o, &gv) in gb.data.iter_mut().zip(&g.data) {
                        *o -= gv;
                    }
                });
            }
            Op::Abs { input } => {
                let x = &self.nodes[*input].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for ((o, &xv), &gv) in gi.data.iter_mut().zip(&x.data).zip(&g.data) {
                        *o += gv * xv.signum() * if xv == 0.0 { 0.0 } else { 1.0 };
                    }
                });
            }
            Op::Square { input } => {
                let x = &self.nodes[*input].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for ((o, &xv), &gv) in gi.data.iter_mut().zip(&x.data).zip(&g.data) {
                        *o += 2.0 * xv * gv;
                    }
                });
            }
            Op::OneMinus { input } => {
                let x = &self.nodes[*input].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for (o, &gv) in gi.data.iter_mut().zip(&g.data) {
                        *o -= gv;
                    }
                });
            }
            Op::Scale { input, k } => {
                let x = &self.nodes[*input].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for (o, &gv) in gi.data.iter_mut().zip(&g.data) {
                        *o += k * gv;
                    }
                });
            }
            Op::Mean { input } => {
                let x = &self.nodes[*input].value;
                let gv = g.item() / x.len() as f64;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for o in gi.data.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::SumList { inputs } => {
                let shape = (node.value.rows, node.value.cols);
                for &src in inputs {
                    Self::accumulate(grads, src, shape, |gi| {
                        for (o, &gv) in gi.data.iter_mut().zip(&g.data) {
                            *o += gv;
                        }
                    });
                }
            }
            Op::Stack { inputs } => {
                for (i, &src) in inputs.iter().enumerate() {
                    Self::accumulate(grads, src, (1, 1), |gi| {
                        gi.data[0] += g.data[i];
                    });
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = &self.nodes[*input].value;
                let w = &self.nodes[*weight].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for m in 0..w.rows {
                        axpy(g.data[m], w.row(m), &mut gi.data);
                    }
                });
                Self::accumulate(grads, *weight, (w.rows, w.cols), |gw| {
                    for m in 0..w.rows {
                        axpy(g.data[m], &x.data, &mut gw.data[m * w.cols..(m + 1) * w.cols]);
                    }
                });
                Self::accumulate(grads, *bias, (w.rows, 1), |gb| {
                    for (o, &gv) in gb.data.iter_mut().zip(&g.data) {
                        *o += gv;
                    }
                });
            }
            Op::MatMulConst { input, matrix, out_rows } => {
                let x = &self.nodes[*input].value;
                let frames = x.cols;
                Self::accumulate(grads, *input, (x.rows, frames), |gi| {
                    for r in 0..*out_rows {
                        let mrow = &matrix[r * x.rows..(r + 1) * x.rows];
                        let grow = &g.data[r * frames..(r + 1) * frames];
                        for (b, &w) in mrow.iter().enumerate() {
                            if w != 0.0 {
                                axpy(w, grow, &mut gi.data[b * frames..(b + 1) * frames]);
                            }
                        }
                    }
                });
            }
            Op::StftMag { input, plan } => {
                let x = &self.nodes[*input].value;
                let (re, im) = match &node.aux {
                    Aux::Stft { re, im } => (re, im),
                    Aux::None => unreachable!("stft node without cached spectrum"),
                };
                let out = crate::dsp::StftOutput {
                    bins: node.value.rows,
                    frames: node.value.cols,
                    mag: node.value.data.clone(),
                    re: re.clone(),
                    im: im.clone(),
                };
                let gx = plan.magnitudes_adjoint(&out, &g.data, x.cols);
                Self::accumulate(grads, *input, (1, x.cols), |gi| {
                    for (o, v) in gi.data.iter_mut().zip(gx) {
                        *o += v;
                    }
                });
            }
            Op::LogClamp { input, floor } => {
                let x = &self.nodes[*input].value;
                Self::accumulate(grads, *input, (x.rows, x.cols), |gi| {
                    for ((o, &xv), &gv) in gi.data.iter_mut().zip(&x.data).zip(&g.data) {
                        if xv > *floor {
                            *o += gv / xv;
                        }
                    }
                });
            }
            Op::Resample3 { input, direction, kernel } => {
                let x = &self.nodes[*input].value;
                let gx = sinc_resample_adjoint(*direction, &g.data, x.cols, kernel);
                Self::accumulate(grads, *input, (1, x.cols), |gi| {
                    for (o, v) in gi.data.iter_mut().zip(gx) {
                        *o += v;
                    }
                });
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yo, &xv) in y.iter_mut().zip(x) {
        *yo += a * xv;
    }
}

#[inline]
/// Dot product with four partial accumulators so the reduction vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 4;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        for (lane, slot) in acc.iter_mut().enumerate() {
            let j = LANES * i + lane;
            *slot += a[j] * b[j];
        }
    }
    let mut total = 0.0;
    for j in LANES * chunks..a.len() {
        total += a[j] * b[j];
    }
    total + acc.iter().sum::<f64>()
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    c_in: usize,
    t_len: usize,
    w: &[f64],
    bias: &[f64],
    c_out: usize,
    kernel: usize,
    dilation: usize,
    out: &mut [f64],
) {
    let half = (kernel / 2) as isize;
    for co in 0..c_out {
        let orow = &mut out[co * t_len..(co + 1) * t_len];
        orow.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..c_in {
            let xrow = &x[ci * t_len..(ci + 1) * t_len];
            for k in 0..kernel {
                let wv = w[co * c_in * kernel + ci * kernel + k];
                let offset = (k as isize - half) * dilation as isize;
                shifted_axpy(wv, xrow, orow, offset);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward_input(
    g: &[f64],
    c_out: usize,
    t_len: usize,
    w: &[f64],
    c_in: usize,
    kernel: usize,
    dilation: usize,
    gx: &mut [f64],
) {
    let half = (kernel / 2) as isize;
    for ci in 0..c_in {
        let gxrow = &mut gx[ci * t_len..(ci + 1) * t_len];
        for co in 0..c_out {
            let grow = &g[co * t_len..(co + 1) * t_len];
            for k in 0..kernel {
                let wv = w[co * c_in * kernel + ci * kernel + k];
                let offset = (k as isize - half) * dilation as isize;
                // forward read x[t + offset]; adjoint scatters with -offset
                shifted_axpy(wv, grow, gxrow, -offset);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward_weight(
    g: &[f64],
    c_out: usize,
    t_len: usize,
    x: &[f64],
    c_in: usize,
    kernel: usize,
    dilation: usize,
    gw: &mut [f64],
) {
    let half = (kernel / 2) as isize;
    for co in 0..c_out {
        let grow = &g[co * t_len..(co + 1) * t_len];
        for ci in 0..c_in {
            let xrow = &x[ci * t_len..(ci + 1) * t_len];
            for k in 0..kernel {
                let offset = (k as isize - half) * dilation as isize;
                gw[co * c_in * kernel + ci * kernel + k] += shifted_dot(grow, xrow, offset);
            }
        }
    }
}

/// y[t] += a * x[t + offset] over the in-range span.
#[inline]
fn shifted_axpy(a: f64, x: &[f64], y: &mut [f64], offset: isize) {
    if a == 0.0 {
        return;
    }
    let t_len = y.len() as isize;
    let lo = 0.max(-offset);
    let hi = t_len.min(x.len() as isize - offset);
    if lo >= hi {
        return;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let xs = &x[(lo as isize + offset) as usize..(hi as isize + offset) as usize];
    axpy(a, xs, &mut y[lo..hi]);
}

/// sum_t g[t] * x[t + offset] over the in-range span.
#[inline]
fn shifted_dot(g: &[f64], x: &[f64], offset: isize) -> f64 {
    let t_len = g.len() as isize;
    let lo = 0.max(-offset);
    let hi = t_len.min(x.len() as isize - offset);
    if lo >= hi {
        return 0.0;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    dot(&g[lo..hi], &x[(lo as isize + offset) as usize..(hi as isize + offset) as usize])
}
