//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Sequences are stored channel-major: a batch of `B` segments of `T` frames is
//! one `channels x (B * T)` matrix with segment `b` in columns `b*T .. (b+1)*T`.
//! Ops that care about segment boundaries (convolution padding, normalization
//! groups, recurrence) take the segment length explicitly.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Recurrent cell flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Lstm,
    Gru,
}

impl Cell {
    /// Number of stacked gate blocks in the projection matrices.
    pub fn gates(self) -> usize {
        match self {
            Cell::Lstm => 4,
            Cell::Gru => 3,
        }
    }
}

struct RecurrentCache {
    cell: Cell,
    hidden: usize,
    seg_len: usize,
    reverse: bool,
    /// Post-activation gates per column, `N x (G*H)`.
    gates: Mat,
    /// Hidden state per column, `N x H`.
    h: Mat,
    /// LSTM: cell state. GRU: the hidden-side candidate pre-activation `W_hn h`.
    aux: Mat,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddColumn(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Im2Col { x: Var, kernel: usize, seg_len: usize },
    Normalize { x: Var, group_len: usize, xhat: Mat, inv_std: Mat },
    ScaleShift { x: Var, gamma: Var, beta: Var },
    Recurrent { xproj: Var, w_hh: Var, cache: Box<RecurrentCache> },
    ConcatRows(Vec<Var>),
    SelectCols { x: Var, idx: Vec<usize> },
    RepeatCols { x: Var, factor: usize },
    SumSquares(Var),
    SquaredError { a: Var, b: Var, scale: f64 },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Per-column statistics produced by a normalization op.
#[derive(Debug, Clone)]
pub struct NormStats {
    /// `channels x groups`
    pub mean: Mat,
    /// `channels x groups` (biased variance)
    pub var: Mat,
    /// Columns per group.
    pub group_len: usize,
}

/// A recording of the forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
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

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether gradient can flow back from `v` to some parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A leaf that gradients do not flow into.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x + b` with `b` a column vector broadcast over every column of `x`.
    pub fn add_column(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.ncols() != 1 || vb.nrows() != vx.nrows() {
            return Err(shape_err("add_column", format!("{:?} + {:?}", vx.dim(), vb.dim())));
        }
        let out = vx + vb;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddColumn(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("add", format!("{:?} + {:?}", va.dim(), vb.dim())));
        }
        let out = va + vb;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("sub", format!("{:?} - {:?}", va.dim(), vb.dim())));
        }
        let out = va - vb;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Unfolds `kernel`-wide windows (zero padded by `kernel / 2` at every
    /// segment edge) into rows `c * kernel + j`.
    pub fn im2col(&mut self, x: Var, kernel: usize, seg_len: usize) -> Result<Var> {
        let vx = self.value(x);
        let (ch, n) = vx.dim();
        if kernel.is_multiple_of(2) || seg_len == 0 || n % seg_len != 0 {
            return Err(shape_err("im2col", format!("kernel {kernel}, segment {seg_len}, columns {n}")));
        }
        let pad = kernel / 2;
        let mut out = Mat::zeros((ch * kernel, n));
        for c in 0..ch {
            let row = vx.row(c);
            for j in 0..kernel {
                let mut dst = out.row_mut(c * kernel + j);
                for seg in 0..n / seg_len {
                    let base = seg * seg_len;
                    for t in 0..seg_len {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < seg_len {
                            dst[base + t] = row[base + src as usize];
                        }
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Im2Col { x, kernel, seg_len }, rg))
    }

    /// Zero-mean, unit-variance normalization of every row within column groups
    /// of `group_len` (instance norm when the group is one segment, batch norm
    /// when it spans every column).
    pub fn normalize(&mut self, x: Var, group_len: usize, eps: f64) -> Result<(Var, NormStats)> {
        let vx = self.value(x);
        let (ch, n) = vx.dim();
        if group_len == 0 || n % group_len != 0 {
            return Err(shape_err("normalize", format!("group {group_len}, columns {n}")));
        }
        let groups = n / group_len;
        let mut xhat = Mat::zeros((ch, n));
        let mut inv_std = Mat::zeros((ch, groups));
        let mut mean = Mat::zeros((ch, groups));
        let mut var = Mat::zeros((ch, groups));
        for c in 0..ch {
            let row = vx.row(c);
            for g in 0..groups {
                let span = g * group_len..(g + 1) * group_len;
                let m = span.clone().map(|i| row[i]).sum::<f64>() / group_len as f64;
                let v = span.clone().map(|i| (row[i] - m).powi(2)).sum::<f64>() / group_len as f64;
                let is = 1.0 / (v + eps).sqrt();
                for i in span {
                    xhat[[c, i]] = (row[i] - m) * is;
                }
                inv_std[[c, g]] = is;
                mean[[c, g]] = m;
                var[[c, g]] = v;
            }
        }
        let rg = self.rg(x);
        let out = xhat.clone();
        let v = self.push(out, Op::Normalize { x, group_len, xhat, inv_std }, rg);
        Ok((v, NormStats { mean, var, group_len }))
    }

    /// Per-row affine map `gamma * x + beta` with column-vector `gamma`, `beta`.
    pub fn scale_shift(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        if vg.dim() != (vx.nrows(), 1) || vb.dim() != (vx.nrows(), 1) {
            return Err(shape_err(
                "scale_shift",
                format!("x {:?}, gamma {:?}, beta {:?}", vx.dim(), vg.dim(), vb.dim()),
            ));
        }
        let out = vx * vg + vb;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, Op::ScaleShift { x, gamma, beta }, rg))
    }

    /// Runs a recurrent cell over every segment. `xproj` is the input-side
    /// pre-activation `W_ih x + b` (`G*H x N`), `w_hh` the `G*H x H` recurrent
    /// matrix. The initial state is zero; with `reverse` each segment is
    /// processed back to front. Output is `H x N`.
    pub fn recurrent(
        &mut self,
        xproj: Var,
        w_hh: Var,
        cell: Cell,
        seg_len: usize,
        reverse: bool,
    ) -> Result<Var> {
        let (vx, vw) = (self.value(xproj), self.value(w_hh));
        let (gh, h) = vw.dim();
        let n = vx.ncols();
        if gh != cell.gates() * h || vx.nrows() != gh || seg_len == 0 || n % seg_len != 0 {
            return Err(shape_err(
                "recurrent",
                format!("xproj {:?}, w_hh {:?}, segment {seg_len}", vx.dim(), vw.dim()),
            ));
        }
        let xp = vx.t().as_standard_layout().into_owned();
        let w_t = vw.t().as_standard_layout().into_owned();
        let segs = n / seg_len;
        let mut gates = Mat::zeros((n, gh));
        let mut hs = Mat::zeros((n, h));
        let mut aux = Mat::zeros((n, h));
        // all segments advance together, one row per segment
        let mut h_prev = Mat::zeros((segs, h));
        let mut c_prev = Mat::zeros((segs, h));
        for step in 0..seg_len {
            let t = if reverse { seg_len - 1 - step } else { step };
            let a_h = h_prev.dot(&w_t);
            for seg in 0..segs {
                let col = seg * seg_len + t;
                let a_row = a_h.row(seg);
                let x_row = xp.row(col);
                let mut g_row = gates.row_mut(col);
                let mut aux_row = aux.row_mut(col);
                let mut h_row = hs.row_mut(col);
                let mut hp = h_prev.row_mut(seg);
                match cell {
                    Cell::Lstm => {
                        let mut cp = c_prev.row_mut(seg);
                        for j in 0..h {
                            let i = sigmoid(x_row[j] + a_row[j]);
                            let f = sigmoid(x_row[h + j] + a_row[h + j]);
                            let g = (x_row[2 * h + j] + a_row[2 * h + j]).tanh();
                            let o = sigmoid(x_row[3 * h + j] + a_row[3 * h + j]);
                            let c = f * cp[j] + i * g;
                            let hv = o * c.tanh();
                            g_row[j] = i;
                            g_row[h + j] = f;
                            g_row[2 * h + j] = g;
                            g_row[3 * h + j] = o;
                            aux_row[j] = c;
                            h_row[j] = hv;
                            cp[j] = c;
                            hp[j] = hv;
                        }
                    }
                    Cell::Gru => {
                        for j in 0..h {
                            let r = sigmoid(x_row[j] + a_row[j]);
                            let z = sigmoid(x_row[h + j] + a_row[h + j]);
                            let cand = (x_row[2 * h + j] + r * a_row[2 * h + j]).tanh();
                            let hv = (1.0 - z) * cand + z * hp[j];
                            g_row[j] = r;
                            g_row[h + j] = z;
                            g_row[2 * h + j] = cand;
                            aux_row[j] = a_row[2 * h + j];
                            h_row[j] = hv;
                            hp[j] = hv;
                        }
                    }
                }
            }
        }
        let out = hs.t().as_standard_layout().into_owned();
        let rg = self.rg(xproj) || self.rg(w_hh);
        Ok(self.push(
            out,
            Op::Recurrent {
                xproj,
                w_hh,
                cache: Box::new(RecurrentCache { cell, hidden: h, seg_len, reverse, gates, h: hs, aux }),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out =
            ndarray::concatenate(Axis(0), &views).map_err(|e| shape_err("concat_rows", e.to_string()))?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Gathers columns: output column `j` is input column `idx[j]`.
    pub fn select_cols(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.ncols()) {
            return Err(shape_err("select_cols", format!("index {bad} >= {}", vx.ncols())));
        }
        let out = vx.select(Axis(1), &idx);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SelectCols { x, idx }, rg))
    }

    /// Nearest-neighbour upsampling: every column repeated `factor` times.
    pub fn repeat_cols(&mut self, x: Var, factor: usize) -> Var {
        let vx = self.value(x);
        let (r, n) = vx.dim();
        let out = Mat::from_shape_fn((r, n * factor), |(i, j)| vx[[i, j / factor]]);
        let rg = self.rg(x);
        self.push(out, Op::RepeatCols { x, factor }, rg)
    }

    /// `sum(x^2)` as a 1x1 node.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|v| v * v).sum::<f64>();
        let rg = self.rg(x);
        self.push(Mat::from_elem((1, 1), s), Op::SumSquares(x), rg)
    }

    /// `scale * sum((a - b)^2)` as a 1x1 node.
    pub fn squared_error(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("squared_error", format!("{:?} vs {:?}", va.dim(), vb.dim())));
        }
        let s = va.iter().zip(vb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * scale;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Mat::from_elem((1, 1), s), Op::SquaredError { a, b, scale }, rg))
    }

    /// Gradients of the scalar node `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(shape_err("backward", format!("loss has shape {:?}", lv.dim())));
        }
        if !lv[[0, 0]].is_finite() {
            return Err(Error::NonFinite(format!("loss is {}", lv[[0, 0]])));
        }
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Mat::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::AddColumn(x, b) => {
                acc(*x, g.clone());
                if self.rg(*b) {
                    acc(*b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Scale(x, c) => acc(*x, g * *c),
            Op::Relu(x) => {
                let mut d = g.clone();
                d.zip_mut_with(&node.value, |d, &y| {
                    if y <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(*x, d);
            }
            Op::Im2Col { x, kernel, seg_len } => {
                let (ch, n) = self.value(*x).dim();
                let pad = kernel / 2;
                let mut dx = Mat::zeros((ch, n));
                for c in 0..ch {
                    let mut dst = dx.row_mut(c);
                    for j in 0..*kernel {
                        let src = g.row(c * kernel + j);
                        for seg in 0..n / seg_len {
                            let base = seg * seg_len;
                            for t in 0..*seg_len {
                                let s = t as isize + j as isize - pad as isize;
                                if s >= 0 && (s as usize) < *seg_len {
                                    dst[base + s as usize] += src[base + t];
                                }
                            }
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Normalize { x, group_len, xhat, inv_std } => {
                let (ch, n) = g.dim();
                let mut dx = Mat::zeros((ch, n));
                let len = *group_len as f64;
                for c in 0..ch {
                    for gi in 0..n / group_len {
                        let span = gi * group_len..(gi + 1) * group_len;
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for i in span.clone() {
                            mean_g += g[[c, i]];
                            mean_gx += g[[c, i]] * xhat[[c, i]];
                        }
                        mean_g /= len;
                        mean_gx /= len;
                        let is = inv_std[[c, gi]];
                        for i in span {
                            dx[[c, i]] = is * (g[[c, i]] - mean_g - xhat[[c, i]] * mean_gx);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::ScaleShift { x, gamma, beta } => {
                let vx = self.value(*x);
                let vg = self.value(*gamma);
                if self.rg(*x) {
                    acc(*x, g * vg);
                }
                if self.rg(*gamma) {
                    acc(*gamma, (g * vx).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
                if self.rg(*beta) {
                    acc(*beta, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Recurrent { xproj, w_hh, cache } => {
                let (dxp, dw) = self.recurrent_backward(g, self.value(*w_hh), cache);
                if self.rg(*xproj) {
                    acc(*xproj, dxp);
                }
                if self.rg(*w_hh) {
                    acc(*w_hh, dw);
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let r = self.value(p).nrows();
                    if self.rg(p) {
                        acc(p, g.slice(ndarray::s![row..row + r, ..]).to_owned());
                    }
                    row += r;
                }
            }
            Op::SelectCols { x, idx } => {
                let mut dx = Mat::zeros(self.value(*x).dim());
                for (j, &src) in idx.iter().enumerate() {
                    let mut col = dx.column_mut(src);
                    col += &g.column(j);
                }
                acc(*x, dx);
            }
            Op::RepeatCols { x, factor } => {
                let (r, n) = self.value(*x).dim();
                let dx =
                    Mat::from_shape_fn((r, n), |(i, j)| (0..*factor).map(|k| g[[i, j * factor + k]]).sum());
                acc(*x, dx);
            }
            Op::SumSquares(x) => {
                let s = g[[0, 0]] * 2.0;
                acc(*x, self.value(*x) * s);
            }
            Op::SquaredError { a, b, scale } => {
                let s = g[[0, 0]] * 2.0 * scale;
                let d = (self.value(*a) - self.value(*b)) * s;
                if self.rg(*b) {
                    acc(*b, -&d);
                }
                acc(*a, d);
            }
        }
    }

    fn recurrent_backward(&self, g: &Mat, w_hh: &Mat, cache: &RecurrentCache) -> (Mat, Mat) {
        let RecurrentCache { cell, hidden: h, seg_len, reverse, gates, h: hs, aux } = cache;
        let (h, seg_len) = (*h, *seg_len);
        let n = hs.nrows();
        let gh = cell.gates() * h;
        let w = w_hh.as_standard_layout();
        let g_rows = g.t().as_standard_layout().into_owned();
        let segs = n / seg_len;
        // input-side and hidden-side pre-activation gradients per column
        let mut d_x = Mat::zeros((n, gh));
        let mut d_h = Mat::zeros((n, gh));
        let mut h_prev_rows = Mat::zeros((n, h));
        let mut dh_next = Mat::zeros((segs, h));
        let mut dc_next = Mat::zeros((segs, h));
        let mut d_step = Mat::zeros((segs, gh));
        for step in (0..seg_len).rev() {
            let t = if *reverse { seg_len - 1 - step } else { step };
            for seg in 0..segs {
                let col = seg * seg_len + t;
                let prev_col = if step == 0 {
                    None
                } else if *reverse {
                    Some(col + 1)
                } else {
                    Some(col - 1)
                };
                if let Some(p) = prev_col {
                    let prev = hs.row(p).to_owned();
                    h_prev_rows.row_mut(col).assign(&prev);
                }
                let hp = h_prev_rows.row(col);
                let gr = gates.row(col);
                let ar = aux.row(col);
                let go = g_rows.row(col);
                let mut dxr = d_x.row_mut(col);
                let mut dhr = d_step.row_mut(seg);
                let mut dn = dh_next.row_mut(seg);
                match cell {
                    Cell::Lstm => {
                        let mut dcn = dc_next.row_mut(seg);
                        for j in 0..h {
                            let (i, f, gg, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                            let c = ar[j];
                            let c_prev = prev_col.map_or(0.0, |p| aux[[p, j]]);
                            let tc = c.tanh();
                            let dh = go[j] + dn[j];
                            let dc = dcn[j] + dh * o * (1.0 - tc * tc);
                            let da_i = dc * gg * i * (1.0 - i);
                            let da_f = dc * c_prev * f * (1.0 - f);
                            let da_g = dc * i * (1.0 - gg * gg);
                            let da_o = dh * tc * o * (1.0 - o);
                            dxr[j] = da_i;
                            dxr[h + j] = da_f;
                            dxr[2 * h + j] = da_g;
                            dxr[3 * h + j] = da_o;
                            dhr[j] = da_i;
                            dhr[h + j] = da_f;
                            dhr[2 * h + j] = da_g;
                            dhr[3 * h + j] = da_o;
                            dcn[j] = dc * f;
                        }
                    }
                    Cell::Gru => {
                        for j in 0..h {
                            let (r, z, cand) = (gr[j], gr[h + j], gr[2 * h + j]);
                            let ah_n = ar[j];
                            let dh = go[j] + dn[j];
                            let dcand = dh * (1.0 - z);
                            let dz = dh * (hp[j] - cand);
                            let da_n = dcand * (1.0 - cand * cand);
                            let dr = da_n * ah_n;
                            let da_r = dr * r * (1.0 - r);
                            let da_z = dz * z * (1.0 - z);
                            dxr[j] = da_r;
                            dxr[h + j] = da_z;
                            dxr[2 * h + j] = da_n;
                            dhr[j] = da_r;
                            dhr[h + j] = da_z;
                            dhr[2 * h + j] = da_n * r;
                            dn[j] = dh * z;
                        }
                    }
                }
                d_h.row_mut(col).assign(&d_step.row(seg));
            }
            // dh_prev = direct term + W_hh^T d_h
            let back = d_step.dot(&w);
            match cell {
                Cell::Lstm => dh_next.assign(&back),
                Cell::Gru => dh_next += &back,
            }
        }
        let d_w = d_h.t().dot(&h_prev_rows);
        (d_x.t().as_standard_layout().into_owned(), d_w)
    }
}

/// Result of [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Mat) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(like.dim()))
    }
}
