//! Reverse-mode differentiation over batched 1-D signals.
//!
//! A [`Graph`] records every operation eagerly (values are computed when the
//! node is added) and [`Graph::backward`] walks the tape in reverse. Tensors
//! are `(batch, channels, length)` in row-major order. Parameters enter as
//! [`Graph::param`] leaves; everything else is constant. [`Graph::detach`]
//! cuts gradient flow, which is how fake batches are frozen for the
//! discriminator update and discriminators are frozen for the generator update.

/// Per-thread free list of large buffers. Training builds and drops one
/// graph per update; recycling its storage avoids returning it to the OS and
/// faulting it back in on the next update.
mod pool {
    use std::cell::RefCell;

    const MIN_POOLED: usize = 4096;
    const MAX_POOLED_BYTES: usize = 1 << 30;

    #[derive(Default)]
    struct Free {
        bufs: Vec<Vec<f64>>,
        bytes: usize,
    }

    thread_local! {
        static FREE: RefCell<Free> = RefCell::new(Free::default());
    }

    /// An empty vector with capacity for at least `len` values.
    pub fn take(len: usize) -> Vec<f64> {
        if len >= MIN_POOLED {
            let reused = FREE.with(|f| {
                let mut f = f.borrow_mut();
                let best = f
                    .bufs
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.capacity() >= len && b.capacity() <= 2 * len)
                    .min_by_key(|(_, b)| b.capacity())
                    .map(|(i, _)| i)?;
                let buf = f.bufs.swap_remove(best);
                f.bytes -= buf.capacity() * 8;
                Some(buf)
            });
            if let Some(mut buf) = reused {
                buf.clear();
                return buf;
            }
        }
        Vec::with_capacity(len)
    }

    pub fn zeroed(len: usize) -> Vec<f64> {
        let mut v = take(len);
        v.resize(len, 0.0);
        v
    }

    pub fn recycle(buf: Vec<f64>) {
        let bytes = buf.capacity() * 8;
        if buf.capacity() < MIN_POOLED {
            return;
        }
        FREE.with(|f| {
            let mut f = f.borrow_mut();
            if f.bytes + bytes <= MAX_POOLED_BYTES {
                f.bytes += bytes;
                f.bufs.push(buf);
            }
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(n: usize, c: usize, l: usize, data: Vec<f64>) -> Self {
        assert_eq!(n * c * l, data.len(), "tensor shape does not match data length");
        Self { n, c, l, data }
    }

    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Self::new(n, c, l, pool::zeroed(n * c * l))
    }

    pub fn filled(n: usize, c: usize, l: usize, v: f64) -> Self {
        Self::new(n, c, l, vec![v; n * c * l])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, 1, vec![v])
    }

    /// A batch of equal-length single-channel rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let l = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == l), "rows must share one length");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), 1, l, data)
    }

    pub fn flat(values: &[f64]) -> Self {
        Self::new(1, 1, values.len(), values.to_vec())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.c, self.l)
    }

    pub fn row(&self, b: usize) -> &[f64] {
        let size = self.c * self.l;
        &self.data[b * size..(b + 1) * size]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|b| self.row(b).to_vec()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Geometry of a convolution along frames of a period-strided view.
///
/// A row of length `frames * period` is read as a `frames x period` array
/// (sample `f * period + col`); the kernel slides along frames only, so each
/// column is convolved independently with shared weights. `period = 1` is an
/// ordinary 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub period: usize,
}

impl ConvGeom {
    /// Stride-1 convolution whose output length equals its input length.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "same-length convolution needs an odd kernel");
        Self {
            kernel,
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
            period: 1,
        }
    }

    pub fn output_frames(&self, frames: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = frames + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// Input frame offset of tap `t` relative to the output frame (stride 1).
    fn tap_offset(&self, t: usize) -> isize {
        (t * self.dilation) as isize - self.padding as isize
    }

    /// Range of output frames `j` whose tap `t` reads an in-bounds input frame.
    fn valid_outputs(&self, t: usize, frames: usize, out_frames: usize) -> (usize, usize, isize) {
        let off = (t * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        // need 0 <= j*s + off <= frames - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = if (frames as isize - 1 - off) < 0 {
            0
        } else {
            ((frames as isize - 1 - off) / s + 1).min(out_frames as isize)
        };
        (lo as usize, (hi_excl.max(lo)) as usize, off)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Slice { src: Var, offset: usize },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    RowL1(Var),
    RowL2(Var),
    RowMean(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, f64)>),
    PadReflect { x: Var, right: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Drop for Gradients {
    fn drop(&mut self) {
        for g in self.grads.drain(..).flatten() {
            pool::recycle(g);
        }
    }
}

impl Drop for Graph {
    fn drop(&mut self) {
        for node in self.nodes.drain(..) {
            pool::recycle(node.value.data);
        }
    }
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// influence the root through differentiable paths.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as an owned vector, zeros when absent.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// `tanh` through one `exp_m1`, markedly cheaper than `f64::tanh`.
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent partial sums (a fixed order, so
/// results stay bit-reproducible).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// One term of [`shifted_mac`]: weight, source row and index shift.
type Tap<'a> = (f64, &'a [f64], isize);

/// `dst[m] += sum_t w_t * src_t[m + s_t]` wherever `m + s_t` indexes
/// `src_t`. All sources share one length.
fn shifted_mac(dst: &mut [f64], taps: &[Tap<'_>]) {
    let Some(first) = taps.first() else { return };
    let (nd, ns) = (dst.len() as isize, first.1.len() as isize);
    let range = |s: isize| ((-s).max(0), (ns - s).min(nd));
    let (mut lo_c, mut hi_c) = (0isize, nd);
    for &(_, _, s) in taps {
        let (lo, hi) = range(s);
        lo_c = lo_c.max(lo);
        hi_c = hi_c.min(hi);
    }
    if lo_c >= hi_c {
        for &(w, src, s) in taps {
            let (lo, hi) = range(s);
            if lo < hi {
                axpy(&mut dst[lo as usize..hi as usize], w, &src[(lo + s) as usize..(hi + s) as usize]);
            }
        }
        return;
    }
    for &(w, src, s) in taps {
        let (lo, hi) = range(s);
        for (a, b) in [(lo, lo_c.min(hi)), (hi_c.max(lo), hi)] {
            if a < b {
                axpy(&mut dst[a as usize..b as usize], w, &src[(a + s) as usize..(b + s) as usize]);
            }
        }
    }
    let len = (hi_c - lo_c) as usize;
    let d = &mut dst[lo_c as usize..hi_c as usize];
    fn view(src: &[f64], start: isize, len: usize) -> &[f64] {
        &src[start as usize..start as usize + len]
    }
    for group in taps.chunks(4) {
        match *group {
            [(w0, r0, s0), (w1, r1, s1), (w2, r2, s2), (w3, r3, s3)] => {
                let (x0, x1, x2, x3) = (view(r0, lo_c + s0, len), view(r1, lo_c + s1, len), view(r2, lo_c + s2, len), view(r3, lo_c + s3, len));
                for m in 0..len {
                    d[m] += w0 * x0[m] + w1 * x1[m] + w2 * x2[m] + w3 * x3[m];
                }
            }
            [(w0, r0, s0), (w1, r1, s1), (w2, r2, s2)] => {
                let (x0, x1, x2) = (view(r0, lo_c + s0, len), view(r1, lo_c + s1, len), view(r2, lo_c + s2, len));
                for m in 0..len {
                    d[m] += w0 * x0[m] + w1 * x1[m] + w2 * x2[m];
                }
            }
            [(w0, r0, s0), (w1, r1, s1)] => {
                let (x0, x1) = (view(r0, lo_c + s0, len), view(r1, lo_c + s1, len));
                for m in 0..len {
                    d[m] += w0 * x0[m] + w1 * x1[m];
                }
            }
            [(w0, r0, s0)] => axpy(d, w0, view(r0, lo_c + s0, len)),
            _ => unreachable!(),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.data.len(), 1, "not a scalar");
        t.data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Same value, no gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let src = self.value(v);
        let mut data = pool::take(src.data.len());
        data.extend_from_slice(&src.data);
        let t = Tensor::new(src.n, src.c, src.l, data);
        self.push(t, Op::Leaf, false)
    }

    /// Reinterpret `n*c*l` consecutive values of `src` starting at `offset`.
    pub fn slice(&mut self, src: Var, offset: usize, n: usize, c: usize, l: usize) -> Var {
        let len = n * c * l;
        let mut data = pool::take(len);
        data.extend_from_slice(&self.value(src).data[offset..offset + len]);
        let rg = self.rg(src);
        self.push(Tensor::new(n, c, l, data), Op::Slice { src, offset }, rg)
    }

    /// `x: (n, cin, frames * period)`, `w: cout*cin*kernel` values, `b: cout` values.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let xt = self.value(x);
        let (n, cin, len) = xt.shape();
        let p = geom.period;
        assert!(p >= 1 && len % p == 0, "row length {len} is not a multiple of period {p}");
        let frames = len / p;
        let out_frames = geom
            .output_frames(frames)
            .unwrap_or_else(|| panic!("input of {frames} frames is shorter than the kernel span"));
        let wt = &self.value(w).data;
        let bt = &self.value(b).data;
        let cout = bt.len();
        assert_eq!(wt.len(), cout * cin * geom.kernel, "conv weight size mismatch");
        let out_len = out_frames * p;
        let mut y = pool::zeroed(n * cout * out_len);
        for bi in 0..n {
            for o in 0..cout {
                let yrow = &mut y[(bi * cout + o) * out_len..(bi * cout + o + 1) * out_len];
                yrow.iter_mut().for_each(|v| *v = bt[o]);
                if geom.stride == 1 {
                    let mut taps: Vec<Tap<'_>> = Vec::with_capacity(cin * geom.kernel);
                    for i in 0..cin {
                        let xrow = &xt.data[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                        for t in 0..geom.kernel {
                            let wv = wt[(o * cin + i) * geom.kernel + t];
                            taps.push((wv, xrow, geom.tap_offset(t) * p as isize));
                        }
                    }
                    shifted_mac(yrow, &taps);
                    continue;
                }
                for i in 0..cin {
                    let xrow = &xt.data[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                    let wrow = &wt[(o * cin + i) * geom.kernel..(o * cin + i + 1) * geom.kernel];
                    for (t, &wv) in wrow.iter().enumerate() {
                        let (lo, hi, off) = geom.valid_outputs(t, frames, out_frames);
                        for j in lo..hi {
                            let src = ((j * geom.stride) as isize + off) as usize * p;
                            axpy(&mut yrow[j * p..(j + 1) * p], wv, &xrow[src..src + p]);
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::new(n, cout, out_len, y), Op::Conv { x, w, b, geom }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let mut data = pool::take(ta.data.len());
        data.extend(ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)));
        Tensor::new(ta.n, ta.c, ta.l, data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let mut data = pool::take(t.data.len());
        data.extend(t.data.iter().map(|v| f(*v)));
        Tensor::new(t.n, t.c, t.l, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.unary(a, |v| k * v);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let t = self.unary(a, |v| v + k);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.unary(a, |v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(t, Op::LeakyRelu(a, slope), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |v| v * v);
        let rg = self.rg(a);
        self.push(t, Op::Square(a), rg)
    }

    fn per_row(&mut self, a: Var, f: impl Fn(&[f64]) -> f64) -> Tensor {
        let t = self.value(a);
        let data = (0..t.n).map(|b| f(t.row(b))).collect();
        Tensor::new(t.n, 1, 1, data)
    }

    /// Per batch element `sum |x|`, shape `(n, 1, 1)`.
    pub fn row_l1(&mut self, a: Var) -> Var {
        let t = self.per_row(a, |r| r.iter().map(|v| v.abs()).sum());
        let rg = self.rg(a);
        self.push(t, Op::RowL1(a), rg)
    }

    /// Per batch element Euclidean norm, shape `(n, 1, 1)`.
    pub fn row_l2(&mut self, a: Var) -> Var {
        let t = self.per_row(a, |r| dot(r, r).sqrt());
        let rg = self.rg(a);
        self.push(t, Op::RowL2(a), rg)
    }

    /// Per batch element mean over channels and time, shape `(n, 1, 1)`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let t = self.per_row(a, |r| r.iter().sum::<f64>() / r.len() as f64);
        let rg = self.rg(a);
        self.push(t, Op::RowMean(a), rg)
    }

    /// Mean of every element, a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data.iter().sum::<f64>() / t.data.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// `sum_k w_k * x_k` over same-shape inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted sum of nothing");
        let shape = self.value(terms[0].0).shape();
        let mut data = pool::zeroed(shape.0 * shape.1 * shape.2);
        for &(v, w) in terms {
            let t = self.value(v);
            assert_eq!(t.shape(), shape, "weighted sum shape mismatch");
            axpy(&mut data, w, &t.data);
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(
            Tensor::new(shape.0, shape.1, shape.2, data),
            Op::WeightedSum(terms.to_vec()),
            rg,
        )
    }

    /// Reflect-pad every row on the right by `right` samples.
    pub fn pad_reflect(&mut self, x: Var, right: usize) -> Var {
        if right == 0 {
            return x;
        }
        let t = self.value(x);
        assert!(right < t.l, "reflection padding must be shorter than the row");
        let new_l = t.l + right;
        let mut data = pool::take(t.n * t.c * new_l);
        for r in 0..t.n * t.c {
            let row = &t.data[r * t.l..(r + 1) * t.l];
            data.extend_from_slice(row);
            data.extend((0..right).map(|k| row[t.l - 2 - k]));
        }
        let rg = self.rg(x);
        let out = Tensor::new(t.n, t.c, new_l, data);
        self.push(out, Op::PadReflect { x, right }, rg)
    }

    /// Gradients of scalar `root` with respect to every node requiring them.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).data.len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.rg(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).data.len();
        Some(grads[v.0].get_or_insert_with(|| pool::zeroed(len)))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Slice { src, offset } => {
                if let Some(gs) = self.accumulate(grads, *src) {
                    axpy(&mut gs[*offset..*offset + g.len()], 1.0, g);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.accumulate(grads, v) {
                        axpy(gv, 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    axpy(ga, *k, g);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    axpy(ga, 1.0, g);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                if let Some(ga) = self.accumulate(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.value(*a).data;
                let slope = *slope;
                if let Some(ga) = self.accumulate(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += if x[k] > 0.0 { g[k] } else { slope * g[k] };
                    }
                }
            }
            Op::Square(a) => {
                let x = &self.value(*a).data;
                if let Some(ga) = self.accumulate(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += 2.0 * x[k] * g[k];
                    }
                }
            }
            Op::RowL1(a) | Op::RowL2(a) | Op::RowMean(a) => {
                let xt = self.value(*a);
                let size = xt.c * xt.l;
                let norms = &node.value.data;
                let op = &node.op;
                if let Some(ga) = self.accumulate(grads, *a) {
                    for b in 0..xt.n {
                        let row = xt.row(b);
                        let grow = &mut ga[b * size..(b + 1) * size];
                        match op {
                            Op::RowL1(_) => {
                                for k in 0..size {
                                    let s = if row[k] > 0.0 {
                                        1.0
                                    } else if row[k] < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    };
                                    grow[k] += g[b] * s;
                                }
                            }
                            Op::RowL2(_) => {
                                if norms[b] > 0.0 {
                                    axpy(grow, g[b] / norms[b], row);
                                }
                            }
                            _ => {
                                let s = g[b] / size as f64;
                                grow.iter_mut().for_each(|v| *v += s);
                            }
                        }
                    }
                }
            }
            Op::Mean(a) => {
                let len = self.value(*a).data.len();
                if let Some(ga) = self.accumulate(grads, *a) {
                    let s = g[0] / len as f64;
                    ga.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if let Some(gv) = self.accumulate(grads, v) {
                        axpy(gv, w, g);
                    }
                }
            }
            Op::PadReflect { x, right } => {
                let t = self.value(*x);
                let new_l = t.l + right;
                if let Some(gx) = self.accumulate(grads, *x) {
                    for r in 0..t.n * t.c {
                        let grow = &g[r * new_l..(r + 1) * new_l];
                        let dst = &mut gx[r * t.l..(r + 1) * t.l];
                        axpy(dst, 1.0, &grow[..t.l]);
                        for k in 0..*right {
                            dst[t.l - 2 - k] += grow[t.l + k];
                        }
                    }
                }
            }
            Op::Conv { x, w, b, geom } => self.conv_backward(*x, *w, *b, *geom, g, grads),
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Var, geom: ConvGeom, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let xt = self.value(x);
        let wt = &self.value(w).data;
        let cout = self.value(b).data.len();
        let (n, cin, len) = xt.shape();
        let p = geom.period;
        let frames = len / p;
        let out_frames = geom.output_frames(frames).expect("validated in forward");
        let out_len = out_frames * p;
        let k = geom.kernel;

        if let Some(gb) = self.accumulate(grads, b) {
            for bi in 0..n {
                for o in 0..cout {
                    gb[o] += g[(bi * cout + o) * out_len..(bi * cout + o + 1) * out_len]
                        .iter()
                        .sum::<f64>();
                }
            }
        }
        if let Some(gw) = self.accumulate(grads, w) {
            for bi in 0..n {
                for o in 0..cout {
                    let grow = &g[(bi * cout + o) * out_len..(bi * cout + o + 1) * out_len];
                    for i in 0..cin {
                        let xrow = &xt.data[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                        for t in 0..k {
                            let (lo, hi, off) = geom.valid_outputs(t, frames, out_frames);
                            if lo >= hi {
                                continue;
                            }
                            let acc = if geom.stride == 1 {
                                let src = ((lo as isize + off) as usize) * p;
                                let cnt = (hi - lo) * p;
                                dot(&grow[lo * p..lo * p + cnt], &xrow[src..src + cnt])
                            } else {
                                (lo..hi)
                                    .map(|j| {
                                        let src = ((j * geom.stride) as isize + off) as usize * p;
                                        dot(&grow[j * p..(j + 1) * p], &xrow[src..src + p])
                                    })
                                    .sum()
                            };
                            gw[(o * cin + i) * k + t] += acc;
                        }
                    }
                }
            }
        }
        if let Some(gx) = self.accumulate(grads, x) {
            for bi in 0..n {
                let gy_row = |o: usize| &g[(bi * cout + o) * out_len..(bi * cout + o + 1) * out_len];
                for i in 0..cin {
                    let xrow = &mut gx[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                    if geom.stride == 1 {
                        let mut taps: Vec<Tap<'_>> = Vec::with_capacity(cout * k);
                        for o in 0..cout {
                            for t in 0..k {
                                taps.push((wt[(o * cin + i) * k + t], gy_row(o), -geom.tap_offset(t) * p as isize));
                            }
                        }
                        shifted_mac(xrow, &taps);
                        continue;
                    }
                    for o in 0..cout {
                        let grow = gy_row(o);
                        for t in 0..k {
                            let wv = wt[(o * cin + i) * k + t];
                            let (lo, hi, off) = geom.valid_outputs(t, frames, out_frames);
                            for j in lo..hi {
                                let src = ((j * geom.stride) as isize + off) as usize * p;
                                axpy(&mut xrow[src..src + p], wv, &grow[j * p..(j + 1) * p]);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` at `x`, the oracle for every check below.
    fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let scale = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / scale < tol, "index {i}: analytic {x} vs numeric {y}");
        }
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn conv_loss(geom: ConvGeom, n: usize, cin: usize, cout: usize, len: usize, xs: &[f64], ws: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(n, cin, len, xs.to_vec()));
        let wb = g.param(Tensor::flat(ws));
        let w = g.slice(wb, 0, cout, cin, geom.kernel);
        let b = g.slice(wb, cout * cin * geom.kernel, 1, 1, cout);
        let y = g.conv(x, w, b, geom);
        let y2 = g.tanh(y);
        let loss = g.mean(y2);
        let grads = g.backward(loss);
        (g.scalar(loss), grads.get_or_zeros(x, xs.len()), grads.get_or_zeros(wb, ws.len()))
    }

    #[test]
    fn conv_gradients_match_central_differences() {
        let geoms = [
            ConvGeom::same(3, 1),
            ConvGeom::same(5, 2),
            ConvGeom { kernel: 5, stride: 3, dilation: 1, padding: 2, period: 1 },
            ConvGeom { kernel: 3, stride: 2, dilation: 1, padding: 1, period: 3 },
            ConvGeom { kernel: 3, stride: 1, dilation: 2, padding: 2, period: 2 },
        ];
        let (n, cin, cout, len) = (2, 2, 3, 24);
        for (gi, geom) in geoms.iter().enumerate() {
            let xs = pseudo(n * cin * len, 10 + gi as u64);
            let ws = pseudo(cout * cin * geom.kernel + cout, 20 + gi as u64);
            let (_, gx, gw) = conv_loss(*geom, n, cin, cout, len, &xs, &ws);
            let nx = numeric_grad(&xs, 1e-5, |v| conv_loss(*geom, n, cin, cout, len, v, &ws).0);
            let nw = numeric_grad(&ws, 1e-5, |v| conv_loss(*geom, n, cin, cout, len, &xs, v).0);
            assert_close(&gx, &nx, 1e-6);
            assert_close(&gw, &nw, 1e-6);
        }
    }

    #[test]
    fn same_conv_preserves_length() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(1, 1, 37));
        let w = g.constant(Tensor::filled(1, 1, 7, 0.1));
        let b = g.constant(Tensor::zeros(1, 1, 1));
        let y = g.conv(x, w, b, ConvGeom::same(7, 4));
        assert_eq!(g.value(y).shape(), (1, 1, 37));
    }

    #[test]
    fn reductions_and_padding_gradients() {
        let xs = pseudo(2 * 7, 3);
        let f = |v: &[f64]| {
            let mut g = Graph::new();
            let x = g.param(Tensor::new(2, 1, 7, v.to_vec()));
            let p = g.pad_reflect(x, 3);
            let sq = g.square(p);
            let l1 = g.row_l1(x);
            let l2 = g.row_l2(p);
            let m = g.row_mean(sq);
            let s = g.weighted_sum(&[(l1, 0.5), (l2, 2.0), (m, -1.0)]);
            let lr = g.leaky_relu(s, 0.1);
            let out = g.mean(lr);
            let grads = g.backward(out);
            (g.scalar(out), grads.get_or_zeros(x, v.len()))
        };
        let (_, analytic) = f(&xs);
        let numeric = numeric_grad(&xs, 1e-6, |v| f(v).0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn tanh_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 5e-3;
            assert!((tanh(x) - x.tanh()).abs() <= 1e-15 * x.tanh().abs(), "{x}");
        }
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
        assert_eq!(tanh(0.0), 0.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::flat(&[1.0, 2.0]));
        let d = g.detach(x);
        let y = g.add(x, d);
        let s = g.mean(y);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap(), &[0.5, 0.5]);
        assert!(grads.get(d).is_none());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::flat(&[1.0, 2.0]));
        let s = g.mean(x);
        assert!(!g.requires_grad(s));
        assert!(g.backward(s).get(x).is_none());
    }
}
