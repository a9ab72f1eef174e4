//! Reverse-mode differentiation tape over dense `f64` buffers.
//!
//! Values are computed eagerly as ops are recorded; `backward` sweeps the
//! tape once in reverse creation order. The op set is exactly what the loss
//! pipeline needs: elementwise arithmetic, `exp`/`ln`/`abs`/logistic,
//! per-pixel minimum with argmin routing, window means, forward differences,
//! average pooling, channel means, bilinear gathers, the Rodrigues
//! coefficient functions, and stop-gradient.
//!
//! Reductions run in fixed row-major order so results are bit-stable.

/// Buffer dimensions: `h * w` spatial grid with `c` interleaved channels.
/// Scalars are `1x1x1`; small parameter vectors are `1x1xN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn scalar() -> Dims {
        Dims { h: 1, w: 1, c: 1 }
    }

    pub fn vector(n: usize) -> Dims {
        Dims { h: 1, w: 1, c: n }
    }

    pub fn map(h: usize, w: usize) -> Dims {
        Dims { h, w, c: 1 }
    }

    pub fn image(h: usize, w: usize, c: usize) -> Dims {
        Dims { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }
}

pub type NodeId = usize;

/// Cached interpolation taps for one output pixel of a bilinear gather.
#[derive(Debug, Clone, Copy)]
pub struct GatherTap {
    pub x0: u32,
    pub y0: u32,
    pub fu: f64,
    pub fv: f64,
    /// 0 when the horizontal coordinate was clamped (no gradient w.r.t. u).
    pub su: f64,
    /// 0 when the vertical coordinate was clamped.
    pub sv: f64,
}

#[derive(Debug, Clone)]
pub enum Op {
    /// Input buffer. `var` leaves receive gradients, constants do not.
    Leaf { var: bool },
    StopGrad(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Logistic(NodeId),
    ClampMin(NodeId, f64),
    /// `sin(sqrt(u))/sqrt(u)` as a smooth function of `u = theta^2`.
    RotCoeffA(NodeId),
    /// `(1 - cos(sqrt(u)))/u` as a smooth function of `u = theta^2`.
    RotCoeffB(NodeId),
    /// Extract one component as a scalar node.
    Index(NodeId, usize),
    /// Per-element minimum; `take_a[i]` records the winner (ties go to `a`).
    SelectMin2 { a: NodeId, b: NodeId, take_a: Vec<bool> },
    /// Window mean over `(2*radius+1)^2` taps with reflect padding, per channel.
    BoxMean { input: NodeId, radius: usize },
    /// Forward difference along x; last column is zero.
    Dx(NodeId),
    /// Forward difference along y; last row is zero.
    Dy(NodeId),
    /// 2x2 average pooling (floor semantics on odd extents).
    AvgPool2(NodeId),
    /// Mean over channels: `HxWxC -> HxWx1`.
    ChannelMean(NodeId),
    /// Sample `src` at per-pixel coordinates `(u, v)` with clamp-to-edge
    /// bilinear interpolation. Output has the flow's spatial dims and the
    /// source's channel count.
    BilinearGather { src: NodeId, u: NodeId, v: NodeId, taps: Vec<GatherTap> },
    /// Mean over every element, producing a scalar.
    MeanAll(NodeId),
}

struct Node {
    dims: Dims,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for leaf variables after a backward sweep. Variables untouched by
/// the objective (e.g. behind a stop-gradient) report `None`, which callers
/// read as an exactly-zero gradient.
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.adj.get(id).and_then(|g| g.as_deref())
    }

    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<f64> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        }
    }
}

#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    // Reflect-101 (edge not repeated), clamped for degenerate extents.
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i.clamp(0, n - 1) as usize
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, id: NodeId) -> Dims {
        self.nodes[id].dims
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert!(self.nodes[id].dims.is_scalar());
        self.nodes[id].value[0]
    }

    fn push(&mut self, dims: Dims, value: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(dims.len(), value.len());
        self.nodes.push(Node { dims, value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    // -- leaves ------------------------------------------------------------

    pub fn var(&mut self, dims: Dims, value: Vec<f64>) -> NodeId {
        self.push(dims, value, Op::Leaf { var: true }, true)
    }

    pub fn constant(&mut self, dims: Dims, value: Vec<f64>) -> NodeId {
        self.push(dims, value, Op::Leaf { var: false }, false)
    }

    pub fn constant_image(&mut self, image: &crate::imaging::Image) -> NodeId {
        self.constant(Dims::image(image.height, image.width, image.channels), image.data.clone())
    }

    pub fn constant_map(&mut self, map: &crate::imaging::ScalarMap) -> NodeId {
        self.constant(Dims::map(map.height, map.width), map.data.clone())
    }

    pub fn cscalar(&mut self, v: f64) -> NodeId {
        self.constant(Dims::scalar(), vec![v])
    }

    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.clone();
        let dims = self.nodes[a].dims;
        self.push(dims, value, Op::StopGrad(a), false)
    }

    // -- elementwise binary (equal dims or scalar broadcast) ----------------

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (da, db) = (self.nodes[a].dims, self.nodes[b].dims);
        let value: Vec<f64> = if da.len() == db.len() {
            self.nodes[a]
                .value
                .iter()
                .zip(&self.nodes[b].value)
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else if db.is_scalar() {
            let y = self.nodes[b].value[0];
            self.nodes[a].value.iter().map(|&x| f(x, y)).collect()
        } else if da.is_scalar() {
            let x = self.nodes[a].value[0];
            self.nodes[b].value.iter().map(|&y| f(x, y)).collect()
        } else {
            panic!("shape mismatch: {da:?} vs {db:?}");
        };
        let dims = if da.len() >= db.len() { da } else { db };
        let ng = self.needs(a) || self.needs(b);
        self.push(dims, value, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    // -- elementwise unary ---------------------------------------------------

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let value: Vec<f64> = self.nodes[a].value.iter().map(|&x| f(x)).collect();
        let dims = self.nodes[a].dims;
        let ng = self.needs(a);
        self.push(dims, value, op, ng)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn logistic(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Logistic(a))
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.unary(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn rot_coeff_a(&mut self, a: NodeId) -> NodeId {
        self.unary(a, crate::geometry::rot_coeff_a, Op::RotCoeffA(a))
    }

    pub fn rot_coeff_b(&mut self, a: NodeId) -> NodeId {
        self.unary(a, crate::geometry::rot_coeff_b, Op::RotCoeffB(a))
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.nodes[a].value[i];
        let ng = self.needs(a);
        self.push(Dims::scalar(), vec![v], Op::Index(a, i), ng)
    }

    // -- structured ops ------------------------------------------------------

    /// Per-element minimum of two equal-shaped buffers; ties select `a`.
    pub fn min2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let da = self.nodes[a].dims;
        assert_eq!(da.len(), self.nodes[b].dims.len(), "min2 shape mismatch");
        let mut take_a = Vec::with_capacity(da.len());
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| {
                let ta = x <= y;
                take_a.push(ta);
                if ta {
                    x
                } else {
                    y
                }
            })
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(da, value, Op::SelectMin2 { a, b, take_a }, ng)
    }

    /// Separable window mean with reflect padding, per channel.
    pub fn box_mean(&mut self, a: NodeId, radius: usize) -> NodeId {
        let dims = self.nodes[a].dims;
        let value = box_mean_forward(&self.nodes[a].value, dims, radius);
        let ng = self.needs(a);
        self.push(dims, value, Op::BoxMean { input: a, radius }, ng)
    }

    pub fn dx(&mut self, a: NodeId) -> NodeId {
        let dims = self.nodes[a].dims;
        let (h, w, c) = (dims.h, dims.w, dims.c);
        let src = &self.nodes[a].value;
        let mut value = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                for ch in 0..c {
                    let i = (y * w + x) * c + ch;
                    value[i] = src[i + c] - src[i];
                }
            }
        }
        let ng = self.needs(a);
        self.push(dims, value, Op::Dx(a), ng)
    }

    pub fn dy(&mut self, a: NodeId) -> NodeId {
        let dims = self.nodes[a].dims;
        let (h, w, c) = (dims.h, dims.w, dims.c);
        let src = &self.nodes[a].value;
        let mut value = vec![0.0; src.len()];
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                for ch in 0..c {
                    let i = (y * w + x) * c + ch;
                    value[i] = src[i + w * c] - src[i];
                }
            }
        }
        let ng = self.needs(a);
        self.push(dims, value, Op::Dy(a), ng)
    }

    pub fn avg_pool2(&mut self, a: NodeId) -> NodeId {
        let d = self.nodes[a].dims;
        let (h2, w2) = (d.h / 2, d.w / 2);
        assert!(h2 > 0 && w2 > 0, "avg_pool2 needs at least 2x2 input");
        let src = &self.nodes[a].value;
        let mut value = vec![0.0; h2 * w2 * d.c];
        for y in 0..h2 {
            for x in 0..w2 {
                for ch in 0..d.c {
                    let base = (2 * y * d.w + 2 * x) * d.c + ch;
                    let sum = src[base] + src[base + d.c] + src[base + d.w * d.c] + src[base + d.w * d.c + d.c];
                    value[(y * w2 + x) * d.c + ch] = sum / 4.0;
                }
            }
        }
        let ng = self.needs(a);
        self.push(Dims::image(h2, w2, d.c), value, Op::AvgPool2(a), ng)
    }

    pub fn channel_mean(&mut self, a: NodeId) -> NodeId {
        let d = self.nodes[a].dims;
        let src = &self.nodes[a].value;
        let mut value = vec![0.0; d.h * d.w];
        for (i, out) in value.iter_mut().enumerate() {
            let base = i * d.c;
            let mut sum = 0.0;
            for ch in 0..d.c {
                sum += src[base + ch];
            }
            *out = sum / d.c as f64;
        }
        let ng = self.needs(a);
        self.push(Dims::map(d.h, d.w), value, Op::ChannelMean(a), ng)
    }

    pub fn bilinear_gather(&mut self, src: NodeId, u: NodeId, v: NodeId) -> NodeId {
        let ds = self.nodes[src].dims;
        let du = self.nodes[u].dims;
        assert_eq!(du.c, 1, "flow coords must be single-channel");
        assert_eq!(self.nodes[v].dims, du, "u/v dims mismatch");
        let n = du.h * du.w;
        let mut taps = Vec::with_capacity(n);
        let mut value = vec![0.0; n * ds.c];
        {
            let sv = &self.nodes[src].value;
            let uu = &self.nodes[u].value;
            let vv = &self.nodes[v].value;
            for i in 0..n {
                let (x0, _x1, fu, su) = crate::geometry::bilinear_axis(ds.w, uu[i]);
                let (y0, _y1, fv, svl) = crate::geometry::bilinear_axis(ds.h, vv[i]);
                taps.push(GatherTap { x0: x0 as u32, y0: y0 as u32, fu, fv, su, sv: svl });
                for ch in 0..ds.c {
                    let i00 = (y0 * ds.w + x0) * ds.c + ch;
                    let i01 = i00 + ds.c;
                    let i10 = i00 + ds.w * ds.c;
                    let i11 = i10 + ds.c;
                    let top = sv[i00] * (1.0 - fu) + sv[i01] * fu;
                    let bot = sv[i10] * (1.0 - fu) + sv[i11] * fu;
                    value[i * ds.c + ch] = top * (1.0 - fv) + bot * fv;
                }
            }
        }
        let ng = self.needs(src) || self.needs(u) || self.needs(v);
        self.push(Dims::image(du.h, du.w, ds.c), value, Op::BilinearGather { src, u, v, taps }, ng)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let sum: f64 = self.nodes[a].value.iter().sum();
        let n = self.nodes[a].value.len() as f64;
        let ng = self.needs(a);
        self.push(Dims::scalar(), vec![sum / n], Op::MeanAll(a), ng)
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar root. Returns adjoints for leaf variables.
    pub fn backward(&mut self, root: NodeId) -> Gradients {
        assert!(self.nodes[root].dims.is_scalar(), "backward root must be scalar");
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[id].op, Op::Leaf { .. });
            if is_leaf {
                continue;
            }
            let Some(grad) = adj[id].take() else { continue };
            self.propagate(id, &grad, &mut adj);
        }
        Gradients { adj }
    }

    fn accum(&self, adj: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = adj[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()]);
        f(slot);
    }

    /// Adjoint accumulation for a binary op, handling scalar broadcast: the
    /// scalar side receives the fixed-order sum of its per-element terms.
    fn accum_binary(
        &self,
        adj: &mut [Option<Vec<f64>>],
        target: NodeId,
        grad: &[f64],
        term: impl Fn(usize) -> f64,
    ) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let tlen = self.nodes[target].value.len();
        self.accum(adj, target, |slot| {
            if tlen == grad.len() {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += term(i);
                }
            } else {
                debug_assert_eq!(tlen, 1);
                let mut sum = 0.0;
                for i in 0..grad.len() {
                    sum += term(i);
                }
                slot[0] += sum;
            }
        });
    }

    fn propagate(&self, id: NodeId, grad: &[f64], adj: &mut [Option<Vec<f64>>]) {
        // Fetch a value with broadcast-aware indexing.
        let val = |node: NodeId, i: usize| -> f64 {
            let v = &self.nodes[node].value;
            if v.len() == 1 {
                v[0]
            } else {
                v[i]
            }
        };
        match &self.nodes[id].op {
            Op::Leaf { .. } | Op::StopGrad(_) => {}
            Op::Add(a, b) => {
                self.accum_binary(adj, *a, grad, |i| grad[i]);
                self.accum_binary(adj, *b, grad, |i| grad[i]);
            }
            Op::Sub(a, b) => {
                self.accum_binary(adj, *a, grad, |i| grad[i]);
                self.accum_binary(adj, *b, grad, |i| -grad[i]);
            }
            Op::Mul(a, b) => {
                self.accum_binary(adj, *a, grad, |i| grad[i] * val(*b, i));
                self.accum_binary(adj, *b, grad, |i| grad[i] * val(*a, i));
            }
            Op::Div(a, b) => {
                self.accum_binary(adj, *a, grad, |i| grad[i] / val(*b, i));
                self.accum_binary(adj, *b, grad, |i| {
                    let bv = val(*b, i);
                    -grad[i] * val(*a, i) / (bv * bv)
                });
            }
            Op::Neg(a) => self.accum_binary(adj, *a, grad, |i| -grad[i]),
            Op::Abs(a) => {
                self.accum_binary(adj, *a, grad, |i| {
                    let x = val(*a, i);
                    // Subgradient 0 at the kink.
                    if x > 0.0 {
                        grad[i]
                    } else if x < 0.0 {
                        -grad[i]
                    } else {
                        0.0
                    }
                });
            }
            Op::Exp(a) => {
                let out = &self.nodes[id].value;
                self.accum_binary(adj, *a, grad, |i| grad[i] * out[i]);
            }
            Op::Ln(a) => self.accum_binary(adj, *a, grad, |i| grad[i] / val(*a, i)),
            Op::Logistic(a) => {
                let out = &self.nodes[id].value;
                self.accum_binary(adj, *a, grad, |i| grad[i] * out[i] * (1.0 - out[i]));
            }
            Op::ClampMin(a, floor) => {
                let floor = *floor;
                self.accum_binary(adj, *a, grad, |i| if val(*a, i) > floor { grad[i] } else { 0.0 });
            }
            Op::RotCoeffA(a) => {
                self.accum_binary(adj, *a, grad, |i| grad[i] * crate::geometry::rot_coeff_a_deriv(val(*a, i)));
            }
            Op::RotCoeffB(a) => {
                self.accum_binary(adj, *a, grad, |i| grad[i] * crate::geometry::rot_coeff_b_deriv(val(*a, i)));
            }
            Op::Index(a, i) => {
                let i = *i;
                self.accum(adj, *a, |slot| slot[i] += grad[0]);
            }
            Op::SelectMin2 { a, b, take_a } => {
                self.accum(adj, *a, |slot| {
                    for (i, s) in slot.iter_mut().enumerate() {
                        if take_a[i] {
                            *s += grad[i];
                        }
                    }
                });
                self.accum(adj, *b, |slot| {
                    for (i, s) in slot.iter_mut().enumerate() {
                        if !take_a[i] {
                            *s += grad[i];
                        }
                    }
                });
            }
            Op::BoxMean { input, radius } => {
                let dims = self.nodes[*input].dims;
                let back = box_mean_transpose(grad, dims, *radius);
                self.accum(adj, *input, |slot| {
                    for (s, g) in slot.iter_mut().zip(&back) {
                        *s += g;
                    }
                });
            }
            Op::Dx(a) => {
                let d = self.nodes[*a].dims;
                self.accum(adj, *a, |slot| {
                    for y in 0..d.h {
                        for x in 0..d.w.saturating_sub(1) {
                            for ch in 0..d.c {
                                let i = (y * d.w + x) * d.c + ch;
                                slot[i + d.c] += grad[i];
                                slot[i] -= grad[i];
                            }
                        }
                    }
                });
            }
            Op::Dy(a) => {
                let d = self.nodes[*a].dims;
                self.accum(adj, *a, |slot| {
                    for y in 0..d.h.saturating_sub(1) {
                        for x in 0..d.w {
                            for ch in 0..d.c {
                                let i = (y * d.w + x) * d.c + ch;
                                slot[i + d.w * d.c] += grad[i];
                                slot[i] -= grad[i];
                            }
                        }
                    }
                });
            }
            Op::AvgPool2(a) => {
                let d = self.nodes[*a].dims;
                let (h2, w2) = (d.h / 2, d.w / 2);
                self.accum(adj, *a, |slot| {
                    for y in 0..h2 {
                        for x in 0..w2 {
                            for ch in 0..d.c {
                                let g = grad[(y * w2 + x) * d.c + ch] / 4.0;
                                let base = (2 * y * d.w + 2 * x) * d.c + ch;
                                slot[base] += g;
                                slot[base + d.c] += g;
                                slot[base + d.w * d.c] += g;
                                slot[base + d.w * d.c + d.c] += g;
                            }
                        }
                    }
                });
            }
            Op::ChannelMean(a) => {
                let d = self.nodes[*a].dims;
                self.accum(adj, *a, |slot| {
                    for i in 0..d.h * d.w {
                        let g = grad[i] / d.c as f64;
                        for ch in 0..d.c {
                            slot[i * d.c + ch] += g;
                        }
                    }
                });
            }
            Op::BilinearGather { src, u, v, taps } => {
                let ds = self.nodes[*src].dims;
                let srcv = &self.nodes[*src].value;
                if self.nodes[*src].needs_grad {
                    self.accum(adj, *src, |slot| {
                        for (i, tap) in taps.iter().enumerate() {
                            let (x0, y0) = (tap.x0 as usize, tap.y0 as usize);
                            for ch in 0..ds.c {
                                let g = grad[i * ds.c + ch];
                                let i00 = (y0 * ds.w + x0) * ds.c + ch;
                                slot[i00] += g * (1.0 - tap.fu) * (1.0 - tap.fv);
                                slot[i00 + ds.c] += g * tap.fu * (1.0 - tap.fv);
                                slot[i00 + ds.w * ds.c] += g * (1.0 - tap.fu) * tap.fv;
                                slot[i00 + ds.w * ds.c + ds.c] += g * tap.fu * tap.fv;
                            }
                        }
                    });
                }
                let coord_grad = |horizontal: bool, slot: &mut [f64]| {
                    for (i, tap) in taps.iter().enumerate() {
                        let (x0, y0) = (tap.x0 as usize, tap.y0 as usize);
                        let mut g = 0.0;
                        for ch in 0..ds.c {
                            let go = grad[i * ds.c + ch];
                            let i00 = (y0 * ds.w + x0) * ds.c + ch;
                            let v00 = srcv[i00];
                            let v01 = srcv[i00 + ds.c];
                            let v10 = srcv[i00 + ds.w * ds.c];
                            let v11 = srcv[i00 + ds.w * ds.c + ds.c];
                            if horizontal {
                                // d(out)/d(fu) = (1-fv)(v01-v00) + fv(v11-v10)
                                g += go * ((1.0 - tap.fv) * (v01 - v00) + tap.fv * (v11 - v10)) * tap.su;
                            } else {
                                g += go * ((1.0 - tap.fu) * (v10 - v00) + tap.fu * (v11 - v01)) * tap.sv;
                            }
                        }
                        slot[i] += g;
                    }
                };
                if self.nodes[*u].needs_grad {
                    self.accum(adj, *u, |slot| coord_grad(true, slot));
                }
                if self.nodes[*v].needs_grad {
                    self.accum(adj, *v, |slot| coord_grad(false, slot));
                }
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let g = grad[0] / n;
                self.accum(adj, *a, |slot| {
                    for s in slot.iter_mut() {
                        *s += g;
                    }
                });
            }
        }
    }

    /// Hash of every discrete decision taken while recording the tape:
    /// constant leaf contents, abs signs, min selections, clamp states, and
    /// bilinear cell indices. Two evaluations with equal signatures lie on
    /// the same smooth piece of the objective, which makes finite differences
    /// trustworthy between them.
    pub fn discrete_signature(&self) -> u64 {
        let mut h = Fnv::new();
        for node in &self.nodes {
            match &node.op {
                Op::Leaf { var } => {
                    h.byte(if *var { 1 } else { 2 });
                    if !*var {
                        for &v in &node.value {
                            h.u64(v.to_bits());
                        }
                    }
                }
                // Stop-gradient nodes hash like constants so a build with
                // frozen stop-gradient buffers produces the same signature.
                Op::StopGrad(_) => {
                    h.byte(2);
                    for &v in &node.value {
                        h.u64(v.to_bits());
                    }
                }
                Op::Abs(a) => {
                    h.byte(3);
                    for &v in &self.nodes[*a].value {
                        h.byte(if v > 0.0 {
                            1
                        } else if v < 0.0 {
                            2
                        } else {
                            0
                        });
                    }
                }
                Op::SelectMin2 { take_a, .. } => {
                    h.byte(4);
                    for &t in take_a {
                        h.byte(t as u8);
                    }
                }
                Op::ClampMin(a, floor) => {
                    h.byte(5);
                    for &v in &self.nodes[*a].value {
                        h.byte((v > *floor) as u8);
                    }
                }
                Op::BilinearGather { taps, .. } => {
                    h.byte(6);
                    for tap in taps {
                        h.u64((tap.x0 as u64) << 32 | tap.y0 as u64);
                        h.byte(tap.su as u8);
                        h.byte(tap.sv as u8);
                    }
                }
                _ => h.byte(0),
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

fn box_mean_forward(src: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    let (h, w, c) = (dims.h, dims.w, dims.c);
    let k = (2 * radius + 1) as f64;
    // Horizontal pass.
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0.0;
                for dx in -(radius as isize)..=(radius as isize) {
                    let sx = reflect_index(x as isize + dx, w);
                    sum += src[(y * w + sx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = sum / k;
            }
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0.0;
                for dy in -(radius as isize)..=(radius as isize) {
                    let sy = reflect_index(y as isize + dy, h);
                    sum += tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = sum / k;
            }
        }
    }
    out
}

fn box_mean_transpose(grad: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    let (h, w, c) = (dims.h, dims.w, dims.c);
    let k = (2 * radius + 1) as f64;
    // Transpose of the vertical gather: scatter along y.
    let mut tmp = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let g = grad[(y * w + x) * c + ch] / k;
                for dy in -(radius as isize)..=(radius as isize) {
                    let sy = reflect_index(y as isize + dy, h);
                    tmp[(sy * w + x) * c + ch] += g;
                }
            }
        }
    }
    // Transpose of the horizontal gather: scatter along x.
    let mut out = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let g = tmp[(y * w + x) * c + ch] / k;
                for dx in -(radius as isize)..=(radius as isize) {
                    let sx = reflect_index(x as isize + dx, w);
                    out[(y * w + sx) * c + ch] += g;
                }
            }
        }
    }
    out
}
