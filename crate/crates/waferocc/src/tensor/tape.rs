//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] owns copies of every value that participates in one training
//! step. Leaves enter via [`Tape::input`] (no gradient) or [`Tape::param`]
//! (gradient tracked); ops append nodes in topological order. `backward`
//! consumes the tape, so a fresh tape per step is enforced by the type
//! system rather than by convention.

use super::kernels as k;
use super::{Tensor, TensorError};

/// Handle to a value on one specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

struct Slot {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    needs_grad: bool,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
    fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }
}

enum Node {
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
        out: Var,
    },
    Relu {
        x: Var,
        out: Var,
    },
    Sigmoid {
        x: Var,
        out: Var,
    },
    Exp {
        x: Var,
        out: Var,
    },
    Square {
        x: Var,
        out: Var,
    },
    Add {
        a: Var,
        b: Var,
        out: Var,
    },
    Sub {
        a: Var,
        b: Var,
        out: Var,
    },
    Mul {
        a: Var,
        b: Var,
        out: Var,
    },
    ScaleShift {
        x: Var,
        scale: f32,
        out: Var,
    },
    SoftmaxGroups {
        x: Var,
        group: usize,
        out: Var,
    },
    Sum {
        x: Var,
        out: Var,
    },
    Mean {
        x: Var,
        out: Var,
    },
    L1Mean {
        x: Var,
        target: Var,
        out: Var,
    },
    BceMean {
        p: Var,
        labels: Var,
        out: Var,
    },
    RowSqDist {
        x: Var,
        center: Var,
        out: Var,
    },
}

#[derive(Default)]
pub struct Tape {
    slots: Vec<Slot>,
    nodes: Vec<Node>,
}

/// Per-Var gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    bufs: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.bufs.get(v.idx()).and_then(|b| b.as_deref())
    }

    /// Moves the gradient for `v` into `t.grad`.
    pub fn write_to(&mut self, v: Var, t: &mut Tensor) -> Result<(), TensorError> {
        let buf = self
            .bufs
            .get_mut(v.idx())
            .and_then(Option::take)
            .ok_or_else(|| TensorError::MissingGrad {
                name: format!("var {}", v.0),
            })?;
        debug_assert_eq!(buf.len(), t.data.len());
        t.grad = Some(buf);
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f32>, needs_grad: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.slots.push(Slot {
            rows,
            cols,
            data,
            needs_grad,
        });
        Var((self.slots.len() - 1) as u32)
    }

    /// Leaf with no gradient tracking (data, targets, frozen parameters).
    pub fn input(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.rows_cols();
        self.push(r, c, t.data.clone(), false)
    }

    pub fn input_slice(&mut self, rows: usize, cols: usize, data: &[f32]) -> Var {
        assert_eq!(data.len(), rows * cols);
        self.push(rows, cols, data.to_vec(), false)
    }

    /// Leaf whose gradient is tracked when `t.requires_grad` is set.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.rows_cols();
        self.push(r, c, t.data.clone(), t.requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.slots[v.idx()].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = &self.slots[v.idx()];
        (s.rows, s.cols)
    }

    fn guard_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (&self.slots[a.idx()], &self.slots[b.idx()]);
        if sa.rows != sb.rows || sa.cols != sb.cols {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.shape(),
                right: sb.shape(),
            });
        }
        Ok(())
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.slots[v.idx()].needs_grad)
    }

    /// out = x.W + b; rows of x are samples.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (m, kx) = self.shape(x);
        let (kw, n) = self.shape(w);
        if kx != kw {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                left: vec![m, kx],
                right: vec![kw, n],
            });
        }
        if let Some(bv) = b {
            let (br, bc) = self.shape(bv);
            if br * bc != n {
                return Err(TensorError::ShapeMismatch {
                    op: "affine bias",
                    left: vec![kw, n],
                    right: vec![br, bc],
                });
            }
        }
        let mut out = vec![0.0f32; m * n];
        k::matmul(&mut out, self.value(x), self.value(w), m, kx, n);
        if let Some(bv) = b {
            k::add_bias_rows(&mut out, &self.slots[bv.idx()].data, m, n);
        }
        let mut track = vec![x, w];
        if let Some(bv) = b {
            track.push(bv);
        }
        let ng = self.any_grad(&track);
        let ov = self.push(m, n, out, ng);
        if ng {
            self.nodes.push(Node::Affine { x, w, b, out: ov });
        }
        Ok(ov)
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f32) -> f32 + Sync,
        node: impl Fn(Var, Var) -> Node,
    ) -> Var {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0f32; r * c];
        k::map1(&mut out, self.value(x), f);
        let ng = self.slots[x.idx()].needs_grad;
        let ov = self.push(r, c, out, ng);
        if ng {
            self.nodes.push(node(x, ov));
        }
        ov
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, out| Node::Relu { x, out })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| 1.0 / (1.0 + (-v).exp()),
            |x, out| Node::Sigmoid { x, out },
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |x, out| Node::Exp { x, out })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, out| Node::Square { x, out })
    }

    pub fn scale_shift(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0f32; r * c];
        k::map1(&mut out, self.value(x), |v| v * scale + shift);
        let ng = self.slots[x.idx()].needs_grad;
        let ov = self.push(r, c, out, ng);
        if ng {
            self.nodes.push(Node::ScaleShift { x, scale, out: ov });
        }
        ov
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32 + Sync,
        node: impl Fn(Var, Var, Var) -> Node,
    ) -> Result<Var, TensorError> {
        self.guard_same_shape(op, a, b)?;
        let (r, c) = self.shape(a);
        let mut out = vec![0.0f32; r * c];
        k::map2(&mut out, self.value(a), self.value(b), f);
        let ng = self.any_grad(&[a, b]);
        let ov = self.push(r, c, out, ng);
        if ng {
            self.nodes.push(node(a, b, ov));
        }
        Ok(ov)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, |a, b, out| Node::Add { a, b, out })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, out| Node::Sub { a, b, out })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, out| Node::Mul { a, b, out })
    }

    /// Softmax over each consecutive `group` entries of every row.
    pub fn softmax_groups(&mut self, x: Var, group: usize) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        if group == 0 || c % group != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_groups",
                left: vec![r, c],
                right: vec![group],
            });
        }
        let mut out = vec![0.0f32; r * c];
        k::softmax_groups(&mut out, self.value(x), group);
        let ng = self.slots[x.idx()].needs_grad;
        let ov = self.push(r, c, out, ng);
        if ng {
            self.nodes.push(Node::SoftmaxGroups { x, group, out: ov });
        }
        Ok(ov)
    }

    /// Softmax across each full row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (_, c) = self.shape(x);
        self.softmax_groups(x, c)
    }

    fn reduction(&mut self, x: Var, value: f64, node: impl Fn(Var, Var) -> Node) -> Var {
        let ng = self.slots[x.idx()].needs_grad;
        let ov = self.push(1, 1, vec![value as f32], ng);
        if ng {
            self.nodes.push(node(x, ov));
        }
        ov
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = k::sum_f64(self.value(x));
        self.reduction(x, v, |x, out| Node::Sum { x, out })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = k::sum_f64(self.value(x)) / self.slots[x.idx()].len() as f64;
        self.reduction(x, v, |x, out| Node::Mean { x, out })
    }

    /// mean |x - target| over all elements; target is any tape value
    /// (typically an input leaf).
    pub fn l1_mean(&mut self, x: Var, target: Var) -> Result<Var, TensorError> {
        self.guard_same_shape("l1_to_target", x, target)?;
        let v = k::l1_mean_f64(self.value(x), self.value(target));
        Ok(self.reduction(x, v, move |x, out| Node::L1Mean { x, target, out }))
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`
    /// in {0,1}; log arguments clamped at `BCE_EPS`.
    pub fn bce_mean(&mut self, p: Var, labels: Var) -> Result<Var, TensorError> {
        self.guard_same_shape("bce_mean", p, labels)?;
        if self.value(labels).iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(TensorError::NonFinite {
                context: "bce_mean: labels outside {0,1}".into(),
            });
        }
        let v = k::bce_mean_f64(self.value(p), self.value(labels));
        Ok(self.reduction(p, v, move |p, out| Node::BceMean { p, labels, out }))
    }

    /// Per-row squared distance to `center` (a 1 x N tape value):
    /// out is rows x 1.
    pub fn row_sq_dist(&mut self, x: Var, center: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        let cs = &self.slots[center.idx()];
        if cs.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "row_sq_dist",
                left: vec![r, c],
                right: cs.shape(),
            });
        }
        let mut out = vec![0.0f32; r];
        k::sq_dist_rows(&mut out, self.value(x), &self.slots[center.idx()].data, r, c);
        let ng = self.slots[x.idx()].needs_grad;
        let ov = self.push(r, 1, out, ng);
        if ng {
            self.nodes.push(Node::RowSqDist { x, center, out: ov });
        }
        Ok(ov)
    }

    /// Runs the reverse sweep from `loss` (must be a 1-element value),
    /// consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, TensorError> {
        let ls = &self.slots[loss.idx()];
        if ls.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: ls.shape() });
        }
        let mut bufs: Vec<Option<Vec<f32>>> = (0..self.slots.len()).map(|_| None).collect();
        bufs[loss.idx()] = Some(vec![1.0]);

        for node in self.nodes.iter().rev() {
            self.visit(node, &mut bufs);
        }
        Ok(Gradients { bufs })
    }

    fn needs(&self, v: Var) -> bool {
        self.slots[v.idx()].needs_grad
    }

    // Takes the output gradient (outputs are SSA: written by exactly one
    // node, and no earlier node reads it) and hands back an allocator for
    // input gradients.
    fn visit(&self, node: &Node, bufs: &mut [Option<Vec<f32>>]) {
        macro_rules! go {
            ($out:expr) => {
                match bufs[$out.idx()].take() {
                    Some(g) => g,
                    None => return, // dead branch: nothing downstream used it
                }
            };
        }
        macro_rules! gbuf {
            ($v:expr) => {
                bufs[$v.idx()].get_or_insert_with(|| vec![0.0f32; self.slots[$v.idx()].len()])
            };
        }

        match *node {
            Node::Affine { x, w, b, out } => {
                let go = go!(out);
                let (m, n) = self.shape(out);
                let kdim = self.shape(w).0;
                if self.needs(x) {
                    k::matmul_abt(gbuf!(x), &go, self.value(w), m, n, kdim);
                }
                if self.needs(w) {
                    k::matmul_atb(gbuf!(w), self.value(x), &go, m, kdim, n);
                }
                if let Some(bv) = b {
                    if self.needs(bv) {
                        k::col_sums(gbuf!(bv), &go, m, n);
                    }
                }
            }
            Node::Relu { x, out } => {
                let go = go!(out);
                if self.needs(x) {
                    k::acc2(gbuf!(x), &go, self.value(out), |g, y| {
                        if y > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    });
                }
            }
            Node::Sigmoid { x, out } => {
                let go = go!(out);
                if self.needs(x) {
                    k::acc2(gbuf!(x), &go, self.value(out), |g, y| g * y * (1.0 - y));
                }
            }
            Node::Exp { x, out } => {
                let go = go!(out);
                if self.needs(x) {
                    k::acc2(gbuf!(x), &go, self.value(out), |g, y| g * y);
                }
            }
            Node::Square { x, out } => {
                let go = go!(out);
                if self.needs(x) {
                    k::acc2(gbuf!(x), &go, self.value(x), |g, xv| g * 2.0 * xv);
                }
            }
            Node::Add { a, b, out } => {
                let go = go!(out);
                if self.needs(a) {
                    k::acc1(gbuf!(a), &go, |g| g);
                }
                if self.needs(b) {
                    k::acc1(gbuf!(b), &go, |g| g);
                }
            }
            Node::Sub { a, b, out } => {
                let go = go!(out);
                if self.needs(a) {
                    k::acc1(gbuf!(a), &go, |g| g);
                }
                if self.needs(b) {
                    k::acc1(gbuf!(b), &go, |g| -g);
                }
            }
            Node::Mul { a, b, out } => {
                let go = go!(out);
                if self.needs(a) {
                    k::acc2(gbuf!(a), &go, self.value(b), |g, bv| g * bv);
                }
                if self.needs(b) {
                    k::acc2(gbuf!(b), &go, self.value(a), |g, av| g * av);
                }
            }
            Node::ScaleShift { x, scale, out } => {
                let go = go!(out);
                if self.needs(x) {
                    k::acc1(gbuf!(x), &go, |g| g * scale);
                }
            }
            Node::SoftmaxGroups { x, group, out } => {
                let go = go!(out);
                if self.needs(x) {
                    k::softmax_groups_backward(gbuf!(x), &go, self.value(out), group);
                }
            }
            Node::Sum { x, out } => {
                let g = go!(out)[0];
                if self.needs(x) {
                    gbuf!(x).iter_mut().for_each(|v| *v += g);
                }
            }
            Node::Mean { x, out } => {
                let g = go!(out)[0] / self.slots[x.idx()].len() as f32;
                if self.needs(x) {
                    gbuf!(x).iter_mut().for_each(|v| *v += g);
                }
            }
            Node::L1Mean { x, target, out } => {
                let g = go!(out)[0] / self.slots[x.idx()].len() as f32;
                if self.needs(x) {
                    k::acc2(gbuf!(x), self.value(x), self.value(target), move |xv, tv| {
                        let d = xv - tv;
                        if d > 0.0 {
                            g
                        } else if d < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                }
            }
            Node::BceMean { p, labels, out } => {
                let g = go!(out)[0] / self.slots[p.idx()].len() as f32;
                if self.needs(p) {
                    k::acc2(gbuf!(p), self.value(p), self.value(labels), move |pv, yv| {
                        g * (-yv / pv.max(k::BCE_EPS) + (1.0 - yv) / (1.0 - pv).max(k::BCE_EPS))
                    });
                }
            }
            Node::RowSqDist { x, center, out } => {
                let go = go!(out);
                if self.needs(x) {
                    let (r, c) = self.shape(x);
                    let gx = gbuf!(x);
                    let xv = self.value(x);
                    let cv = self.value(center);
                    for i in 0..r {
                        let g = go[i];
                        let grow = &mut gx[i * c..(i + 1) * c];
                        let xrow = &xv[i * c..(i + 1) * c];
                        for ((o, &x_), &c_) in grow.iter_mut().zip(xrow.iter()).zip(cv.iter()) {
                            *o += g * 2.0 * (x_ - c_);
                        }
                    }
                }
            }
        }
    }
}
