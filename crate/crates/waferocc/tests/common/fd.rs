//! Central finite-difference gradient checking against a pure-f64
//! reference forward pass.
//!
//! The reference reimplements every forward from scratch on f64 matrices.
//! Each evaluation also returns a kink mask (the signs feeding every relu,
//! hinge, and absolute value); a coordinate whose mask differs between the
//! two FD evaluations sits on a non-smooth point where the central
//! difference is meaningless, so it is skipped and counted.

/// Row-major f64 matrix.
#[derive(Clone, Debug)]
pub struct M {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl M {
    pub fn new(r: usize, c: usize, d: Vec<f64>) -> M {
        assert_eq!(d.len(), r * c);
        M { r, c, d }
    }

    pub fn zeros(r: usize, c: usize) -> M {
        M { r, c, d: vec![0.0; r * c] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }
}

/// x (n,in) times w (in,out) plus optional bias (out).
pub fn linear(x: &M, w: &M, b: Option<&[f64]>) -> M {
    assert_eq!(x.c, w.r);
    let mut out = M::zeros(x.r, w.c);
    for i in 0..x.r {
        for k in 0..x.c {
            let xv = x.at(i, k);
            for j in 0..w.c {
                out.d[i * w.c + j] += xv * w.at(k, j);
            }
        }
    }
    if let Some(b) = b {
        assert_eq!(b.len(), w.c);
        for i in 0..x.r {
            let row = &mut out.d[i * w.c..(i + 1) * w.c];
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    out
}

pub fn relu(x: &M, mask: &mut Vec<bool>) -> M {
    let mut out = x.clone();
    for v in &mut out.d {
        mask.push(*v > 0.0);
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn sigmoid(x: &M) -> M {
    let mut out = x.clone();
    for v in &mut out.d {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

pub fn softmax_groups(x: &M, group: usize) -> M {
    assert_eq!(x.c % group, 0);
    let mut out = x.clone();
    for row in out.d.chunks_mut(x.c) {
        for g in row.chunks_mut(group) {
            let m = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in g.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in g.iter_mut() {
                *v /= z;
            }
        }
    }
    out
}

pub fn l1_mean(a: &M, b: &M, mask: &mut Vec<bool>) -> f64 {
    assert_eq!((a.r, a.c), (b.r, b.c));
    let mut s = 0.0;
    for (&x, &y) in a.d.iter().zip(&b.d) {
        mask.push(x - y >= 0.0);
        s += (x - y).abs();
    }
    s / a.d.len() as f64
}

/// Mirrors the implementation's clamp at 1e-6.
pub fn bce_mean(p: &M, y: &M) -> f64 {
    assert_eq!((p.r, p.c), (y.r, y.c));
    let eps = 1e-6;
    let mut s = 0.0;
    for (&pv, &yv) in p.d.iter().zip(&y.d) {
        s += yv * pv.max(eps).ln() + (1.0 - yv) * (1.0 - pv).max(eps).ln();
    }
    -s / p.d.len() as f64
}

/// Soft-boundary loss: R^2 + 1/(nu n) sum_i max(0, ||mu_i - c||^2 - R^2).
pub fn hinge_loss(mu: &M, c: &[f64], r: f64, nu: f64, mask: &mut Vec<bool>) -> f64 {
    assert_eq!(mu.c, c.len());
    let r2 = r * r;
    let mut s = 0.0;
    for row in mu.d.chunks(mu.c) {
        let d2: f64 = row.iter().zip(c).map(|(&z, &cv)| (z - cv) * (z - cv)).sum();
        mask.push(d2 - r2 > 0.0);
        s += (d2 - r2).max(0.0);
    }
    r2 + s / (nu * mu.r as f64)
}

/// z = mu + exp(logvar / 2) * noise, elementwise.
pub fn reparameterize(mu: &M, logvar: &M, noise: &M) -> M {
    assert_eq!((mu.r, mu.c), (logvar.r, logvar.c));
    assert_eq!((mu.r, mu.c), (noise.r, noise.c));
    let mut out = mu.clone();
    for i in 0..out.d.len() {
        out.d[i] += (logvar.d[i] * 0.5).exp() * noise.d[i];
    }
    out
}

/// One parameter tensor's shape in the flattened layout.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

/// Splits a flat parameter vector back into matrices per `shapes`; a shape
/// with rows == 0 denotes a bias vector of length cols.
pub fn unflatten(theta: &[f64], shapes: &[Shape]) -> Vec<M> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for s in shapes {
        let rows = s.rows.max(1);
        let len = rows * s.cols;
        out.push(M::new(rows, s.cols, theta[off..off + len].to_vec()));
        off += len;
    }
    assert_eq!(off, theta.len());
    out
}

/// A multilayer perceptron description shared by the reference forwards:
/// parameter matrices in layer order, each optionally followed by a bias.
pub struct Mlp<'a> {
    pub mats: &'a [M],
    pub biased: bool,
}

impl Mlp<'_> {
    fn layer(&self, idx: usize) -> (&M, Option<&[f64]>) {
        if self.biased {
            (&self.mats[2 * idx], Some(&self.mats[2 * idx + 1].d))
        } else {
            (&self.mats[idx], None)
        }
    }

    pub fn layer_count(&self) -> usize {
        if self.biased {
            self.mats.len() / 2
        } else {
            self.mats.len()
        }
    }

    /// affine + relu for every layer.
    pub fn trunk(&self, x: &M, mask: &mut Vec<bool>) -> M {
        let mut h = x.clone();
        for i in 0..self.layer_count() {
            let (w, b) = self.layer(i);
            h = relu(&linear(&h, w, b), mask);
        }
        h
    }

    /// affine + relu between layers, bare affine at the end.
    pub fn stack(&self, x: &M, mask: &mut Vec<bool>) -> M {
        let mut h = x.clone();
        let n = self.layer_count();
        for i in 0..n {
            let (w, b) = self.layer(i);
            h = linear(&h, w, b);
            if i + 1 < n {
                h = relu(&h, mask);
            }
        }
        h
    }
}

/// Reference forward pass: loss plus the kink mask it observed.
pub type RefFn = dyn Fn(&[f64]) -> (f64, Vec<bool>);

pub struct FdStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<(usize, f64, f64)>,
}

/// Central differences with h = 1e-3 in f64 against the autodiff gradient.
/// `reference` returns (loss, kink mask); mask changes across the +-h pair
/// invalidate that coordinate.
pub fn central_diff_check(
    theta: &[f64],
    grad_ad: &[f64],
    reference: &RefFn,
    tol: f64,
) -> FdStats {
    assert_eq!(theta.len(), grad_ad.len());
    let h = 1e-3;
    let mut stats = FdStats {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    let mut work = theta.to_vec();
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        let (fp, mp) = reference(&work);
        work[i] = theta[i] - h;
        let (fm, mm) = reference(&work);
        work[i] = theta[i];
        if mp != mm {
            stats.skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let ad = grad_ad[i];
        let denom = ad.abs().max(fd.abs());
        if denom < 1e-6 {
            // both effectively zero; relative error is meaningless
            if (ad - fd).abs() > 1e-6 {
                stats.failures.push((i, ad, fd));
            }
            stats.checked += 1;
            continue;
        }
        let rel = (ad - fd).abs() / denom;
        stats.max_rel_err = stats.max_rel_err.max(rel);
        if rel >= tol {
            stats.failures.push((i, ad, fd));
        }
        stats.checked += 1;
    }
    stats
}

pub fn to_f64(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&v| v as f64).collect()
}
