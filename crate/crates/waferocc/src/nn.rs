//! The three networks and their loss functions.
//!
//! All layers are affine with ReLU between them. The encoder is two-headed
//! (mean and log-variance over a shared trunk), the decoder ends in a
//! grouped softmax over the 3 die-state channels of each position, and the
//! discriminator ends in a sigmoid. The adversarial objective is split into
//! [`discriminator_loss`] and [`generator_loss`]; the two never share a
//! tape because they drive different optimizer steps.

use crate::tensor::{kernels, Gradients, Tape, Tensor, Var};
use crate::wafer::CHANNELS;
use crate::{Error, Result};
use rand::Rng;

pub const DEFAULT_TRUNK: [usize; 3] = [crate::wafer::ENCODED_LEN, 256, 128];
pub const DEFAULT_DECODER_HIDDEN: [usize; 2] = [128, 256];
pub const DEFAULT_DISC_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_LATENT: usize = 32;

/// One affine layer; `b` is None for the bias-free DSVDD encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Linear {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data: Vec<f32> = (0..in_dim * out_dim)
            .map(|_| (rng.gen_range(-limit..=limit)) as f32)
            .collect();
        Linear {
            w: Tensor::param(vec![in_dim, out_dim], data).expect("sized here"),
            b: bias.then(|| {
                let mut t = Tensor::zeros(vec![out_dim]);
                t.requires_grad = true;
                t
            }),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[1]
    }

    fn stage(&self, t: &mut Tape, trainable: bool) -> LinearVars {
        let put = |t: &mut Tape, ten: &Tensor| {
            if trainable {
                t.param(ten)
            } else {
                t.input(ten)
            }
        };
        LinearVars {
            w: put(t, &self.w),
            b: self.b.as_ref().map(|b| put(t, b)),
        }
    }

    /// Untaped y = x.W + b.
    fn apply(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let (k, n) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.len(), rows * k);
        let mut out = vec![0.0f32; rows * n];
        kernels::matmul(&mut out, x, &self.w.data, rows, k, n);
        if let Some(b) = &self.b {
            kernels::add_bias_rows(&mut out, &b.data, rows, n);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Option<Var>,
}

fn relu_inplace(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Two-headed encoder: shared ReLU trunk, then separate mean and
/// log-variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub trunk: Vec<Linear>,
    pub head_mean: Linear,
    pub head_logvar: Linear,
}

impl EncoderParams {
    /// `widths` runs input through hidden sizes; both heads map the last
    /// width to `latent`. `biases: false` builds the DSVDD variant.
    pub fn new(widths: &[usize], latent: usize, biases: bool, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2);
        let trunk = widths
            .windows(2)
            .map(|p| Linear::new(p[0], p[1], biases, rng))
            .collect();
        let last = *widths.last().unwrap();
        EncoderParams {
            trunk,
            head_mean: Linear::new(last, latent, biases, rng),
            head_logvar: Linear::new(last, latent, biases, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.head_mean.out_dim()
    }

    pub fn stage(&self, t: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            trunk: self.trunk.iter().map(|l| l.stage(t, trainable)).collect(),
            head_mean: self.head_mean.stage(t, trainable),
            head_logvar: self.head_logvar.stage(t, trainable),
        }
    }

    /// Stage only the mean path (DSVDD training leaves the logvar head
    /// untouched).
    pub fn stage_mean(&self, t: &mut Tape, trainable: bool) -> EncoderMeanVars {
        EncoderMeanVars {
            trunk: self.trunk.iter().map(|l| l.stage(t, trainable)).collect(),
            head_mean: self.head_mean.stage(t, trainable),
        }
    }

    fn infer_trunk(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let mut h = x.to_vec();
        for layer in &self.trunk {
            h = layer.apply(&h, rows);
            relu_inplace(&mut h);
        }
        h
    }

    /// Untaped (mu, logvar).
    pub fn infer(&self, x: &[f32], rows: usize) -> (Vec<f32>, Vec<f32>) {
        let h = self.infer_trunk(x, rows);
        (self.head_mean.apply(&h, rows), self.head_logvar.apply(&h, rows))
    }

    /// Untaped mean head only; the deterministic latent used for scoring.
    pub fn infer_mu(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let h = self.infer_trunk(x, rows);
        self.head_mean.apply(&h, rows)
    }

    /// Named parameters in a fixed order shared by staging, gradient
    /// write-back, and optimizer registration. `mean_only` matches
    /// [`EncoderParams::stage_mean`].
    pub fn param_entries_mut(&mut self, mean_only: bool) -> Vec<(String, bool, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter_mut().enumerate() {
            out.push((format!("enc.trunk{i}.w"), true, &mut l.w));
            if let Some(b) = &mut l.b {
                out.push((format!("enc.trunk{i}.b"), false, b));
            }
        }
        out.push(("enc.head_mean.w".into(), true, &mut self.head_mean.w));
        if let Some(b) = &mut self.head_mean.b {
            out.push(("enc.head_mean.b".into(), false, b));
        }
        if !mean_only {
            out.push(("enc.head_logvar.w".into(), true, &mut self.head_logvar.w));
            if let Some(b) = &mut self.head_logvar.b {
                out.push(("enc.head_logvar.b".into(), false, b));
            }
        }
        out
    }

    /// Read-only view in the same order as [`EncoderParams::param_entries_mut`].
    pub fn param_entries(&self, mean_only: bool) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            out.push((format!("enc.trunk{i}.w"), &l.w));
            if let Some(b) = &l.b {
                out.push((format!("enc.trunk{i}.b"), b));
            }
        }
        out.push(("enc.head_mean.w".into(), &self.head_mean.w));
        if let Some(b) = &self.head_mean.b {
            out.push(("enc.head_mean.b".into(), b));
        }
        if !mean_only {
            out.push(("enc.head_logvar.w".into(), &self.head_logvar.w));
            if let Some(b) = &self.head_logvar.b {
                out.push(("enc.head_logvar.b".into(), b));
            }
        }
        out
    }
}

pub struct EncoderVars {
    pub trunk: Vec<LinearVars>,
    pub head_mean: LinearVars,
    pub head_logvar: LinearVars,
}

pub struct EncoderMeanVars {
    pub trunk: Vec<LinearVars>,
    pub head_mean: LinearVars,
}

fn trunk_forward(t: &mut Tape, layers: &[LinearVars], x: Var) -> Result<Var> {
    let mut h = x;
    for lv in layers {
        h = t.affine(h, lv.w, lv.b)?;
        h = t.relu(h);
    }
    Ok(h)
}

impl EncoderVars {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let h = trunk_forward(t, &self.trunk, x)?;
        let mu = t.affine(h, self.head_mean.w, self.head_mean.b)?;
        let lv = t.affine(h, self.head_logvar.w, self.head_logvar.b)?;
        Ok((mu, lv))
    }

    fn vars(&self) -> Vec<LinearVars> {
        let mut v: Vec<LinearVars> = self.trunk.clone();
        v.push(self.head_mean);
        v.push(self.head_logvar);
        v
    }

    pub fn write_grads(&self, g: &mut Gradients, p: &mut EncoderParams) -> Result<()> {
        write_linear_grads(g, &self.vars(), p.param_entries_mut(false))
    }
}

impl EncoderMeanVars {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = trunk_forward(t, &self.trunk, x)?;
        Ok(t.affine(h, self.head_mean.w, self.head_mean.b)?)
    }

    pub fn write_grads(&self, g: &mut Gradients, p: &mut EncoderParams) -> Result<()> {
        let mut v: Vec<LinearVars> = self.trunk.clone();
        v.push(self.head_mean);
        write_linear_grads(g, &v, p.param_entries_mut(true))
    }
}

fn write_linear_grads(
    g: &mut Gradients,
    vars: &[LinearVars],
    entries: Vec<(String, bool, &mut Tensor)>,
) -> Result<()> {
    let mut flat: Vec<Var> = Vec::new();
    for lv in vars {
        flat.push(lv.w);
        if let Some(b) = lv.b {
            flat.push(b);
        }
    }
    debug_assert_eq!(flat.len(), entries.len(), "staging order drifted");
    for (var, (_, _, tensor)) in flat.into_iter().zip(entries) {
        g.write_to(var, tensor)?;
    }
    Ok(())
}

/// Decoder: hidden ReLU layers, then an affine to the flattened wafer and
/// a per-position softmax over the [`CHANNELS`] die states.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub layers: Vec<Linear>,
}

impl DecoderParams {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2);
        DecoderParams {
            layers: widths
                .windows(2)
                .map(|p| Linear::new(p[0], p[1], true, rng))
                .collect(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn stage(&self, t: &mut Tape, trainable: bool) -> DecoderVars {
        DecoderVars {
            layers: self.layers.iter().map(|l| l.stage(t, trainable)).collect(),
        }
    }

    /// Untaped reconstruction (already softmaxed).
    pub fn infer(&self, z: &[f32], rows: usize) -> Vec<f32> {
        let mut h = z.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h, rows);
            if i + 1 < self.layers.len() {
                relu_inplace(&mut h);
            }
        }
        let mut out = vec![0.0f32; h.len()];
        kernels::softmax_groups(&mut out, &h, CHANNELS);
        out
    }

    pub fn param_entries_mut(&mut self) -> Vec<(String, bool, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("dec.l{i}.w"), true, &mut l.w));
            if let Some(b) = &mut l.b {
                out.push((format!("dec.l{i}.b"), false, b));
            }
        }
        out
    }

    pub fn param_entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("dec.l{i}.w"), &l.w));
            if let Some(b) = &l.b {
                out.push((format!("dec.l{i}.b"), b));
            }
        }
        out
    }
}

pub struct DecoderVars {
    pub layers: Vec<LinearVars>,
}

impl DecoderVars {
    pub fn forward(&self, t: &mut Tape, z: Var) -> Result<Var> {
        let mut h = z;
        for (i, lv) in self.layers.iter().enumerate() {
            h = t.affine(h, lv.w, lv.b)?;
            if i + 1 < self.layers.len() {
                h = t.relu(h);
            }
        }
        Ok(t.softmax_groups(h, CHANNELS)?)
    }

    pub fn write_grads(&self, g: &mut Gradients, p: &mut DecoderParams) -> Result<()> {
        write_linear_grads(g, &self.layers, p.param_entries_mut())
    }
}

/// Discriminator: hidden ReLU layers to one sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub layers: Vec<Linear>,
}

impl DiscriminatorParams {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2);
        assert_eq!(*widths.last().unwrap(), 1, "discriminator ends in one unit");
        DiscriminatorParams {
            layers: widths
                .windows(2)
                .map(|p| Linear::new(p[0], p[1], true, rng))
                .collect(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn stage(&self, t: &mut Tape, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            layers: self.layers.iter().map(|l| l.stage(t, trainable)).collect(),
        }
    }

    /// Untaped probabilities, one per row of z.
    pub fn infer(&self, z: &[f32], rows: usize) -> Vec<f32> {
        let mut h = z.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h, rows);
            if i + 1 < self.layers.len() {
                relu_inplace(&mut h);
            }
        }
        h.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        h
    }

    pub fn param_entries_mut(&mut self) -> Vec<(String, bool, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("disc.l{i}.w"), true, &mut l.w));
            if let Some(b) = &mut l.b {
                out.push((format!("disc.l{i}.b"), false, b));
            }
        }
        out
    }

    pub fn param_entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("disc.l{i}.w"), &l.w));
            if let Some(b) = &l.b {
                out.push((format!("disc.l{i}.b"), b));
            }
        }
        out
    }
}

pub struct DiscriminatorVars {
    pub layers: Vec<LinearVars>,
}

impl DiscriminatorVars {
    pub fn forward(&self, t: &mut Tape, z: Var) -> Result<Var> {
        let mut h = z;
        for (i, lv) in self.layers.iter().enumerate() {
            h = t.affine(h, lv.w, lv.b)?;
            if i + 1 < self.layers.len() {
                h = t.relu(h);
            }
        }
        Ok(t.sigmoid(h))
    }

    pub fn write_grads(&self, g: &mut Gradients, p: &mut DiscriminatorParams) -> Result<()> {
        write_linear_grads(g, &self.layers, p.param_entries_mut())
    }
}

/// Hypersphere state: center C (frozen after initialization), radius R,
/// the loss nu, the prior-scale nu, and the weight-decay lambda realized
/// through the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct HypersphereParams {
    pub center: Option<Vec<f32>>,
    pub radius: f32,
    pub nu_svdd: f32,
    pub nu_prior: f32,
    pub weight_decay: f32,
}

impl HypersphereParams {
    pub fn new(nu_svdd: f32, nu_prior: f32, weight_decay: f32) -> Self {
        HypersphereParams {
            center: None,
            radius: 0.0,
            nu_svdd,
            nu_prior,
            weight_decay,
        }
    }

    pub fn center(&self) -> Result<&[f32]> {
        self.center
            .as_deref()
            .ok_or_else(|| Error::Config("hypersphere center not initialized".into()))
    }
}

/// Soft-boundary loss R^2 + (1/(nu n)) sum_i max(0, ||mu_i - C||^2 - R^2).
/// The weight-decay term rides on the optimizer, not on this scalar.
pub fn dsvdd_loss(t: &mut Tape, mu: Var, h: &HypersphereParams) -> Result<Var> {
    let c = h.center()?;
    let (batch, latent) = t.shape(mu);
    if c.len() != latent {
        return Err(Error::Config(format!(
            "center has {} components, latents have {latent}",
            c.len()
        )));
    }
    let cvar = t.input_slice(1, latent, c);
    let d = t.row_sq_dist(mu, cvar)?;
    let r2 = h.radius * h.radius;
    let shifted = t.scale_shift(d, 1.0, -r2);
    let hinge = t.relu(shifted);
    let total = t.sum(hinge);
    let scaled = t.scale_shift(total, 1.0 / (h.nu_svdd * batch as f32), 0.0);
    Ok(t.scale_shift(scaled, 1.0, r2))
}

/// Discriminator objective: mean BCE over the encoder-latent half and the
/// prior-sample half of the batch (equal sizes, so this is the plain mean
/// over the combined batch).
pub fn discriminator_loss(
    t: &mut Tape,
    d_out_enc: Var,
    enc_labels: Var,
    d_out_prior: Var,
    prior_labels: Var,
) -> Result<Var> {
    let a = t.bce_mean(d_out_enc, enc_labels)?;
    let b = t.bce_mean(d_out_prior, prior_labels)?;
    let s = t.add(a, b)?;
    Ok(t.scale_shift(s, 0.5, 0.0))
}

/// Non-saturating generator objective: BCE of D(encoder latents) against
/// the prior class. Stage the discriminator frozen so gradients reach only
/// the encoder.
pub fn generator_loss(t: &mut Tape, d_out_enc: Var) -> Result<Var> {
    let (rows, cols) = t.shape(d_out_enc);
    let ones = t.input_slice(rows, cols, &vec![1.0f32; rows * cols]);
    Ok(t.bce_mean(d_out_enc, ones)?)
}

/// z = mu + exp(0.5 logvar) * noise; gradient flows to mu and logvar only.
pub fn reparameterize(t: &mut Tape, mu: Var, logvar: Var, noise: &Tensor) -> Result<Var> {
    let nv = t.input(noise);
    let half = t.scale_shift(logvar, 0.5, 0.0);
    let std = t.exp(half);
    let scaled = t.mul(std, nv)?;
    Ok(t.add(mu, scaled)?)
}

/// Untaped reparameterization for steps that treat z as a constant.
pub fn reparameterize_values(mu: &[f32], logvar: &[f32], noise: &[f32]) -> Vec<f32> {
    mu.iter()
        .zip(logvar.iter())
        .zip(noise.iter())
        .map(|((&m, &lv), &n)| m + (0.5 * lv).exp() * n)
        .collect()
}

/// w_rec * recon + w_adv * loss_G + w_svdd * dsvdd.
pub fn combined_loss(
    t: &mut Tape,
    recon_l1: Var,
    loss_g: Var,
    dsvdd: Var,
    weights: [f32; 3],
) -> Result<Var> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Config(format!(
            "combined loss weights must be non-negative, got {weights:?}"
        )));
    }
    let a = t.scale_shift(recon_l1, weights[0], 0.0);
    let b = t.scale_shift(loss_g, weights[1], 0.0);
    let c = t.scale_shift(dsvdd, weights[2], 0.0);
    let ab = t.add(a, b)?;
    Ok(t.add(ab, c)?)
}
