//! Training loops for the three model kinds, checkpointing, and run logs.
//!
//! Determinism contract: every random draw comes from a ChaCha stream
//! derived from (seed, epoch), never from a long-lived RNG. Stream 0 seeds
//! weight init; epoch e uses streams 8e+1 (shuffle), 8e+2 (reparameterize
//! noise), 8e+3 (prior samples). A resumed run therefore replays exactly
//! the epochs an uninterrupted run would have produced, with no RNG state
//! in the checkpoint.
//!
//! Each batch of the AAE kinds takes three optimizer steps in order:
//! reconstruction (encoder+decoder), discriminator, encoder-adversarial.
//! Parameters outside a step are staged as constants, so cross-updates are
//! impossible by construction; debug builds additionally hash the frozen
//! networks around each step.

pub mod checkpoint;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelKind, TrainConfig};

use crate::nn::{
    combined_loss, discriminator_loss, dsvdd_loss, generator_loss, reparameterize,
    reparameterize_values, DecoderParams, DiscriminatorParams, EncoderParams, HypersphereParams,
    DEFAULT_DECODER_HIDDEN, DEFAULT_DISC_HIDDEN, DEFAULT_TRUNK,
};
use crate::prior;
use crate::tensor::{Adam, Tape, Tensor};
use crate::wafer::{encode_batch, WaferLabel, WaferMap, ENCODED_LEN};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Frozen sphere state carried in bundles and checkpoints.
/// `final_distances` is the unsquared distance sample collected during the
/// most recent epoch; the current radius is its quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereState {
    pub center: Vec<f32>,
    pub radius: f32,
    pub final_distances: Vec<f32>,
}

/// Everything a trained model needs for scoring and resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub kind: ModelKind,
    /// Canonical config identity blob (see [`TrainConfig::identity_blob`]).
    pub identity_blob: String,
    pub epochs_done: u32,
    pub encoder: EncoderParams,
    pub decoder: Option<DecoderParams>,
    pub discriminator: Option<DiscriminatorParams>,
    pub sphere: Option<SphereState>,
    /// (role, optimizer) in step order; roles are fixed per kind.
    pub optimizers: Vec<(String, Adam)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub recon: f64,
    pub disc: f64,
    pub adv: f64,
    /// Epoch-mean of the full soft-boundary loss.
    pub dsvdd: f64,
    /// Epoch-mean of just the hinge term (dsvdd minus R^2).
    pub hinge: f64,
    /// Mean unsquared latent distance to C over the train set, measured at
    /// epoch end with the updated parameters (0 for the aae kind).
    pub dist: f64,
    /// Radius after this epoch's quantile update (0 for the aae kind).
    pub radius: f32,
    pub wall_ms: u128,
}

impl EpochRecord {
    pub fn line(&self) -> String {
        format!(
            "epoch={} recon={:.6} disc={:.6} adv={:.6} dsvdd={:.6} hinge={:.6} dist={:.6} r={:.6} wall_ms={}",
            self.epoch, self.recon, self.disc, self.adv, self.dsvdd, self.hinge, self.dist,
            self.radius, self.wall_ms
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.line());
            s.push('\n');
        }
        s
    }
}

pub fn train(cfg: &TrainConfig, maps: &[WaferMap]) -> Result<(ModelBundle, RunLog)> {
    match cfg.model {
        ModelKind::Dsvdd => train_dsvdd(cfg, maps),
        ModelKind::Aae => train_aae(cfg, maps),
        ModelKind::AaeDsvdd => train_aae_dsvdd(cfg, maps),
    }
}

pub fn train_dsvdd(cfg: &TrainConfig, maps: &[WaferMap]) -> Result<(ModelBundle, RunLog)> {
    ensure_kind(cfg, ModelKind::Dsvdd)?;
    validate_train_set(maps)?;
    let mut rng = rng_stream(cfg.seed, 0);
    let mut enc = EncoderParams::new(&DEFAULT_TRUNK, cfg.latent_dim, false, &mut rng);
    let opts = vec![(
        "enc".to_string(),
        build_adam(cfg.learning_rate, cfg.weight_decay, &mut enc, EntrySet::EncoderMean),
    )];
    run_epochs(
        cfg,
        maps,
        NetSet {
            enc,
            dec: None,
            disc: None,
            sphere: None,
            final_distances: Vec::new(),
            opts,
            epochs_done: 0,
        },
    )
}

pub fn train_aae(cfg: &TrainConfig, maps: &[WaferMap]) -> Result<(ModelBundle, RunLog)> {
    ensure_kind(cfg, ModelKind::Aae)?;
    train_aae_like(cfg, maps)
}

pub fn train_aae_dsvdd(cfg: &TrainConfig, maps: &[WaferMap]) -> Result<(ModelBundle, RunLog)> {
    ensure_kind(cfg, ModelKind::AaeDsvdd)?;
    train_aae_like(cfg, maps)
}

/// The discriminator is tiny next to the encoder it judges; running its
/// optimizer at a higher rate keeps the two-player game near the ln 2
/// equilibrium instead of letting the generator race ahead.
const DISC_LR_SCALE: f32 = 10.0;

fn train_aae_like(cfg: &TrainConfig, maps: &[WaferMap]) -> Result<(ModelBundle, RunLog)> {
    validate_train_set(maps)?;
    let mut rng = rng_stream(cfg.seed, 0);
    let mut enc = EncoderParams::new(&DEFAULT_TRUNK, cfg.latent_dim, true, &mut rng);
    let dec_widths = [
        cfg.latent_dim,
        DEFAULT_DECODER_HIDDEN[0],
        DEFAULT_DECODER_HIDDEN[1],
        ENCODED_LEN,
    ];
    let mut dec = DecoderParams::new(&dec_widths, &mut rng);
    let disc_widths = [cfg.latent_dim, DEFAULT_DISC_HIDDEN[0], DEFAULT_DISC_HIDDEN[1], 1];
    let mut disc = DiscriminatorParams::new(&disc_widths, &mut rng);

    // the Frobenius penalty belongs to the soft-boundary objective, so only
    // the aae_dsvdd encoder-adversarial optimizer decays weights
    let adv_wd = if cfg.model == ModelKind::AaeDsvdd {
        cfg.weight_decay
    } else {
        0.0
    };
    let mut recon_opt = build_adam(cfg.learning_rate, 0.0, &mut enc, EntrySet::EncoderFull);
    for (name, decay, t) in dec.param_entries_mut() {
        recon_opt.register(&name, t, decay);
    }
    let mut disc_opt = Adam::new(cfg.learning_rate * DISC_LR_SCALE, 0.0);
    for (name, decay, t) in disc.param_entries_mut() {
        disc_opt.register(&name, t, decay);
    }
    let adv_opt = build_adam(cfg.learning_rate, adv_wd, &mut enc, EntrySet::EncoderFull);
    let opts = vec![
        ("recon".to_string(), recon_opt),
        ("disc".to_string(), disc_opt),
        ("adv".to_string(), adv_opt),
    ];
    run_epochs(
        cfg,
        maps,
        NetSet {
            enc,
            dec: Some(dec),
            disc: Some(disc),
            sphere: None,
            final_distances: Vec::new(),
            opts,
            epochs_done: 0,
        },
    )
}

/// Continues a loaded bundle up to `cfg.epochs`. The replayed epochs are
/// bit-identical to an uninterrupted run of the same config.
pub fn resume(cfg: &TrainConfig, maps: &[WaferMap], bundle: ModelBundle) -> Result<(ModelBundle, RunLog)> {
    if bundle.identity_blob != cfg.identity_blob() {
        return Err(Error::Config(
            "checkpoint was trained under a different configuration (identity digest mismatch)"
                .into(),
        ));
    }
    if bundle.epochs_done >= cfg.epochs {
        return Err(Error::Config(format!(
            "checkpoint already has {} epochs; config asks for {}",
            bundle.epochs_done, cfg.epochs
        )));
    }
    validate_train_set(maps)?;

    let ModelBundle {
        kind,
        encoder: mut enc,
        decoder: mut dec,
        discriminator: mut disc,
        sphere,
        optimizers: saved_opts,
        epochs_done,
        ..
    } = bundle;

    // rebuild optimizers from config, then pour the saved moments back in
    let mut opts: Vec<(String, Adam)> = match kind {
        ModelKind::Dsvdd => vec![(
            "enc".to_string(),
            build_adam(cfg.learning_rate, cfg.weight_decay, &mut enc, EntrySet::EncoderMean),
        )],
        _ => {
            let adv_wd = if kind == ModelKind::AaeDsvdd {
                cfg.weight_decay
            } else {
                0.0
            };
            let mut recon_opt = build_adam(cfg.learning_rate, 0.0, &mut enc, EntrySet::EncoderFull);
            for (name, decay, t) in dec.as_mut().expect("aae bundle has decoder").param_entries_mut()
            {
                recon_opt.register(&name, t, decay);
            }
            let mut disc_opt = Adam::new(cfg.learning_rate * DISC_LR_SCALE, 0.0);
            for (name, decay, t) in disc
                .as_mut()
                .expect("aae bundle has discriminator")
                .param_entries_mut()
            {
                disc_opt.register(&name, t, decay);
            }
            let adv_opt = build_adam(cfg.learning_rate, adv_wd, &mut enc, EntrySet::EncoderFull);
            vec![
                ("recon".to_string(), recon_opt),
                ("disc".to_string(), disc_opt),
                ("adv".to_string(), adv_opt),
            ]
        }
    };
    if saved_opts.len() != opts.len() {
        return Err(Error::Config("checkpoint optimizer layout mismatch".into()));
    }
    for ((role, fresh), (saved_role, saved)) in opts.iter_mut().zip(saved_opts) {
        if *role != saved_role {
            return Err(Error::Config(format!(
                "checkpoint optimizer role {saved_role:?} where {role:?} expected"
            )));
        }
        if fresh.names() != saved.names() {
            return Err(Error::Config(format!(
                "checkpoint optimizer {role:?} covers different parameters than this model"
            )));
        }
        fresh
            .restore_state(
                saved.state.step_count,
                saved.state.first_moment,
                saved.state.second_moment,
            )
            .map_err(|e| Error::Config(format!("checkpoint optimizer state: {e}")))?;
    }

    let (sphere_params, final_distances) = match sphere {
        Some(s) => (
            Some(HypersphereParams {
                center: Some(s.center),
                radius: s.radius,
                nu_svdd: cfg.nu_svdd,
                nu_prior: cfg.nu_prior,
                weight_decay: cfg.weight_decay,
            }),
            s.final_distances,
        ),
        None => (None, Vec::new()),
    };

    run_epochs(
        cfg,
        maps,
        NetSet {
            enc,
            dec,
            disc,
            sphere: sphere_params,
            final_distances,
            opts,
            epochs_done,
        },
    )
}

struct NetSet {
    enc: EncoderParams,
    dec: Option<DecoderParams>,
    disc: Option<DiscriminatorParams>,
    sphere: Option<HypersphereParams>,
    final_distances: Vec<f32>,
    opts: Vec<(String, Adam)>,
    epochs_done: u32,
}

#[derive(Default)]
struct EpochAccum {
    recon: f64,
    disc: f64,
    adv: f64,
    dsvdd: f64,
    hinge: f64,
    batches: usize,
}

enum EntrySet {
    EncoderMean,
    EncoderFull,
}

fn build_adam(lr: f32, wd: f32, enc: &mut EncoderParams, set: EntrySet) -> Adam {
    let mut opt = Adam::new(lr, wd);
    let mean_only = matches!(set, EntrySet::EncoderMean);
    for (name, decay, t) in enc.param_entries_mut(mean_only) {
        opt.register(&name, t, decay);
    }
    opt
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn ensure_kind(cfg: &TrainConfig, kind: ModelKind) -> Result<()> {
    if cfg.model != kind {
        return Err(Error::Config(format!(
            "config model is {}, not {}",
            cfg.model.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

fn validate_train_set(maps: &[WaferMap]) -> Result<()> {
    if maps.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    for m in maps {
        if m.label != WaferLabel::None {
            return Err(Error::Data(format!(
                "training set must be all None, found {}",
                m.label.name()
            )));
        }
    }
    Ok(())
}

fn gather_rows(all: &Tensor, idx: &[usize]) -> Tensor {
    let cols = *all.shape.last().unwrap();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&all.data[i * cols..(i + 1) * cols]);
    }
    Tensor::new(vec![idx.len(), cols], data).expect("sized here")
}

/// Batched mean-head inference over the whole train tensor, distances in
/// original row order. Runs after every epoch so the stored R always
/// describes the parameters it ships with, not a mid-epoch snapshot.
fn pass_distances(enc: &EncoderParams, data: &Tensor, batch: usize, center: &[f32]) -> Vec<f32> {
    let rows = data.shape[0];
    let mut out = Vec::with_capacity(rows);
    for start in (0..rows).step_by(batch) {
        let end = (start + batch).min(rows);
        let chunk = &data.data[start * ENCODED_LEN..end * ENCODED_LEN];
        let mu = enc.infer_mu(chunk, end - start);
        out.extend(row_distances(&mu, center));
    }
    out
}

/// Unsquared distance of each latent row from the center, f64 inside.
fn row_distances(mu: &[f32], center: &[f32]) -> Vec<f32> {
    mu.chunks_exact(center.len())
        .map(|row| {
            let d2: f64 = row
                .iter()
                .zip(center)
                .map(|(&z, &c)| {
                    let d = (z - c) as f64;
                    d * d
                })
                .sum();
            d2.sqrt() as f32
        })
        .collect()
}

fn normal_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized here")
}

fn check_finite(value: f32, what: &str, epoch: u32) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("non-finite {what} loss in epoch {epoch}")))
    }
}

#[cfg(debug_assertions)]
fn bits_hash(entries: &[(String, &Tensor)]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for (_, t) in entries {
        for &v in &t.data {
            h = (h ^ v.to_bits() as u64).wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// One untrained pass over the full training set fixes C (snapped column
/// means) and seeds R from the same pass's distance quantile, so the first
/// discriminator step already has a well-defined sphere.
fn init_sphere(cfg: &TrainConfig, enc: &EncoderParams, data: &Tensor) -> Result<(HypersphereParams, Vec<f32>)> {
    let rows = data.shape[0];
    let latent = enc.latent_dim();
    let mut mu_all = Vec::with_capacity(rows * latent);
    for start in (0..rows).step_by(cfg.batch_size) {
        let end = (start + cfg.batch_size).min(rows);
        let chunk = &data.data[start * ENCODED_LEN..end * ENCODED_LEN];
        mu_all.extend(enc.infer_mu(chunk, end - start));
    }
    let center = prior::init_center(&mu_all, rows, latent)?;
    let dists = row_distances(&mu_all, &center);
    let radius = prior::update_radius(&dists, cfg.nu_svdd)?;
    Ok((
        HypersphereParams {
            center: Some(center),
            radius,
            nu_svdd: cfg.nu_svdd,
            nu_prior: cfg.nu_prior,
            weight_decay: cfg.weight_decay,
        },
        dists,
    ))
}

fn run_epochs(cfg: &TrainConfig, maps: &[WaferMap], s: NetSet) -> Result<(ModelBundle, RunLog)> {
    let NetSet {
        mut enc,
        mut dec,
        mut disc,
        mut sphere,
        mut final_distances,
        mut opts,
        epochs_done,
    } = s;

    let data = encode_batch(maps);
    let n = maps.len();

    if cfg.model.uses_sphere() && sphere.is_none() {
        let (sp, d) = init_sphere(cfg, &enc, &data)?;
        sphere = Some(sp);
        final_distances = d;
    }

    let mut log = RunLog::default();
    for epoch in (epochs_done + 1)..=cfg.epochs {
        let t0 = Instant::now();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_stream(cfg.seed, epoch as u64 * 8 + 1));
        let mut noise_rng = rng_stream(cfg.seed, epoch as u64 * 8 + 2);
        let mut prior_rng = rng_stream(cfg.seed, epoch as u64 * 8 + 3);

        let mut acc = EpochAccum::default();
        for chunk in idx.chunks(cfg.batch_size) {
            let x = gather_rows(&data, chunk);
            match cfg.model {
                ModelKind::Dsvdd => step_dsvdd(
                    &mut enc,
                    sphere.as_ref().expect("sphere initialized"),
                    &mut opts[0].1,
                    &x,
                    &mut acc,
                    epoch,
                )?,
                _ => step_aae(
                    cfg,
                    &mut enc,
                    dec.as_mut().expect("aae kinds have a decoder"),
                    disc.as_mut().expect("aae kinds have a discriminator"),
                    sphere.as_ref(),
                    &mut opts,
                    &x,
                    &mut noise_rng,
                    &mut prior_rng,
                    &mut acc,
                    epoch,
                )?,
            }
        }

        let (dist, radius) = match &mut sphere {
            Some(sp) => {
                let d = pass_distances(&enc, &data, cfg.batch_size, sp.center()?);
                let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
                sp.radius = prior::update_radius(&d, cfg.nu_svdd)?;
                final_distances = d;
                (mean, sp.radius)
            }
            None => (0.0, 0.0),
        };

        let b = acc.batches.max(1) as f64;
        log.records.push(EpochRecord {
            epoch,
            recon: acc.recon / b,
            disc: acc.disc / b,
            adv: acc.adv / b,
            dsvdd: acc.dsvdd / b,
            hinge: acc.hinge / b,
            dist,
            radius,
            wall_ms: t0.elapsed().as_millis(),
        });
    }

    let bundle = ModelBundle {
        kind: cfg.model,
        identity_blob: cfg.identity_blob(),
        epochs_done: cfg.epochs,
        encoder: enc,
        decoder: dec,
        discriminator: disc,
        sphere: sphere.map(|sp| SphereState {
            center: sp.center.clone().expect("initialized above"),
            radius: sp.radius,
            final_distances: final_distances.clone(),
        }),
        optimizers: opts,
    };
    Ok((bundle, log))
}

fn step_dsvdd(
    enc: &mut EncoderParams,
    sphere: &HypersphereParams,
    opt: &mut Adam,
    x: &Tensor,
    acc: &mut EpochAccum,
    epoch: u32,
) -> Result<()> {
    let mut t = Tape::new();
    let ev = enc.stage_mean(&mut t, true);
    let xv = t.input(x);
    let mu = ev.forward(&mut t, xv)?;
    let loss = dsvdd_loss(&mut t, mu, sphere)?;
    let lv = check_finite(t.value(loss)[0], "dsvdd", epoch)?;
    let mut g = t.backward(loss)?;
    ev.write_grads(&mut g, enc)?;
    let mut params: Vec<&mut Tensor> = enc
        .param_entries_mut(true)
        .into_iter()
        .map(|(_, _, t)| t)
        .collect();
    opt.step(&mut params)?;

    acc.dsvdd += lv as f64;
    acc.hinge += (lv - sphere.radius * sphere.radius) as f64;
    acc.batches += 1;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_aae(
    cfg: &TrainConfig,
    enc: &mut EncoderParams,
    dec: &mut DecoderParams,
    disc: &mut DiscriminatorParams,
    sphere: Option<&HypersphereParams>,
    opts: &mut [(String, Adam)],
    x: &Tensor,
    noise_rng: &mut ChaCha8Rng,
    prior_rng: &mut ChaCha8Rng,
    acc: &mut EpochAccum,
    epoch: u32,
) -> Result<()> {
    let rows = x.shape[0];
    let latent = enc.latent_dim();

    // step 1: reconstruction, updates encoder + decoder
    {
        let mut t = Tape::new();
        let ev = enc.stage(&mut t, true);
        let dv = dec.stage(&mut t, true);
        let xv = t.input(x);
        let (mu, logvar) = ev.forward(&mut t, xv)?;
        let noise = normal_tensor(rows, latent, noise_rng);
        let z = reparameterize(&mut t, mu, logvar, &noise)?;
        let xhat = dv.forward(&mut t, z)?;
        let l1 = t.l1_mean(xhat, xv)?;
        let recon_raw = check_finite(t.value(l1)[0], "reconstruction", epoch)?;
        let loss = t.scale_shift(l1, cfg.w_rec, 0.0);
        let mut g = t.backward(loss)?;
        ev.write_grads(&mut g, enc)?;
        dv.write_grads(&mut g, dec)?;
        let mut params: Vec<&mut Tensor> = enc
            .param_entries_mut(false)
            .into_iter()
            .map(|(_, _, t)| t)
            .chain(dec.param_entries_mut().into_iter().map(|(_, _, t)| t))
            .collect();
        opts[0].1.step(&mut params)?;
        acc.recon += recon_raw as f64;
    }

    // step 2: discriminator on constant latents vs prior samples
    {
        let (mu2, lv2) = enc.infer(&x.data, rows);
        let noise2: Vec<f32> = (0..rows * latent)
            .map(|_| noise_rng.sample(StandardNormal))
            .collect();
        let z_enc = reparameterize_values(&mu2, &lv2, &noise2);
        let (z_prior, prior_labels) = match sphere {
            Some(sp) => {
                let samples =
                    prior::sample_prior(sp.center()?, sp.radius, cfg.nu_prior, rows, prior_rng);
                let labels = prior::assign_labels(&samples, sp.center()?, sp.radius)?;
                (samples.data, labels.data)
            }
            // plain aae: standard-normal prior, every sample is prior class
            None => {
                let s: Vec<f32> = (0..rows * latent)
                    .map(|_| prior_rng.sample(StandardNormal))
                    .collect();
                (s, vec![1.0; rows])
            }
        };

        #[cfg(debug_assertions)]
        let frozen = (bits_hash(&enc.param_entries(false)), bits_hash(&dec.param_entries()));

        let mut t = Tape::new();
        let dcv = disc.stage(&mut t, true);
        let ze = t.input_slice(rows, latent, &z_enc);
        let zp = t.input_slice(rows, latent, &z_prior);
        let d_enc = dcv.forward(&mut t, ze)?;
        let d_prior = dcv.forward(&mut t, zp)?;
        let zeros = vec![0.0f32; rows];
        let enc_labels = t.input_slice(rows, 1, &zeros);
        let pl = t.input_slice(rows, 1, &prior_labels);
        let loss_d = discriminator_loss(&mut t, d_enc, enc_labels, d_prior, pl)?;
        let disc_raw = check_finite(t.value(loss_d)[0], "discriminator", epoch)?;
        let mut g = t.backward(loss_d)?;
        dcv.write_grads(&mut g, disc)?;
        let mut params: Vec<&mut Tensor> = disc
            .param_entries_mut()
            .into_iter()
            .map(|(_, _, t)| t)
            .collect();
        opts[1].1.step(&mut params)?;
        acc.disc += disc_raw as f64;

        #[cfg(debug_assertions)]
        debug_assert_eq!(
            frozen,
            (bits_hash(&enc.param_entries(false)), bits_hash(&dec.param_entries())),
            "discriminator step touched encoder or decoder"
        );
    }

    // step 3: encoder-adversarial through the frozen discriminator
    {
        #[cfg(debug_assertions)]
        let frozen = (bits_hash(&disc.param_entries()), bits_hash(&dec.param_entries()));

        let mut t = Tape::new();
        let ev = enc.stage(&mut t, true);
        let dcv = disc.stage(&mut t, false);
        let xv = t.input(x);
        let (mu, logvar) = ev.forward(&mut t, xv)?;
        let noise = normal_tensor(rows, latent, noise_rng);
        let z = reparameterize(&mut t, mu, logvar, &noise)?;
        let d_out = dcv.forward(&mut t, z)?;
        let g_loss = generator_loss(&mut t, d_out)?;
        let adv_raw = check_finite(t.value(g_loss)[0], "adversarial", epoch)?;
        let loss = match sphere {
            None => t.scale_shift(g_loss, cfg.w_adv, 0.0),
            Some(sp) => {
                let sv = dsvdd_loss(&mut t, mu, sp)?;
                let sv_raw = check_finite(t.value(sv)[0], "dsvdd", epoch)?;
                acc.dsvdd += sv_raw as f64;
                acc.hinge += (sv_raw - sp.radius * sp.radius) as f64;
                let zero = t.input(&Tensor::scalar(0.0));
                combined_loss(&mut t, zero, g_loss, sv, [cfg.w_rec, cfg.w_adv, cfg.w_svdd])?
            }
        };
        check_finite(t.value(loss)[0], "combined", epoch)?;
        let mut g = t.backward(loss)?;
        ev.write_grads(&mut g, enc)?;
        let mut params: Vec<&mut Tensor> = enc
            .param_entries_mut(false)
            .into_iter()
            .map(|(_, _, t)| t)
            .collect();
        opts[2].1.step(&mut params)?;
        acc.adv += adv_raw as f64;

        #[cfg(debug_assertions)]
        debug_assert_eq!(
            frozen,
            (bits_hash(&disc.param_entries()), bits_hash(&dec.param_entries())),
            "adversarial step touched discriminator or decoder"
        );
    }

    acc.batches += 1;
    Ok(())
}
