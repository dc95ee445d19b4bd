//! Monitored training runs: loss trajectories, soft-boundary behavior,
//! prior-scale pairing, checkpoint round trips, and resume equivalence.

mod common;

use common::data;
use std::path::Path;
use waferocc::eval;
use waferocc::train::{self, load_checkpoint, save_checkpoint, ModelBundle, TrainConfig};
use waferocc::wafer::{encode_batch, generate_synthetic, WaferLabel, WaferMap};

fn cfg_for(model: &str, epochs: u32, seed: u64, extra: &[(&str, &str)]) -> TrainConfig {
    let mut text = format!(
        "model={model}\nepochs={epochs}\nseed={seed}\ntrain_path=unused\ncheckpoint_path=unused\n"
    );
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    let cfg = TrainConfig::parse(&text, Path::new(".")).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn mean_latent_distance(bundle: &ModelBundle, maps: &[WaferMap]) -> f64 {
    let data = encode_batch(maps);
    let mu = bundle.encoder.infer_mu(&data.data, maps.len());
    let latent = bundle.encoder.latent_dim();
    let center = &bundle.sphere.as_ref().expect("sphere state").center;
    mu.chunks_exact(latent)
        .map(|row| {
            row.iter()
                .zip(center)
                .map(|(&z, &c)| ((z - c) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / maps.len() as f64
}

fn outside_fraction(bundle: &ModelBundle, maps: &[WaferMap]) -> f64 {
    let data = encode_batch(maps);
    let mu = bundle.encoder.infer_mu(&data.data, maps.len());
    let latent = bundle.encoder.latent_dim();
    let sphere = bundle.sphere.as_ref().expect("sphere state");
    let r = sphere.radius as f64;
    let outside = mu
        .chunks_exact(latent)
        .filter(|row| {
            let d2: f64 = row
                .iter()
                .zip(&sphere.center)
                .map(|(&z, &c)| ((z - c) as f64).powi(2))
                .sum();
            d2.sqrt() > r
        })
        .count();
    outside as f64 / maps.len() as f64
}

#[test]
fn dsvdd_hinge_decreases_and_respects_soft_boundary() {
    let maps = data::none_maps(256, 40);
    let cfg = cfg_for("dsvdd", 5, 1, &[]);
    let (bundle, log) = train::train(&cfg, &maps).unwrap();

    assert_eq!(log.records.len(), 5);
    let first = log.records.first().unwrap();
    let last = log.records.last().unwrap();
    assert!(
        last.hinge < first.hinge,
        "hinge did not decrease: {} -> {}",
        first.hinge,
        last.hinge
    );
    let sphere = bundle.sphere.as_ref().unwrap();
    assert!(sphere.radius > 0.0 && sphere.radius.is_finite());

    let frac = outside_fraction(&bundle, &maps);
    assert!(
        frac <= cfg.nu_svdd as f64 + 0.05,
        "outside fraction {frac} exceeds nu + 0.05"
    );
}

#[test]
fn aae_reconstruction_decreases_and_discriminator_stays_bounded() {
    let maps = data::none_maps(256, 41);
    let cfg = cfg_for("aae", 5, 2, &[]);
    let (bundle, log) = train::train(&cfg, &maps).unwrap();

    for pair in log.records.windows(2) {
        assert!(
            pair[1].recon < pair[0].recon,
            "reconstruction loss rose between epochs {} and {}: {} -> {}",
            pair[0].epoch,
            pair[1].epoch,
            pair[0].recon,
            pair[1].recon
        );
    }
    let band = 2.0 * std::f64::consts::LN_2 + 1.0;
    for r in &log.records[1..] {
        assert!(
            r.disc > 0.0 && r.disc < band,
            "epoch {} discriminator loss {} left (0, {band})",
            r.epoch,
            r.disc
        );
    }

    // a training map reconstructs better than a Random-pattern map
    let train_sample = &maps[..32];
    let random_maps: Vec<WaferMap> = (0..32)
        .map(|i| generate_synthetic(WaferLabel::Random, 64, 64, 900 + i, 0.05).unwrap())
        .collect();
    let train_l1 = eval::score_maps(&bundle, train_sample).unwrap();
    let random_l1 = eval::score_maps(&bundle, &random_maps).unwrap();
    let mean = |v: &[f32]| v.iter().map(|&s| s as f64).sum::<f64>() / v.len() as f64;
    assert!(
        mean(&train_l1) < mean(&random_l1),
        "train L1 {} not below random L1 {}",
        mean(&train_l1),
        mean(&random_l1)
    );
}

#[test]
fn aae_dsvdd_mean_distance_decreases() {
    let maps = data::none_maps(256, 42);
    // small batches give each epoch enough optimizer steps for the inward
    // pull to dominate adversarial noise within a 5-epoch window
    let cfg = cfg_for("aae_dsvdd", 5, 3, &[("nu_prior", "1.0"), ("batch_size", "8")]);
    let (bundle, log) = train::train(&cfg, &maps).unwrap();

    for pair in log.records.windows(2) {
        assert!(
            pair[1].dist < pair[0].dist,
            "mean latent distance rose between epochs {} and {}: {} -> {}",
            pair[0].epoch,
            pair[1].epoch,
            pair[0].dist,
            pair[1].dist
        );
    }
    let frac = outside_fraction(&bundle, &maps);
    assert!(
        frac <= cfg.nu_svdd as f64 + 0.05,
        "outside fraction {frac} exceeds nu + 0.05"
    );
}

#[test]
fn nu_prior_pairing_pulls_latents_inward() {
    let maps = data::none_maps(192, 43);
    let tight = cfg_for("aae_dsvdd", 4, 7, &[("nu_prior", "0.8")]);
    let loose = cfg_for("aae_dsvdd", 4, 7, &[("nu_prior", "1.2")]);
    let (bundle_tight, _) = train::train(&tight, &maps).unwrap();
    let (bundle_loose, _) = train::train(&loose, &maps).unwrap();

    let d_tight = mean_latent_distance(&bundle_tight, &maps);
    let d_loose = mean_latent_distance(&bundle_loose, &maps);
    assert!(
        d_tight < d_loose,
        "nu_prior 0.8 distance {d_tight} not below 1.2 distance {d_loose}"
    );
}

#[test]
fn checkpoint_roundtrip_preserves_validation_scores() {
    let maps = data::none_maps(64, 44);
    let cfg = cfg_for("aae_dsvdd", 2, 5, &[]);
    let (bundle, _) = train::train(&cfg, &maps).unwrap();

    let mut sample = data::none_maps(16, 45);
    sample.extend(data::defect_maps(3, 46));
    let before = eval::score_maps(&bundle, &sample).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round.ckpt");
    save_checkpoint(&bundle, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let after = eval::score_maps(&loaded, &sample).unwrap();
    assert_eq!(before, after, "scores drifted across the round trip");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let maps = data::none_maps(128, 47);
    let full = cfg_for("dsvdd", 5, 9, &[]);
    let (bundle_full, log_full) = train::train(&full, &maps).unwrap();

    let short = cfg_for("dsvdd", 4, 9, &[]);
    let (bundle_short, _) = train::train(&short, &maps).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("part.ckpt");
    save_checkpoint(&bundle_short, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();

    let (bundle_resumed, log_tail) = train::resume(&full, &maps, reloaded).unwrap();
    assert_eq!(bundle_full, bundle_resumed);
    assert_eq!(log_tail.records.len(), 1);
    let a = log_full.records.last().unwrap();
    let b = log_tail.records.last().unwrap();
    assert_eq!((a.epoch, a.dsvdd, a.hinge, a.dist, a.radius), (b.epoch, b.dsvdd, b.hinge, b.dist, b.radius));
}
