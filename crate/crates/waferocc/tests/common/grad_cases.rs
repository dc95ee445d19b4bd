//! Randomized gradient-check cases shared by the finite-difference suite
//! and the acceptance gate. Each case stages a loss on the tape, extracts
//! autodiff gradients, and carries an f64 reference closure for central
//! differences.

use super::fd::{self, central_diff_check, RefFn, Shape, M};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waferocc::nn::{
    combined_loss, discriminator_loss, dsvdd_loss, generator_loss, reparameterize,
    DecoderParams, DiscriminatorParams, EncoderParams, HypersphereParams, LinearVars,
};
use waferocc::tensor::{Gradients, Tape, Tensor};

pub const TOL: f64 = 1e-3;
const CHANNELS: usize = 3;

fn shapes_of(entries: &[(String, &Tensor)]) -> Vec<Shape> {
    entries
        .iter()
        .map(|(_, t)| match t.shape.as_slice() {
            [r, c] => Shape { rows: *r, cols: *c },
            [n] => Shape { rows: 0, cols: *n },
            other => panic!("unexpected tensor rank {other:?}"),
        })
        .collect()
}

fn flatten_values(entries: &[(String, &Tensor)]) -> Vec<f64> {
    entries
        .iter()
        .flat_map(|(_, t)| t.data.iter().map(|&v| v as f64))
        .collect()
}

fn flatten_grads(g: &Gradients, vars: &[LinearVars]) -> Vec<f64> {
    let mut out = Vec::new();
    for lv in vars {
        out.extend(g.get(lv.w).expect("weight grad").iter().map(|&v| v as f64));
        if let Some(b) = lv.b {
            out.extend(g.get(b).expect("bias grad").iter().map(|&v| v as f64));
        }
    }
    out
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub struct Case {
    pub name: String,
    pub theta: Vec<f64>,
    pub grad: Vec<f64>,
    pub loss_ad: f64,
    pub reference: Box<RefFn>,
}

pub struct CaseStats {
    pub params: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Central-difference verification of one case. Errors carry the case name
/// and the worst offending coordinate.
pub fn check_case(case: Case) -> Result<CaseStats, String> {
    let (loss_ref, _) = (case.reference)(&case.theta);
    let scale = loss_ref.abs().max(1.0);
    if (loss_ref - case.loss_ad).abs() / scale >= 1e-4 {
        return Err(format!(
            "{}: reference loss {} vs autodiff loss {}",
            case.name, loss_ref, case.loss_ad
        ));
    }
    let stats = central_diff_check(&case.theta, &case.grad, case.reference.as_ref(), TOL);
    if !stats.failures.is_empty() {
        return Err(format!(
            "{}: {} gradient mismatches, worst {:?}, max rel err {}",
            case.name,
            stats.failures.len(),
            stats.failures.first(),
            stats.max_rel_err
        ));
    }
    let frac = stats.checked as f64 / case.theta.len() as f64;
    if frac < 0.9 {
        return Err(format!(
            "{}: only {:.0}% of coordinates were checkable",
            case.name,
            frac * 100.0
        ));
    }
    Ok(CaseStats {
        params: case.theta.len(),
        checked: stats.checked,
        skipped: stats.skipped,
        max_rel_err: stats.max_rel_err,
    })
}

pub fn run_case(case: Case) {
    if let Err(msg) = check_case(case) {
        panic!("{msg}");
    }
}

/// (weight, optional bias) of one output head in reference form.
type Head = (M, Option<Vec<f64>>);

/// Splits reference mats into (trunk mlp mats, mean head, logvar head).
fn split_encoder_mats(
    mats: &[M],
    trunk_layers: usize,
    biased: bool,
    full: bool,
) -> (Vec<M>, Head, Option<Head>) {
    let per = if biased { 2 } else { 1 };
    let trunk: Vec<M> = mats[..trunk_layers * per].to_vec();
    let mut off = trunk_layers * per;
    let take_head = |off: &mut usize| -> Head {
        let w = mats[*off].clone();
        *off += 1;
        let b = if biased {
            let b = mats[*off].d.clone();
            *off += 1;
            Some(b)
        } else {
            None
        };
        (w, b)
    };
    let mean = take_head(&mut off);
    let logvar = if full { Some(take_head(&mut off)) } else { None };
    assert_eq!(off, mats.len());
    (trunk, mean, logvar)
}

pub fn hinge_case(idx: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + idx);
    let d = rng.gen_range(5..9);
    let h1 = rng.gen_range(4..7);
    let latent = rng.gen_range(2..5);
    let n = rng.gen_range(2..6);
    let biased = idx.is_multiple_of(2);
    let deep = idx.is_multiple_of(3);
    let widths: Vec<usize> = if deep { vec![d, h1, h1] } else { vec![d, h1] };
    let trunk_layers = widths.len() - 1;

    let enc = EncoderParams::new(&widths, latent, biased, &mut rng);
    let mut hyper = HypersphereParams::new(rng.gen_range(0.05..0.9), 1.0, 0.0);
    let center = uniform(&mut rng, latent, -0.5, 0.5);
    hyper.center = Some(center.clone());
    hyper.radius = rng.gen_range(0.3..1.2);
    let x = uniform(&mut rng, n * d, -1.0, 1.0);

    let mut t = Tape::new();
    let ev = enc.stage_mean(&mut t, true);
    let xv = t.input_slice(n, d, &x);
    let mu = ev.forward(&mut t, xv).unwrap();
    let loss = dsvdd_loss(&mut t, mu, &hyper).unwrap();
    let loss_ad = t.value(loss)[0] as f64;
    let g = t.backward(loss).unwrap();
    let mut vars: Vec<LinearVars> = ev.trunk.clone();
    vars.push(ev.head_mean);
    let grad = flatten_grads(&g, &vars);

    let entries = enc.param_entries(true);
    let theta = flatten_values(&entries);
    let shapes = shapes_of(&entries);

    let x64 = M::new(n, d, fd::to_f64(&x));
    let c64 = fd::to_f64(&center);
    let (radius, nu) = (hyper.radius as f64, hyper.nu_svdd as f64);
    let reference = move |theta: &[f64]| -> (f64, Vec<bool>) {
        let mats = fd::unflatten(theta, &shapes);
        let (trunk, (wm, bm), _) = split_encoder_mats(&mats, trunk_layers, biased, false);
        let mut mask = Vec::new();
        let h = fd::Mlp { mats: &trunk, biased }.trunk(&x64, &mut mask);
        let mu = fd::linear(&h, &wm, bm.as_deref());
        let loss = fd::hinge_loss(&mu, &c64, radius, nu, &mut mask);
        (loss, mask)
    };

    Case {
        name: format!("hinge[{idx}] d={d} widths={widths:?} latent={latent} biased={biased}"),
        theta,
        grad,
        loss_ad,
        reference: Box::new(reference),
    }
}

/// Shared builder for the three AAE-path families. `kind` picks the loss:
/// 0 recon L1, 1 adversarial BCE, 2 combined.
pub fn aae_case(idx: u64, kind: u8) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + 100 * kind as u64 + idx);
    let d = rng.gen_range(5..8);
    let h1 = rng.gen_range(4..7);
    let latent = rng.gen_range(2..4);
    let n = rng.gen_range(2..5);
    let out = CHANNELS * rng.gen_range(2..4);
    let widths = vec![d, h1];

    let enc = EncoderParams::new(&widths, latent, true, &mut rng);
    let dec = DecoderParams::new(&[latent, h1, out], &mut rng);
    let disc = DiscriminatorParams::new(&[latent, h1, 1], &mut rng);
    let mut hyper = HypersphereParams::new(rng.gen_range(0.1..0.8), 1.0, 0.0);
    let center = uniform(&mut rng, latent, -0.5, 0.5);
    hyper.center = Some(center.clone());
    hyper.radius = rng.gen_range(0.4..1.0);

    let x = uniform(&mut rng, n * d, -1.0, 1.0);
    let noise = uniform(&mut rng, n * latent, -1.5, 1.5);
    let target = uniform(&mut rng, n * out, 0.05, 0.95);
    let weights = [
        rng.gen_range(0.5..2.0f32),
        rng.gen_range(0.5..2.0f32),
        rng.gen_range(0.5..2.0f32),
    ];

    let noise_t = Tensor::new(vec![n, latent], noise.clone()).unwrap();

    // only the networks the loss actually reaches go on the tape; a dead
    // branch would leave its parameters without gradients
    let has_dec = kind != 1;
    let has_disc = kind != 0;

    let mut t = Tape::new();
    let ev = enc.stage(&mut t, true);
    let xv = t.input_slice(n, d, &x);
    let (mu, lv) = ev.forward(&mut t, xv).unwrap();
    let z = reparameterize(&mut t, mu, lv, &noise_t).unwrap();
    let dv = has_dec.then(|| dec.stage(&mut t, true));
    let cv = has_disc.then(|| disc.stage(&mut t, true));
    let l1 = dv.as_ref().map(|dv| {
        let xhat = dv.forward(&mut t, z).unwrap();
        let tv = t.input_slice(n, out, &target);
        t.l1_mean(xhat, tv).unwrap()
    });
    let adv = cv.as_ref().map(|cv| {
        let d_out = cv.forward(&mut t, z).unwrap();
        generator_loss(&mut t, d_out).unwrap()
    });
    let loss = match kind {
        0 => l1.unwrap(),
        1 => adv.unwrap(),
        _ => {
            let hing = dsvdd_loss(&mut t, mu, &hyper).unwrap();
            combined_loss(&mut t, l1.unwrap(), adv.unwrap(), hing, weights).unwrap()
        }
    };
    let loss_ad = t.value(loss)[0] as f64;
    let g = t.backward(loss).unwrap();

    let mut vars: Vec<LinearVars> = ev.trunk.clone();
    vars.push(ev.head_mean);
    vars.push(ev.head_logvar);
    if let Some(dv) = &dv {
        vars.extend(dv.layers.iter().copied());
    }
    if let Some(cv) = &cv {
        vars.extend(cv.layers.iter().copied());
    }
    let grad = flatten_grads(&g, &vars);

    let mut entries = enc.param_entries(false);
    if has_dec {
        entries.extend(dec.param_entries());
    }
    if has_disc {
        entries.extend(disc.param_entries());
    }
    let theta = flatten_values(&entries);
    let shapes = shapes_of(&entries);

    let enc_mats = enc.param_entries(false).len();
    let dec_mats = if has_dec { dec.param_entries().len() } else { 0 };
    let x64 = M::new(n, d, fd::to_f64(&x));
    let noise64 = M::new(n, latent, fd::to_f64(&noise));
    let target64 = M::new(n, out, fd::to_f64(&target));
    let c64 = fd::to_f64(&center);
    let (radius, nu) = (hyper.radius as f64, hyper.nu_svdd as f64);
    let w64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
    let reference = move |theta: &[f64]| -> (f64, Vec<bool>) {
        let mats = fd::unflatten(theta, &shapes);
        let (trunk, (wm, bm), logvar) = split_encoder_mats(&mats[..enc_mats], 1, true, true);
        let (wl, bl) = logvar.unwrap();
        let mut mask = Vec::new();
        let h = fd::Mlp { mats: &trunk, biased: true }.trunk(&x64, &mut mask);
        let mu = fd::linear(&h, &wm, bm.as_deref());
        let lv = fd::linear(&h, &wl, bl.as_deref());
        let z = fd::reparameterize(&mu, &lv, &noise64);
        let l1 = has_dec.then(|| {
            let dec_m = &mats[enc_mats..enc_mats + dec_mats];
            let raw = fd::Mlp { mats: dec_m, biased: true }.stack(&z, &mut mask);
            fd::l1_mean(&fd::softmax_groups(&raw, CHANNELS), &target64, &mut mask)
        });
        let adv = has_disc.then(|| {
            let disc_m = &mats[enc_mats + dec_mats..];
            let p = fd::sigmoid(&fd::Mlp { mats: disc_m, biased: true }.stack(&z, &mut mask));
            let ones = M::new(p.r, p.c, vec![1.0; p.d.len()]);
            fd::bce_mean(&p, &ones)
        });
        let loss = match kind {
            0 => l1.unwrap(),
            1 => adv.unwrap(),
            _ => {
                let hing = fd::hinge_loss(&mu, &c64, radius, nu, &mut mask);
                w64[0] * l1.unwrap() + w64[1] * adv.unwrap() + w64[2] * hing
            }
        };
        (loss, mask)
    };

    let family = match kind {
        0 => "recon",
        1 => "adv",
        _ => "combined",
    };
    Case {
        name: format!("{family}[{idx}] d={d} latent={latent} out={out} n={n}"),
        theta,
        grad,
        loss_ad,
        reference: Box::new(reference),
    }
}

pub fn disc_case(idx: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + idx);
    let latent = rng.gen_range(2..5);
    let h1 = rng.gen_range(4..7);
    let n_enc = rng.gen_range(2..5);
    let n_prior = rng.gen_range(2..5);

    let disc = DiscriminatorParams::new(&[latent, h1, 1], &mut rng);
    let z_enc = uniform(&mut rng, n_enc * latent, -1.0, 1.0);
    let z_prior = uniform(&mut rng, n_prior * latent, -1.0, 1.0);
    let lab_enc = vec![0.0f32; n_enc];
    let lab_prior: Vec<f32> = (0..n_prior).map(|i| (i % 2) as f32).collect();

    let mut t = Tape::new();
    let cv = disc.stage(&mut t, true);
    let ze = t.input_slice(n_enc, latent, &z_enc);
    let zp = t.input_slice(n_prior, latent, &z_prior);
    let de = cv.forward(&mut t, ze).unwrap();
    let dp = cv.forward(&mut t, zp).unwrap();
    let le = t.input_slice(n_enc, 1, &lab_enc);
    let lp = t.input_slice(n_prior, 1, &lab_prior);
    let loss = discriminator_loss(&mut t, de, le, dp, lp).unwrap();
    let loss_ad = t.value(loss)[0] as f64;
    let g = t.backward(loss).unwrap();
    let grad = flatten_grads(&g, &cv.layers);

    let entries = disc.param_entries();
    let theta = flatten_values(&entries);
    let shapes = shapes_of(&entries);

    let ze64 = M::new(n_enc, latent, fd::to_f64(&z_enc));
    let zp64 = M::new(n_prior, latent, fd::to_f64(&z_prior));
    let le64 = M::new(n_enc, 1, fd::to_f64(&lab_enc));
    let lp64 = M::new(n_prior, 1, fd::to_f64(&lab_prior));
    let reference = move |theta: &[f64]| -> (f64, Vec<bool>) {
        let mats = fd::unflatten(theta, &shapes);
        let mlp = fd::Mlp { mats: &mats, biased: true };
        let mut mask = Vec::new();
        let pe = fd::sigmoid(&mlp.stack(&ze64, &mut mask));
        let pp = fd::sigmoid(&mlp.stack(&zp64, &mut mask));
        let loss = 0.5 * (fd::bce_mean(&pe, &le64) + fd::bce_mean(&pp, &lp64));
        (loss, mask)
    };

    Case {
        name: format!("disc[{idx}] latent={latent} n={n_enc}+{n_prior}"),
        theta,
        grad,
        loss_ad,
        reference: Box::new(reference),
    }
}

/// The canonical 21-configuration sweep: 5 hinge, 4 per AAE family, 4
/// discriminator.
pub fn all_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    for idx in 0..5 {
        cases.push(hinge_case(idx));
    }
    for kind in [0u8, 1, 2] {
        for idx in 0..4 {
            cases.push(aae_case(idx, kind));
        }
    }
    for idx in 0..4 {
        cases.push(disc_case(idx));
    }
    cases
}
