//! Synthetic wafer-map generator.
//!
//! Draws a circular wafer of normal dies with margin corners, then applies
//! one defect pattern. Every map is a pure function of
//! (pattern, h, w, seed, defect_rate): the RNG is seeded from `seed` with
//! the pattern code as the stream, so the same seed yields independent
//! draws per pattern.

use super::{WaferLabel, WaferMap, CELL_DEFECT, CELL_MARGIN, CELL_NORMAL};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pattern geometry, as fractions of the wafer disk radius.
const CENTER_R_LO: f64 = 0.20;
const CENTER_R_HI: f64 = 0.35;
const CENTER_KEEP: f64 = 0.85;
const EDGE_RING_LO: f64 = 0.90;
const DONUT_LO: f64 = 0.45;
const DONUT_HI: f64 = 0.55;
const DONUT_KEEP: f64 = 0.90;
const NONE_RATE_CAP: f64 = 0.02;
const RANDOM_RATE_FLOOR: f64 = 0.25;

pub fn generate_synthetic(
    pattern: WaferLabel,
    h: usize,
    w: usize,
    seed: u64,
    defect_rate: f64,
) -> Result<WaferMap> {
    if !(0.0..=1.0).contains(&defect_rate) {
        return Err(Error::Data(format!(
            "defect rate {defect_rate} outside [0, 1]"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("degenerate wafer size {h}x{w}")));
    }
    let supported = matches!(
        pattern,
        WaferLabel::None
            | WaferLabel::Center
            | WaferLabel::EdgeRing
            | WaferLabel::Scratch
            | WaferLabel::Donut
            | WaferLabel::Random
    );
    if !supported {
        return Err(Error::Data(format!(
            "unsupported synthetic pattern {}",
            pattern.name()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pattern.code() as u64);

    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let disk_r = h.min(w) as f64 / 2.0 - 0.5;

    let mut cells = vec![CELL_MARGIN; h * w];
    let mut inside = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            if (dy * dy + dx * dx).sqrt() <= disk_r + 1e-9 {
                cells[i * w + j] = CELL_NORMAL;
                inside.push((i, j, (dy * dy + dx * dx).sqrt()));
            }
        }
    }

    match pattern {
        WaferLabel::None => {
            let rate = defect_rate.min(NONE_RATE_CAP);
            for &(i, j, _) in &inside {
                if rng.gen::<f64>() < rate {
                    cells[i * w + j] = CELL_DEFECT;
                }
            }
        }
        WaferLabel::Random => {
            let rate = defect_rate.max(RANDOM_RATE_FLOOR);
            for &(i, j, _) in &inside {
                if rng.gen::<f64>() < rate {
                    cells[i * w + j] = CELL_DEFECT;
                }
            }
        }
        WaferLabel::Center => {
            let r = rng.gen_range(CENTER_R_LO..CENTER_R_HI) * disk_r;
            for &(i, j, d) in &inside {
                if d <= r && rng.gen::<f64>() < CENTER_KEEP {
                    cells[i * w + j] = CELL_DEFECT;
                }
            }
        }
        WaferLabel::EdgeRing => {
            let lo = EDGE_RING_LO * disk_r;
            for &(i, j, d) in &inside {
                if d >= lo {
                    cells[i * w + j] = CELL_DEFECT;
                }
            }
        }
        WaferLabel::Donut => {
            let (lo, hi) = (DONUT_LO * disk_r, DONUT_HI * disk_r);
            for &(i, j, d) in &inside {
                if d >= lo && d <= hi && rng.gen::<f64>() < DONUT_KEEP {
                    cells[i * w + j] = CELL_DEFECT;
                }
            }
        }
        WaferLabel::Scratch => {
            // line segment through a random interior point, 1-2 cells wide
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let len = rng.gen_range(0.5..0.9) * 2.0 * disk_r;
            let py = cy + rng.gen_range(-0.4..0.4) * disk_r;
            let px = cx + rng.gen_range(-0.4..0.4) * disk_r;
            let half_width = if rng.gen::<bool>() { 0.5 } else { 1.0 };
            let (dy, dx) = (angle.sin(), angle.cos());
            for &(i, j, _) in &inside {
                let vy = i as f64 - py;
                let vx = j as f64 - px;
                let along = vy * dy + vx * dx;
                let across = (vy * dx - vx * dy).abs();
                if along.abs() <= len / 2.0 && across <= half_width {
                    cells[i * w + j] = CELL_DEFECT;
                }
            }
        }
        _ => unreachable!("filtered above"),
    }

    WaferMap::new(h, w, cells, pattern)
}
