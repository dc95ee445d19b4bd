//! Wafer-map representation, categorical encoding, and dataset plumbing.

pub mod format;
pub mod split;
pub mod synth;

pub use format::{convert_manifest, load_dataset, save_dataset};
pub use split::{split_dataset, DatasetSplit, SplitRatios};
pub use synth::generate_synthetic;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CELL_MARGIN: u8 = 0;
pub const CELL_NORMAL: u8 = 1;
pub const CELL_DEFECT: u8 = 2;

/// Side length every map is resized to before entering a network.
pub const TARGET_SIZE: usize = 64;
/// Channels of the one-hot encoding: margin, normal, defect.
pub const CHANNELS: usize = 3;
/// Flattened length of one encoded wafer.
pub const ENCODED_LEN: usize = CHANNELS * TARGET_SIZE * TARGET_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaferLabel {
    None,
    Loc,
    EdgeLoc,
    EdgeRing,
    Center,
    Scratch,
    Random,
    NearFull,
    Donut,
    Unlabeled,
}

impl WaferLabel {
    pub const ALL: [WaferLabel; 10] = [
        WaferLabel::None,
        WaferLabel::Loc,
        WaferLabel::EdgeLoc,
        WaferLabel::EdgeRing,
        WaferLabel::Center,
        WaferLabel::Scratch,
        WaferLabel::Random,
        WaferLabel::NearFull,
        WaferLabel::Donut,
        WaferLabel::Unlabeled,
    ];

    pub fn code(self) -> u8 {
        match self {
            WaferLabel::None => 0,
            WaferLabel::Loc => 1,
            WaferLabel::EdgeLoc => 2,
            WaferLabel::EdgeRing => 3,
            WaferLabel::Center => 4,
            WaferLabel::Scratch => 5,
            WaferLabel::Random => 6,
            WaferLabel::NearFull => 7,
            WaferLabel::Donut => 8,
            WaferLabel::Unlabeled => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<WaferLabel> {
        WaferLabel::ALL.into_iter().find(|l| l.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            WaferLabel::None => "None",
            WaferLabel::Loc => "Loc",
            WaferLabel::EdgeLoc => "Edge-Loc",
            WaferLabel::EdgeRing => "Edge-Ring",
            WaferLabel::Center => "Center",
            WaferLabel::Scratch => "Scratch",
            WaferLabel::Random => "Random",
            WaferLabel::NearFull => "Near-full",
            WaferLabel::Donut => "Donut",
            WaferLabel::Unlabeled => "Unlabeled",
        }
    }

    /// Accepts the display names above plus hyphen-free aliases,
    /// case-insensitively.
    pub fn parse(s: &str) -> Option<WaferLabel> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_' && !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        WaferLabel::ALL.into_iter().find(|l| {
            l.name()
                .chars()
                .filter(|c| *c != '-')
                .collect::<String>()
                .to_ascii_lowercase()
                == norm
        })
    }
}

/// A tested wafer: grid of die states (0 margin, 1 normal, 2 defect)
/// plus a pattern label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaferMap {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<u8>,
    pub label: WaferLabel,
}

impl WaferMap {
    pub fn new(height: usize, width: usize, cells: Vec<u8>, label: WaferLabel) -> Result<Self> {
        let map = WaferMap {
            height,
            width,
            cells,
            label,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Data(format!(
                "wafer map has degenerate size {}x{}",
                self.height, self.width
            )));
        }
        if self.cells.len() != self.height * self.width {
            return Err(Error::Data(format!(
                "wafer map {}x{} carries {} cells",
                self.height,
                self.width,
                self.cells.len()
            )));
        }
        if let Some(bad) = self.cells.iter().find(|&&c| c > CELL_DEFECT) {
            return Err(Error::Data(format!("invalid cell value {bad}")));
        }
        if self.cells.iter().all(|&c| c == CELL_MARGIN) {
            return Err(Error::Data("wafer map contains no dies".into()));
        }
        Ok(())
    }

    pub fn cell(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.width + j]
    }
}

/// One-hot 3 x 64 x 64 encoding of a wafer map.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWafer {
    pub tensor: Tensor,
}

/// Nearest-neighbor resize on the categorical grid:
/// out(i,j) = in(floor(i*H/h), floor(j*W/w)).
pub fn resize_nearest(map: &WaferMap, h: usize, w: usize) -> WaferMap {
    assert!(h >= 1 && w >= 1);
    if map.height == h && map.width == w {
        return map.clone();
    }
    let mut cells = Vec::with_capacity(h * w);
    for i in 0..h {
        let si = i * map.height / h;
        for j in 0..w {
            let sj = j * map.width / w;
            cells.push(map.cell(si, sj));
        }
    }
    WaferMap {
        height: h,
        width: w,
        cells,
        label: map.label,
    }
}

/// Resize to `target` x `target`, then expand to one channel per die state,
/// channel order (margin, normal, defect), channel-major layout.
pub fn encode_one_hot(map: &WaferMap, target: usize) -> EncodedWafer {
    let resized = resize_nearest(map, target, target);
    let hw = target * target;
    let mut data = vec![0.0f32; CHANNELS * hw];
    for (p, &c) in resized.cells.iter().enumerate() {
        data[c as usize * hw + p] = 1.0;
    }
    EncodedWafer {
        tensor: Tensor::new(vec![CHANNELS, target, target], data).expect("sized above"),
    }
}

/// Flattens encoded wafers into one network batch, position-major with the
/// 3 channel values adjacent (index p*3 + c). The decoder's grouped softmax
/// and the L1 target both assume this layout.
pub fn batch_from_encoded(wafers: &[&EncodedWafer]) -> Tensor {
    let rows = wafers.len();
    let mut data = vec![0.0f32; rows * ENCODED_LEN];
    let hw = TARGET_SIZE * TARGET_SIZE;
    for (r, w) in wafers.iter().enumerate() {
        let src = &w.tensor.data;
        debug_assert_eq!(src.len(), ENCODED_LEN);
        let dst = &mut data[r * ENCODED_LEN..(r + 1) * ENCODED_LEN];
        for p in 0..hw {
            for c in 0..CHANNELS {
                dst[p * CHANNELS + c] = src[c * hw + p];
            }
        }
    }
    Tensor::new(vec![rows, ENCODED_LEN], data).expect("sized above")
}

/// Encode and batch a slice of maps in one go.
pub fn encode_batch(maps: &[WaferMap]) -> Tensor {
    let encoded: Vec<EncodedWafer> = maps.iter().map(|m| encode_one_hot(m, TARGET_SIZE)).collect();
    let refs: Vec<&EncodedWafer> = encoded.iter().collect();
    batch_from_encoded(&refs)
}
