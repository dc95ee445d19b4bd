//! WMD1 binary dataset format and the CSV manifest converter.
//!
//! Layout (little-endian): magic "WMD1", record count u32, then per record
//! h u16, w u16, label u8 (0=None .. 8=Donut, 255=Unlabeled), h*w cell
//! bytes in {0,1,2}. Round trips are bit-exact.

use super::{WaferLabel, WaferMap, CELL_DEFECT};
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"WMD1";

pub fn save_dataset(maps: &[WaferMap], path: &Path) -> Result<()> {
    for m in maps {
        m.validate()?;
        if m.height > u16::MAX as usize || m.width > u16::MAX as usize {
            return Err(Error::Data(format!(
                "map size {}x{} exceeds the u16 format limit",
                m.height, m.width
            )));
        }
    }
    if maps.len() > u32::MAX as usize {
        return Err(Error::Data("dataset exceeds u32 record count".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(maps.len() as u32).to_le_bytes())?;
    for m in maps {
        w.write_all(&(m.height as u16).to_le_bytes())?;
        w.write_all(&(m.width as u16).to_le_bytes())?;
        w.write_all(&[m.label.code()])?;
        w.write_all(&m.cells)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Data(format!("truncated dataset: {what}")))
}

pub fn load_dataset(path: &Path) -> Result<Vec<WaferMap>> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "missing magic")?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "bad magic {:02x?}, not a WMD1 file",
            magic
        )));
    }
    let mut cnt = [0u8; 4];
    read_exact_or(&mut r, &mut cnt, "missing record count")?;
    let count = u32::from_le_bytes(cnt) as usize;

    let mut maps = Vec::with_capacity(count.min(1 << 20));
    for rec in 0..count {
        let mut hdr = [0u8; 5];
        read_exact_or(&mut r, &mut hdr, &format!("record {rec} header"))?;
        let h = u16::from_le_bytes([hdr[0], hdr[1]]) as usize;
        let w = u16::from_le_bytes([hdr[2], hdr[3]]) as usize;
        if h == 0 || w == 0 {
            return Err(Error::Data(format!("record {rec} declares size {h}x{w}")));
        }
        let label = WaferLabel::from_code(hdr[4])
            .ok_or_else(|| Error::Data(format!("record {rec} has unknown label {}", hdr[4])))?;
        let mut cells = vec![0u8; h * w];
        read_exact_or(&mut r, &mut cells, &format!("record {rec} cells"))?;
        if let Some(bad) = cells.iter().find(|&&c| c > CELL_DEFECT) {
            return Err(Error::Data(format!(
                "record {rec} contains invalid cell value {bad}"
            )));
        }
        let map = WaferMap {
            height: h,
            width: w,
            cells,
            label,
        };
        map.validate()
            .map_err(|e| Error::Data(format!("record {rec}: {e}")))?;
        maps.push(map);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Data("trailing bytes after final record".into()));
    }
    Ok(maps)
}

/// Reads a CSV manifest with header `map_path,label`; each map file holds
/// one text row of digits 0/1/2 per wafer row (spaces between digits
/// allowed). Paths resolve relative to the manifest's directory.
pub fn convert_manifest(manifest: &Path) -> Result<Vec<WaferMap>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Data(format!("manifest header: {e}")))?;
        let cols: Vec<&str> = headers.iter().collect();
        if cols != ["map_path", "label"] {
            return Err(Error::Data(format!(
                "manifest columns must be map_path,label; found {cols:?}"
            )));
        }
    }
    let mut maps = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("manifest row {}: {e}", line + 2)))?;
        if rec.len() != 2 {
            return Err(Error::Data(format!(
                "manifest row {} has {} columns",
                line + 2,
                rec.len()
            )));
        }
        let label = WaferLabel::parse(&rec[1])
            .ok_or_else(|| Error::Data(format!("unknown label {:?} on row {}", &rec[1], line + 2)))?;
        let map_path = base.join(&rec[0]);
        maps.push(parse_grid_file(&map_path, label)?);
    }
    Ok(maps)
}

fn parse_grid_file(path: &Path, label: WaferLabel) -> Result<WaferMap> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for line in text.lines() {
        let mut row = Vec::new();
        for ch in line.chars() {
            match ch {
                '0' => row.push(0),
                '1' => row.push(1),
                '2' => row.push(2),
                c if c.is_whitespace() => {}
                c => {
                    return Err(Error::Data(format!(
                        "{}: unexpected character {c:?}",
                        path.display()
                    )))
                }
            }
        }
        if !row.is_empty() {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: empty grid", path.display())));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Data(format!(
            "{}: ragged rows in grid",
            path.display()
        )));
    }
    let height = rows.len();
    WaferMap::new(height, width, rows.concat(), label)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
