use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};
use crate::grid::{Volume3D, VolumeGrid};

/// Reads an 8- or 16-bit grayscale multi-page TIFF as a `(z, y, x)` volume.
/// Pitches come from the caller; TIFF resolution tags are ignored.
pub fn read_tiff_stack(path: &Path, pitch_um: (f64, f64, f64)) -> Result<Volume3D> {
    let mut dec = Decoder::new(BufReader::new(File::open(path)?))?;
    let (w, h) = dec.dimensions()?;
    let mut values = Vec::new();
    let mut planes = 0;
    loop {
        if dec.dimensions()? != (w, h) {
            return Err(Error::ShapeMismatch(format!(
                "page {planes} differs in size from page 0"
            )));
        }
        match dec.read_image()? {
            DecodingResult::U8(p) => values.extend(p.into_iter().map(f64::from)),
            DecodingResult::U16(p) => values.extend(p.into_iter().map(f64::from)),
            _ => {
                return Err(Error::invalid(
                    "tiff",
                    "only 8- and 16-bit grayscale pages are supported",
                ))
            }
        }
        planes += 1;
        if values.len() != planes * (w as usize) * (h as usize) {
            return Err(Error::invalid("tiff", "pages must be single-channel"));
        }
        if !dec.more_images() {
            break;
        }
        dec.next_image()?;
    }
    let grid = VolumeGrid::new(
        w as usize, h as usize, planes, pitch_um.0, pitch_um.1, pitch_um.2,
    )?;
    Volume3D::new(grid, values)
}

/// Writes a volume as a 16-bit multi-page TIFF, rounding and saturating.
pub fn write_tiff_stack_u16(path: &Path, volume: &Volume3D) -> Result<()> {
    let g = volume.grid();
    let mut enc = TiffEncoder::new(BufWriter::new(File::create(path)?))?;
    for z in 0..g.nz() {
        let page: Vec<u16> = volume
            .plane(z)
            .iter()
            .map(|&v| v.round().clamp(0.0, 65535.0) as u16)
            .collect();
        enc.write_image::<colortype::Gray16>(g.nx() as u32, g.ny() as u32, &page)?;
    }
    Ok(())
}
