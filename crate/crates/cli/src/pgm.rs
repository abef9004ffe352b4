//! Plain-text PGM (P2) slice dumps.
//!
//! Evaluation can emit grayscale mid-slices of the FA and cosine maps, one
//! file per anatomical axis, as plain PGM — a format simple enough to be
//! bit-specified and diffed in tests. Values are clamped to [0, 1] and
//! quantized to 0–255.

use std::path::Path;

use dtisynth_core::field::ScalarField;

use crate::error::CliError;

/// The three orthogonal mid-slice orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    /// Fixed z (an x–y image).
    Axial,
    /// Fixed y (an x–z image).
    Coronal,
    /// Fixed x (a y–z image).
    Sagittal,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::Axial, SliceAxis::Coronal, SliceAxis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            SliceAxis::Axial => "axial",
            SliceAxis::Coronal => "coronal",
            SliceAxis::Sagittal => "sagittal",
        }
    }
}

/// Extracts the mid-slice of `f` along `axis` as rows of quantized
/// grayscale values. Row r, column c map to (c, r) in the slice plane, so
/// the first in-plane axis runs along image columns.
pub fn mid_slice(f: &ScalarField, axis: SliceAxis) -> (usize, usize, Vec<u8>) {
    let (nx, ny, nz) = f.dims();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h): (usize, usize);
    let mut pix;
    match axis {
        SliceAxis::Axial => {
            let z = nz / 2;
            (w, h) = (nx, ny);
            pix = Vec::with_capacity(w * h);
            for y in 0..ny {
                for x in 0..nx {
                    pix.push(q(f.get(x, y, z)));
                }
            }
        }
        SliceAxis::Coronal => {
            let y = ny / 2;
            (w, h) = (nx, nz);
            pix = Vec::with_capacity(w * h);
            for z in 0..nz {
                for x in 0..nx {
                    pix.push(q(f.get(x, y, z)));
                }
            }
        }
        SliceAxis::Sagittal => {
            let x = nx / 2;
            (w, h) = (ny, nz);
            pix = Vec::with_capacity(w * h);
            for z in 0..nz {
                for y in 0..ny {
                    pix.push(q(f.get(x, y, z)));
                }
            }
        }
    }
    (w, h, pix)
}

/// Writes a P2 (ASCII) PGM file.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), CliError> {
    assert_eq!(pixels.len(), width * height, "pixel count must match the header");
    let mut text = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
