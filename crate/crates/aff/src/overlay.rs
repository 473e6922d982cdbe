use aff_core::model::PATCH_STRIDE;
use aff_core::Point;

use crate::pnm::Pnm;
use crate::{Error, Result};

pub const RED: [u8; 3] = [255, 0, 0];

/// RGB copy of `image` with a red pixel at `(4x, 4y)` for every token.
/// Tokens must sit on the integer lattice of the `H/4 x W/4` token grid.
pub fn render_overlay(image: &Pnm, tokens: &[Point]) -> Result<Pnm> {
    let mut out = image.to_rgb();
    let (tw, th) = (image.width.div_ceil(PATCH_STRIDE), image.height.div_ceil(PATCH_STRIDE));
    for (i, p) in tokens.iter().enumerate() {
        let on_lattice = p.x.fract() == 0.0 && p.y.fract() == 0.0;
        if !on_lattice || p.x < 0.0 || p.y < 0.0 || p.x >= tw as f64 || p.y >= th as f64 {
            return Err(Error::Invalid(format!(
                "token {i} at ({}, {}) is outside the {tw}x{th} token grid",
                p.x, p.y
            )));
        }
        let (px, py) = (p.x as usize * PATCH_STRIDE, p.y as usize * PATCH_STRIDE);
        let at = (py * out.width + px) * 3;
        out.data[at..at + 3].copy_from_slice(&RED);
    }
    Ok(out)
}
