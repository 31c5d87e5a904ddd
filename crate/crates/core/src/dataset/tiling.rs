use image::{imageops, GrayImage};

use crate::error::{Error, Result};
use crate::geometry::PieceImage;

/// A square window cut from a piece at `(offset_x, offset_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub offset_x: u32,
    pub offset_y: u32,
    pub pixels: GrayImage,
}

/// Side of the largest square that fits every piece.
pub fn compute_tile_size<'a, I>(pieces: I) -> Result<u32>
where
    I: IntoIterator<Item = &'a PieceImage>,
{
    pieces
        .into_iter()
        .map(|p| p.width().min(p.height()))
        .min()
        .ok_or(Error::Empty("cannot compute a tile size from zero pieces"))
}

/// Windows along one axis: `floor((len - size) / stride) + 1`.
pub fn positions(len: u32, size: u32, stride: u32) -> u32 {
    if size > len || size == 0 || stride == 0 {
        0
    } else {
        (len - size) / stride + 1
    }
}

pub fn tile_count(width: u32, height: u32, size: u32, stride: u32) -> u32 {
    positions(width, size, stride) * positions(height, size, stride)
}

/// Cuts every `size`x`size` window on the `stride` grid that fits entirely
/// inside the piece, row by row.
pub fn tile(piece: &PieceImage, size: u32, stride: u32) -> Result<Vec<Tile>> {
    if stride == 0 {
        return Err(Error::Validation("tiling stride must be positive".into()));
    }
    if size == 0 || size > piece.width() || size > piece.height() {
        return Err(Error::TileTooLarge {
            piece_id: piece.piece_id.clone(),
            size,
            width: piece.width(),
            height: piece.height(),
        });
    }
    let nx = positions(piece.width(), size, stride);
    let ny = positions(piece.height(), size, stride);
    let mut out = Vec::with_capacity((nx * ny) as usize);
    for j in 0..ny {
        for i in 0..nx {
            let (ox, oy) = (i * stride, j * stride);
            out.push(Tile {
                offset_x: ox,
                offset_y: oy,
                pixels: imageops::crop_imm(&piece.pixels, ox, oy, size, size).to_image(),
            });
        }
    }
    Ok(out)
}
