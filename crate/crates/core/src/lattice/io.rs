//! Binary grid files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                        |
//! |--------|------|------------------------------|
//! | 0      | 4    | magic `RMG1`                 |
//! | 4      | 1    | dimension `d`                |
//! | 5      | 3    | reserved, zero               |
//! | 8      | 4    | side `N`                     |
//! | 12     | 8    | popcount                     |
//! | 20     | ...  | `ceil(N^d / 8)` payload bytes |
//!
//! Payload bit `i` (byte `i / 8`, bit `i % 8`) is cell `i` in canonical
//! row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::geometry::Geometry;
use super::grid::OccupancyGrid;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RMG1";
pub const HEADER_LEN: usize = 20;

pub fn encode_grid(grid: &OccupancyGrid) -> Result<Vec<u8>> {
    let geom = grid.geometry();
    if !geom.is_periodic() {
        return Err(Error::Format("only torus grids can be serialized".into()));
    }
    let d = u8::try_from(geom.dim()).map_err(|_| Error::Format("dimension exceeds 255".into()))?;
    let n = u32::try_from(geom.side()).map_err(|_| Error::Format("side exceeds u32".into()))?;
    let payload = geom.cells().div_ceil(8);
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.push(d);
    out.extend_from_slice(&[0, 0, 0]);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&(grid.popcount() as u64).to_le_bytes());
    for w in grid.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.truncate(HEADER_LEN + payload);
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<OccupancyGrid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let d = bytes[4] as usize;
    if bytes[5..8] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let popcount = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let geom = Geometry::torus(d, n)?;
    let payload = geom.cells().div_ceil(8);
    let body = &bytes[HEADER_LEN..];
    if body.len() != payload {
        return Err(Error::Format(format!("payload is {} bytes, expected {payload}", body.len())));
    }
    let words = body
        .chunks(8)
        .map(|c| {
            let mut buf = [0u8; 8];
            buf[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(buf)
        })
        .collect();
    let grid = OccupancyGrid::from_words(geom, words)?;
    if grid.popcount() as u64 != popcount {
        return Err(Error::Format(format!("header popcount {popcount} disagrees with payload ({})", grid.popcount())));
    }
    Ok(grid)
}

pub fn write_grid(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    let bytes = encode_grid(grid)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<OccupancyGrid> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = OccupancyGrid::from_cells(Geometry::torus(3, 3).unwrap(), [0, 9, 26]).unwrap();
        let bytes = encode_grid(&g).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[0..4], b"RMG1");
        assert_eq!(bytes[4], 3);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &3u64.to_le_bytes());
        assert_eq!(bytes[20], 0b0000_0001);
        assert_eq!(bytes[21], 0b0000_0010);
        assert_eq!(bytes[23], 0b0000_0100);
    }

    #[test]
    fn rejects_corruption() {
        let g = OccupancyGrid::from_cells(Geometry::torus(3, 3).unwrap(), [1, 2]).unwrap();
        let good = encode_grid(&g).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_grid(&bad).is_err());
        let mut bad = good.clone();
        bad[12] = 7;
        assert!(decode_grid(&bad).is_err());
        let mut bad = good.clone();
        *bad.last_mut().unwrap() = 0xff; // padding past cell 26
        assert!(decode_grid(&bad).is_err());
        assert!(decode_grid(&good[..good.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(n in 2usize..7, cells in proptest::collection::vec(0usize..400, 0..60)) {
            let geom = Geometry::torus(3, n).unwrap();
            let grid = OccupancyGrid::from_cells(geom.clone(), cells.into_iter().map(|c| c % geom.cells())).unwrap();
            let back = decode_grid(&encode_grid(&grid).unwrap()).unwrap();
            prop_assert_eq!(back, grid);
        }
    }
}
