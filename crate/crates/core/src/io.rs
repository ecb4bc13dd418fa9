//! Binary field dumps and CSV headers.
//!
//! Dump layout (little-endian): `b"PH2D"`, `u32` version, `u32` nx, `u32` ny,
//! `u8` kind (0 cell, 1 x-face, 2 y-face), `f64` h, `f64` t, then the
//! row-major `f64` payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mac::{CellField, FaceField, FieldKind, Grid};

pub const MAGIC: &[u8; 4] = b"PH2D";
pub const DUMP_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub grid: Grid,
    pub kind: FieldKind,
    pub t: f64,
    pub payload: Vec<f64>,
}

impl FieldDump {
    pub fn new(grid: Grid, kind: FieldKind, t: f64, payload: Vec<f64>) -> Result<Self> {
        if payload.len() != grid.len(kind) {
            return Err(Error::Format(format!(
                "payload has {} values, {:?} on {}x{} needs {}",
                payload.len(),
                kind,
                grid.nx,
                grid.ny,
                grid.len(kind)
            )));
        }
        Ok(Self { grid, kind, t, payload })
    }

    pub fn cell(field: &CellField, t: f64) -> Self {
        Self { grid: field.grid, kind: FieldKind::Cell, t, payload: field.values.clone() }
    }

    /// The two face components as separate dumps.
    pub fn faces(field: &FaceField, t: f64) -> (Self, Self) {
        (
            Self { grid: field.grid, kind: FieldKind::XFace, t, payload: field.ux.clone() },
            Self { grid: field.grid, kind: FieldKind::YFace, t, payload: field.uy.clone() },
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.grid.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid.ny as u32).to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.grid.h.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let (nx, ny) = (u32_at(8) as usize, u32_at(12) as usize);
        let kind = FieldKind::from_code(bytes[16]).ok_or_else(|| Error::Format(format!("unknown kind {}", bytes[16])))?;
        let (h, t) = (f64_at(17), f64_at(25));
        let grid = Grid::new(nx, ny, h);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * grid.len(kind) {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {}",
                body.len(),
                8 * grid.len(kind)
            )));
        }
        let payload = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { grid, kind, t, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Prefixes a CSV body with a `# config: <json>` comment line.
pub fn with_config_header(config_json: &str, csv: &str) -> String {
    let one_line: String = config_json.lines().map(str::trim).collect::<Vec<_>>().join(" ");
    format!("# config: {one_line}\n{csv}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = Grid::unit_square(64);
        let f = CellField::from_fn(g, |p| (13.0 * p[0]).sin() * p[1].exp() + f64::EPSILON);
        let d = FieldDump::cell(&f, 0.125);
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), 33 + 8 * 64 * 64);
        let back = FieldDump::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.payload.iter().zip(&d.payload).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_truncated_and_foreign_data() {
        let g = Grid::unit_square(4);
        let (x, _) = FieldDump::faces(&FaceField::zeros(g), 0.0);
        let mut bytes = x.to_bytes();
        bytes.pop();
        assert!(matches!(FieldDump::from_bytes(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(FieldDump::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(FieldDump::new(g, FieldKind::YFace, 0.0, vec![0.0; 16]).is_err());
    }

    #[test]
    fn header_is_single_line() {
        let s = with_config_header("{\n  \"a\": 1\n}", "x,y\n1,2\n");
        assert_eq!(s.lines().next().unwrap(), "# config: { \"a\": 1 }");
        assert_eq!(s.lines().count(), 3);
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_cell_dumps_round_trip(n in 1usize..12, t in -1e3f64..1e3, bits in proptest::collection::vec(proptest::num::u64::ANY, 144)) {
            let g = Grid::unit_square(n);
            let values: Vec<f64> = bits[..n * n].iter().map(|&b| f64::from_bits(b)).collect();
            let d = FieldDump::new(g, crate::mac::FieldKind::Cell, t, values).unwrap();
            let bytes = d.to_bytes();
            let back = FieldDump::from_bytes(&bytes).unwrap();
            proptest::prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
