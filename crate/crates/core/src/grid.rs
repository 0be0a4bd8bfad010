//! Uniform box grids, boolean set indicators and scalar fields.
//!
//! All heavy numerics in this crate run on node-centered uniform grids:
//! node `(i, j, k)` sits at `lo + h * (i + 1/2, j + 1/2, k + 1/2)`. Axes with a
//! single cell are inactive, which is how pseudo-1-D slab problems are
//! expressed on the same data structures.

use std::io::{self, Read, Write};

use serde::Serialize;

use crate::error::GridError;

pub const MASK_MAGIC: &[u8; 4] = b"CSMK";
pub const FIELD_MAGIC: &[u8; 4] = b"CSFD";

/// Uniform node-centered grid over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridContext {
    /// Cells per axis; an entry of 1 marks an inactive axis.
    pub dims: [usize; 3],
    /// Cell spacing, identical on all active axes.
    pub h: f64,
    /// Lower corner of the box (node 0 sits at `lo + h/2`).
    pub lo: [f64; 3],
}

impl GridContext {
    /// Cubic grid on `[-halfwidth, halfwidth]^3` with `resolution` cells per axis.
    pub fn cube(halfwidth: f64, resolution: usize) -> Result<Self, GridError> {
        let h = 2.0 * halfwidth / resolution as f64;
        Self::new([resolution; 3], h, [-halfwidth; 3])
    }

    /// General constructor; axes with `dims == 1` are inactive.
    pub fn new(dims: [usize; 3], h: f64, lo: [f64; 3]) -> Result<Self, GridError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(GridError::BadSpacing(h));
        }
        for (axis, &n) in dims.iter().enumerate() {
            if n != 1 && n < 16 {
                return Err(GridError::ResolutionTooLow { axis, resolution: n });
            }
        }
        if dims.iter().all(|&n| n == 1) {
            return Err(GridError::ResolutionTooLow { axis: 0, resolution: 1 });
        }
        Ok(GridContext { dims, h, lo })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of axes that carry more than one cell.
    pub fn active_dims(&self) -> usize {
        self.dims.iter().filter(|&&n| n > 1).count()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.coords(idx);
        [
            self.lo[0] + self.h * (i as f64 + 0.5),
            self.lo[1] + self.h * (j as f64 + 0.5),
            self.lo[2] + self.h * (k as f64 + 0.5),
        ]
    }

    /// Upper corner of the box.
    pub fn hi(&self) -> [f64; 3] {
        [
            self.lo[0] + self.h * self.dims[0] as f64,
            self.lo[1] + self.h * self.dims[1] as f64,
            self.lo[2] + self.h * self.dims[2] as f64,
        ]
    }

    /// Cell of a point, or None when the point falls outside the box.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let t = (p[a] - self.lo[a]) / self.h;
            if t < 0.0 || t >= self.dims[a] as f64 {
                return None;
            }
            c[a] = t as usize;
        }
        Some(c)
    }

    /// Nearest node index to a point inside the box.
    pub fn nearest_node(&self, p: [f64; 3]) -> Option<usize> {
        self.cell_of(p).map(|[i, j, k]| self.index(i, j, k))
    }

    pub fn same_shape(&self, other: &GridContext) -> bool {
        self.dims == other.dims
            && (self.h - other.h).abs() <= 1e-12 * self.h
            && self
                .lo
                .iter()
                .zip(other.lo.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-9 * self.h.max(1.0))
    }
}

/// Boolean indicator of a rasterized set.
#[derive(Debug, Clone)]
pub struct GridMask {
    pub ctx: GridContext,
    pub bits: Vec<bool>,
}

impl GridMask {
    pub fn empty(ctx: &GridContext) -> Self {
        GridMask { ctx: ctx.clone(), bits: vec![false; ctx.len()] }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn marked_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| if b { Some(i) } else { None })
            .collect()
    }

    /// True when no marked node touches the outermost cell layer of an active axis.
    pub fn has_margin(&self) -> bool {
        for idx in 0..self.bits.len() {
            if !self.bits[idx] {
                continue;
            }
            let c = self.ctx.coords(idx);
            for a in 0..3 {
                let n = self.ctx.dims[a];
                if n > 1 && (c[a] == 0 || c[a] == n - 1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn intersect(&self, other: &GridMask) -> GridMask {
        debug_assert!(self.ctx.same_shape(&other.ctx));
        let bits = self
            .bits
            .iter()
            .zip(other.bits.iter())
            .map(|(&a, &b)| a && b)
            .collect();
        GridMask { ctx: self.ctx.clone(), bits }
    }

    pub fn union(&self, other: &GridMask) -> GridMask {
        debug_assert!(self.ctx.same_shape(&other.ctx));
        let bits = self
            .bits
            .iter()
            .zip(other.bits.iter())
            .map(|(&a, &b)| a || b)
            .collect();
        GridMask { ctx: self.ctx.clone(), bits }
    }

    /// Stable content hash over shape and bits (FNV-1a), used as a solver cache key.
    pub fn content_hash(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for d in self.ctx.dims {
            for b in (d as u64).to_le_bytes() {
                eat(b);
            }
        }
        for b in self.ctx.h.to_bits().to_le_bytes() {
            eat(b);
        }
        for v in self.ctx.lo {
            for b in v.to_bits().to_le_bytes() {
                eat(b);
            }
        }
        let mut acc: u8 = 0;
        for (i, &bit) in self.bits.iter().enumerate() {
            if bit {
                acc |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                eat(acc);
                acc = 0;
            }
        }
        eat(acc);
        hash
    }

    /// Run-length encoded binary dump: 16-byte header (magic, N, resolution,
    /// spacing), then alternating u32 run lengths starting with unset nodes.
    pub fn write_rle<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MASK_MAGIC)?;
        w.write_all(&(self.ctx.active_dims() as u32).to_le_bytes())?;
        w.write_all(&(self.ctx.dims[0] as u32).to_le_bytes())?;
        w.write_all(&(self.ctx.h as f32).to_le_bytes())?;
        let mut current = false;
        let mut run: u32 = 0;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                w.write_all(&run.to_le_bytes())?;
                current = b;
                run = 1;
            }
        }
        w.write_all(&run.to_le_bytes())?;
        Ok(())
    }

    /// Inverse of [`GridMask::write_rle`]; the context must be supplied by the caller.
    pub fn read_rle<R: Read>(ctx: &GridContext, r: &mut R) -> io::Result<GridMask> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != MASK_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad mask magic"));
        }
        let mut bits = Vec::with_capacity(ctx.len());
        let mut current = false;
        let mut buf = [0u8; 4];
        while bits.len() < ctx.len() {
            r.read_exact(&mut buf)?;
            let run = u32::from_le_bytes(buf) as usize;
            bits.extend(std::iter::repeat(current).take(run));
            current = !current;
        }
        if bits.len() != ctx.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "mask length mismatch"));
        }
        Ok(GridMask { ctx: ctx.clone(), bits })
    }
}

/// Scalar field on a grid together with the mask where the PDE holds.
#[derive(Debug, Clone)]
pub struct GridField {
    pub ctx: GridContext,
    pub values: Vec<f64>,
    /// Nodes where the field is governed by the equation; boundary nodes keep
    /// their imposed data.
    pub domain: GridMask,
}

impl GridField {
    pub fn zeros(ctx: &GridContext) -> Self {
        GridField {
            ctx: ctx.clone(),
            values: vec![0.0; ctx.len()],
            domain: GridMask { ctx: ctx.clone(), bits: vec![true; ctx.len()] },
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Value at the node nearest to `p`.
    pub fn sample(&self, p: [f64; 3]) -> Option<f64> {
        self.ctx.nearest_node(p).map(|i| self.values[i])
    }

    /// Flat binary dump: header (magic, N, resolution, spacing, count) then f64 values.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.ctx.active_dims() as u32).to_le_bytes())?;
        w.write_all(&(self.ctx.dims[0] as u32).to_le_bytes())?;
        w.write_all(&self.ctx.h.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_positions_are_cell_centers() {
        let ctx = GridContext::cube(2.0, 16).unwrap();
        assert!((ctx.h - 0.25).abs() < 1e-12);
        let p = ctx.node(ctx.index(0, 0, 0));
        assert!((p[0] + 2.0 - 0.125).abs() < 1e-12);
        let q = ctx.node(ctx.index(15, 15, 15));
        assert!((q[2] - (2.0 - 0.125)).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridContext::cube(1.0, 8).is_err());
        assert!(GridContext::new([16, 16, 16], 0.0, [0.0; 3]).is_err());
        // slab grids with inactive axes are allowed
        assert!(GridContext::new([64, 1, 1], 0.1, [0.0; 3]).is_ok());
    }

    #[test]
    fn mask_rle_roundtrip() {
        let ctx = GridContext::cube(1.0, 16).unwrap();
        let mut mask = GridMask::empty(&ctx);
        for idx in 0..mask.bits.len() {
            mask.bits[idx] = idx % 7 == 3 || (idx > 100 && idx < 200);
        }
        let mut buf = Vec::new();
        mask.write_rle(&mut buf).unwrap();
        let back = GridMask::read_rle(&ctx, &mut buf.as_slice()).unwrap();
        assert_eq!(mask.bits, back.bits);
    }

    #[test]
    fn content_hash_changes_with_bits() {
        let ctx = GridContext::cube(1.0, 16).unwrap();
        let mut a = GridMask::empty(&ctx);
        let b = GridMask::empty(&ctx);
        a.bits[33] = true;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
