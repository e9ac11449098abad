//! Lattice points, unit directions and axis-aligned boxes of Z^d.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest supported dimension. Keeps Morton codes of moderate coordinates
/// inside 128 bits.
pub const MAX_DIM: usize = 8;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point(SmallVec<[i64; 4]>);

impl Point {
    pub fn origin(d: usize) -> Self {
        Point(SmallVec::from_elem(0, d))
    }

    pub fn new(coords: &[i64]) -> Self {
        Point(SmallVec::from_slice(coords))
    }

    /// `e` scaled by `n` along `axis`.
    pub fn on_axis(d: usize, axis: usize, n: i64) -> Self {
        let mut p = Self::origin(d);
        p.0[axis] = n;
        p
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Maximum norm.
    pub fn norm_inf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l1_dist(&self, other: &Point) -> i64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn step(&mut self, dir: Direction) {
        self.0[dir.axis()] += dir.sign();
    }

    pub fn stepped(&self, dir: Direction) -> Point {
        let mut p = self.clone();
        p.step(dir);
        p
    }

    /// Injective code of the point: zigzag each coordinate, then interleave
    /// the bits (Morton order, axis 0 in the lowest bit). Injective as long as
    /// every zigzagged coordinate fits in `128 / d` bits.
    pub fn morton_code(&self) -> u128 {
        let d = self.dim().max(1);
        let bits = 128 / d;
        let mut code = 0u128;
        for (axis, &c) in self.0.iter().enumerate() {
            let z = zigzag(c);
            for b in 0..bits.min(64) {
                if (z >> b) & 1 == 1 {
                    code |= 1u128 << (b * d + axis);
                }
            }
        }
        code
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

#[inline]
fn zigzag(c: i64) -> u64 {
    ((c << 1) ^ (c >> 63)) as u64
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i64>> for Point {
    fn from(v: Vec<i64>) -> Self {
        Point(SmallVec::from_vec(v))
    }
}

/// One of the `2d` unit vectors `±e_j`. Index `2j` is `+e_j`, `2j + 1` is `-e_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction(pub u8);

impl Direction {
    pub fn new(axis: usize, positive: bool) -> Self {
        Direction((2 * axis + usize::from(!positive)) as u8)
    }

    #[inline]
    pub fn axis(self) -> usize {
        (self.0 >> 1) as usize
    }

    #[inline]
    pub fn sign(self) -> i64 {
        if self.0 & 1 == 0 {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all(d: usize) -> impl Iterator<Item = Direction> {
        (0..2 * d).map(|i| Direction(i as u8))
    }
}

/// Axis-aligned box `lo[j] <= x_j <= hi[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxWindow {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl BoxWindow {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(Error::InvalidWindow(format!(
                "bounds of lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if let Some(j) = (0..lo.len()).find(|&j| lo[j] > hi[j]) {
            return Err(Error::InvalidWindow(format!(
                "axis {j}: lower {} exceeds upper {}",
                lo[j], hi[j]
            )));
        }
        Ok(BoxWindow { lo, hi })
    }

    /// `[-r, r]^d`.
    pub fn cube(d: usize, r: i64) -> Self {
        BoxWindow {
            lo: vec![-r; d],
            hi: vec![r; d],
        }
    }

    /// `[-r1, r1] x [-r_lat, r_lat]^(d-1)`.
    pub fn slab(d: usize, r1: i64, r_lat: i64) -> Self {
        let mut lo = vec![-r_lat; d];
        let mut hi = vec![r_lat; d];
        lo[0] = -r1;
        hi[0] = r1;
        BoxWindow { lo, hi }
    }

    /// Cube of half-width `r` around `center`.
    pub fn around(center: &Point, r: i64) -> Self {
        BoxWindow {
            lo: center.coords().iter().map(|c| c - r).collect(),
            hi: center.coords().iter().map(|c| c + r).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim() && self.contains_coords(p.coords())
    }

    #[inline]
    pub fn contains_coords(&self, c: &[i64]) -> bool {
        c.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| l <= x && x <= h)
    }

    /// Whether `self` is contained in `other`.
    pub fn is_subset_of(&self, other: &BoxWindow) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|j| other.lo[j] <= self.lo[j] && self.hi[j] <= other.hi[j])
    }

    pub fn extent(&self, axis: usize) -> u64 {
        (self.hi[axis] - self.lo[axis] + 1) as u64
    }

    /// Number of lattice points, saturating.
    pub fn volume(&self) -> u64 {
        (0..self.dim()).fold(1u64, |acc, j| acc.saturating_mul(self.extent(j)))
    }

    /// Row-major strides with axis 0 fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dim());
        let mut acc = 1usize;
        for j in 0..self.dim() {
            s.push(acc);
            acc *= self.extent(j) as usize;
        }
        s
    }

    #[inline]
    pub fn index_of_coords(&self, c: &[i64], strides: &[usize]) -> usize {
        c.iter()
            .enumerate()
            .map(|(j, &x)| (x - self.lo[j]) as usize * strides[j])
            .sum()
    }

    pub fn index_of(&self, p: &Point) -> Option<usize> {
        self.contains(p)
            .then(|| self.index_of_coords(p.coords(), &self.strides()))
    }

    pub fn point_of(&self, mut idx: usize) -> Point {
        let mut c = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let e = self.extent(j) as usize;
            c.push(self.lo[j] + (idx % e) as i64);
            idx /= e;
        }
        Point::from(c)
    }

    pub fn require(&self, p: &Point) -> Result<()> {
        p.check_dim(self.dim())?;
        if !self.contains(p) {
            return Err(Error::OutsideWindow {
                point: p.to_string(),
                window: self.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for BoxWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.dim() {
            if j > 0 {
                write!(f, "x")?;
            }
            write!(f, "[{},{}]", self.lo[j], self.hi[j])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_roundtrip() {
        for d in 1..=4 {
            for dir in Direction::all(d) {
                assert_eq!(Direction::new(dir.axis(), dir.sign() > 0), dir);
            }
        }
    }

    #[test]
    fn morton_codes_are_distinct_on_a_box() {
        let w = BoxWindow::cube(3, 6);
        let mut seen = std::collections::HashSet::new();
        for i in 0..w.volume() as usize {
            assert!(seen.insert(w.point_of(i).morton_code()));
        }
    }

    #[test]
    fn index_and_point_are_inverse() {
        let w = BoxWindow::new(vec![-3, 2], vec![4, 5]).unwrap();
        for i in 0..w.volume() as usize {
            assert_eq!(w.index_of(&w.point_of(i)), Some(i));
        }
        assert_eq!(w.index_of(&Point::new(&[0, 0])), None);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxWindow::new(vec![1], vec![0]).is_err());
    }
}
