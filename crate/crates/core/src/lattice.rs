//! Lattice points, nearest-neighbour directions and the projections used by
//! the region geometry.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// Largest supported dimension.
pub const MAX_DIM: usize = 6;

/// A point of Z^d, d ≤ [`MAX_DIM`]. Unused coordinates are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: u8,
    coords: [i64; MAX_DIM],
}

impl Site {
    pub fn origin(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "dimension {d} out of range");
        Self { dim: d as u8, coords: [0; MAX_DIM] }
    }

    pub fn new(coords: &[i64]) -> Self {
        let mut s = Self::origin(coords.len());
        s.coords[..coords.len()].copy_from_slice(coords);
        s
    }

    /// The unit vector `e_axis` (0-based).
    pub fn unit(d: usize, axis: usize) -> Self {
        let mut s = Self::origin(d);
        s.coords[axis] = 1;
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [i64] {
        &mut self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> i64 {
        self.coords[axis]
    }

    #[inline]
    pub fn set(&mut self, axis: usize, v: i64) {
        self.coords[axis] = v;
    }

    /// Neighbour in direction `dir` (see [`Direction`]).
    #[inline]
    pub fn step(&self, dir: usize) -> Self {
        let mut s = *self;
        s.coords[dir / 2] += if dir.is_multiple_of(2) { 1 } else { -1 };
        s
    }

    pub fn add(&self, other: &Site) -> Self {
        let mut s = *self;
        for i in 0..self.dim() {
            s.coords[i] += other.coords[i];
        }
        s
    }

    pub fn sub(&self, other: &Site) -> Self {
        let mut s = *self;
        for i in 0..self.dim() {
            s.coords[i] -= other.coords[i];
        }
        s
    }

    pub fn l1(&self) -> i64 {
        self.coords().iter().map(|c| c.abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.coords().iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords().iter().map(|&c| c as f64).collect()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.coords().iter().zip(v).map(|(&c, &w)| c as f64 * w).sum()
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Serialize for Site {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "site dimension {} outside 1..={MAX_DIM}",
                v.len()
            )));
        }
        Ok(Site::new(&v))
    }
}

/// Direction index convention: `2i` is `+e_{i+1}`, `2i + 1` is `−e_{i+1}`.
pub struct Direction;

impl Direction {
    #[inline]
    pub fn plus(axis: usize) -> usize {
        2 * axis
    }

    #[inline]
    pub fn minus(axis: usize) -> usize {
        2 * axis + 1
    }

    #[inline]
    pub fn opposite(dir: usize) -> usize {
        dir ^ 1
    }

    #[inline]
    pub fn axis(dir: usize) -> usize {
        dir / 2
    }

    #[inline]
    pub fn sign(dir: usize) -> i64 {
        if dir.is_multiple_of(2) {
            1
        } else {
            -1
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(a);
    (n > 0.0 && n.is_finite()).then(|| a.iter().map(|x| x / n).collect())
}

/// `e_axis` as a real vector.
pub fn axis_vector(d: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[axis] = 1.0;
    v
}

/// Orthogonal projection onto the complement of the unit vector `l`:
/// `x − (x·l) l`.
pub fn project_perp(x: &[f64], l: &[f64]) -> Vec<f64> {
    let s = dot(x, l);
    x.iter().zip(l).map(|(a, b)| a - s * b).collect()
}

/// Oblique projection along `l` onto `{x·e_axis = 0}`:
/// `x − (x·e_axis / l·e_axis) l`. Requires `l[axis] != 0`.
pub fn project_oblique_perp(x: &[f64], l: &[f64], axis: usize) -> Vec<f64> {
    let s = x[axis] / l[axis];
    x.iter().zip(l).map(|(a, b)| a - s * b).collect()
}

/// A rotation (orthogonal, determinant +1) whose first column is `l`.
pub fn rotation_with_first_column(l: &[f64]) -> Vec<Vec<f64>> {
    let d = l.len();
    let l = normalized(l).expect("nonzero direction");
    let mut cols: Vec<Vec<f64>> = vec![l.clone()];
    for i in 0..d {
        if cols.len() == d {
            break;
        }
        let mut v = axis_vector(d, i);
        for c in &cols {
            let s = dot(&v, c);
            for (vk, ck) in v.iter_mut().zip(c) {
                *vk -= s * ck;
            }
        }
        if let Some(u) = normalized(&v) {
            if norm2(&v) > 1e-8 {
                cols.push(u);
            }
        }
    }
    if determinant(&columns_to_rows(&cols)) < 0.0 {
        let last = cols.last_mut().unwrap();
        for x in last.iter_mut() {
            *x = -*x;
        }
    }
    // stored column-major: rotation[j] is R(e_{j+1})
    cols
}

fn columns_to_rows(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = cols.len();
    (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
}

fn determinant(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        let (top, below) = a.split_at_mut(c + 1);
        let pivot = &top[c];
        for row in below.iter_mut() {
            let f = row[c] / pivot[c];
            for (x, y) in row[c..n].iter_mut().zip(&pivot[c..n]) {
                *x -= f * y;
            }
        }
    }
    det
}

/// Checks that the columns form an orthonormal basis within `tol`.
pub fn is_orthogonal(cols: &[Vec<f64>], tol: f64) -> bool {
    let d = cols.len();
    cols.iter().all(|c| c.len() == d)
        && (0..d).all(|i| {
            (0..d).all(|j| {
                let target = if i == j { 1.0 } else { 0.0 };
                (dot(&cols[i], &cols[j]) - target).abs() <= tol
            })
        })
}

/// Calls `f` on every integer point of the inclusive box `ranges`, first
/// coordinate fastest. Does nothing when some range is empty.
pub(crate) fn for_each_in_box(ranges: &[(i64, i64)], f: &mut dyn FnMut(&[i64])) {
    let mut ks: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    if ranges.iter().any(|r| r.0 > r.1) {
        return;
    }
    loop {
        f(&ks);
        let mut j = 0;
        loop {
            if j == ks.len() {
                return;
            }
            if ks[j] < ranges[j].1 {
                ks[j] += 1;
                break;
            }
            ks[j] = ranges[j].0;
            j += 1;
        }
    }
}
