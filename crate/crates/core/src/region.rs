//! Finite lattice regions with a distinguished right boundary part.
//!
//! A region is a set of interior sites; the walk stops at the first site
//! outside it. That exit site is classified as right or other by
//! [`Region::right_boundary`].

use crate::error::{Error, Result};
use crate::lattice::{dot, normalized, project_oblique_perp, project_perp, Site, MAX_DIM};
use crate::scales::scale_r_unchecked;
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-9;

/// Treatment of the directions orthogonal to a slab's axis.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transversal {
    #[default]
    Unbounded,
    /// Transversal coordinates are read modulo `width` (axis-aligned slabs).
    Periodic { width: i64 },
    /// The walk is stopped once `‖π_{l⊥}(x)‖_∞ > width`.
    Absorbing { width: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    /// `−left_depth < x·l < right_level`; right exits have `x·l ≥ right_level`.
    Slab {
        direction: Vec<f64>,
        left_depth: f64,
        right_level: f64,
        #[serde(default)]
        transversal: Transversal,
    },
    /// `0 ≤ x·l ≤ length`, `‖π_{l⊥}(x)‖_∞ ≤ k·length`; right exits have `x·l > length`.
    DirectedBox { direction: Vec<f64>, length: f64, k: f64 },
    /// `−N² < (y−x)·e_1 < N²`, `‖π̃_{v⊥}(y−x)‖_∞ < R_6(N)·N` around `anchor`;
    /// right exits have `(y−x)·e_1 = N²`.
    Block { anchor: Site, n: u64, direction: Vec<f64> },
    /// `0 ≤ x·e_j ≤ L^{1+δ}`, `‖π̃^j_{v⊥}(x)‖_∞ ≤ L^{3δ} + (x·e_j)·L^{−2δ}`;
    /// right exits have `x·e_j > L^{1+δ}`.
    Cone { axis: usize, length: f64, delta: f64, direction: Vec<f64> },
    /// `Rᵀx ∈ (−back, front) × (−width, width)^{d−1}`, with `rotation`
    /// stored by columns; right exits have `R(e_1)·x ≥ front` and every
    /// other `|R(e_j)·x| < width`.
    BoxSpec { rotation: Vec<Vec<f64>>, back: f64, front: f64, width: f64 },
}

/// Which part of the boundary an exit site belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Right,
    Other,
}

impl Region {
    pub fn slab(l: &[f64], left_depth: f64, right_level: f64, transversal: Transversal) -> Self {
        Region::Slab {
            direction: normalized(l).expect("nonzero direction"),
            left_depth,
            right_level,
            transversal,
        }
    }

    /// Slab along `e_axis` in dimension `d`.
    pub fn axis_slab(
        d: usize,
        axis: usize,
        left_depth: f64,
        right_level: f64,
        transversal: Transversal,
    ) -> Self {
        Region::slab(&crate::lattice::axis_vector(d, axis), left_depth, right_level, transversal)
    }

    pub fn directed_box(l: &[f64], length: f64, k: f64) -> Self {
        Region::DirectedBox { direction: normalized(l).expect("nonzero direction"), length, k }
    }

    pub fn block(anchor: Site, n: u64, v: &[f64]) -> Self {
        Region::Block { anchor, n, direction: normalized(v).expect("nonzero direction") }
    }

    pub fn cone(axis: usize, length: f64, delta: f64, v: &[f64]) -> Self {
        Region::Cone { axis, length, delta, direction: normalized(v).expect("nonzero direction") }
    }

    /// The box `𝓑(R, back, front, width)` whose rotation maps `e_1` to `l`.
    pub fn box_spec(l: &[f64], back: f64, front: f64, width: f64) -> Self {
        Region::BoxSpec {
            rotation: crate::lattice::rotation_with_first_column(l),
            back,
            front,
            width,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Slab { direction, .. }
            | Region::DirectedBox { direction, .. }
            | Region::Block { direction, .. }
            | Region::Cone { direction, .. } => direction.len(),
            Region::BoxSpec { rotation, .. } => rotation.len(),
        }
    }

    /// Checks dimensions, unit directions and positivity of the extents.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: &str| Err(Error::BadParameter(m.to_string()));
        if !(1..=MAX_DIM).contains(&d) {
            return bad("region dimension out of range");
        }
        let unit = |v: &[f64]| {
            v.iter().all(|x| x.is_finite()) && (dot(v, v).sqrt() - 1.0).abs() < 1e-9
        };
        match self {
            Region::Slab { direction, left_depth, right_level, transversal } => {
                if !unit(direction) {
                    return bad("slab direction must be a unit vector");
                }
                if !(*left_depth > 0.0 && *right_level > 0.0) {
                    return bad("slab extents must be positive");
                }
                match transversal {
                    Transversal::Periodic { width } => {
                        if *width < 1 {
                            return bad("periodic width must be >= 1");
                        }
                        if self.slab_axis().is_none() {
                            return bad("periodic slabs must be axis-aligned");
                        }
                    }
                    Transversal::Absorbing { width } if *width < 0 => {
                        return bad("absorbing width must be >= 0");
                    }
                    _ => {}
                }
            }
            Region::DirectedBox { direction, length, k } => {
                if !unit(direction) {
                    return bad("box direction must be a unit vector");
                }
                if !(*length > 0.0 && *k > 0.0) {
                    return bad("box length and K must be positive");
                }
            }
            Region::Block { anchor, n, direction } => {
                if !unit(direction) || direction[0] <= 0.0 {
                    return bad("block direction must be a unit vector with positive first entry");
                }
                if anchor.dim() != d {
                    return bad("block anchor dimension mismatch");
                }
                if *n < 2 {
                    return bad("block scale must be >= 2");
                }
            }
            Region::Cone { axis, length, delta, direction } => {
                if *axis >= d || !unit(direction) || direction[*axis] <= 0.0 {
                    return bad("cone direction must be a unit vector pointing along its axis");
                }
                if !(*length >= 1.0 && *delta > 0.0) {
                    return bad("cone needs length >= 1 and delta > 0");
                }
            }
            Region::BoxSpec { rotation, back, front, width } => {
                if rotation.iter().any(|c| c.len() != d)
                    || !crate::lattice::is_orthogonal(rotation, 1e-9)
                {
                    return bad("box rotation must be an orthogonal matrix");
                }
                if !(*back > 0.0 && *front > 0.0 && *width > 0.0) {
                    return bad("box extents must be positive");
                }
            }
        }
        Ok(())
    }

    /// Axis index when a slab direction is `+e_axis`.
    pub fn slab_axis(&self) -> Option<usize> {
        match self {
            Region::Slab { direction, .. } => {
                let a = direction.iter().position(|&x| x == 1.0)?;
                direction.iter().enumerate().all(|(i, &x)| i == a || x == 0.0).then_some(a)
            }
            _ => None,
        }
    }

    /// Site whose kernel governs `x`; differs from `x` only for periodic slabs.
    #[inline]
    pub fn canonical(&self, x: &Site) -> Site {
        if let Region::Slab { transversal: Transversal::Periodic { width }, .. } = self {
            let axis = self.slab_axis().expect("validated periodic slab");
            let mut y = *x;
            for j in 0..x.dim() {
                if j != axis {
                    y.set(j, x.get(j).rem_euclid(*width));
                }
            }
            y
        } else {
            *x
        }
    }

    /// Standard start site: the anchor for blocks, the origin otherwise.
    pub fn default_start(&self) -> Site {
        match self {
            Region::Block { anchor, .. } => *anchor,
            _ => Site::origin(self.dim()),
        }
    }

    /// Interior membership.
    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        match self {
            Region::Slab { direction, left_depth, right_level, transversal } => {
                let t = x.dot(direction);
                if !(t > -left_depth && t < *right_level) {
                    return false;
                }
                match transversal {
                    Transversal::Absorbing { width } => {
                        norm_inf(&project_perp(&x.to_f64(), direction)) <= *width as f64 + EPS
                    }
                    _ => true,
                }
            }
            Region::DirectedBox { direction, length, k } => {
                let t = x.dot(direction);
                t >= -EPS
                    && t <= length + EPS
                    && norm_inf(&project_perp(&x.to_f64(), direction)) <= k * length + EPS
            }
            Region::Block { anchor, n, direction } => {
                let z = x.sub(anchor);
                let n2 = (n * n) as i64;
                let z1 = z.get(0);
                if z1 <= -n2 || z1 >= n2 {
                    return false;
                }
                let w = block_half_width(*n);
                norm_inf(&project_oblique_perp(&z.to_f64(), direction, 0)) < w - EPS
            }
            Region::Cone { axis, length, delta, direction } => {
                let t = x.get(*axis) as f64;
                let top = length.powf(1.0 + delta);
                if t < 0.0 || t > top + EPS {
                    return false;
                }
                let w = length.powf(3.0 * delta) + t * length.powf(-2.0 * delta);
                norm_inf(&project_oblique_perp(&x.to_f64(), direction, *axis)) <= w + EPS
            }
            Region::BoxSpec { rotation, back, front, width } => {
                let xf = x.to_f64();
                let y1 = dot(&rotation[0], &xf);
                if !(y1 > -back + EPS && y1 < front - EPS) {
                    return false;
                }
                rotation[1..].iter().all(|c| dot(c, &xf).abs() < width - EPS)
            }
        }
    }

    /// Right-boundary predicate for a site outside the region.
    #[inline]
    pub fn right_boundary(&self, y: &Site) -> bool {
        match self {
            Region::Slab { direction, right_level, .. } => y.dot(direction) >= *right_level,
            Region::DirectedBox { direction, length, .. } => y.dot(direction) > length + EPS,
            Region::Block { anchor, n, .. } => y.get(0) - anchor.get(0) >= (n * n) as i64,
            Region::Cone { axis, length, delta, .. } => {
                y.get(*axis) as f64 > length.powf(1.0 + delta) + EPS
            }
            Region::BoxSpec { rotation, front, width, .. } => {
                let yf = y.to_f64();
                dot(&rotation[0], &yf) >= front - EPS
                    && rotation[1..].iter().all(|c| dot(c, &yf).abs() < width - EPS)
            }
        }
    }

    #[inline]
    pub fn exit_side(&self, y: &Site) -> Side {
        if self.right_boundary(y) {
            Side::Right
        } else {
            Side::Other
        }
    }

    /// Coordinate axis closest to the forward direction; the right-face
    /// cube tiling runs over the remaining axes.
    pub fn forward_axis(&self) -> usize {
        let argmax = |v: &[f64]| {
            (0..v.len()).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap_or(0)
        };
        match self {
            Region::Slab { direction, .. } | Region::DirectedBox { direction, .. } => {
                argmax(direction)
            }
            Region::Block { .. } => 0,
            Region::Cone { axis, .. } => *axis,
            Region::BoxSpec { rotation, .. } => argmax(&rotation[0]),
        }
    }

    /// Length scale `L` of the region (block scale `N` for blocks).
    pub fn scale(&self) -> f64 {
        match self {
            Region::Slab { right_level, .. } => *right_level,
            Region::DirectedBox { length, .. } | Region::Cone { length, .. } => *length,
            Region::Block { n, .. } => *n as f64,
            Region::BoxSpec { front, .. } => *front,
        }
    }

    /// Minimal corner of a block's right face `∂_+`, whose sites are the
    /// `+e_1` neighbours of interior sites with `(y−x)·e_1 = N² − 1`.
    pub fn block_right_corner(&self) -> Option<Site> {
        match self {
            Region::Block { anchor, n, direction } => {
                let n2 = (n * n) as i64;
                let w = block_half_width(*n);
                let mut c = *anchor;
                c.set(0, anchor.get(0) + n2);
                for j in 1..anchor.dim() {
                    let centre = (n2 - 1) as f64 * direction[j] / direction[0];
                    // smallest integer strictly above centre − w
                    let lo = (centre - w + EPS).floor() as i64 + 1;
                    c.set(j, anchor.get(j) + lo);
                }
                Some(c)
            }
            _ => None,
        }
    }

    /// Middle third `𝒫̃` of a block.
    pub fn in_middle_third(&self, x: &Site) -> bool {
        match self {
            Region::Block { anchor, n, direction } => {
                let z = x.sub(anchor);
                let n2 = (n * n) as f64 / 3.0;
                let z1 = z.get(0) as f64;
                if z1 <= -n2 + EPS || z1 >= n2 - EPS {
                    return false;
                }
                norm_inf(&project_oblique_perp(&z.to_f64(), direction, 0))
                    < block_half_width(*n) / 3.0 - EPS
            }
            _ => false,
        }
    }

    /// Inclusive per-axis bounds containing every interior site, or `None`
    /// when the region is unbounded.
    pub fn bounding_box(&self) -> Option<(Site, Site)> {
        let d = self.dim();
        let mut lo = Site::origin(d);
        let mut hi = Site::origin(d);
        let mut put = |i: usize, a: f64, b: f64| {
            lo.set(i, (a - EPS).floor() as i64);
            hi.set(i, (b + EPS).ceil() as i64);
        };
        match self {
            Region::Slab { direction, left_depth, right_level, transversal } => {
                let reach = left_depth.max(*right_level);
                match (transversal, self.slab_axis()) {
                    (Transversal::Unbounded, _) => return None,
                    (Transversal::Periodic { width }, Some(a)) => {
                        for i in 0..d {
                            if i == a {
                                put(i, -left_depth, *right_level);
                            }
                        }
                        for i in (0..d).filter(|&i| i != a) {
                            lo.set(i, 0);
                            hi.set(i, width - 1);
                        }
                    }
                    (Transversal::Periodic { .. }, None) => return None,
                    (Transversal::Absorbing { width }, _) => {
                        for (i, li) in direction.iter().enumerate() {
                            let r = *width as f64 + reach * li.abs();
                            put(i, -r, r);
                        }
                    }
                }
            }
            Region::DirectedBox { direction, length, k } => {
                for (i, li) in direction.iter().enumerate() {
                    let end = length * li;
                    put(i, end.min(0.0) - k * length, end.max(0.0) + k * length);
                }
            }
            Region::Block { anchor, n, direction } => {
                let n2 = (n * n) as f64;
                let w = block_half_width(*n);
                put(0, -n2, n2);
                for i in 1..d {
                    let r = n2 * (direction[i] / direction[0]).abs() + w;
                    put(i, -r, r);
                }
                for i in 0..d {
                    lo.set(i, lo.get(i) + anchor.get(i));
                    hi.set(i, hi.get(i) + anchor.get(i));
                }
            }
            Region::Cone { axis, length, delta, direction } => {
                let top = length.powf(1.0 + delta);
                let w = length.powf(3.0 * delta) + top * length.powf(-2.0 * delta);
                for i in 0..d {
                    if i == *axis {
                        put(i, 0.0, top);
                    } else {
                        let r = top * (direction[i] / direction[*axis]).abs() + w;
                        put(i, -r, r);
                    }
                }
            }
            Region::BoxSpec { rotation, back, front, width } => {
                for i in 0..d {
                    let mut r = back.max(*front) * rotation[0][i].abs();
                    for c in &rotation[1..] {
                        r += width * c[i].abs();
                    }
                    put(i, -r, r);
                }
            }
        }
        Some((lo, hi))
    }

    /// All interior sites in lexicographic order (canonical representatives
    /// for periodic slabs).
    pub fn interior_sites(&self, max_sites: usize) -> Result<Vec<Site>> {
        let (lo, hi) = self
            .bounding_box()
            .ok_or_else(|| Error::BadParameter("region is unbounded".into()))?;
        let mut out = Vec::new();
        let mut x = lo;
        let d = self.dim();
        loop {
            if self.contains(&x) {
                if out.len() >= max_sites {
                    return Err(Error::RegionTooLarge {
                        sites: self.count_sites(&lo, &hi),
                        limit: max_sites,
                    });
                }
                out.push(x);
            }
            // odometer with the last axis fastest gives lexicographic order
            let mut i = d;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if x.get(i) < hi.get(i) {
                    x.set(i, x.get(i) + 1);
                    break;
                }
                x.set(i, lo.get(i));
            }
        }
    }

    fn count_sites(&self, lo: &Site, hi: &Site) -> usize {
        let mut count = 0;
        let mut x = *lo;
        let d = self.dim();
        loop {
            count += self.contains(&x) as usize;
            let mut i = d;
            loop {
                if i == 0 {
                    return count;
                }
                i -= 1;
                if x.get(i) < hi.get(i) {
                    x.set(i, x.get(i) + 1);
                    break;
                }
                x.set(i, lo.get(i));
            }
        }
    }
}

/// Transversal half-width `R_6(N)·N` of a block.
pub fn block_half_width(n: u64) -> f64 {
    (scale_r_unchecked(6, n) as f64) * n as f64
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
