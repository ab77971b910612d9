//! Grid geometry: point lattices, subdomain tiling, perimeter and center-line
//! index maps, and the processor-block decomposition.
//!
//! Conventions used across the crate:
//! - A grid is an `nx x ny` lattice of points; point `(i, j)` sits at spatial
//!   position `origin + (i*h, j*h)`.
//! - A subdomain of size `m` covers `m x m` grid cells, i.e. the
//!   `(m+1) x (m+1)` points `[i0, i0+m] x [j0, j0+m]`. Anchors live on the
//!   `m/2` lattice so that the center lines of one subdomain coincide with
//!   perimeter lines of the half-offset subdomains.
//! - Perimeters are traced counter-clockwise from the anchor corner with each
//!   corner listed exactly once, giving `4m` points per subdomain.

use crate::{Error, Result};

/// Fixed iteration order of the four anchor parity classes within one
/// predictor iteration. Class `(0,0)` is the non-overlapping atomic tiling;
/// the other classes provide the overlap.
pub const CLASS_ORDER: [(u8, u8); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// A uniform 2-D point lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Point count along x.
    pub nx: usize,
    /// Point count along y.
    pub ny: usize,
    /// Grid spacing (spatial units per cell).
    pub h: f64,
    /// Spatial coordinates of point (0, 0).
    pub origin: (f64, f64),
}

/// Builds a grid, rejecting degenerate inputs.
pub fn build_grid(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<GridSpec> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid(format!(
            "grid needs at least 2 points per axis, got {nx}x{ny}"
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("grid spacing must be positive, got {h}")));
    }
    Ok(GridSpec { nx, ny, h, origin })
}

impl GridSpec {
    /// Spatial extent `((nx-1)h, (ny-1)h)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            (self.nx - 1) as f64 * self.h,
            (self.ny - 1) as f64 * self.h,
        )
    }

    /// Spatial position of lattice point `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + i as f64 * self.h,
            self.origin.1 + j as f64 * self.h,
        )
    }

    pub fn num_points(&self) -> usize {
        self.nx * self.ny
    }

    /// True for points on the outer boundary of the lattice.
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Number of distinct boundary points: `2(nx-1) + 2(ny-1)`.
    pub fn perimeter_len(&self) -> usize {
        2 * (self.nx - 1) + 2 * (self.ny - 1)
    }

    /// Boundary points in CCW order starting at (0,0): bottom edge
    /// left-to-right, right edge bottom-to-top, top edge right-to-left, left
    /// edge top-to-bottom. Each corner appears exactly once.
    pub fn perimeter(&self) -> Vec<(usize, usize)> {
        ccw_rect_perimeter(0, 0, self.nx - 1, self.ny - 1)
    }
}

/// CCW perimeter of the lattice rectangle `[i0, i0+w] x [j0, j0+ht]`
/// (w, ht in cells), corners once, starting at `(i0, j0)`.
fn ccw_rect_perimeter(i0: usize, j0: usize, w: usize, ht: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(2 * w + 2 * ht);
    for i in i0..i0 + w {
        out.push((i, j0));
    }
    for j in j0..j0 + ht {
        out.push((i0 + w, j));
    }
    for i in (i0 + 1..=i0 + w).rev() {
        out.push((i, j0 + ht));
    }
    for j in (j0 + 1..=j0 + ht).rev() {
        out.push((i0, j));
    }
    out
}

/// Anchor of one subdomain: lattice indices of its lower-left point plus the
/// side length `m` in cells. The subdomain covers points
/// `[i0, i0+m] x [j0, j0+m]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubdomainAnchor {
    pub i0: usize,
    pub j0: usize,
    /// Side length in grid cells; must be even so anchors sit on the `m/2`
    /// lattice.
    pub m: usize,
}

impl SubdomainAnchor {
    /// Parity class `(i0/(m/2) mod 2, j0/(m/2) mod 2)`.
    pub fn parity(&self) -> (u8, u8) {
        let half = self.m / 2;
        (((self.i0 / half) % 2) as u8, ((self.j0 / half) % 2) as u8)
    }

    /// Number of perimeter points (`4m`, corners counted once).
    pub fn perimeter_len(&self) -> usize {
        4 * self.m
    }

    /// Perimeter lattice points in CCW order starting at the anchor corner.
    pub fn perimeter(&self) -> Vec<(usize, usize)> {
        ccw_rect_perimeter(self.i0, self.j0, self.m, self.m)
    }

    /// The two center lines of the subdomain, restricted to points interior
    /// to the subdomain (the endpoints of each line lie on the perimeter and
    /// are inputs, not predictions).
    pub fn center_lines(&self) -> CenterLines {
        let half = self.m / 2;
        let vertical = (self.j0 + 1..self.j0 + self.m)
            .map(|j| (self.i0 + half, j))
            .collect();
        let horizontal = (self.i0 + 1..self.i0 + self.m)
            .map(|i| (i, self.j0 + half))
            .collect();
        CenterLines { vertical, horizontal }
    }

    /// All points strictly inside the subdomain, row-major.
    pub fn interior_points(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity((self.m - 1) * (self.m - 1));
        for j in self.j0 + 1..self.j0 + self.m {
            for i in self.i0 + 1..self.i0 + self.m {
                out.push((i, j));
            }
        }
        out
    }

    /// Maps a lattice point inside the subdomain to normalized local
    /// coordinates in `[0, 1]^2`.
    pub fn local_coord(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i - self.i0) as f64 / self.m as f64,
            (j - self.j0) as f64 / self.m as f64,
        )
    }

    /// Inclusive point index ranges covered by the subdomain.
    pub fn span(&self) -> ((usize, usize), (usize, usize)) {
        ((self.i0, self.i0 + self.m), (self.j0, self.j0 + self.m))
    }
}

/// The vertical and horizontal center lines of a subdomain (interior points
/// only). The two lines share the subdomain center point.
#[derive(Debug, Clone)]
pub struct CenterLines {
    pub vertical: Vec<(usize, usize)>,
    pub horizontal: Vec<(usize, usize)>,
}

impl CenterLines {
    /// Union of the two lines with the shared center point listed once.
    /// Order: vertical line bottom-to-top, then horizontal line
    /// left-to-right skipping the center.
    pub fn unique_points(&self) -> Vec<(usize, usize)> {
        let mut out = self.vertical.clone();
        let center = self.vertical[self.vertical.len() / 2];
        out.extend(self.horizontal.iter().copied().filter(|p| *p != center));
        out
    }
}

/// All valid anchors of a grid grouped by parity class.
#[derive(Debug, Clone)]
pub struct SubdomainSchedule {
    pub m: usize,
    classes: [Vec<SubdomainAnchor>; 4],
}

impl SubdomainSchedule {
    /// Anchors of one parity class, sorted by `(j0, i0)`.
    pub fn class(&self, parity: (u8, u8)) -> &[SubdomainAnchor] {
        let idx = CLASS_ORDER
            .iter()
            .position(|c| *c == parity)
            .expect("parity must be one of the four classes");
        &self.classes[idx]
    }

    /// All anchors in class iteration order.
    pub fn all(&self) -> impl Iterator<Item = &SubdomainAnchor> {
        self.classes.iter().flatten()
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }
}

/// Enumerates every subdomain anchor that fits in the grid, on the `m/2`
/// lattice, grouped by parity class. Class `(0,0)` tiles the grid cells
/// exactly (adjacent tiles share only their interface lines).
pub fn enumerate_anchors(grid: &GridSpec, m: usize) -> Result<SubdomainSchedule> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::invalid(format!(
            "subdomain size must be even and >= 2, got {m}"
        )));
    }
    if (grid.nx - 1) % m != 0 || (grid.ny - 1) % m != 0 {
        return Err(Error::invalid(format!(
            "grid cells {}x{} not tileable by subdomains of {m} cells",
            grid.nx - 1,
            grid.ny - 1
        )));
    }
    let half = m / 2;
    let mut classes: [Vec<SubdomainAnchor>; 4] = Default::default();
    // Anchors are valid when the whole (m+1)-point span fits: i0 + m <= nx-1.
    for j0 in (0..=(grid.ny - 1 - m)).step_by(half) {
        for i0 in (0..=(grid.nx - 1 - m)).step_by(half) {
            let anchor = SubdomainAnchor { i0, j0, m };
            let idx = CLASS_ORDER
                .iter()
                .position(|c| *c == anchor.parity())
                .expect("parity in class order");
            classes[idx].push(anchor);
        }
    }
    Ok(SubdomainSchedule { m, classes })
}

/// One rank's share of the lattice: a half-open owned rectangle plus halo
/// strips of width `halo` points outside each owned edge (clipped to the
/// grid), and the adjacent ranks in the processor grid.
#[derive(Debug, Clone)]
pub struct ProcessorBlock {
    pub rank: usize,
    /// Owned columns `[i_lo, i_hi)`.
    pub i_range: (usize, usize),
    /// Owned rows `[j_lo, j_hi)`.
    pub j_range: (usize, usize),
    /// Halo width in points.
    pub halo: usize,
    /// Position (col, row) in the `sqrt(p) x sqrt(p)` processor grid.
    pub coords: (usize, usize),
    /// Adjacent ranks (8-connectivity), ascending.
    pub neighbors: Vec<usize>,
}

impl ProcessorBlock {
    pub fn owns(&self, i: usize, j: usize) -> bool {
        i >= self.i_range.0 && i < self.i_range.1 && j >= self.j_range.0 && j < self.j_range.1
    }

    /// The block extended by the halo width on every side, clipped to the
    /// grid; inclusive index ranges.
    pub fn with_halo(&self, grid: &GridSpec) -> ((usize, usize), (usize, usize)) {
        let i_lo = self.i_range.0.saturating_sub(self.halo);
        let j_lo = self.j_range.0.saturating_sub(self.halo);
        let i_hi = (self.i_range.1 - 1 + self.halo).min(grid.nx - 1);
        let j_hi = (self.j_range.1 - 1 + self.halo).min(grid.ny - 1);
        ((i_lo, i_hi), (j_lo, j_hi))
    }
}

/// Splits the grid across `p` ranks arranged in a `sqrt(p) x sqrt(p)` block
/// grid in row-major rank order (rank = row * sqrt(p) + col). Block edges
/// align to multiples of `m`; the halo width is `m` points.
pub fn partition_processors(grid: &GridSpec, p: usize, m: usize) -> Result<Vec<ProcessorBlock>> {
    let side = (p as f64).sqrt().round() as usize;
    if side * side != p || p == 0 {
        return Err(Error::invalid(format!("worker count {p} is not a perfect square")));
    }
    let schedule_check = enumerate_anchors(grid, m)?;
    let tiles_x = (grid.nx - 1) / m;
    let tiles_y = (grid.ny - 1) / m;
    if tiles_x % side != 0 || tiles_y % side != 0 {
        return Err(Error::invalid(format!(
            "{tiles_x}x{tiles_y} atomic subdomains not divisible across {side}x{side} ranks"
        )));
    }
    drop(schedule_check);
    let bw_x = (tiles_x / side) * m;
    let bw_y = (tiles_y / side) * m;
    let mut blocks = Vec::with_capacity(p);
    for row in 0..side {
        for col in 0..side {
            let rank = row * side + col;
            let i_lo = col * bw_x;
            let i_hi = if col + 1 == side { grid.nx } else { (col + 1) * bw_x };
            let j_lo = row * bw_y;
            let j_hi = if row + 1 == side { grid.ny } else { (row + 1) * bw_y };
            let mut neighbors = Vec::new();
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (row as i64 + dr, col as i64 + dc);
                    if nr >= 0 && nr < side as i64 && nc >= 0 && nc < side as i64 {
                        neighbors.push(nr as usize * side + nc as usize);
                    }
                }
            }
            neighbors.sort_unstable();
            blocks.push(ProcessorBlock {
                rank,
                i_range: (i_lo, i_hi),
                j_range: (j_lo, j_hi),
                halo: m,
                coords: (col, row),
                neighbors,
            });
        }
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid(n: usize) -> GridSpec {
        build_grid(n, n, 1.0 / (n - 1) as f64, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn build_grid_extents() {
        let g = build_grid(65, 65, 1.0 / 64.0, (0.0, 0.0)).unwrap();
        assert_eq!(g.extent(), (1.0, 1.0));
        let g = build_grid(2, 2, 0.5, (0.0, 0.0)).unwrap();
        assert_eq!(g.extent(), (0.5, 0.5));
        let g = build_grid(2049, 2049, 1.0 / 64.0, (0.0, 0.0)).unwrap();
        assert_eq!(g.extent(), (32.0, 32.0));
    }

    #[test]
    fn build_grid_rejects_degenerate() {
        assert!(build_grid(1, 5, 0.1, (0.0, 0.0)).is_err());
        assert!(build_grid(5, 5, 0.0, (0.0, 0.0)).is_err());
        assert!(build_grid(5, 5, -1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn anchors_65_grid() {
        let sched = enumerate_anchors(&grid(65), 32).unwrap();
        let base: HashSet<_> = sched.class((0, 0)).iter().map(|a| (a.i0, a.j0)).collect();
        assert_eq!(
            base,
            [(0, 0), (32, 0), (0, 32), (32, 32)].into_iter().collect()
        );
        let diag: Vec<_> = sched.class((1, 1)).iter().map(|a| (a.i0, a.j0)).collect();
        assert_eq!(diag, vec![(16, 16)]);
    }

    #[test]
    fn anchors_single_subdomain() {
        let sched = enumerate_anchors(&grid(33), 32).unwrap();
        assert_eq!(sched.class((0, 0)).len(), 1);
        assert_eq!(sched.class((1, 0)).len(), 0);
        assert_eq!(sched.class((0, 1)).len(), 0);
        assert_eq!(sched.class((1, 1)).len(), 0);
    }

    #[test]
    fn anchors_129_grid_counts() {
        // Oracle: brute-force enumeration of anchors on the m/2 lattice that
        // fit inside the lattice, classified by parity.
        let g = grid(129);
        let m = 32;
        let mut expect = [0usize; 4];
        for j0 in (0..=g.ny - 1 - m).step_by(m / 2) {
            for i0 in (0..=g.nx - 1 - m).step_by(m / 2) {
                let par = (((i0 / 16) % 2) as u8, ((j0 / 16) % 2) as u8);
                let idx = CLASS_ORDER.iter().position(|c| *c == par).unwrap();
                expect[idx] += 1;
            }
        }
        assert_eq!(expect, [16, 12, 12, 9]);
        let sched = enumerate_anchors(&g, m).unwrap();
        for (k, class) in CLASS_ORDER.iter().enumerate() {
            assert_eq!(sched.class(*class).len(), expect[k]);
        }
    }

    #[test]
    fn anchors_reject_bad_m() {
        assert!(enumerate_anchors(&grid(65), 31).is_err());
        assert!(enumerate_anchors(&grid(66), 32).is_err());
    }

    #[test]
    fn perimeter_ccw_order() {
        let a = SubdomainAnchor { i0: 0, j0: 0, m: 2 };
        assert_eq!(
            a.perimeter(),
            vec![
                (0, 0),
                (1, 0),
                (2, 0),
                (2, 1),
                (2, 2),
                (1, 2),
                (0, 2),
                (0, 1)
            ]
        );
        // Translation invariance.
        let b = SubdomainAnchor { i0: 16, j0: 16, m: 2 };
        let shifted: Vec<_> = a.perimeter().iter().map(|(i, j)| (i + 16, j + 16)).collect();
        assert_eq!(b.perimeter(), shifted);
        // 4m points for m = 32.
        let c = SubdomainAnchor { i0: 0, j0: 0, m: 32 };
        assert_eq!(c.perimeter().len(), 128);
        assert_eq!(c.perimeter().len(), c.perimeter_len());
    }

    #[test]
    fn perimeter_is_bijection_onto_boundary() {
        let a = SubdomainAnchor { i0: 16, j0: 32, m: 8 };
        let per = a.perimeter();
        let set: HashSet<_> = per.iter().copied().collect();
        assert_eq!(set.len(), per.len());
        // Exactly the boundary points of the span.
        let ((ilo, ihi), (jlo, jhi)) = a.span();
        let mut boundary = HashSet::new();
        for i in ilo..=ihi {
            for j in jlo..=jhi {
                if i == ilo || i == ihi || j == jlo || j == jhi {
                    boundary.insert((i, j));
                }
            }
        }
        assert_eq!(set, boundary);
    }

    #[test]
    fn parity_classes_cover_and_are_disjoint() {
        let g = grid(65);
        let sched = enumerate_anchors(&g, 16).unwrap();
        let mut seen = HashSet::new();
        for a in sched.all() {
            assert!(seen.insert((a.i0, a.j0)), "duplicate anchor");
        }
        // Within one class, interiors (and center-line writes) are pairwise
        // disjoint; adjacent same-class tiles may share only perimeter lines.
        for class in CLASS_ORDER {
            let anchors = sched.class(class);
            for (k, a) in anchors.iter().enumerate() {
                let ia: HashSet<_> = a.interior_points().into_iter().collect();
                for b in &anchors[k + 1..] {
                    let wb: HashSet<_> = b.center_lines().unique_points().into_iter().collect();
                    assert!(ia.is_disjoint(&wb));
                    let ib: HashSet<_> = b.interior_points().into_iter().collect();
                    assert!(ia.is_disjoint(&ib));
                }
            }
        }
    }

    #[test]
    fn center_lines_subset_of_offset_perimeters() {
        let g = grid(65);
        let sched = enumerate_anchors(&g, 32).unwrap();
        let mut offset_perims: HashSet<(usize, usize)> = HashSet::new();
        for class in [(1, 0), (0, 1), (1, 1)] {
            for a in sched.class(class) {
                offset_perims.extend(a.perimeter());
            }
        }
        // Global boundary also carries line data.
        offset_perims.extend(g.perimeter());
        for a in sched.class((0, 0)) {
            for p in a.center_lines().unique_points() {
                assert!(
                    offset_perims.contains(&p),
                    "center-line point {p:?} not on any offset perimeter"
                );
            }
        }
        // And vice versa: offset-class center lines lie on atomic perimeters
        // or the global boundary.
        let mut base_perims: HashSet<(usize, usize)> = HashSet::new();
        for a in sched.class((0, 0)) {
            base_perims.extend(a.perimeter());
        }
        base_perims.extend(g.perimeter());
        for class in [(1, 1)] {
            for a in sched.class(class) {
                for p in a.center_lines().unique_points() {
                    assert!(base_perims.contains(&p));
                }
            }
        }
    }

    #[test]
    fn atomic_class_tiles_cells_exactly() {
        let g = grid(129);
        let sched = enumerate_anchors(&g, 32).unwrap();
        // Every cell covered by exactly one atomic subdomain.
        let mut cover = vec![vec![0u32; g.ny - 1]; g.nx - 1];
        for a in sched.class((0, 0)) {
            for ci in a.i0..a.i0 + a.m {
                for cj in a.j0..a.j0 + a.m {
                    cover[ci][cj] += 1;
                }
            }
        }
        assert!(cover.iter().flatten().all(|&c| c == 1));
    }

    #[test]
    fn grid_perimeter_matches_len_and_order() {
        let g = build_grid(4, 3, 1.0, (0.0, 0.0)).unwrap();
        let per = g.perimeter();
        assert_eq!(per.len(), g.perimeter_len());
        assert_eq!(per[0], (0, 0));
        assert_eq!(per[3], (3, 0));
        let set: HashSet<_> = per.iter().copied().collect();
        assert_eq!(set.len(), per.len());
        for &(i, j) in &per {
            assert!(g.is_boundary(i, j));
        }
    }

    #[test]
    fn partition_2x2_tiles_p4() {
        let g = grid(65);
        let blocks = partition_processors(&g, 4, 32).unwrap();
        assert_eq!(blocks.len(), 4);
        assert_eq!(blocks[0].neighbors, vec![1, 2, 3]);
        assert_eq!(blocks[0].i_range, (0, 32));
        assert_eq!(blocks[3].i_range, (32, 65));
        // Every point owned by exactly one rank.
        for i in 0..g.nx {
            for j in 0..g.ny {
                let owners = blocks.iter().filter(|b| b.owns(i, j)).count();
                assert_eq!(owners, 1, "point ({i},{j}) owned by {owners} ranks");
            }
        }
    }

    #[test]
    fn partition_4x4_tiles_p4() {
        let g = grid(129);
        let blocks = partition_processors(&g, 4, 32).unwrap();
        // Each rank owns a 2x2 block of subdomains (64 cells per side).
        assert_eq!(blocks[0].i_range, (0, 64));
        assert_eq!(blocks[0].j_range, (0, 64));
    }

    #[test]
    fn partition_center_rank_has_8_neighbors() {
        let g = build_grid(97, 97, 1.0 / 96.0, (0.0, 0.0)).unwrap();
        let blocks = partition_processors(&g, 9, 32).unwrap();
        assert_eq!(blocks[4].neighbors, vec![0, 1, 2, 3, 5, 6, 7, 8]);
        assert_eq!(blocks[0].neighbors, vec![1, 3, 4]);
        // Edge (non-corner) rank.
        assert_eq!(blocks[1].neighbors, vec![0, 2, 3, 4, 5]);
    }

    #[test]
    fn partition_rejects_bad_p() {
        let g = grid(65);
        assert!(partition_processors(&g, 3, 32).is_err());
        assert!(partition_processors(&g, 16, 32).is_err()); // 2x2 tiles over 4x4 ranks
    }
}
