//! Overlapping patch decompositions on uniform grids.
//!
//! Everything is expressed in integer node indices: a grid with `n` cells has
//! nodes `0..=n`, and every patch, overlap band and buffer margin ends on a
//! node. Restricting a field to a neighbor's boundary is then plain index
//! selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Converts a physical width into a whole number of cells.
pub fn cells_for(width: f64, spacing: f64, what: &str) -> Result<usize> {
    if !(width >= 0.0) || !width.is_finite() {
        return Err(Error::Layout(format!("{what} must be a nonnegative length, got {width}")));
    }
    let ratio = width / spacing;
    let cells = ratio.round();
    if (ratio - cells).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Layout(format!(
            "{what} = {width} is not an integer multiple of the mesh width {spacing}"
        )));
    }
    Ok(cells as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub length: f64,
    pub h: f64,
    pub n: usize,
}

impl Grid2D {
    pub fn new(length: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Layout(format!("mesh width must be positive, got {h}")));
        }
        let n = cells_for(length, h, "domain length")?;
        if n < 4 {
            return Err(Error::Layout(format!("need at least 4 cells per side, got {n}")));
        }
        Ok(Self { length, h, n })
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i == self.n {
            self.length
        } else {
            i as f64 * self.h
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub length: f64,
    pub dx: f64,
    pub nx: usize,
    pub quadrature: GaussLegendre,
}

impl Grid1D {
    pub fn new(length: f64, dx: f64, nv: usize) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::Layout(format!("dx must be positive, got {dx}")));
        }
        if nv == 0 || nv % 2 != 0 {
            return Err(Error::Layout(format!("velocity count must be even and positive, got {nv}")));
        }
        let nx = cells_for(length, dx, "slab length")?;
        if nx < 4 {
            return Err(Error::Layout(format!("need at least 4 cells, got {nx}")));
        }
        Ok(Self {
            length,
            dx,
            nx,
            quadrature: GaussLegendre::new(nv)?,
        })
    }

    pub fn nv(&self) -> usize {
        self.quadrature.len()
    }
}

/// Closed node-index interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    pub fn cells(&self) -> usize {
        self.hi - self.lo
    }

    pub fn contains(&self, i: usize) -> bool {
        self.lo <= i && i <= self.hi
    }
}

/// Closed box of grid nodes. Local ordering runs axis 0 fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox<const D: usize> {
    #[serde(with = "node_array")]
    pub lo: [usize; D],
    #[serde(with = "node_array")]
    pub hi: [usize; D],
}

impl<const D: usize> IndexBox<D> {
    pub fn new(lo: [usize; D], hi: [usize; D]) -> Self {
        Self { lo, hi }
    }

    pub fn nodes_along(&self, d: usize) -> usize {
        self.hi[d] - self.lo[d] + 1
    }

    pub fn node_count(&self) -> usize {
        (0..D).map(|d| self.nodes_along(d)).product()
    }

    pub fn contains(&self, node: &[usize; D]) -> bool {
        (0..D).all(|d| self.lo[d] <= node[d] && node[d] <= self.hi[d])
    }

    pub fn contains_box(&self, other: &IndexBox<D>) -> bool {
        (0..D).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    /// Position of a global node in this box's local ordering.
    #[inline]
    pub fn local_index(&self, node: &[usize; D]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for d in 0..D {
            debug_assert!(self.lo[d] <= node[d] && node[d] <= self.hi[d]);
            idx += (node[d] - self.lo[d]) * stride;
            stride *= self.nodes_along(d);
        }
        idx
    }

    pub fn node_at(&self, mut local: usize) -> [usize; D] {
        let mut node = [0; D];
        for d in 0..D {
            let n = self.nodes_along(d);
            node[d] = self.lo[d] + local % n;
            local /= n;
        }
        node
    }

    pub fn is_on_boundary(&self, node: &[usize; D]) -> bool {
        (0..D).any(|d| node[d] == self.lo[d] || node[d] == self.hi[d])
    }

    /// Boundary nodes, counterclockwise from the lower-left corner in 2D
    /// (each corner once); `[lo, hi]` in 1D.
    pub fn boundary_nodes(&self) -> Vec<[usize; D]> {
        let mut out = Vec::new();
        match D {
            1 => {
                let mut a = [0; D];
                a[0] = self.lo[0];
                out.push(a);
                let mut b = [0; D];
                b[0] = self.hi[0];
                out.push(b);
            }
            2 => {
                let (x0, x1, y0, y1) = (self.lo[0], self.hi[0], self.lo[1], self.hi[1]);
                let mut push = |x: usize, y: usize| {
                    let mut n = [0; D];
                    n[0] = x;
                    n[1] = y;
                    out.push(n);
                };
                for x in x0..x1 {
                    push(x, y0);
                }
                for y in y0..y1 {
                    push(x1, y);
                }
                for x in ((x0 + 1)..=x1).rev() {
                    push(x, y1);
                }
                for y in ((y0 + 1)..=y1).rev() {
                    push(x0, y);
                }
            }
            _ => unimplemented!("boundary enumeration only for 1D and 2D boxes"),
        }
        out
    }
}

mod node_array {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(a: &[usize; D], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(a.iter())
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(d: De) -> Result<[usize; D], De::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<usize>| De::Error::custom(format!("expected {D} indices, got {}", v.len())))
    }
}

/// One axis of a tensor-product decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPartition {
    /// Non-overlapping core breakpoints `0 = b_0 < b_1 < … < b_M = n`.
    pub breakpoints: Vec<usize>,
    pub patches: Vec<Interval>,
    pub buffered: Vec<Interval>,
}

impl AxisPartition {
    fn new(n: usize, breakpoints: Vec<usize>, overlap: usize, buffer: usize) -> Result<Self> {
        let m = breakpoints.len() - 1;
        let mut patches = Vec::with_capacity(m);
        let mut buffered = Vec::with_capacity(m);
        for k in 0..m {
            let lo = if k == 0 { 0 } else { breakpoints[k].saturating_sub(overlap) };
            let hi = if k + 1 == m { n } else { (breakpoints[k + 1] + overlap).min(n) };
            if hi <= lo {
                return Err(Error::Layout(format!("patch {k} is empty")));
            }
            patches.push(Interval { lo, hi });
            let blo = if lo == 0 { 0 } else { lo.saturating_sub(buffer) };
            let bhi = if hi == n { n } else { (hi + buffer).min(n) };
            buffered.push(Interval { lo: blo, hi: bhi });
        }
        // only adjacent patches may overlap
        for k in 1..m.saturating_sub(1) {
            if patches[k - 1].hi > patches[k + 1].lo {
                return Err(Error::Layout(format!(
                    "overlap of {overlap} cells makes patches {} and {} intersect",
                    k - 1,
                    k + 1
                )));
            }
        }
        Ok(Self {
            breakpoints,
            patches,
            buffered,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Piecewise-linear weight of patch `k` at node `x`: one on the core,
    /// linear across each overlap band, zero outside the patch.
    pub fn ramp(&self, k: usize, x: usize) -> f64 {
        let p = self.patches[k];
        if !p.contains(x) {
            return 0.0;
        }
        if k > 0 {
            let (a, b) = (p.lo, self.patches[k - 1].hi);
            if x <= b {
                return if b > a { (x - a) as f64 / (b - a) as f64 } else { 0.5 };
            }
        }
        if k + 1 < self.len() {
            let (a, b) = (self.patches[k + 1].lo, p.hi);
            if x >= a {
                return if b > a { (b - x) as f64 / (b - a) as f64 } else { 0.5 };
            }
        }
        1.0
    }
}

/// Where a patch-boundary node takes its value from during the Schwarz update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySource {
    /// Node lies on the physical boundary; prescribed data.
    Physical,
    /// Node is read from the local field of this neighbor.
    Neighbor(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub cells: usize,
    pub spacing: f64,
    pub overlap: usize,
    pub buffer: usize,
    pub axes: Vec<AxisPartition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutSpec", into = "LayoutSpec")]
pub struct PatchLayout<const D: usize> {
    spec: LayoutSpec,
    neighbors: Vec<Vec<usize>>,
    sources: Vec<Vec<BoundarySource>>,
}

impl<const D: usize> TryFrom<LayoutSpec> for PatchLayout<D> {
    type Error = Error;

    fn try_from(spec: LayoutSpec) -> Result<Self> {
        Self::from_spec(spec)
    }
}

impl<const D: usize> From<PatchLayout<D>> for LayoutSpec {
    fn from(l: PatchLayout<D>) -> Self {
        l.spec
    }
}

/// Square-domain layout with `m1 × m2` equal patches, each enlarged by the
/// overlap on sides away from the physical boundary.
pub fn build_layout_2d(grid: &Grid2D, m1: usize, m2: usize, overlap: f64, buffer: f64) -> Result<PatchLayout<2>> {
    let o = cells_for(overlap, grid.h, "overlap width")?;
    let b = cells_for(buffer, grid.h, "buffer width")?;
    let axis = |m: usize| -> Result<AxisPartition> {
        if m == 0 || grid.n % m != 0 {
            return Err(Error::Layout(format!(
                "{m} patches do not split {} cells evenly",
                grid.n
            )));
        }
        let bp = (0..=m).map(|k| k * grid.n / m).collect();
        AxisPartition::new(grid.n, bp, o, b)
    };
    PatchLayout::from_spec(LayoutSpec {
        cells: grid.n,
        spacing: grid.h,
        overlap: o,
        buffer: b,
        axes: vec![axis(m1)?, axis(m2)?],
    })
}

/// Slab layout: half-width end patches, full-width interior patches.
pub fn build_layout_1d(grid: &Grid1D, m: usize, overlap: f64, buffer: f64) -> Result<PatchLayout<1>> {
    let o = cells_for(overlap, grid.dx, "overlap width")?;
    let b = cells_for(buffer, grid.dx, "buffer width")?;
    let n = grid.nx;
    let bp = match m {
        0 => return Err(Error::Layout("need at least one patch".into())),
        1 => vec![0, n],
        _ => {
            let unit = 2 * (m - 1);
            if n % unit != 0 {
                return Err(Error::Layout(format!(
                    "{n} cells cannot host {m} patches with half-width ends"
                )));
            }
            let half = n / unit;
            let mut bp = vec![0];
            bp.extend((0..m - 1).map(|k| half + k * 2 * half));
            bp.push(n);
            bp
        }
    };
    PatchLayout::from_spec(LayoutSpec {
        cells: n,
        spacing: grid.dx,
        overlap: o,
        buffer: b,
        axes: vec![AxisPartition::new(n, bp, o, b)?],
    })
}

impl<const D: usize> PatchLayout<D> {
    pub fn from_spec(spec: LayoutSpec) -> Result<Self> {
        if spec.axes.len() != D {
            return Err(Error::Layout(format!(
                "layout has {} axes, expected {D}",
                spec.axes.len()
            )));
        }
        for ax in &spec.axes {
            if ax.is_empty() || ax.patches.len() != ax.buffered.len() {
                return Err(Error::Layout("malformed axis partition".into()));
            }
            if ax.patches.iter().chain(&ax.buffered).any(|p| p.hi > spec.cells || p.hi <= p.lo) {
                return Err(Error::Layout("axis interval outside the domain".into()));
            }
        }
        if spec.overlap == 0 && spec.axes.iter().any(|a| a.len() > 1) {
            log::warn!("zero-overlap layout: interface data cannot propagate through the Schwarz iteration");
        }
        let mut layout = Self {
            spec,
            neighbors: Vec::new(),
            sources: Vec::new(),
        };
        let np = layout.num_patches();
        layout.neighbors = (0..np).map(|m| layout.compute_neighbors(m)).collect();
        layout.sources = (0..np)
            .map(|m| layout.compute_sources(m))
            .collect::<Result<_>>()?;
        Ok(layout)
    }

    pub fn spec(&self) -> &LayoutSpec {
        &self.spec
    }

    pub fn cells(&self) -> usize {
        self.spec.cells
    }

    pub fn spacing(&self) -> f64 {
        self.spec.spacing
    }

    pub fn overlap_cells(&self) -> usize {
        self.spec.overlap
    }

    pub fn buffer_cells(&self) -> usize {
        self.spec.buffer
    }

    pub fn patches_per_axis(&self) -> [usize; D] {
        let mut c = [0; D];
        for d in 0..D {
            c[d] = self.spec.axes[d].len();
        }
        c
    }

    pub fn num_patches(&self) -> usize {
        self.spec.axes.iter().map(|a| a.len()).product()
    }

    pub fn multi_index(&self, mut m: usize) -> [usize; D] {
        let mut idx = [0; D];
        for d in 0..D {
            let c = self.spec.axes[d].len();
            idx[d] = m % c;
            m /= c;
        }
        idx
    }

    pub fn linear_index(&self, idx: [usize; D]) -> usize {
        let mut m = 0;
        let mut stride = 1;
        for d in 0..D {
            m += idx[d] * stride;
            stride *= self.spec.axes[d].len();
        }
        m
    }

    pub fn domain(&self) -> IndexBox<D> {
        IndexBox::new([0; D], [self.spec.cells; D])
    }

    pub fn patch(&self, m: usize) -> IndexBox<D> {
        let idx = self.multi_index(m);
        let mut b = IndexBox::new([0; D], [0; D]);
        for d in 0..D {
            let p = self.spec.axes[d].patches[idx[d]];
            b.lo[d] = p.lo;
            b.hi[d] = p.hi;
        }
        b
    }

    pub fn buffered(&self, m: usize) -> IndexBox<D> {
        let idx = self.multi_index(m);
        let mut b = IndexBox::new([0; D], [0; D]);
        for d in 0..D {
            let p = self.spec.axes[d].buffered[idx[d]];
            b.lo[d] = p.lo;
            b.hi[d] = p.hi;
        }
        b
    }

    pub fn neighbors(&self, m: usize) -> &[usize] {
        &self.neighbors[m]
    }

    /// Sources for `patch(m).boundary_nodes()`, position by position.
    pub fn boundary_sources(&self, m: usize) -> &[BoundarySource] {
        &self.sources[m]
    }

    pub fn is_physical_node(&self, node: &[usize; D]) -> bool {
        (0..D).any(|d| node[d] == 0 || node[d] == self.spec.cells)
    }

    /// True when the buffered patch does not reach the physical boundary.
    pub fn is_interior_patch(&self, m: usize) -> bool {
        let b = self.buffered(m);
        (0..D).all(|d| b.lo[d] > 0 && b.hi[d] < self.spec.cells)
    }

    pub fn coordinate(&self, node: &[usize; D]) -> [f64; D] {
        let mut x = [0.0; D];
        for d in 0..D {
            x[d] = node[d] as f64 * self.spec.spacing;
        }
        x
    }

    /// Boundary positions of patch `m` that are filled from neighbor `l`,
    /// with their global nodes.
    pub fn trace_map(&self, m: usize, l: usize) -> Vec<(usize, [usize; D])> {
        let nodes = self.patch(m).boundary_nodes();
        self.sources[m]
            .iter()
            .zip(nodes)
            .enumerate()
            .filter(|(_, (s, _))| **s == BoundarySource::Neighbor(l))
            .map(|(pos, (_, node))| (pos, node))
            .collect()
    }

    fn compute_neighbors(&self, m: usize) -> Vec<usize> {
        let idx = self.multi_index(m);
        let mut out = Vec::new();
        for d in 0..D {
            if idx[d] > 0 {
                let mut j = idx;
                j[d] -= 1;
                out.push(self.linear_index(j));
            }
            if idx[d] + 1 < self.spec.axes[d].len() {
                let mut j = idx;
                j[d] += 1;
                out.push(self.linear_index(j));
            }
        }
        out.sort_unstable();
        out
    }

    /// Distance from `node` to the nearest non-physical face of `patch(l)`.
    fn depth(&self, l: usize, node: &[usize; D]) -> usize {
        let b = self.patch(l);
        let n = self.spec.cells;
        let mut depth = usize::MAX;
        for d in 0..D {
            if b.lo[d] != 0 {
                depth = depth.min(node[d] - b.lo[d]);
            }
            if b.hi[d] != n {
                depth = depth.min(b.hi[d] - node[d]);
            }
        }
        depth
    }

    fn compute_sources(&self, m: usize) -> Result<Vec<BoundarySource>> {
        self.patch(m)
            .boundary_nodes()
            .iter()
            .map(|node| {
                if self.is_physical_node(node) {
                    return Ok(BoundarySource::Physical);
                }
                let mut best: Option<(usize, usize)> = None;
                for &l in &self.neighbors[m] {
                    if !self.patch(l).contains(node) {
                        continue;
                    }
                    let dep = self.depth(l, node);
                    if best.map_or(true, |(_, bd)| dep > bd) {
                        best = Some((l, dep));
                    }
                }
                best.map(|(l, _)| BoundarySource::Neighbor(l)).ok_or_else(|| {
                    Error::Layout(format!("boundary node {node:?} of patch {m} is not covered by any neighbor"))
                })
            })
            .collect()
    }
}

/// Per-patch weights over each patch's local node ordering.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub weights: Vec<Vec<f64>>,
}

pub fn build_partition_of_unity<const D: usize>(layout: &PatchLayout<D>) -> PartitionOfUnity {
    let np = layout.num_patches();
    let domain = layout.domain();
    let mut raw: Vec<Vec<f64>> = (0..np)
        .map(|m| {
            let idx = layout.multi_index(m);
            let b = layout.patch(m);
            (0..b.node_count())
                .map(|k| {
                    let node = b.node_at(k);
                    (0..D)
                        .map(|d| layout.spec.axes[d].ramp(idx[d], node[d]))
                        .product()
                })
                .collect()
        })
        .collect();
    let mut total = vec![0.0; domain.node_count()];
    for m in 0..np {
        let b = layout.patch(m);
        for (k, w) in raw[m].iter().enumerate() {
            total[domain.local_index(&b.node_at(k))] += w;
        }
    }
    for m in 0..np {
        let b = layout.patch(m);
        for (k, w) in raw[m].iter_mut().enumerate() {
            *w /= total[domain.local_index(&b.node_at(k))];
        }
    }
    PartitionOfUnity { weights: raw }
}
