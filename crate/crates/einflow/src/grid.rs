//! Discrete coordinate charts: periodic/truncated axes, centered finite-difference
//! operators of even order p with one-sided closures, and volume-weighted quadrature.

use crate::error::{EinflowError, Result};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisTopology {
    Periodic,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartKind {
    /// Flat torus, periodic on all axes, background metric = identity.
    FlatTorus,
    /// Hyperbolic half-space y^{-2} delta with one truncated axis (the last one, y),
    /// all other axes periodic. The y-range must stay strictly inside (0, inf).
    HyperbolicHalfSpaceCusp,
    /// No named background; axis topologies chosen freely (used by tests and oracles).
    Custom,
}

/// A uniform coordinate chart. Index layout is row-major with the last axis fastest.
#[derive(Clone, Debug)]
pub struct ChartGrid {
    dim: usize,
    extent: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    topology: Vec<AxisTopology>,
    stencil_order: usize,
    chart_kind: ChartKind,
    /// Points frozen at each end of every truncated axis (active-region margin).
    collar: usize,
    strides: Vec<usize>,
    n_points: usize,
    centered: Vec<f64>,
    /// One-sided/biased first-derivative rows for offsets 0..p/2 from a truncated
    /// edge, each over the first p+1 points of the axis.
    boundary_rows: Vec<Vec<f64>>,
    /// Gregory end-correction weights for truncated-axis quadrature.
    quad_row: Vec<f64>,
}

/// First-derivative weights at `z` over nodes `x` (Fornberg's recursion).
fn fd_weights_first(z: f64, x: &[f64]) -> Vec<f64> {
    let nn = x.len();
    let m = 1usize;
    let mut c = vec![[0.0f64; 2]; nn];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..nn {
        let mn = m.min(i);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[1]).collect()
}

/// Gregory end-correction rows; interior weight is 1.
fn gregory_row(order: usize) -> Vec<f64> {
    match order {
        2 => vec![0.5],
        4 => vec![3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0],
        6 => vec![
            95.0 / 288.0,
            317.0 / 240.0,
            23.0 / 30.0,
            793.0 / 720.0,
            157.0 / 160.0,
        ],
        _ => unreachable!("stencil order validated at construction"),
    }
}

impl ChartGrid {
    pub fn new(
        extent: Vec<usize>,
        spacing: Vec<f64>,
        origin: Vec<f64>,
        topology: Vec<AxisTopology>,
        stencil_order: usize,
        chart_kind: ChartKind,
        collar: usize,
    ) -> Result<Arc<Self>> {
        let dim = extent.len();
        if dim < 2 {
            return Err(EinflowError::Other(format!(
                "grid dimension must be at least 2, got {dim}"
            )));
        }
        if spacing.len() != dim || origin.len() != dim || topology.len() != dim {
            return Err(EinflowError::Other(
                "extent/spacing/origin/topology lengths disagree".into(),
            ));
        }
        if !matches!(stencil_order, 2 | 4 | 6) {
            return Err(EinflowError::Other(format!(
                "stencil order must be 2, 4 or 6, got {stencil_order}"
            )));
        }
        for a in 0..dim {
            if spacing[a] <= 0.0 {
                return Err(EinflowError::Other(format!(
                    "spacing on axis {a} must be positive"
                )));
            }
            let min_pts = match topology[a] {
                AxisTopology::Periodic => stencil_order + 1,
                AxisTopology::Truncated => 2 * (stencil_order + 1),
            };
            if extent[a] < min_pts {
                return Err(EinflowError::Other(format!(
                    "axis {a} needs at least {min_pts} points for order-{stencil_order} stencils, got {}",
                    extent[a]
                )));
            }
        }
        match chart_kind {
            ChartKind::FlatTorus => {
                if topology.iter().any(|t| *t != AxisTopology::Periodic) {
                    return Err(EinflowError::Other(
                        "flat torus must be periodic on all axes".into(),
                    ));
                }
            }
            ChartKind::HyperbolicHalfSpaceCusp => {
                let n_trunc = topology
                    .iter()
                    .filter(|t| **t == AxisTopology::Truncated)
                    .count();
                if n_trunc != 1 || topology[dim - 1] != AxisTopology::Truncated {
                    return Err(EinflowError::Other(
                        "cusp chart needs exactly one truncated axis, the last one (y)".into(),
                    ));
                }
                if origin[dim - 1] <= 0.0 {
                    return Err(EinflowError::Other(
                        "cusp chart y-range must lie strictly inside (0, inf)".into(),
                    ));
                }
            }
            ChartKind::Custom => {}
        }

        let mut strides = vec![0usize; dim];
        let mut s = 1usize;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= extent[a];
        }
        let n_points = s;

        let w = stencil_order / 2;
        let nodes: Vec<f64> = (0..=stencil_order).map(|i| i as f64).collect();
        let centered = fd_weights_first(w as f64, &nodes);
        let boundary_rows: Vec<Vec<f64>> = (0..w)
            .map(|off| fd_weights_first(off as f64, &nodes))
            .collect();

        Ok(Arc::new(ChartGrid {
            dim,
            extent,
            spacing,
            origin,
            topology,
            stencil_order,
            chart_kind,
            collar,
            strides,
            n_points,
            centered,
            boundary_rows,
            quad_row: gregory_row(stencil_order),
        }))
    }

    /// Flat torus with `extent[a]` points on a circle of length `length[a]`.
    pub fn flat_torus(extent: Vec<usize>, length: Vec<f64>, order: usize) -> Result<Arc<Self>> {
        let spacing: Vec<f64> = extent
            .iter()
            .zip(&length)
            .map(|(e, l)| l / *e as f64)
            .collect();
        let dim = extent.len();
        Self::new(
            extent,
            spacing,
            vec![0.0; dim],
            vec![AxisTopology::Periodic; dim],
            order,
            ChartKind::FlatTorus,
            0,
        )
    }

    /// Hyperbolic half-space cusp chart: transverse torus of `length` in the first
    /// dim-1 axes, truncated y-axis covering [y0, y1].
    pub fn hyperbolic_cusp(
        extent: Vec<usize>,
        length: Vec<f64>,
        y_range: (f64, f64),
        order: usize,
        collar: usize,
    ) -> Result<Arc<Self>> {
        let dim = extent.len();
        if length.len() != dim - 1 {
            return Err(EinflowError::Other(
                "cusp chart needs dim-1 transverse lengths".into(),
            ));
        }
        let (y0, y1) = y_range;
        if !(0.0 < y0 && y0 < y1) {
            return Err(EinflowError::Other(
                "cusp chart y-range must satisfy 0 < y0 < y1".into(),
            ));
        }
        let mut spacing: Vec<f64> = extent[..dim - 1]
            .iter()
            .zip(&length)
            .map(|(e, l)| l / *e as f64)
            .collect();
        spacing.push((y1 - y0) / (extent[dim - 1] - 1) as f64);
        let mut origin = vec![0.0; dim - 1];
        origin.push(y0);
        let mut topology = vec![AxisTopology::Periodic; dim - 1];
        topology.push(AxisTopology::Truncated);
        Self::new(
            extent,
            spacing,
            origin,
            topology,
            order,
            ChartKind::HyperbolicHalfSpaceCusp,
            collar,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn extent(&self) -> &[usize] {
        &self.extent
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }
    pub fn topology(&self) -> &[AxisTopology] {
        &self.topology
    }
    pub fn stencil_order(&self) -> usize {
        self.stencil_order
    }
    pub fn chart_kind(&self) -> ChartKind {
        self.chart_kind
    }
    pub fn collar(&self) -> usize {
        self.collar
    }
    pub fn n_points(&self) -> usize {
        self.n_points
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn same_grid(&self, other: &ChartGrid) -> bool {
        self.dim == other.dim
            && self.extent == other.extent
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.topology == other.topology
            && self.stencil_order == other.stencil_order
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.dim];
        let mut r = idx;
        for a in 0..self.dim {
            out[a] = r / self.strides[a];
            r %= self.strides[a];
        }
        out
    }

    pub fn linear_index(&self, mi: &[usize]) -> usize {
        mi.iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum::<usize>()
    }

    pub fn axis_coordinate(&self, axis: usize, ia: usize) -> f64 {
        self.origin[axis] + ia as f64 * self.spacing[axis]
    }

    pub fn coordinates(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, ia)| self.axis_coordinate(a, *ia))
            .collect()
    }

    /// True if the point lies outside the frozen collar of every truncated axis.
    pub fn is_active(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        for a in 0..self.dim {
            if self.topology[a] == AxisTopology::Truncated {
                let ia = mi[a];
                if ia < self.collar || ia >= self.extent[a] - self.collar {
                    return false;
                }
            }
        }
        true
    }

    /// First-derivative sweep of one scalar component along `axis`.
    /// Periodic axes wrap; truncated axes switch to one-sided rows of the same order
    /// in the boundary collar.
    pub fn derivative_axis_into(&self, src: &[f64], dst: &mut [f64], axis: usize) -> Result<()> {
        if axis >= self.dim {
            return Err(EinflowError::AxisOutOfRange {
                axis,
                dim: self.dim,
            });
        }
        if src.len() != self.n_points || dst.len() != self.n_points {
            return Err(EinflowError::GridMismatch(
                "component length differs from grid point count".into(),
            ));
        }
        let e = self.extent[axis];
        let inner = self.strides[axis];
        let outer = self.n_points / (e * inner);
        let taps = self.stencil_taps(axis)?;

        for o in 0..outer {
            let obase = o * e * inner;
            for ia in 0..e {
                let base = obase + ia * inner;
                let (offs, row) = &taps[ia];
                for inn in 0..inner {
                    let idx = base + inn;
                    let mut acc = 0.0;
                    for (t, &wt) in row.iter().enumerate() {
                        let j = (idx as isize + offs[t] * inner as isize) as usize;
                        acc += wt * src[j];
                    }
                    dst[idx] = acc;
                }
            }
        }
        Ok(())
    }

    /// First-derivative tap offsets (in axis-index units) and weights (with 1/h
    /// folded in) for every index along `axis`.
    pub fn stencil_taps(&self, axis: usize) -> Result<Vec<(Vec<isize>, Vec<f64>)>> {
        if axis >= self.dim {
            return Err(EinflowError::AxisOutOfRange {
                axis,
                dim: self.dim,
            });
        }
        let e = self.extent[axis];
        let inv_h = 1.0 / self.spacing[axis];
        let p = self.stencil_order;
        let w = p / 2;
        let scale = |row: &[f64], sign: f64| -> Vec<f64> {
            row.iter().map(|c| sign * c * inv_h).collect()
        };
        let mut taps = Vec::with_capacity(e);
        match self.topology[axis] {
            AxisTopology::Periodic => {
                for ia in 0..e {
                    let offs: Vec<isize> = (0..=p)
                        .map(|t| {
                            let j = (ia + e + t - w) % e;
                            j as isize - ia as isize
                        })
                        .collect();
                    taps.push((offs, scale(&self.centered, 1.0)));
                }
            }
            AxisTopology::Truncated => {
                for ia in 0..e {
                    if ia < w {
                        let offs: Vec<isize> =
                            (0..=p).map(|t| t as isize - ia as isize).collect();
                        taps.push((offs, scale(&self.boundary_rows[ia], 1.0)));
                    } else if ia >= e - w {
                        // mirrored one-sided row: offsets run backwards, sign flips
                        let offs: Vec<isize> = (0..=p)
                            .map(|t| (e - 1 - t) as isize - ia as isize)
                            .collect();
                        taps.push((offs, scale(&self.boundary_rows[e - 1 - ia], -1.0)));
                    } else {
                        let offs: Vec<isize> =
                            (0..=p).map(|t| t as isize - w as isize).collect();
                        taps.push((offs, scale(&self.centered, 1.0)));
                    }
                }
            }
        }
        Ok(taps)
    }

    /// Quadrature weight of a single point (product of per-axis Gregory weights;
    /// periodic axes contribute 1).
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let mi = self.multi_index(idx);
        let mut w = 1.0;
        for a in 0..self.dim {
            if self.topology[a] == AxisTopology::Truncated {
                let ia = mi[a];
                let e = self.extent[a];
                let m = self.quad_row.len();
                if ia < m {
                    w *= self.quad_row[ia];
                } else if ia >= e - m {
                    w *= self.quad_row[e - 1 - ia];
                }
            }
        }
        w
    }

    /// Cell volume in coordinate space.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Integral of `f * volume_element` over the chart. The volume element is the
    /// pointwise scalar sqrt(det g); quadrature uses Gregory end corrections on
    /// truncated axes. Summation order is fixed (Neumaier compensated, sequential),
    /// so results are reproducible bit-for-bit.
    pub fn integrate(&self, f: &[f64], volume_element: &[f64]) -> Result<f64> {
        if f.len() != self.n_points || volume_element.len() != self.n_points {
            return Err(EinflowError::GridMismatch(
                "integrand length differs from grid point count".into(),
            ));
        }
        let cell = self.cell_volume();
        let has_trunc = self
            .topology
            .iter()
            .any(|t| *t == AxisTopology::Truncated);
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        let mut add = |v: f64| {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
        };
        if has_trunc {
            for idx in 0..self.n_points {
                add(f[idx] * volume_element[idx] * self.quad_weight(idx));
            }
        } else {
            for idx in 0..self.n_points {
                add(f[idx] * volume_element[idx]);
            }
        }
        Ok((sum + comp) * cell)
    }

    /// Max over active points (NaN-propagating).
    pub fn sup_norm(&self, f: &[f64]) -> f64 {
        let mut m = 0.0f64;
        for idx in 0..self.n_points {
            let v = f[idx].abs();
            if v > m || v.is_nan() {
                m = v;
            }
        }
        m
    }
}
