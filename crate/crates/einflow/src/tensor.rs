//! Grid-sampled tensor fields with symmetry-compressed, component-major storage,
//! metric index algebra, the Kulkarni--Nomizu product, symmetry projectors and
//! validators, and pointwise norms.

use crate::error::{EinflowError, Result};
use crate::grid::ChartGrid;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Storage layout of the non-derivative ("base") indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symmetry {
    Scalar,
    Vector,
    /// Rank 2 symmetric, n(n+1)/2 components (metrics, Sigma, E, Ricci).
    Sym2,
    /// Rank 2 general, n^2 components.
    Gen2,
    /// Rank 3, antisymmetric in the first two indices: n(n-1)/2 * n components.
    HType,
    /// Rank 3 general, n^3 components.
    Gen3,
    /// Rank 4 with antisymmetric index pairs (12)(34) and pair exchange symmetry:
    /// m(m+1)/2 components with m = n(n-1)/2 (Riemann- and Weyl-type tensors).
    PairSym,
}

/// Semantic class used by validators and projectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorClass {
    General,
    Metric,
    Sym2,
    Sym2TraceFree,
    HType,
    WeylType,
    Riem,
}

impl Symmetry {
    pub fn base_rank(self) -> usize {
        match self {
            Symmetry::Scalar => 0,
            Symmetry::Vector => 1,
            Symmetry::Sym2 | Symmetry::Gen2 => 2,
            Symmetry::HType | Symmetry::Gen3 => 3,
            Symmetry::PairSym => 4,
        }
    }

    pub fn ncomp(self, n: usize) -> usize {
        let np = n * (n - 1) / 2;
        match self {
            Symmetry::Scalar => 1,
            Symmetry::Vector => n,
            Symmetry::Sym2 => n * (n + 1) / 2,
            Symmetry::Gen2 => n * n,
            Symmetry::HType => np * n,
            Symmetry::Gen3 => n * n * n,
            Symmetry::PairSym => np * (np + 1) / 2,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Symmetry::Scalar => 0,
            Symmetry::Vector => 1,
            Symmetry::Sym2 => 2,
            Symmetry::Gen2 => 3,
            Symmetry::HType => 4,
            Symmetry::Gen3 => 5,
            Symmetry::PairSym => 6,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => Symmetry::Scalar,
            1 => Symmetry::Vector,
            2 => Symmetry::Sym2,
            3 => Symmetry::Gen2,
            4 => Symmetry::HType,
            5 => Symmetry::Gen3,
            6 => Symmetry::PairSym,
            _ => return None,
        })
    }
}

/// Precomputed index tables for a fixed dimension.
#[derive(Debug)]
pub struct IndexMaps {
    pub n: usize,
    /// number of antisymmetric pairs n(n-1)/2
    pub np: usize,
    /// number of symmetric rank-2 components n(n+1)/2
    pub nsym: usize,
    /// (i, j) -> sym2 component (symmetric access)
    sym2: Vec<usize>,
    /// (i, j) -> (pair component, sign); sign 0 on the diagonal
    pair: Vec<(usize, f64)>,
    /// (A, B) pair-of-pairs -> pairsym component (symmetric access)
    pairsym: Vec<usize>,
    /// sym2 component -> (i, j) with i <= j
    pub sym2_list: Vec<(usize, usize)>,
    /// pair component -> (i, j) with i < j
    pub pair_list: Vec<(usize, usize)>,
    /// pairsym component -> (A, B) with A <= B
    pub pairsym_list: Vec<(usize, usize)>,
}

impl IndexMaps {
    fn build(n: usize) -> Self {
        let np = n * (n - 1) / 2;
        let nsym = n * (n + 1) / 2;
        let mut sym2 = vec![0usize; n * n];
        let mut sym2_list = Vec::with_capacity(nsym);
        let mut c = 0usize;
        for i in 0..n {
            for j in i..n {
                sym2[i * n + j] = c;
                sym2[j * n + i] = c;
                sym2_list.push((i, j));
                c += 1;
            }
        }
        let mut pair = vec![(0usize, 0.0f64); n * n];
        let mut pair_list = Vec::with_capacity(np);
        let mut c = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                pair[i * n + j] = (c, 1.0);
                pair[j * n + i] = (c, -1.0);
                pair_list.push((i, j));
                c += 1;
            }
        }
        let mut pairsym = vec![0usize; np * np];
        let mut pairsym_list = Vec::with_capacity(np * (np + 1) / 2);
        let mut c = 0usize;
        for a in 0..np {
            for b in a..np {
                pairsym[a * np + b] = c;
                pairsym[b * np + a] = c;
                pairsym_list.push((a, b));
                c += 1;
            }
        }
        IndexMaps {
            n,
            np,
            nsym,
            sym2,
            pair,
            pairsym,
            sym2_list,
            pair_list,
            pairsym_list,
        }
    }

    pub fn get(n: usize) -> Arc<IndexMaps> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<IndexMaps>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap();
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(IndexMaps::build(n)))
            .clone()
    }

    #[inline(always)]
    pub fn s2(&self, i: usize, j: usize) -> usize {
        self.sym2[i * self.n + j]
    }

    #[inline(always)]
    pub fn pr(&self, i: usize, j: usize) -> (usize, f64) {
        self.pair[i * self.n + j]
    }

    #[inline(always)]
    pub fn ps(&self, a: usize, b: usize) -> usize {
        self.pairsym[a * self.np + b]
    }

    /// Component and sign of a PairSym tensor at full indices (i, m, j, q).
    /// Returns sign 0 when i == m or j == q.
    #[inline(always)]
    pub fn ps_full(&self, i: usize, m: usize, j: usize, q: usize) -> (usize, f64) {
        let (a, sa) = self.pr(i, m);
        let (b, sb) = self.pr(j, q);
        let s = sa * sb;
        if s == 0.0 {
            (0, 0.0)
        } else {
            (self.ps(a, b), s)
        }
    }

    /// Component and sign of an HType tensor at full indices (i, j, l).
    #[inline(always)]
    pub fn h_full(&self, i: usize, j: usize, l: usize) -> (usize, f64) {
        let (p, s) = self.pr(i, j);
        (p * self.n + l, s)
    }

    /// Representative full indices of a base component.
    pub fn base_rep(&self, sym: Symmetry, c: usize, rep: &mut [usize]) {
        let n = self.n;
        match sym {
            Symmetry::Scalar => {}
            Symmetry::Vector => rep[0] = c,
            Symmetry::Sym2 => {
                let (i, j) = self.sym2_list[c];
                rep[0] = i;
                rep[1] = j;
            }
            Symmetry::Gen2 => {
                rep[0] = c / n;
                rep[1] = c % n;
            }
            Symmetry::HType => {
                let (i, j) = self.pair_list[c / n];
                rep[0] = i;
                rep[1] = j;
                rep[2] = c % n;
            }
            Symmetry::Gen3 => {
                rep[0] = c / (n * n);
                rep[1] = (c / n) % n;
                rep[2] = c % n;
            }
            Symmetry::PairSym => {
                let (pa, pb) = self.pairsym_list[c];
                let (i, m) = self.pair_list[pa];
                let (j, q) = self.pair_list[pb];
                rep[0] = i;
                rep[1] = m;
                rep[2] = j;
                rep[3] = q;
            }
        }
    }
}

/// A grid-sampled covariant tensor field. `deriv` counts leading general indices
/// (one per covariant derivative applied); the base indices carry `sym`.
/// Storage is component-major: component c occupies data[c*npts .. (c+1)*npts].
#[derive(Clone, Debug)]
pub struct TensorField {
    sym: Symmetry,
    deriv: usize,
    grid: Arc<ChartGrid>,
    ncomp: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &Arc<ChartGrid>, sym: Symmetry, deriv: usize) -> Self {
        let n = grid.dim();
        let ncomp = n.pow(deriv as u32) * sym.ncomp(n);
        TensorField {
            sym,
            deriv,
            grid: grid.clone(),
            ncomp,
            data: vec![0.0; ncomp * grid.n_points()],
        }
    }

    pub fn from_data(grid: &Arc<ChartGrid>, sym: Symmetry, deriv: usize, data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        let ncomp = n.pow(deriv as u32) * sym.ncomp(n);
        if data.len() != ncomp * grid.n_points() {
            return Err(EinflowError::Other(format!(
                "data length {} does not match {} components x {} points",
                data.len(),
                ncomp,
                grid.n_points()
            )));
        }
        Ok(TensorField {
            sym,
            deriv,
            grid: grid.clone(),
            ncomp,
            data,
        })
    }

    pub fn sym(&self) -> Symmetry {
        self.sym
    }
    pub fn deriv(&self) -> usize {
        self.deriv
    }
    pub fn rank(&self) -> usize {
        self.deriv + self.sym.base_rank()
    }
    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }
    pub fn ncomp(&self) -> usize {
        self.ncomp
    }
    pub fn npts(&self) -> usize {
        self.grid.n_points()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn comp(&self, c: usize) -> &[f64] {
        let np = self.grid.n_points();
        &self.data[c * np..(c + 1) * np]
    }

    #[inline(always)]
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let np = self.grid.n_points();
        &mut self.data[c * np..(c + 1) * np]
    }

    /// Base-component value at a point for fields with deriv == 0.
    #[inline(always)]
    pub fn at(&self, c: usize, idx: usize) -> f64 {
        self.data[c * self.grid.n_points() + idx]
    }

    pub fn same_grid(&self, other: &TensorField) -> bool {
        self.grid.same_grid(&other.grid)
    }

    pub fn axpy(&mut self, a: f64, x: &TensorField) {
        assert_eq!(self.ncomp, x.ncomp);
        for (d, s) in self.data.iter_mut().zip(&x.data) {
            *d += a * s;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for d in self.data.iter_mut() {
            *d *= a;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Componentwise partial derivative along `axis`; adds one leading index.
    pub fn partial_derivative(&self, axis: usize) -> Result<TensorField> {
        let n = self.grid.dim();
        if axis >= n {
            return Err(EinflowError::AxisOutOfRange { axis, dim: n });
        }
        let mut out = TensorField::zeros(&self.grid, self.sym, self.deriv);
        for c in 0..self.ncomp {
            let (src, dst) = (self.comp(c), &mut vec![0.0; self.npts()]);
            self.grid.derivative_axis_into(src, dst, axis)?;
            out.comp_mut(c).copy_from_slice(dst);
        }
        Ok(out)
    }
}

/// Pointwise dense linear algebra on symmetric matrices in Sym2 packing.
pub mod pt {
    use super::IndexMaps;

    /// Cholesky factorization of a symmetric matrix given in Sym2 packing.
    /// Returns false if not positive definite.
    pub fn cholesky(maps: &IndexMaps, a: &[f64], l: &mut [f64]) -> bool {
        let n = maps.n;
        // l is a lower-triangular n*n scratch (row-major)
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[maps.s2(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return false;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        true
    }

    /// Inverse of a positive-definite symmetric matrix (Sym2 packing in and out)
    /// plus sqrt(det). `scratch` must hold at least 2 n^2 entries. Returns None
    /// when the Cholesky factorization fails.
    pub fn sym_inverse_sqrtdet(
        maps: &IndexMaps,
        a: &[f64],
        inv: &mut [f64],
        scratch: &mut [f64],
    ) -> Option<f64> {
        let n = maps.n;
        let (l, x) = scratch.split_at_mut(n * n);
        if !cholesky(maps, a, l) {
            return None;
        }
        let mut sqrt_det = 1.0;
        for i in 0..n {
            sqrt_det *= l[i * n + i];
        }
        // X = L^{-1} (lower triangular), column by column
        for j in 0..n {
            for i in 0..n {
                if i < j {
                    x[i * n + j] = 0.0;
                    continue;
                }
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in j..i {
                    s -= l[i * n + k] * x[k * n + j];
                }
                x[i * n + j] = s / l[i * n + i];
            }
        }
        // inv = X^T X
        for i in 0..n {
            for m in i..n {
                let mut s = 0.0;
                for k in m..n {
                    s += x[k * n + i] * x[k * n + m];
                }
                inv[maps.s2(i, m)] = s;
            }
        }
        Some(sqrt_det)
    }

    /// Raise both indices of a Sym2 tensor: out^{ij} = ginv^{ia} ginv^{jb} a_{ab}.
    pub fn sym2_raise(maps: &IndexMaps, ginv: &[f64], a: &[f64], out: &mut [f64]) {
        let n = maps.n;
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for p in 0..n {
                    let gip = ginv[maps.s2(i, p)];
                    for q in 0..n {
                        s += gip * ginv[maps.s2(j, q)] * a[maps.s2(p, q)];
                    }
                }
                out[maps.s2(i, j)] = s;
            }
        }
    }

    /// Mixed product (a.b)_{ij} = ginv^{pq} a_{ip} b_{jq}, symmetrized.
    pub fn sym2_dot_sym(maps: &IndexMaps, ginv: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        let n = maps.n;
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        s += ginv[maps.s2(p, q)]
                            * 0.5
                            * (a[maps.s2(i, p)] * b[maps.s2(j, q)]
                                + b[maps.s2(i, p)] * a[maps.s2(j, q)]);
                    }
                }
                out[maps.s2(i, j)] = s;
            }
        }
    }

    /// Scalar product <a, b>_g = ginv^{ip} ginv^{jq} a_{ij} b_{pq}.
    pub fn sym2_inner(maps: &IndexMaps, ginv: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let n = maps.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        s += ginv[maps.s2(i, p)]
                            * ginv[maps.s2(j, q)]
                            * a[maps.s2(i, j)]
                            * b[maps.s2(p, q)];
                    }
                }
            }
        }
        s
    }

    /// Metric trace ginv^{ij} a_{ij}.
    pub fn sym2_trace(maps: &IndexMaps, ginv: &[f64], a: &[f64]) -> f64 {
        let n = maps.n;
        let mut s = 0.0;
        for i in 0..n {
            s += ginv[maps.s2(i, i)] * a[maps.s2(i, i)];
            for j in (i + 1)..n {
                s += 2.0 * ginv[maps.s2(i, j)] * a[maps.s2(i, j)];
            }
        }
        s
    }

    /// Kulkarni--Nomizu product of two Sym2 tensors into PairSym packing:
    /// (xi (*) zeta)_{imjq} = xi_{ij} zeta_{mq} - xi_{jm} zeta_{iq}
    ///                      + zeta_{ij} xi_{mq} - zeta_{jm} xi_{iq}.
    pub fn kulkarni_nomizu(maps: &IndexMaps, xi: &[f64], zeta: &[f64], out: &mut [f64]) {
        for (c, &(a, b)) in maps.pairsym_list.iter().enumerate() {
            let (i, m) = maps.pair_list[a];
            let (j, q) = maps.pair_list[b];
            out[c] = xi[maps.s2(i, j)] * zeta[maps.s2(m, q)]
                - xi[maps.s2(j, m)] * zeta[maps.s2(i, q)]
                + zeta[maps.s2(i, j)] * xi[maps.s2(m, q)]
                - zeta[maps.s2(j, m)] * xi[maps.s2(i, q)];
        }
    }

    /// Slot (2,4) metric trace of a PairSym tensor: out_{ij} = ginv^{mq} x_{imjq}.
    pub fn pairsym_trace24(maps: &IndexMaps, ginv: &[f64], x: &[f64], out: &mut [f64]) {
        let n = maps.n;
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for m in 0..n {
                    for q in 0..n {
                        let (c, sg) = maps.ps_full(i, m, j, q);
                        if sg != 0.0 {
                            s += ginv[maps.s2(m, q)] * sg * x[c];
                        }
                    }
                }
                out[maps.s2(i, j)] = s;
            }
        }
    }

    /// Raise one antisymmetric pair index: G^{AB} = ginv^{ia} ginv^{mb} (over the
    /// pair A=(i,m), B=(a,b)), returned as a dense np x np matrix.
    pub fn pair_raiser(maps: &IndexMaps, ginv: &[f64], out: &mut [f64]) {
        let np = maps.np;
        for a in 0..np {
            let (i, m) = maps.pair_list[a];
            for b in 0..np {
                let (p, q) = maps.pair_list[b];
                out[a * np + b] =
                    ginv[maps.s2(i, p)] * ginv[maps.s2(m, q)] - ginv[maps.s2(i, q)] * ginv[maps.s2(m, p)];
            }
        }
    }

    /// |x|_g^2 for a PairSym tensor, using a precomputed pair raiser.
    pub fn pairsym_norm2(maps: &IndexMaps, raiser: &[f64], x: &[f64]) -> f64 {
        let np = maps.np;
        // x^{AB} = G^{AA'} G^{BB'} x_{A'B'}; |x|^2 over full indices = 4 sum_{A,B} x^{AB} x_{AB}
        let mut s = 0.0;
        for a in 0..np {
            for b in 0..np {
                let mut xr = 0.0;
                for ap in 0..np {
                    let g_a = raiser[a * np + ap];
                    if g_a == 0.0 {
                        continue;
                    }
                    for bp in 0..np {
                        xr += g_a * raiser[b * np + bp] * x[maps.ps(ap, bp)];
                    }
                }
                s += xr * x[maps.ps(a, b)];
            }
        }
        4.0 * s
    }

    /// |h|_g^2 for an HType tensor.
    pub fn htype_norm2(maps: &IndexMaps, ginv: &[f64], raiser: &[f64], h: &[f64]) -> f64 {
        let n = maps.n;
        let np = maps.np;
        // h^{Pl} = G^{PQ} ginv^{lm} h_{Qm}; |h|^2 = 2 sum_{P,l} h^{Pl} h_{Pl}
        let mut s = 0.0;
        for p in 0..np {
            for l in 0..n {
                let mut hr = 0.0;
                for q in 0..np {
                    let gpq = raiser[p * np + q];
                    if gpq == 0.0 {
                        continue;
                    }
                    for m in 0..n {
                        hr += gpq * ginv[maps.s2(l, m)] * h[q * n + m];
                    }
                }
                s += hr * h[p * n + l];
            }
        }
        2.0 * s
    }

    /// |v|_g^2 for a vector (covariant components).
    pub fn vector_norm2(maps: &IndexMaps, ginv: &[f64], v: &[f64]) -> f64 {
        let n = maps.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += ginv[maps.s2(i, j)] * v[i] * v[j];
            }
        }
        s
    }

    /// Remove the metric trace of a Sym2 value in place.
    pub fn tracefree_local(maps: &IndexMaps, gl: &[f64], gi: &[f64], a: &mut [f64]) {
        let lam = sym2_trace(maps, gi, a) / maps.n as f64;
        for c in 0..a.len() {
            a[c] -= lam * gl[c];
        }
    }

    /// Project an HType value onto {cyclic-free, trace-free over last two}.
    pub fn htype_project_local(
        maps: &IndexMaps,
        gl: &[f64],
        gi: &[f64],
        vals: &mut [f64],
        scratch: &mut [f64],
    ) {
        let n = maps.n;
        let nc = vals.len();
        let get = |loc: &[f64], i: usize, j: usize, l: usize| -> f64 {
            let (c, s) = maps.h_full(i, j, l);
            s * loc[c]
        };
        scratch[..nc].copy_from_slice(vals);
        for (pc, &(i, j)) in maps.pair_list.iter().enumerate() {
            for l in 0..n {
                let cyc = (get(scratch, i, j, l) + get(scratch, j, l, i) + get(scratch, l, i, j))
                    / 3.0;
                vals[pc * n + l] = scratch[pc * n + l] - cyc;
            }
        }
        let mut t = [0.0f64; 8];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                for l in 0..n {
                    s += gi[maps.s2(j, l)] * get(vals, i, j, l);
                }
            }
            t[i] = s;
        }
        let c1 = 1.0 / (n as f64 - 1.0);
        for (pc, &(i, j)) in maps.pair_list.iter().enumerate() {
            for l in 0..n {
                let u = gl[maps.s2(i, l)] * t[j] - gl[maps.s2(j, l)] * t[i];
                vals[pc * n + l] += c1 * u;
            }
        }
    }

    /// Project a PairSym value onto Riemann symmetries (first Bianchi).
    pub fn riem_project_local(maps: &IndexMaps, vals: &mut [f64], scratch: &mut [f64]) {
        let nc = vals.len();
        scratch[..nc].copy_from_slice(vals);
        let get = |loc: &[f64], i: usize, m: usize, j: usize, q: usize| -> f64 {
            let (c, s) = maps.ps_full(i, m, j, q);
            s * loc[c]
        };
        for (c, &(a, b)) in maps.pairsym_list.iter().enumerate() {
            let (i, m) = maps.pair_list[a];
            let (j, q) = maps.pair_list[b];
            let s_cyc = get(scratch, i, m, j, q) + get(scratch, i, j, q, m)
                + get(scratch, i, q, m, j);
            vals[c] = scratch[c] - s_cyc / 3.0;
        }
    }

    /// Project a PairSym value onto Weyl symmetries (Riemann plus trace-free).
    /// `scratch` needs nc + 3*nsym + 2*nc entries, laid out internally.
    pub fn weyl_project_local(
        maps: &IndexMaps,
        gl: &[f64],
        gi: &[f64],
        vals: &mut [f64],
        scratch: &mut WeylScratch,
    ) {
        let nf = maps.n as f64;
        riem_project_local(maps, vals, &mut scratch.buf);
        pairsym_trace24(maps, gi, vals, &mut scratch.tr);
        let scal = sym2_trace(maps, gi, &scratch.tr);
        for c in 0..maps.nsym {
            scratch.s_tf[c] = scratch.tr[c] - scal / nf * gl[c];
        }
        kulkarni_nomizu(maps, &scratch.s_tf, gl, &mut scratch.kn1);
        kulkarni_nomizu(maps, gl, gl, &mut scratch.kn2);
        let cs = 1.0 / (nf - 2.0);
        let cr = scal / (2.0 * nf * (nf - 1.0));
        for c in 0..vals.len() {
            vals[c] -= cs * scratch.kn1[c] + cr * scratch.kn2[c];
        }
    }

    /// Scratch for weyl_project_local.
    pub struct WeylScratch {
        pub buf: Vec<f64>,
        pub tr: Vec<f64>,
        pub s_tf: Vec<f64>,
        pub kn1: Vec<f64>,
        pub kn2: Vec<f64>,
    }

    impl WeylScratch {
        pub fn new(maps: &IndexMaps) -> Self {
            let nps = maps.np * (maps.np + 1) / 2;
            WeylScratch {
                buf: vec![0.0; nps],
                tr: vec![0.0; maps.nsym],
                s_tf: vec![0.0; maps.nsym],
                kn1: vec![0.0; nps],
                kn2: vec![0.0; nps],
            }
        }
    }
}

/// Projector onto a symmetry class; idempotent, identity on fields already in class.
pub struct SymmetryProjector {
    pub class: TensorClass,
}

/// Remove the metric trace of a Sym2 field: A - (tr A / n) g.
pub fn project_tracefree(field: &mut TensorField, g: &TensorField, ginv: &TensorField) {
    let maps = IndexMaps::get(field.grid().dim());
    let n = maps.n;
    let npts = field.npts();
    let nsym = maps.nsym;
    for idx in 0..npts {
        let mut tr = 0.0;
        for i in 0..n {
            tr += ginv.at(maps.s2(i, i), idx) * field.at(maps.s2(i, i), idx);
            for j in (i + 1)..n {
                tr += 2.0 * ginv.at(maps.s2(i, j), idx) * field.at(maps.s2(i, j), idx);
            }
        }
        let lam = tr / n as f64;
        for c in 0..nsym {
            field.data_mut()[c * npts + idx] -= lam * g.at(c, idx);
        }
    }
}

/// Project an HType-stored field onto the class {antisymmetric in first two (by
/// storage), cyclic-free, trace-free over the last two indices}.
pub fn project_htype(field: &mut TensorField, g: &TensorField, ginv: &TensorField) {
    let maps = IndexMaps::get(field.grid().dim());
    let n = maps.n;
    let npts = field.npts();
    let nc = field.ncomp();
    let mut local = vec![0.0; nc];
    let mut cleaned = vec![0.0; nc];
    for idx in 0..npts {
        for c in 0..nc {
            local[c] = field.at(c, idx);
        }
        let get = |loc: &[f64], i: usize, j: usize, l: usize| -> f64 {
            let (c, s) = maps.h_full(i, j, l);
            s * loc[c]
        };
        // remove the totally antisymmetric (cyclic) part:
        // for antisym-in-first-two T: T_[ijl] = (T_ijl + T_jli + T_lij)/3
        for (pc, &(i, j)) in maps.pair_list.iter().enumerate() {
            for l in 0..n {
                let cyc =
                    (get(&local, i, j, l) + get(&local, j, l, i) + get(&local, l, i, j)) / 3.0;
                cleaned[pc * n + l] = local[pc * n + l] - cyc;
            }
        }
        // remove the trace over the last two indices:
        // t_i = ginv^{jl} T_ijl;   T <- T + (1/(n-1)) (g_il t_j - g_jl t_i)
        let mut t = [0.0f64; 8];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                for l in 0..n {
                    s += ginv.at(maps.s2(j, l), idx) * get(&cleaned, i, j, l);
                }
            }
            t[i] = s;
        }
        let c1 = 1.0 / (n as f64 - 1.0);
        for (pc, &(i, j)) in maps.pair_list.iter().enumerate() {
            for l in 0..n {
                let u = g.at(maps.s2(i, l), idx) * t[j] - g.at(maps.s2(j, l), idx) * t[i];
                field.data_mut()[(pc * n + l) * npts + idx] = cleaned[pc * n + l] + c1 * u;
            }
        }
    }
}

/// Project a PairSym-stored field onto Riemann symmetries (removes the first-Bianchi
/// violating, totally antisymmetric part).
pub fn project_riem(field: &mut TensorField) {
    let maps = IndexMaps::get(field.grid().dim());
    let npts = field.npts();
    let nc = field.ncomp();
    let mut local = vec![0.0; nc];
    for idx in 0..npts {
        for c in 0..nc {
            local[c] = field.at(c, idx);
        }
        let get = |i: usize, m: usize, j: usize, q: usize| -> f64 {
            let (c, s) = maps.ps_full(i, m, j, q);
            s * local[c]
        };
        for (c, &(a, b)) in maps.pairsym_list.iter().enumerate() {
            let (i, m) = maps.pair_list[a];
            let (j, q) = maps.pair_list[b];
            // S_{imjq} = x_{imjq} + x_{ijqm} + x_{iqmj} (cyclic in last three);
            // the Riemann part is x - S/3.
            let s_cyc = get(i, m, j, q) + get(i, j, q, m) + get(i, q, m, j);
            field.data_mut()[c * npts + idx] = local[c] - s_cyc / 3.0;
        }
    }
}

/// Project a PairSym-stored field onto Weyl symmetries: Riemann symmetries plus
/// total trace-freeness.
pub fn project_weyl(field: &mut TensorField, g: &TensorField, ginv: &TensorField) {
    project_riem(field);
    let maps = IndexMaps::get(field.grid().dim());
    let n = maps.n;
    let nf = n as f64;
    let npts = field.npts();
    let nc = field.ncomp();
    let nsym = maps.nsym;
    let mut x = vec![0.0; nc];
    let mut tr = vec![0.0; nsym];
    let mut s_tf = vec![0.0; nsym];
    let mut gl = vec![0.0; nsym];
    let mut gi = vec![0.0; nsym];
    let mut kn1 = vec![0.0; nc];
    let mut kn2 = vec![0.0; nc];
    for idx in 0..npts {
        for c in 0..nc {
            x[c] = field.at(c, idx);
        }
        for c in 0..nsym {
            gl[c] = g.at(c, idx);
            gi[c] = ginv.at(c, idx);
        }
        pt::pairsym_trace24(&maps, &gi, &x, &mut tr);
        let scal = pt::sym2_trace(&maps, &gi, &tr);
        for c in 0..nsym {
            s_tf[c] = tr[c] - scal / nf * gl[c];
        }
        pt::kulkarni_nomizu(&maps, &s_tf, &gl, &mut kn1);
        pt::kulkarni_nomizu(&maps, &gl, &gl, &mut kn2);
        let c_s = 1.0 / (nf - 2.0);
        let c_r = scal / (2.0 * nf * (nf - 1.0));
        for c in 0..nc {
            field.data_mut()[c * npts + idx] = x[c] - c_s * kn1[c] - c_r * kn2[c];
        }
    }
}

/// Relative symmetry residual of a field against a class. Metric positive
/// definiteness is reported as an error, not a residual.
pub fn validate(
    field: &TensorField,
    class: TensorClass,
    g: &TensorField,
    ginv: &TensorField,
) -> Result<f64> {
    let maps = IndexMaps::get(field.grid().dim());
    let n = maps.n;
    let npts = field.npts();
    let mut worst = 0.0f64;
    match class {
        TensorClass::General => Ok(0.0),
        TensorClass::Metric => {
            let mut inv = vec![0.0; maps.nsym];
            let mut scratch = vec![0.0; 2 * n * n];
            let mut a = vec![0.0; maps.nsym];
            for idx in 0..npts {
                for c in 0..maps.nsym {
                    a[c] = field.at(c, idx);
                }
                inv.fill(0.0);
                if pt::sym_inverse_sqrtdet(&maps, &a, &mut inv, &mut scratch).is_none() {
                    return Err(EinflowError::MetricNotPositiveDefinite { point: idx });
                }
            }
            Ok(0.0)
        }
        TensorClass::Sym2 => Ok(0.0),
        TensorClass::Sym2TraceFree => {
            let mut a = vec![0.0; maps.nsym];
            let mut gi = vec![0.0; maps.nsym];
            for idx in 0..npts {
                for c in 0..maps.nsym {
                    a[c] = field.at(c, idx);
                    gi[c] = ginv.at(c, idx);
                }
                let tr = pt::sym2_trace(&maps, &gi, &a);
                let norm = pt::sym2_inner(&maps, &gi, &a, &a).sqrt();
                let r = tr.abs() / norm.max(1e-300);
                if norm > 1e-100 && r > worst {
                    worst = r;
                }
            }
            Ok(worst)
        }
        TensorClass::HType => {
            let nc = field.ncomp();
            let mut local = vec![0.0; nc];
            let mut gi = vec![0.0; maps.nsym];
            for idx in 0..npts {
                for c in 0..nc {
                    local[c] = field.at(c, idx);
                }
                for c in 0..maps.nsym {
                    gi[c] = ginv.at(c, idx);
                }
                let get = |i: usize, j: usize, l: usize| -> f64 {
                    let (c, s) = maps.h_full(i, j, l);
                    s * local[c]
                };
                let mut scale = 0.0f64;
                for c in 0..nc {
                    scale = scale.max(local[c].abs());
                }
                if scale < 1e-100 {
                    continue;
                }
                for i in 0..n {
                    let mut t = 0.0;
                    for j in 0..n {
                        for l in 0..n {
                            t += gi[maps.s2(j, l)] * get(i, j, l);
                        }
                    }
                    worst = worst.max(t.abs() / scale);
                }
                for (_, &(i, j)) in maps.pair_list.iter().enumerate() {
                    for l in 0..n {
                        let cyc = (get(i, j, l) + get(j, l, i) + get(l, i, j)) / 3.0;
                        worst = worst.max(cyc.abs() / scale);
                    }
                }
            }
            Ok(worst)
        }
        TensorClass::Riem | TensorClass::WeylType => {
            let nc = field.ncomp();
            let mut local = vec![0.0; nc];
            let mut gi = vec![0.0; maps.nsym];
            let mut tr = vec![0.0; maps.nsym];
            for idx in 0..npts {
                for c in 0..nc {
                    local[c] = field.at(c, idx);
                }
                let mut scale = 0.0f64;
                for c in 0..nc {
                    scale = scale.max(local[c].abs());
                }
                if scale < 1e-100 {
                    continue;
                }
                let get = |i: usize, m: usize, j: usize, q: usize| -> f64 {
                    let (c, s) = maps.ps_full(i, m, j, q);
                    s * local[c]
                };
                for (_, &(a, b)) in maps.pairsym_list.iter().enumerate() {
                    let (i, m) = maps.pair_list[a];
                    let (j, q) = maps.pair_list[b];
                    let cyc = get(i, m, j, q) + get(i, j, q, m) + get(i, q, m, j);
                    worst = worst.max(cyc.abs() / scale);
                }
                if class == TensorClass::WeylType {
                    for c in 0..maps.nsym {
                        gi[c] = ginv.at(c, idx);
                    }
                    pt::pairsym_trace24(&maps, &gi, &local, &mut tr);
                    for c in 0..maps.nsym {
                        worst = worst.max(tr[c].abs() / scale);
                    }
                }
            }
            Ok(worst)
        }
    }
}

/// Kulkarni--Nomizu product of two Sym2 fields.
pub fn kulkarni_nomizu(xi: &TensorField, zeta: &TensorField) -> Result<TensorField> {
    if !xi.same_grid(zeta) {
        return Err(EinflowError::GridMismatch("kulkarni_nomizu inputs".into()));
    }
    if xi.sym() != Symmetry::Sym2 || zeta.sym() != Symmetry::Sym2 {
        return Err(EinflowError::SymmetryViolation {
            class: "Sym2",
            residual: f64::NAN,
            budget: 0.0,
        });
    }
    let maps = IndexMaps::get(xi.grid().dim());
    let npts = xi.npts();
    let mut out = TensorField::zeros(xi.grid(), Symmetry::PairSym, 0);
    let mut a = vec![0.0; maps.nsym];
    let mut b = vec![0.0; maps.nsym];
    let mut o = vec![0.0; out.ncomp()];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            a[c] = xi.at(c, idx);
            b[c] = zeta.at(c, idx);
        }
        pt::kulkarni_nomizu(&maps, &a, &b, &mut o);
        for (c, v) in o.iter().enumerate() {
            out.data_mut()[c * npts + idx] = *v;
        }
    }
    Ok(out)
}

/// Pointwise inverse metric and volume element for a metric field.
pub struct MetricData {
    pub ginv: TensorField,
    pub sqrt_det: TensorField,
}

pub fn metric_data(g: &TensorField) -> Result<MetricData> {
    let maps = IndexMaps::get(g.grid().dim());
    let n = maps.n;
    let npts = g.npts();
    let mut ginv = TensorField::zeros(g.grid(), Symmetry::Sym2, 0);
    let mut sqrt_det = TensorField::zeros(g.grid(), Symmetry::Scalar, 0);
    let mut a = vec![0.0; maps.nsym];
    let mut inv = vec![0.0; maps.nsym];
    let mut scratch = vec![0.0; 2 * n * n];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            a[c] = g.at(c, idx);
        }
        inv.fill(0.0);
        match pt::sym_inverse_sqrtdet(&maps, &a, &mut inv, &mut scratch) {
            Some(sd) => {
                for c in 0..maps.nsym {
                    ginv.data_mut()[c * npts + idx] = inv[c];
                }
                sqrt_det.data_mut()[idx] = sd;
            }
            None => return Err(EinflowError::MetricNotPositiveDefinite { point: idx }),
        }
    }
    Ok(MetricData { ginv, sqrt_det })
}

/// Pointwise squared norm |psi|_g^2 as a scalar field. Derivative (leading) indices
/// are contracted with ginv like any other covariant index.
pub fn pointwise_norm2(field: &TensorField, ginv: &TensorField) -> Result<TensorField> {
    if !field.same_grid(ginv) {
        return Err(EinflowError::GridMismatch("pointwise_norm inputs".into()));
    }
    let maps = IndexMaps::get(field.grid().dim());
    let n = maps.n;
    let npts = field.npts();
    let mut out = TensorField::zeros(field.grid(), Symmetry::Scalar, 0);
    let nlead = n.pow(field.deriv() as u32);
    let base_nc = field.sym().ncomp(n);
    let mut gi = vec![0.0; maps.nsym];
    let mut raiser = vec![0.0; maps.np * maps.np];
    let mut base_a = vec![0.0; base_nc];
    let mut base_b = vec![0.0; base_nc];

    // metric on the lead (derivative) index block: dense ginv^{ab} products
    let mut lead_inner = vec![0.0; nlead * nlead];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            gi[c] = ginv.at(c, idx);
        }
        if field.sym() == Symmetry::PairSym || field.sym() == Symmetry::HType {
            pt::pair_raiser(&maps, &gi, &mut raiser);
        }
        // lead metric: product over deriv indices of ginv
        let d = field.deriv();
        if d == 0 {
            lead_inner[0] = 1.0;
        } else {
            for a in 0..nlead {
                for b in 0..nlead {
                    let mut prod = 1.0;
                    let (mut ra, mut rb) = (a, b);
                    for _ in 0..d {
                        let (ia, ib) = (ra % n, rb % n);
                        prod *= gi[maps.s2(ia, ib)];
                        ra /= n;
                        rb /= n;
                    }
                    lead_inner[a * nlead + b] = prod;
                }
            }
        }
        let mut total = 0.0;
        for a in 0..nlead {
            for b in 0..nlead {
                let w = lead_inner[a * nlead + b];
                if w == 0.0 {
                    continue;
                }
                for c in 0..base_nc {
                    base_a[c] = field.at(a * base_nc + c, idx);
                    base_b[c] = field.at(b * base_nc + c, idx);
                }
                let inner = match field.sym() {
                    Symmetry::Scalar => base_a[0] * base_b[0],
                    Symmetry::Vector => {
                        let mut s = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                s += gi[maps.s2(i, j)] * base_a[i] * base_b[j];
                            }
                        }
                        s
                    }
                    Symmetry::Sym2 => pt::sym2_inner(&maps, &gi, &base_a, &base_b),
                    Symmetry::Gen2 => {
                        let mut s = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                for p in 0..n {
                                    for q in 0..n {
                                        s += gi[maps.s2(i, p)]
                                            * gi[maps.s2(j, q)]
                                            * base_a[i * n + j]
                                            * base_b[p * n + q];
                                    }
                                }
                            }
                        }
                        s
                    }
                    Symmetry::HType => {
                        // polarization of htype_norm2
                        let np = maps.np;
                        let mut s = 0.0;
                        for p in 0..np {
                            for l in 0..n {
                                let mut hr = 0.0;
                                for q in 0..np {
                                    let gpq = raiser[p * np + q];
                                    if gpq == 0.0 {
                                        continue;
                                    }
                                    for m in 0..n {
                                        hr += gpq * gi[maps.s2(l, m)] * base_b[q * n + m];
                                    }
                                }
                                s += hr * base_a[p * n + l];
                            }
                        }
                        2.0 * s
                    }
                    Symmetry::Gen3 => {
                        let mut s = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                for l in 0..n {
                                    for p in 0..n {
                                        for q in 0..n {
                                            for m in 0..n {
                                                s += gi[maps.s2(i, p)]
                                                    * gi[maps.s2(j, q)]
                                                    * gi[maps.s2(l, m)]
                                                    * base_a[(i * n + j) * n + l]
                                                    * base_b[(p * n + q) * n + m];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        s
                    }
                    Symmetry::PairSym => {
                        let np = maps.np;
                        let mut s = 0.0;
                        for pa in 0..np {
                            for pb in 0..np {
                                let mut xr = 0.0;
                                for ap in 0..np {
                                    let ga = raiser[pa * np + ap];
                                    if ga == 0.0 {
                                        continue;
                                    }
                                    for bp in 0..np {
                                        xr += ga * raiser[pb * np + bp] * base_b[maps.ps(ap, bp)];
                                    }
                                }
                                s += xr * base_a[maps.ps(pa, pb)];
                            }
                        }
                        4.0 * s
                    }
                };
                total += w * inner;
            }
        }
        out.data_mut()[idx] = total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid(n: usize) -> Arc<ChartGrid> {
        ChartGrid::flat_torus(vec![6; n], vec![1.0; n], 2).unwrap()
    }

    fn identity_metric(grid: &Arc<ChartGrid>) -> TensorField {
        let maps = IndexMaps::get(grid.dim());
        let mut g = TensorField::zeros(grid, Symmetry::Sym2, 0);
        for i in 0..grid.dim() {
            g.comp_mut(maps.s2(i, i)).fill(1.0);
        }
        g
    }

    fn random_sym2(grid: &Arc<ChartGrid>, rng: &mut ChaCha8Rng, scale: f64) -> TensorField {
        let mut f = TensorField::zeros(grid, Symmetry::Sym2, 0);
        for v in f.data_mut() {
            *v = scale * (rng.gen::<f64>() - 0.5);
        }
        f
    }

    #[test]
    fn kn_of_identity_metric() {
        let grid = small_grid(4);
        let maps = IndexMaps::get(4);
        let g = identity_metric(&grid);
        let gg = kulkarni_nomizu(&g, &g).unwrap();
        // (g (*) g)_{1212} = 2 with 0-based indices (0,1,0,1)
        let (c, s) = maps.ps_full(0, 1, 0, 1);
        assert_eq!(s * gg.at(c, 0), 2.0);
        // (g (*) g)_{1111} = 0: the diagonal pair does not exist in PairSym storage
        let (_, s0) = maps.ps_full(0, 0, 0, 0);
        assert_eq!(s0, 0.0);
    }

    #[test]
    fn kn_symmetric_in_arguments_and_matches_bruteforce() {
        let grid = small_grid(4);
        let maps = IndexMaps::get(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xi = random_sym2(&grid, &mut rng, 1.0);
        let zeta = random_sym2(&grid, &mut rng, 1.0);
        let a = kulkarni_nomizu(&xi, &zeta).unwrap();
        let b = kulkarni_nomizu(&zeta, &xi).unwrap();
        for c in 0..a.ncomp() {
            assert!((a.at(c, 3) - b.at(c, 3)).abs() < 1e-14);
        }
        // brute-force quadruple loop at one point
        let idx = 5;
        let n = 4;
        for i in 0..n {
            for m in 0..n {
                for j in 0..n {
                    for q in 0..n {
                        let want = xi.at(maps.s2(i, j), idx) * zeta.at(maps.s2(m, q), idx)
                            - xi.at(maps.s2(j, m), idx) * zeta.at(maps.s2(i, q), idx)
                            + zeta.at(maps.s2(i, j), idx) * xi.at(maps.s2(m, q), idx)
                            - zeta.at(maps.s2(j, m), idx) * xi.at(maps.s2(i, q), idx);
                        let (c, s) = maps.ps_full(i, m, j, q);
                        let got = if s == 0.0 { 0.0 } else { s * a.at(c, idx) };
                        assert!(
                            (got - want).abs() < 1e-12,
                            "({i}{m}{j}{q}): got {got} want {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kn_output_is_riem_symmetric() {
        let grid = small_grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = random_sym2(&grid, &mut rng, 1.0);
        let zeta = random_sym2(&grid, &mut rng, 1.0);
        let a = kulkarni_nomizu(&xi, &zeta).unwrap();
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        let r = validate(&a, TensorClass::Riem, &g, &md.ginv).unwrap();
        assert!(r < 1e-14, "first Bianchi residual {r}");
    }

    #[test]
    fn metric_trace_of_metric_is_n() {
        for n in [3usize, 4, 5] {
            let grid = small_grid(n);
            let g = identity_metric(&grid);
            let md = metric_data(&g).unwrap();
            let maps = IndexMaps::get(n);
            let mut a = vec![0.0; maps.nsym];
            let mut gi = vec![0.0; maps.nsym];
            for c in 0..maps.nsym {
                a[c] = g.at(c, 0);
                gi[c] = md.ginv.at(c, 0);
            }
            assert!((pt::sym2_trace(&maps, &gi, &a) - n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn norm_of_metric_is_n_and_diag_example() {
        let grid = small_grid(4);
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        let n2 = pointwise_norm2(&g, &md.ginv).unwrap();
        assert!((n2.at(0, 0) - 4.0).abs() < 1e-14);
        let maps = IndexMaps::get(4);
        let mut a = TensorField::zeros(&grid, Symmetry::Sym2, 0);
        a.comp_mut(maps.s2(0, 0)).fill(1.0);
        a.comp_mut(maps.s2(1, 1)).fill(-1.0);
        let an = pointwise_norm2(&a, &md.ginv).unwrap();
        assert!((an.at(0, 0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn double_contraction_positivity() {
        let grid = small_grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_sym2(&grid, &mut rng, 2.0);
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        let n2 = pointwise_norm2(&a, &md.ginv).unwrap();
        for idx in 0..grid.n_points() {
            assert!(n2.at(0, idx) >= 0.0);
        }
    }

    #[test]
    fn tracefree_projection_idempotent() {
        let grid = small_grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut a = random_sym2(&grid, &mut rng, 1.0);
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        project_tracefree(&mut a, &g, &md.ginv);
        let r1 = validate(&a, TensorClass::Sym2TraceFree, &g, &md.ginv).unwrap();
        assert!(r1 < 1e-13, "trace residual {r1}");
        let before: Vec<f64> = a.data().to_vec();
        project_tracefree(&mut a, &g, &md.ginv);
        for (x, y) in a.data().iter().zip(&before) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn htype_projection_passes_validator_and_idempotent() {
        let grid = small_grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut h = TensorField::zeros(&grid, Symmetry::HType, 0);
        for v in h.data_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        project_htype(&mut h, &g, &md.ginv);
        let r = validate(&h, TensorClass::HType, &g, &md.ginv).unwrap();
        assert!(r < 1e-13, "residual {r}");
        let before: Vec<f64> = h.data().to_vec();
        project_htype(&mut h, &g, &md.ginv);
        for (x, y) in h.data().iter().zip(&before) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn weyl_projection_passes_validator_and_idempotent() {
        let grid = small_grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut w = TensorField::zeros(&grid, Symmetry::PairSym, 0);
        for v in w.data_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        project_weyl(&mut w, &g, &md.ginv);
        let r = validate(&w, TensorClass::WeylType, &g, &md.ginv).unwrap();
        assert!(r < 1e-12, "residual {r}");
        let before: Vec<f64> = w.data().to_vec();
        project_weyl(&mut w, &g, &md.ginv);
        for (x, y) in w.data().iter().zip(&before) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_invariant_under_orthogonal_frame_change() {
        // random rotation applied to components and metric leaves |A|^2 unchanged
        let grid = small_grid(4);
        let maps = IndexMaps::get(4);
        let n = 4usize;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Build a random rotation by QR-like Gram-Schmidt of a random matrix.
        let mut o = [[0.0f64; 4]; 4];
        for r in o.iter_mut() {
            for v in r.iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
        }
        for i in 0..n {
            for k in 0..i {
                let dot: f64 = (0..n).map(|j| o[i][j] * o[k][j]).sum();
                for j in 0..n {
                    o[i][j] -= dot * o[k][j];
                }
            }
            let nrm: f64 = (0..n).map(|j| o[i][j] * o[i][j]).sum::<f64>().sqrt();
            for j in 0..n {
                o[i][j] /= nrm;
            }
        }
        let a = random_sym2(&grid, &mut rng, 1.0);
        // rotate: A'_{ij} = O_i^a O_j^b A_{ab}; metric stays identity (orthogonal)
        let mut a_rot = TensorField::zeros(&grid, Symmetry::Sym2, 0);
        let npts = grid.n_points();
        for idx in 0..npts {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            s += o[i][p] * o[j][q] * a.at(maps.s2(p, q), idx);
                        }
                    }
                    a_rot.data_mut()[maps.s2(i, j) * npts + idx] = s;
                }
            }
        }
        let g = identity_metric(&grid);
        let md = metric_data(&g).unwrap();
        let na = pointwise_norm2(&a, &md.ginv).unwrap();
        let nb = pointwise_norm2(&a_rot, &md.ginv).unwrap();
        for idx in 0..npts {
            assert!((na.at(0, idx) - nb.at(0, idx)).abs() < 1e-11);
        }
    }

    #[test]
    fn nonmetric_rejected() {
        let grid = small_grid(3);
        let g = TensorField::zeros(&grid, Symmetry::Sym2, 0); // all zero: not PD
        assert!(matches!(
            metric_data(&g),
            Err(EinflowError::MetricNotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn htype_and_pairsym_norms_match_full_loops() {
        let grid = small_grid(4);
        let maps = IndexMaps::get(4);
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // random SPD metric at a point
        let mut gfield = identity_metric(&grid);
        for c in 0..maps.nsym {
            let delta = 0.2 * (rng.gen::<f64>() - 0.5);
            let base = gfield.at(c, 0);
            gfield.comp_mut(c).fill(base + delta);
        }
        let md = metric_data(&gfield).unwrap();
        let mut h = TensorField::zeros(&grid, Symmetry::HType, 0);
        for v in h.data_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        let n2 = pointwise_norm2(&h, &md.ginv).unwrap();
        // brute force with full indices
        let idx = 0;
        let gi = |i: usize, j: usize| md.ginv.at(maps.s2(i, j), idx);
        let hv = |i: usize, j: usize, l: usize| {
            let (c, s) = maps.h_full(i, j, l);
            s * h.at(c, idx)
        };
        let mut want = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    for p in 0..n {
                        for q in 0..n {
                            for m in 0..n {
                                want += gi(i, p) * gi(j, q) * gi(l, m) * hv(i, j, l) * hv(p, q, m);
                            }
                        }
                    }
                }
            }
        }
        assert!(
            (n2.at(0, idx) - want).abs() / want.abs().max(1.0) < 1e-11,
            "got {} want {}",
            n2.at(0, idx),
            want
        );
    }
}
