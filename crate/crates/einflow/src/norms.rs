//! Sobolev norms H_k and the primed variant H'_k built from the Laplacian,
//! with a memory-guarded streaming path for the highest derivative level.

use crate::curvature::{contract_lead_pair, covariant_derivative, ConnectionPack};
use crate::error::{EinflowError, Result};
use crate::tensor::{pt, IndexMaps, Symmetry, TensorField};

/// Resolution-dependent caps on norm evaluation.
#[derive(Clone, Copy, Debug)]
pub struct NormCaps {
    /// Highest derivative order the grid is trusted to support.
    pub max_order: usize,
    /// Budget for materializing intermediate derivative fields, in bytes.
    pub bytes_budget: usize,
}

impl Default for NormCaps {
    fn default() -> Self {
        NormCaps {
            max_order: 4,
            bytes_budget: 1_500_000_000,
        }
    }
}

/// Local scratch for the fully-raised copy of a tensor value.
struct LocalNorm {
    maps: std::sync::Arc<IndexMaps>,
    raiser: Vec<f64>,
    raised: Vec<f64>,
    tmp: Vec<f64>,
}

impl LocalNorm {
    fn new(n: usize, max_comp: usize) -> Self {
        let maps = IndexMaps::get(n);
        let np = maps.np;
        LocalNorm {
            maps,
            raiser: vec![0.0; np * np],
            raised: vec![0.0; max_comp],
            tmp: vec![0.0; max_comp],
        }
    }

    fn prepare(&mut self, gi: &[f64], sym: Symmetry) {
        if matches!(sym, Symmetry::HType | Symmetry::PairSym) {
            pt::pair_raiser(&self.maps, gi, &mut self.raiser);
        }
    }

    /// |vals|_g^2 for a value block with `d` lead indices over base class `sym`.
    /// `gi` is the inverse metric in Sym2 packing; `prepare` must have been called
    /// for this point.
    fn norm2(&mut self, gi: &[f64], sym: Symmetry, d: usize, vals: &[f64]) -> f64 {
        let maps = &self.maps;
        let n = maps.n;
        let base_nc = sym.ncomp(n);
        let nlead = n.pow(d as u32);
        let ncomp = nlead * base_nc;
        self.raised[..ncomp].copy_from_slice(&vals[..ncomp]);

        // raise lead indices one at a time
        for s in 0..d {
            let stride = n.pow((d - 1 - s) as u32) * base_nc;
            let nblocks = ncomp / (stride * n);
            self.tmp[..ncomp].copy_from_slice(&self.raised[..ncomp]);
            for blk in 0..nblocks {
                let b0 = blk * stride * n;
                for anew in 0..n {
                    for r in 0..stride {
                        let mut acc = 0.0;
                        for a in 0..n {
                            acc += gi[maps.s2(anew, a)] * self.tmp[b0 + a * stride + r];
                        }
                        self.raised[b0 + anew * stride + r] = acc;
                    }
                }
            }
        }

        // raise base indices per class, block by block
        for blk in 0..nlead {
            let off = blk * base_nc;
            let b = &mut self.raised[off..off + base_nc];
            match sym {
                Symmetry::Scalar => {}
                Symmetry::Vector => {
                    self.tmp[..n].copy_from_slice(b);
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gi[maps.s2(i, j)] * self.tmp[j];
                        }
                        b[i] = acc;
                    }
                }
                Symmetry::Sym2 => {
                    self.tmp[..base_nc].copy_from_slice(b);
                    pt::sym2_raise(maps, gi, &self.tmp[..base_nc], b);
                }
                Symmetry::Gen2 => {
                    self.tmp[..base_nc].copy_from_slice(b);
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for p in 0..n {
                                for q in 0..n {
                                    acc += gi[maps.s2(i, p)]
                                        * gi[maps.s2(j, q)]
                                        * self.tmp[p * n + q];
                                }
                            }
                            b[i * n + j] = acc;
                        }
                    }
                }
                Symmetry::HType => {
                    let np = maps.np;
                    self.tmp[..base_nc].copy_from_slice(b);
                    for p in 0..np {
                        for l in 0..n {
                            let mut acc = 0.0;
                            for q in 0..np {
                                let gpq = self.raiser[p * np + q];
                                if gpq == 0.0 {
                                    continue;
                                }
                                for m in 0..n {
                                    acc += gpq * gi[maps.s2(l, m)] * self.tmp[q * n + m];
                                }
                            }
                            b[p * n + l] = acc;
                        }
                    }
                }
                Symmetry::Gen3 => {
                    self.tmp[..base_nc].copy_from_slice(b);
                    for i in 0..n {
                        for j in 0..n {
                            for l in 0..n {
                                let mut acc = 0.0;
                                for p in 0..n {
                                    for q in 0..n {
                                        for m in 0..n {
                                            acc += gi[maps.s2(i, p)]
                                                * gi[maps.s2(j, q)]
                                                * gi[maps.s2(l, m)]
                                                * self.tmp[(p * n + q) * n + m];
                                        }
                                    }
                                }
                                b[(i * n + j) * n + l] = acc;
                            }
                        }
                    }
                }
                Symmetry::PairSym => {
                    let np = maps.np;
                    self.tmp[..base_nc].copy_from_slice(b);
                    for pa in 0..np {
                        for pb in pa..np {
                            let mut acc = 0.0;
                            for qa in 0..np {
                                let ga = self.raiser[pa * np + qa];
                                if ga == 0.0 {
                                    continue;
                                }
                                for qb in 0..np {
                                    acc += ga
                                        * self.raiser[pb * np + qb]
                                        * self.tmp[maps.ps(qa, qb)];
                                }
                            }
                            b[maps.ps(pa, pb)] = acc;
                        }
                    }
                }
            }
        }

        // multiplicity-weighted dot of raised against original
        let mut total = 0.0;
        for blk in 0..nlead {
            let off = blk * base_nc;
            match sym {
                Symmetry::Scalar | Symmetry::Vector | Symmetry::Gen2 | Symmetry::Gen3 => {
                    for c in 0..base_nc {
                        total += self.raised[off + c] * vals[off + c];
                    }
                }
                Symmetry::Sym2 => {
                    for (c, &(i, j)) in maps.sym2_list.iter().enumerate() {
                        let mult = if i == j { 1.0 } else { 2.0 };
                        total += mult * self.raised[off + c] * vals[off + c];
                    }
                }
                Symmetry::HType => {
                    for c in 0..base_nc {
                        total += 2.0 * self.raised[off + c] * vals[off + c];
                    }
                }
                Symmetry::PairSym => {
                    for (c, &(a, b)) in maps.pairsym_list.iter().enumerate() {
                        let mult = if a == b { 4.0 } else { 8.0 };
                        total += mult * self.raised[off + c] * vals[off + c];
                    }
                }
            }
        }
        total
    }
}

/// sqrt of the integral of |field|_g^2 over the chart.
pub fn l2_norm(field: &TensorField, pack: &ConnectionPack) -> Result<f64> {
    if !field.same_grid(&pack.g) {
        return Err(EinflowError::GridMismatch("l2_norm".into()));
    }
    let grid = field.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let npts = grid.n_points();
    let ncomp = field.ncomp();
    let mut local = LocalNorm::new(grid.dim(), ncomp);
    let mut gi = vec![0.0; maps.nsym];
    let mut vals = vec![0.0; ncomp];
    let mut integrand = vec![0.0; npts];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            gi[c] = pack.ginv.at(c, idx);
        }
        for c in 0..ncomp {
            vals[c] = field.at(c, idx);
        }
        local.prepare(&gi, field.sym());
        integrand[idx] = local.norm2(&gi, field.sym(), field.deriv(), &vals);
    }
    let v = grid.integrate(&integrand, pack.sqrt_det.comp(0))?;
    Ok(v.max(0.0).sqrt())
}

/// L2 norm of the covariant gradient of `field`, evaluated point by point
/// without materializing the full gradient field.
fn grad_l2_streamed(field: &TensorField, pack: &ConnectionPack) -> Result<f64> {
    let grid = field.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let n = grid.dim();
    let nsym = maps.nsym;
    let npts = grid.n_points();
    let ncomp_in = field.ncomp();
    let ncomp_out = n * ncomp_in;
    let d = field.deriv();
    let base_rank = field.sym().base_rank();
    let base_nc = field.sym().ncomp(n);
    let nlead_in = n.pow(d as u32);

    let mut taps = Vec::with_capacity(n);
    for a in 0..n {
        taps.push(grid.stencil_taps(a)?);
    }
    let strides = grid.strides().to_vec();
    let extent = grid.extent().to_vec();

    let mut local = LocalNorm::new(n, ncomp_out);
    let mut gi = vec![0.0; nsym];
    let mut vals = vec![0.0; ncomp_out];
    let mut lead_idx = vec![0usize; d];
    let mut base_idx = vec![0usize; base_rank.max(1)];
    let mut rep = vec![0usize; base_rank.max(1)];
    let mut integrand = vec![0.0; npts];

    for idx in 0..npts {
        for c in 0..nsym {
            gi[c] = pack.ginv.at(c, idx);
        }
        // partial derivatives by direct tap evaluation
        for a in 0..n {
            let ia = (idx / strides[a]) % extent[a];
            let (offs, wts) = &taps[a][ia];
            for c in 0..ncomp_in {
                let comp = field.comp(c);
                let mut acc = 0.0;
                for (t, &w) in wts.iter().enumerate() {
                    let j = (idx as isize + offs[t] * strides[a] as isize) as usize;
                    acc += w * comp[j];
                }
                vals[a * ncomp_in + c] = acc;
            }
        }
        // connection corrections
        for a in 0..n {
            for lin in 0..nlead_in {
                let mut r = lin;
                for s in (0..d).rev() {
                    lead_idx[s] = r % n;
                    r /= n;
                }
                for c in 0..base_nc {
                    maps.base_rep(field.sym(), c, &mut rep);
                    let mut corr = 0.0;
                    for s in 0..d {
                        let i_s = lead_idx[s];
                        for m in 0..n {
                            let gam = pack.christoffel.at(m * nsym + maps.s2(a, i_s), idx);
                            if gam != 0.0 {
                                let saved = lead_idx[s];
                                lead_idx[s] = m;
                                let mut lo = 0usize;
                                for &l in lead_idx.iter() {
                                    lo = lo * n + l;
                                }
                                lead_idx[s] = saved;
                                corr += gam * field.at(lo * base_nc + c, idx);
                            }
                        }
                    }
                    for s in 0..base_rank {
                        let i_s = rep[s];
                        for m in 0..n {
                            let gam = pack.christoffel.at(m * nsym + maps.s2(a, i_s), idx);
                            if gam != 0.0 {
                                base_idx[..base_rank].copy_from_slice(&rep[..base_rank]);
                                base_idx[s] = m;
                                corr += gam
                                    * crate::curvature::full_get(
                                        &maps,
                                        field,
                                        idx,
                                        &lead_idx,
                                        &base_idx[..base_rank],
                                    );
                            }
                        }
                    }
                    vals[(a * nlead_in + lin) * base_nc + c] -= corr;
                }
            }
        }
        local.prepare(&gi, field.sym());
        integrand[idx] = local.norm2(&gi, field.sym(), d + 1, &vals);
    }
    let v = grid.integrate(&integrand, pack.sqrt_det.comp(0))?;
    Ok(v.max(0.0).sqrt())
}

/// Sobolev norm of `field`:
/// plain variant sums `l2(nabla^j field)` for j = 0..k;
/// primed variant sums `l2(nabla^{l mod 2} Delta^{floor(l/2)} field)` for l = 0..k.
/// The two coincide for k <= 1; H_0 is the L2 norm.
pub fn sobolev_norm(
    field: &TensorField,
    pack: &ConnectionPack,
    k: usize,
    primed: bool,
    caps: &NormCaps,
) -> Result<f64> {
    if k > caps.max_order {
        return Err(EinflowError::OrderTooHigh {
            k,
            reason: format!("norm cap is {} at this resolution", caps.max_order),
        });
    }
    let n = field.grid().dim();
    let npts = field.grid().n_points();
    let mut total = l2_norm(field, pack)?;
    if k == 0 {
        return Ok(total);
    }
    if primed {
        // l = 1: |nabla psi|; l = 2m: |Delta^m psi|; l = 2m+1: |nabla Delta^m psi|
        let mut cur = field.clone();
        for l in 1..=k {
            if l % 2 == 1 {
                let grad = covariant_derivative(&cur, pack)?;
                total += l2_norm(&grad, pack)?;
            } else {
                let grad = covariant_derivative(&cur, pack)?;
                let grad2 = covariant_derivative(&grad, pack)?;
                cur = contract_lead_pair(&grad2, &pack.ginv)?;
                total += l2_norm(&cur, pack)?;
            }
        }
        Ok(total)
    } else {
        let mut cur = field.clone();
        for j in 1..=k {
            let bytes = cur.ncomp() * n * npts * 8;
            if bytes <= caps.bytes_budget {
                cur = covariant_derivative(&cur, pack)?;
                total += l2_norm(&cur, pack)?;
            } else if j == k {
                total += grad_l2_streamed(&cur, pack)?;
            } else {
                return Err(EinflowError::OrderTooHigh {
                    k,
                    reason: format!(
                        "level {j} would need {bytes} bytes (budget {}); \
                         use a smaller grid, a lower order, or the primed norm",
                        caps.bytes_budget
                    ),
                });
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::Background;
    use crate::grid::ChartGrid;
    use crate::tensor::pointwise_norm2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn constant_field_h0_is_abs_value() {
        let grid = ChartGrid::flat_torus(vec![8, 8], vec![1.0, 1.0], 4).unwrap();
        let pack = Background::FlatTorus.connection(&grid).unwrap();
        let f = TensorField::from_data(&grid, Symmetry::Scalar, 0, vec![-2.5; grid.n_points()])
            .unwrap();
        let v = sobolev_norm(&f, &pack, 0, false, &NormCaps::default()).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn h1_equals_primed_h1() {
        let grid = ChartGrid::flat_torus(vec![12, 10], vec![1.0, 1.0], 4).unwrap();
        let pack = Background::FlatTorus.connection(&grid).unwrap();
        let npts = grid.n_points();
        let mut f = TensorField::zeros(&grid, Symmetry::Vector, 0);
        for idx in 0..npts {
            let c = grid.coordinates(idx);
            f.data_mut()[idx] = (2.0 * PI * c[0]).sin() + 0.3 * (2.0 * PI * c[1]).cos();
            f.data_mut()[npts + idx] = (2.0 * PI * (c[0] + c[1])).cos();
        }
        let caps = NormCaps::default();
        let a = sobolev_norm(&f, &pack, 1, false, &caps).unwrap();
        let b = sobolev_norm(&f, &pack, 1, true, &caps).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn monotone_in_k_and_matches_pointwise_norm() {
        let grid = ChartGrid::flat_torus(vec![10, 10], vec![1.0, 1.0], 4).unwrap();
        let pack = Background::FlatTorus.connection(&grid).unwrap();
        let npts = grid.n_points();
        let mut f = TensorField::zeros(&grid, Symmetry::Sym2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let amps: Vec<f64> = (0..f.ncomp()).map(|_| rng.gen::<f64>() - 0.5).collect();
        for idx in 0..npts {
            let c = grid.coordinates(idx);
            for s in 0..f.ncomp() {
                f.data_mut()[s * npts + idx] =
                    amps[s] * ((2.0 * PI * c[0]).sin() + (2.0 * PI * c[1]).cos());
            }
        }
        let caps = NormCaps::default();
        let mut prev = 0.0;
        for k in 0..=3 {
            let v = sobolev_norm(&f, &pack, k, false, &caps).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        // H_0^2 equals the integral of the pointwise squared norm
        let h0 = sobolev_norm(&f, &pack, 0, false, &caps).unwrap();
        let n2 = pointwise_norm2(&f, &pack.ginv).unwrap();
        let want = grid
            .integrate(n2.comp(0), pack.sqrt_det.comp(0))
            .unwrap()
            .sqrt();
        assert!((h0 - want).abs() < 1e-12);
    }

    #[test]
    fn streamed_top_level_matches_materialized() {
        let grid = ChartGrid::flat_torus(vec![8, 8], vec![1.0, 1.0], 4).unwrap();
        let pack = Background::FlatTorus.connection(&grid).unwrap();
        let npts = grid.n_points();
        let mut f = TensorField::zeros(&grid, Symmetry::Sym2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let amps: Vec<f64> = (0..f.ncomp()).map(|_| rng.gen::<f64>() - 0.5).collect();
        for idx in 0..npts {
            let c = grid.coordinates(idx);
            for s in 0..f.ncomp() {
                f.data_mut()[s * npts + idx] = amps[s] * (2.0 * PI * (c[0] - c[1])).sin();
            }
        }
        let big = NormCaps::default();
        let tiny = NormCaps {
            max_order: 4,
            bytes_budget: f.ncomp() * grid.dim() * npts * 8, // allows level 1, streams level 2
        };
        let a = sobolev_norm(&f, &pack, 2, false, &big).unwrap();
        let b = sobolev_norm(&f, &pack, 2, false, &tiny).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        // and an intermediate level over budget is rejected
        let too_tiny = NormCaps {
            max_order: 4,
            bytes_budget: 8,
        };
        assert!(matches!(
            sobolev_norm(&f, &pack, 2, false, &too_tiny),
            Err(EinflowError::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn order_cap_enforced() {
        let grid = ChartGrid::flat_torus(vec![8, 8], vec![1.0, 1.0], 4).unwrap();
        let pack = Background::FlatTorus.connection(&grid).unwrap();
        let f = TensorField::zeros(&grid, Symmetry::Scalar, 0);
        assert!(matches!(
            sobolev_norm(&f, &pack, 5, false, &NormCaps::default()),
            Err(EinflowError::OrderTooHigh { .. })
        ));
    }

    /// Empirical version of the norm-equivalence direction |psi|_{H_2} <~ |psi|_{H'_2}:
    /// the ratio stays bounded by a dimension constant across random smooth fields.
    #[test]
    fn plain_bounded_by_primed_empirically() {
        let grid = ChartGrid::flat_torus(vec![12, 12], vec![1.0, 1.0], 4).unwrap();
        let pack = Background::FlatTorus.connection(&grid).unwrap();
        let npts = grid.n_points();
        let caps = NormCaps::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst: f64 = 0.0;
        for _ in 0..25 {
            let mut f = TensorField::zeros(&grid, Symmetry::Scalar, 0);
            let a: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let m1 = rng.gen_range(1..=2) as f64;
            let m2 = rng.gen_range(1..=2) as f64;
            for idx in 0..npts {
                let c = grid.coordinates(idx);
                f.data_mut()[idx] = a[0] * (2.0 * PI * m1 * c[0]).sin()
                    + a[1] * (2.0 * PI * m2 * c[1]).cos()
                    + a[2] * (2.0 * PI * (m1 * c[0] + m2 * c[1])).sin()
                    + a[3]
                    + a[4] * (2.0 * PI * c[0]).cos() * (2.0 * PI * c[1]).sin();
            }
            let plain = sobolev_norm(&f, &pack, 2, false, &caps).unwrap();
            let primed = sobolev_norm(&f, &pack, 2, true, &caps).unwrap();
            worst = worst.max(plain / primed);
        }
        assert!(
            worst < 3.0,
            "H_2 / H'_2 ratio {worst} not bounded by expected constant"
        );
    }
}
