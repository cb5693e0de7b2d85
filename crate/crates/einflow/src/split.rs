//! The rescaling map and the 1+n decomposition: building (g, Sigma, eta) from
//! unrescaled data, deriving the electric/magnetic/spatial Weyl projections
//! (E, H, K, J) through the Gauss--Codazzi equations, converting between W and J,
//! and measuring the Gauss (Hamiltonian) and Codazzi (momentum) residuals.

use crate::curvature::{covariant_derivative, gradient, ConnectionPack, CurvaturePack};
use crate::error::{EinflowError, Result};
use crate::grid::ChartGrid;
use crate::norms::l2_norm;
use crate::tensor::{
    metric_data, project_htype, project_tracefree, project_weyl, pt, IndexMaps, Symmetry,
    TensorField,
};
use std::sync::Arc;

/// The rescaled dynamical tuple at logarithmic time tau (t = e^tau).
#[derive(Clone)]
pub struct FlowState {
    pub t: f64,
    pub tau: f64,
    pub g: TensorField,
    pub sigma: TensorField,
    pub eta: TensorField,
    pub e: TensorField,
    pub h: TensorField,
    pub w: TensorField,
}

/// The unrescaled second-order tuple: metric, separate trace variable, second
/// fundamental form and its time derivative.
#[derive(Clone)]
pub struct ReducedState {
    pub t: f64,
    pub g_tilde: TensorField,
    pub h_trace: TensorField,
    pub k_tilde: TensorField,
    pub k_tilde_dot: TensorField,
}

impl FlowState {
    /// Exact background state: g = background metric, everything else zero.
    pub fn background(grid: &Arc<ChartGrid>, bg: crate::curvature::Background, t: f64) -> Self {
        FlowState {
            t,
            tau: t.ln(),
            g: bg.metric(grid),
            sigma: TensorField::zeros(grid, Symmetry::Sym2, 0),
            eta: TensorField::zeros(grid, Symmetry::Scalar, 0),
            e: TensorField::zeros(grid, Symmetry::Sym2, 0),
            h: TensorField::zeros(grid, Symmetry::HType, 0),
            w: TensorField::zeros(grid, Symmetry::PairSym, 0),
        }
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        self.g.grid()
    }

    /// Derived second fundamental form k_ij = Sigma_ij + (eta - 1) g_ij.
    pub fn second_fundamental_form(&self) -> TensorField {
        let mut k = self.sigma.clone();
        let npts = k.npts();
        for c in 0..k.ncomp() {
            let g = self.g.comp(c);
            let eta = self.eta.comp(0);
            let kc = k.comp_mut(c);
            for idx in 0..npts {
                kc[idx] += (eta[idx] - 1.0) * g[idx];
            }
        }
        k
    }
}

/// Result of the Gauss--Codazzi splitting.
pub struct SplitOutput {
    pub e: TensorField,
    pub h: TensorField,
    pub j: TensorField,
    pub w: TensorField,
    /// Trace of the raw electric part before trace-free enforcement; equals the
    /// Gauss (Hamiltonian) residual pointwise.
    pub e_trace_residual: TensorField,
}

/// Build the rescaled variables (g, Sigma, eta) from unrescaled (g_tilde, k_tilde, t).
pub fn rescale(reduced: &ReducedState) -> Result<(TensorField, TensorField, TensorField)> {
    let t = reduced.t;
    if t <= 0.0 {
        return Err(EinflowError::NonpositiveTime(t));
    }
    let grid = reduced.g_tilde.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let n = grid.dim();
    let nf = n as f64;
    let npts = grid.n_points();

    let mut g = reduced.g_tilde.clone();
    g.scale(t.powi(-2));
    let md = metric_data(&g)?;

    // k = t^{-1} k_tilde; Sigma = k - (tr_g k / n) g; eta = tr_g k / n + 1
    let mut sigma = TensorField::zeros(&grid, Symmetry::Sym2, 0);
    let mut eta = TensorField::zeros(&grid, Symmetry::Scalar, 0);
    let mut kl = vec![0.0; maps.nsym];
    let mut gi = vec![0.0; maps.nsym];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            kl[c] = reduced.k_tilde.at(c, idx) / t;
            gi[c] = md.ginv.at(c, idx);
        }
        let tr = pt::sym2_trace(&maps, &gi, &kl);
        for c in 0..maps.nsym {
            sigma.data_mut()[c * npts + idx] = kl[c] - tr / nf * g.at(c, idx);
        }
        eta.data_mut()[idx] = tr / nf + 1.0;
    }
    Ok((g, sigma, eta))
}

/// Inverse map: g_tilde = t^2 g, k_tilde = t (Sigma + (eta - 1) g),
/// h = tr_{g_tilde} k_tilde = n (eta - 1) / t. The wave-sector velocity
/// k_tilde_dot is filled from the second-order evolution equation
/// d_t k_tilde = Ricci[g_tilde] - 2 k k + h k (Ricci[g_tilde] = Ricci[g]).
pub fn unrescale(state: &FlowState, ricci: &TensorField) -> Result<ReducedState> {
    let t = state.t;
    if t <= 0.0 {
        return Err(EinflowError::NonpositiveTime(t));
    }
    let grid = state.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let n = grid.dim();
    let nf = n as f64;
    let npts = grid.n_points();

    let mut g_tilde = state.g.clone();
    g_tilde.scale(t * t);
    let k_tilde = {
        let mut k = state.second_fundamental_form();
        k.scale(t);
        k
    };
    let mut h_trace = TensorField::zeros(&grid, Symmetry::Scalar, 0);
    for idx in 0..npts {
        h_trace.data_mut()[idx] = nf * (state.eta.at(0, idx) - 1.0) / t;
    }
    let md = metric_data(&g_tilde)?;
    let mut k_tilde_dot = TensorField::zeros(&grid, Symmetry::Sym2, 0);
    let mut kl = vec![0.0; maps.nsym];
    let mut gi = vec![0.0; maps.nsym];
    let mut kk = vec![0.0; maps.nsym];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            kl[c] = k_tilde.at(c, idx);
            gi[c] = md.ginv.at(c, idx);
        }
        pt::sym2_dot_sym(&maps, &gi, &kl, &kl, &mut kk);
        let h = h_trace.at(0, idx);
        for c in 0..maps.nsym {
            k_tilde_dot.data_mut()[c * npts + idx] = ricci.at(c, idx) - 2.0 * kk[c] + h * kl[c];
        }
    }
    Ok(ReducedState {
        t,
        g_tilde,
        h_trace,
        k_tilde,
        k_tilde_dot,
    })
}

/// The algebraic relation between the spatial Weyl tensor W and the Weyl part J
/// of the spatial projection of the spacetime Weyl tensor:
///
/// W = J - 1/2 Sigma (*) Sigma - 1/(n-2) (Sigma.Sigma) (*) g
///       + |Sigma|^2 / (2(n-1)(n-2)) g (*) g.
///
/// These coefficients are forced by trace-freeness of both sides: the metric
/// trace of the correction vanishes identically for trace-free Sigma.
/// Writes W into `out` given local values; set `invert` to recover J from W.
#[allow(clippy::too_many_arguments)]
pub fn w_from_j_local(
    maps: &IndexMaps,
    gl: &[f64],
    gi: &[f64],
    sig: &[f64],
    j_or_w: &[f64],
    invert: bool,
    out: &mut [f64],
    scratch: &mut WScratch,
) {
    let nf = maps.n as f64;
    let c2 = 1.0 / (nf - 2.0);
    let c3 = 1.0 / ((nf - 1.0) * (nf - 2.0));
    pt::sym2_dot_sym(maps, gi, sig, sig, &mut scratch.ss);
    let s2 = pt::sym2_inner(maps, gi, sig, sig);
    pt::kulkarni_nomizu(maps, sig, sig, &mut scratch.kn_sigsig);
    pt::kulkarni_nomizu(maps, &scratch.ss, gl, &mut scratch.kn_ssg);
    pt::kulkarni_nomizu(maps, gl, gl, &mut scratch.kn_gg);
    let sgn = if invert { 1.0 } else { -1.0 };
    for c in 0..out.len() {
        out[c] = j_or_w[c]
            + sgn
                * (0.5 * scratch.kn_sigsig[c] + c2 * scratch.kn_ssg[c]
                    - 0.5 * s2 * c3 * scratch.kn_gg[c]);
    }
}

/// Scratch buffers for the W <-> J relation.
pub struct WScratch {
    pub ss: Vec<f64>,
    pub kn_sigsig: Vec<f64>,
    pub kn_ssg: Vec<f64>,
    pub kn_gg: Vec<f64>,
}

impl WScratch {
    pub fn new(maps: &IndexMaps) -> Self {
        let nps = maps.np * (maps.np + 1) / 2;
        WScratch {
            ss: vec![0.0; maps.nsym],
            kn_sigsig: vec![0.0; nps],
            kn_ssg: vec![0.0; nps],
            kn_gg: vec![0.0; nps],
        }
    }
}

/// Derive (E, H, J, W) from (g, Sigma, eta) and the curvature of g.
///
/// E comes from the Ricci-level Gauss equation with its trace removed (the trace
/// is the Hamiltonian residual and is returned separately); H from the Codazzi
/// equation with the cyclic part projected out; J from the Riemann-level Gauss
/// equation; W from the algebraic W--J relation.
pub fn gauss_codazzi_split(
    g: &TensorField,
    sigma: &TensorField,
    eta: &TensorField,
    pack: &CurvaturePack,
) -> Result<SplitOutput> {
    let grid = g.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let n = grid.dim();
    let nf = n as f64;
    let npts = grid.n_points();
    let nsym = maps.nsym;

    // H_{ijm} = -(nabla_i Sigma_{jm} - nabla_j Sigma_{im}
    //            + d_i eta g_{jm} - d_j eta g_{im})
    let dsig = covariant_derivative(sigma, &pack.conn)?;
    let deta = gradient(eta)?;
    let mut h = TensorField::zeros(&grid, Symmetry::HType, 0);
    for (pc, &(i, j)) in maps.pair_list.iter().enumerate() {
        for m in 0..n {
            let out_c = pc * n + m;
            let a = dsig.comp(i * nsym + maps.s2(j, m));
            let b = dsig.comp(j * nsym + maps.s2(i, m));
            let ei = deta.comp(i);
            let ej = deta.comp(j);
            let gjm = g.comp(maps.s2(j, m));
            let gim = g.comp(maps.s2(i, m));
            let dst = h.comp_mut(out_c);
            for idx in 0..npts {
                dst[idx] = -(a[idx] - b[idx] + ei[idx] * gjm[idx] - ej[idx] * gim[idx]);
            }
        }
    }
    project_htype(&mut h, g, &pack.conn.ginv);

    // E_raw = Ric + (n-1) g - (n-1)(2 eta - eta^2) g - Sigma.Sigma - (n-2)(1-eta) Sigma
    let mut e = TensorField::zeros(&grid, Symmetry::Sym2, 0);
    let mut e_trace = TensorField::zeros(&grid, Symmetry::Scalar, 0);
    {
        let mut sig_l = vec![0.0; nsym];
        let mut gi_l = vec![0.0; nsym];
        let mut ss = vec![0.0; nsym];
        for idx in 0..npts {
            for c in 0..nsym {
                sig_l[c] = sigma.at(c, idx);
                gi_l[c] = pack.conn.ginv.at(c, idx);
            }
            pt::sym2_dot_sym(&maps, &gi_l, &sig_l, &sig_l, &mut ss);
            let et = eta.at(0, idx);
            for c in 0..nsym {
                let v = pack.ricci.at(c, idx) + (nf - 1.0) * g.at(c, idx)
                    - (nf - 1.0) * (2.0 * et - et * et) * g.at(c, idx)
                    - ss[c]
                    - (nf - 2.0) * (1.0 - et) * sig_l[c];
                e.data_mut()[c * npts + idx] = v;
            }
        }
        // the trace of E_raw is the Gauss residual; remove it
        let mut el = vec![0.0; nsym];
        for idx in 0..npts {
            for c in 0..nsym {
                el[c] = e.at(c, idx);
            }
            let mut gi_l = vec![0.0; nsym];
            for c in 0..nsym {
                gi_l[c] = pack.conn.ginv.at(c, idx);
            }
            e_trace.data_mut()[idx] = pt::sym2_trace(&maps, &gi_l, &el);
        }
        project_tracefree(&mut e, g, &pack.conn.ginv);
    }

    // J = Riem + 1/2 g(*)g - 1/(n-2) E(*)g - (1-eta) Sigma(*)g
    //     + 1/2 eta(eta-2) g(*)g + 1/2 Sigma(*)Sigma
    // (the sign of the E term is fixed by the trace identity g^{pq} K_{ipjq} = E
    // together with J being trace-free)
    let nps = maps.np * (maps.np + 1) / 2;
    let mut j = TensorField::zeros(&grid, Symmetry::PairSym, 0);
    let mut w = TensorField::zeros(&grid, Symmetry::PairSym, 0);
    {
        let c2 = 1.0 / (nf - 2.0);
        let mut gl = vec![0.0; nsym];
        let mut gi_l = vec![0.0; nsym];
        let mut sig_l = vec![0.0; nsym];
        let mut e_l = vec![0.0; nsym];
        let mut kn_gg = vec![0.0; nps];
        let mut kn_eg = vec![0.0; nps];
        let mut kn_sg = vec![0.0; nps];
        let mut kn_ss = vec![0.0; nps];
        let mut j_l = vec![0.0; nps];
        let mut w_l = vec![0.0; nps];
        let mut wsc = WScratch::new(&maps);
        for idx in 0..npts {
            for c in 0..nsym {
                gl[c] = g.at(c, idx);
                gi_l[c] = pack.conn.ginv.at(c, idx);
                sig_l[c] = sigma.at(c, idx);
                e_l[c] = e.at(c, idx);
            }
            let et = eta.at(0, idx);
            pt::kulkarni_nomizu(&maps, &gl, &gl, &mut kn_gg);
            pt::kulkarni_nomizu(&maps, &e_l, &gl, &mut kn_eg);
            pt::kulkarni_nomizu(&maps, &sig_l, &gl, &mut kn_sg);
            pt::kulkarni_nomizu(&maps, &sig_l, &sig_l, &mut kn_ss);
            for c in 0..nps {
                j_l[c] = pack.riemann.at(c, idx)
                    + 0.5 * kn_gg[c]
                    - c2 * kn_eg[c]
                    - (1.0 - et) * kn_sg[c]
                    + 0.5 * et * (et - 2.0) * kn_gg[c]
                    + 0.5 * kn_ss[c];
            }
            w_from_j_local(&maps, &gl, &gi_l, &sig_l, &j_l, false, &mut w_l, &mut wsc);
            for c in 0..nps {
                j.data_mut()[c * npts + idx] = j_l[c];
                w.data_mut()[c * npts + idx] = w_l[c];
            }
        }
    }
    project_weyl(&mut j, g, &pack.conn.ginv);
    project_weyl(&mut w, g, &pack.conn.ginv);

    Ok(SplitOutput {
        e,
        h,
        j,
        w,
        e_trace_residual: e_trace,
    })
}

/// The fully spatial projection K = J + 1/(n-2) E (*) g (derived view).
pub fn k_projection(
    j: &TensorField,
    e: &TensorField,
    g: &TensorField,
) -> Result<TensorField> {
    let grid = g.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let nf = grid.dim() as f64;
    let npts = grid.n_points();
    let nps = maps.np * (maps.np + 1) / 2;
    let mut k = j.clone();
    let mut e_l = vec![0.0; maps.nsym];
    let mut g_l = vec![0.0; maps.nsym];
    let mut kn = vec![0.0; nps];
    for idx in 0..npts {
        for c in 0..maps.nsym {
            e_l[c] = e.at(c, idx);
            g_l[c] = g.at(c, idx);
        }
        pt::kulkarni_nomizu(&maps, &e_l, &g_l, &mut kn);
        for c in 0..nps {
            k.data_mut()[c * npts + idx] += kn[c] / (nf - 2.0);
        }
    }
    Ok(k)
}

/// Gauss and Codazzi constraint residual fields and norms.
pub struct ConstraintReport {
    pub gauss_l2: f64,
    pub gauss_sup: f64,
    pub codazzi_l2: f64,
    pub codazzi_sup: f64,
}

/// Pointwise Gauss residual R + n(n-1) - 2n(n-1) eta + n(n-1) eta^2 - |Sigma|^2
/// and Codazzi residual nabla^j Sigma_ij - (n-1) nabla_i eta.
pub fn constraint_residual_fields(
    sigma: &TensorField,
    eta: &TensorField,
    pack: &CurvaturePack,
) -> Result<(TensorField, TensorField)> {
    let grid = sigma.grid().clone();
    let maps = IndexMaps::get(grid.dim());
    let n = grid.dim();
    let nf = n as f64;
    let npts = grid.n_points();
    let nsym = maps.nsym;

    let mut gauss = TensorField::zeros(&grid, Symmetry::Scalar, 0);
    {
        let mut sig_l = vec![0.0; nsym];
        let mut gi_l = vec![0.0; nsym];
        for idx in 0..npts {
            for c in 0..nsym {
                sig_l[c] = sigma.at(c, idx);
                gi_l[c] = pack.conn.ginv.at(c, idx);
            }
            let s2 = pt::sym2_inner(&maps, &gi_l, &sig_l, &sig_l);
            let et = eta.at(0, idx);
            gauss.data_mut()[idx] = pack.scalar.at(0, idx) + nf * (nf - 1.0)
                - 2.0 * nf * (nf - 1.0) * et
                + nf * (nf - 1.0) * et * et
                - s2;
        }
    }

    let dsig = covariant_derivative(sigma, &pack.conn)?;
    let deta = gradient(eta)?;
    let mut codazzi = TensorField::zeros(&grid, Symmetry::Vector, 0);
    {
        let mut gi_l = vec![0.0; nsym];
        for idx in 0..npts {
            for c in 0..nsym {
                gi_l[c] = pack.conn.ginv.at(c, idx);
            }
            for i in 0..n {
                let mut div = 0.0;
                for a in 0..n {
                    for j in 0..n {
                        div += gi_l[maps.s2(a, j)] * dsig.at(a * nsym + maps.s2(i, j), idx);
                    }
                }
                codazzi.data_mut()[i * npts + idx] = div - (nf - 1.0) * deta.at(i, idx);
            }
        }
    }
    Ok((gauss, codazzi))
}

/// L2 and sup norms of both constraint residuals.
pub fn constraint_residuals(
    sigma: &TensorField,
    eta: &TensorField,
    pack: &CurvaturePack,
) -> Result<ConstraintReport> {
    let (gauss, codazzi) = constraint_residual_fields(sigma, eta, pack)?;
    let grid = sigma.grid();
    Ok(ConstraintReport {
        gauss_l2: l2_norm(&gauss, &pack.conn)?,
        gauss_sup: grid.sup_norm(gauss.comp(0)),
        codazzi_l2: l2_norm(&codazzi, &pack.conn)?,
        codazzi_sup: codazzi
            .data()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs())),
    })
}
