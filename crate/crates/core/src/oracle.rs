//! Independent solvers used to check the closed forms.
//!
//! * [`general_rank_solve`] maximizes `h†Sh` over all PSD covariances with
//!   a trace budget and quadratic caps. The problem is convex; it is solved
//!   by projected gradient steps whose projection is computed with Dykstra's
//!   alternating projections, and the result carries a KKT certificate
//!   built from the projection increments.
//! * [`rank_one_search`] restricts to `S = γγ†` and runs a multi-start
//!   augmented-Lagrangian local search.
//! * [`weighted_sum_boundary`] brute-forces `max Σ μ_i R_i` on a grid.
//! * [`kkt_inertia_check`] counts negative eigenvalues of
//!   `−hh† + Σ λ_k c_k c_k†`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Field, MisoNetwork, RateConvention, RegionSample};
use crate::numlin::{eig_hermitian, min_eigenvalue, project_psd, CVector, HermitianMatrix, UnitaryMatrix, C64};
use crate::region::{m_user_region, Sampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapKind {
    /// `c†Sc = b`.
    Equality,
    /// `c†Sc ≤ b`.
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cap {
    pub vector: CVector,
    pub bound: f64,
    pub kind: CapKind,
}

/// `max h†Sh` subject to `S ⪰ 0`, `tr S ≤ P` and the caps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedMaxProblem {
    target: CVector,
    caps: Vec<Cap>,
    p: f64,
    field: Field,
}

impl ConstrainedMaxProblem {
    pub fn new(target: CVector, caps: Vec<Cap>, p: f64) -> Result<Self> {
        let n = target.dim();
        if n == 0 {
            return Err(Error::Dimension("target must have at least one entry".into()));
        }
        for (k, cap) in caps.iter().enumerate() {
            if cap.vector.dim() != n {
                return Err(Error::Dimension(format!("cap {} has {} entries, expected {n}", k + 1, cap.vector.dim())));
            }
            if !(cap.bound.is_finite() && cap.bound >= 0.0) {
                return Err(Error::InvalidInput(format!("cap {} bound must be finite and >= 0", k + 1)));
            }
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidInput(format!("power budget {p} must be finite and >= 0")));
        }
        let field = if target.is_real() && caps.iter().all(|c| c.vector.is_real()) { Field::Real } else { Field::Complex };
        Ok(ConstrainedMaxProblem { target, caps, p, field })
    }

    /// Overrides the field inferred from the data. Beamformers searched by
    /// [`rank_one_search`] are real only for [`Field::Real`].
    pub fn with_field(mut self, field: Field) -> Result<Self> {
        if field == Field::Real && self.field == Field::Complex {
            return Err(Error::InvalidInput("complex data cannot be treated as real".into()));
        }
        self.field = field;
        Ok(self)
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn target(&self) -> &CVector {
        &self.target
    }

    pub fn caps(&self) -> &[Cap] {
        &self.caps
    }

    pub fn power(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Per-cap violations followed by the trace-budget violation.
    pub fn residuals(&self, s: &HermitianMatrix) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .caps
            .iter()
            .map(|cap| {
                let level = s.quad_form(&cap.vector);
                match cap.kind {
                    CapKind::Equality => (level - cap.bound).abs(),
                    CapKind::Upper => (level - cap.bound).max(0.0),
                }
            })
            .collect();
        out.push((s.trace() - self.p).max(0.0));
        out
    }

    fn beam_residual(&self, g: &CVector) -> f64 {
        let cap_part = self
            .caps
            .iter()
            .map(|cap| {
                let level = cap.vector.dot(g).norm_sqr();
                match cap.kind {
                    CapKind::Equality => (level - cap.bound).abs(),
                    CapKind::Upper => (level - cap.bound).max(0.0),
                }
            })
            .fold(0.0, f64::max);
        cap_part.max(g.norm_sqr() - self.p)
    }
}

/// Outcome of an oracle run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub value: f64,
    pub covariance: HermitianMatrix,
    /// Per-cap violations followed by the trace-budget violation.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub certified: bool,
    /// One multiplier per cap (empty when not computed).
    pub multipliers: Vec<f64>,
    pub trace_multiplier: f64,
}

/// Projection onto `{S ⪰ 0} ∩ {tr S ≤ P} ∩ caps`.
///
/// A short run of Dykstra's alternating projections provides dual
/// estimates; a projected semismooth Newton method on the dual of the
/// projection problem then finishes the job. Dykstra alone stalls when a
/// cap is active at a low-rank point.
struct Projector<'a> {
    prob: &'a ConstrainedMaxProblem,
    tol: f64,
    warm_sweeps: usize,
    outers: Vec<HermitianMatrix>,
}

struct Projection {
    point: HermitianMatrix,
    /// Coefficients of `c_k c_k†` removed from the input.
    cap_coeffs: Vec<f64>,
    /// Coefficient of `I` removed from the input.
    trace_coeff: f64,
    converged: bool,
}

/// Dual iterate evaluated: primal point, eigen-data, gradient, objective.
struct DualPoint {
    x: HermitianMatrix,
    q: UnitaryMatrix,
    values: Vec<f64>,
    grad: Vec<f64>,
    theta: f64,
}

impl<'a> Projector<'a> {
    fn new(prob: &'a ConstrainedMaxProblem) -> Self {
        let scale = prob.caps.iter().map(|c| c.vector.norm_sqr()).fold(1.0, f64::max);
        Projector {
            prob,
            tol: 1e-13 * (1.0 + prob.p) * scale,
            warm_sweeps: 200,
            outers: prob.caps.iter().map(|c| HermitianMatrix::outer(&c.vector)).collect(),
        }
    }

    /// Dual variables: index 0 is the trace budget, then one per cap.
    fn is_equality(&self, j: usize) -> bool {
        j > 0 && self.prob.caps[j - 1].kind == CapKind::Equality
    }

    fn clamp(&self, y: &mut [f64]) {
        for (j, v) in y.iter_mut().enumerate() {
            if !self.is_equality(j) {
                *v = v.max(0.0);
            }
        }
    }

    fn bound(&self, j: usize) -> f64 {
        if j == 0 {
            self.prob.p
        } else {
            self.prob.caps[j - 1].bound
        }
    }

    fn evaluate(&self, z: &HermitianMatrix, y: &[f64]) -> Result<DualPoint> {
        let mut m = z.shift(-y[0]);
        for (o, &yj) in self.outers.iter().zip(&y[1..]) {
            m = m.sub(&o.scale(yj));
        }
        let (q, values) = eig_hermitian(&m)?;
        let clipped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
        let x = HermitianMatrix::from_eigen(&q, &clipped);
        let mut grad = vec![x.trace() - self.prob.p];
        for cap in &self.prob.caps {
            grad.push(x.quad_form(&cap.vector) - cap.bound);
        }
        let norm2: f64 = clipped.iter().map(|v| v * v).sum();
        let theta = -0.5 * norm2 - y.iter().enumerate().map(|(j, v)| v * self.bound(j)).sum::<f64>();
        Ok(DualPoint { x, q, values, grad, theta })
    }

    fn residual(&self, y: &[f64], grad: &[f64]) -> f64 {
        (0..y.len())
            .map(|j| if self.is_equality(j) { grad[j].abs() } else { (y[j] - (y[j] + grad[j]).max(0.0)).abs() })
            .fold(0.0, f64::max)
    }

    /// Generalized Hessian (negated) of the dual objective.
    fn jacobian(&self, pt: &DualPoint) -> Vec<Vec<f64>> {
        let n = pt.values.len();
        let omega = |a: usize, b: usize| {
            let (la, lb) = (pt.values[a], pt.values[b]);
            if (la - lb).abs() > 1e-14 * (1.0 + la.abs().max(lb.abs())) {
                (la.max(0.0) - lb.max(0.0)) / (la - lb)
            } else if la > 0.0 {
                1.0
            } else {
                0.0
            }
        };
        let mut w = vec![vec![0.0; n]; n];
        for (a, row) in w.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = omega(a, b);
            }
        }
        // Constraint matrices in the eigenbasis: I, or u u† with u = Q†c.
        let us: Vec<Option<CVector>> = std::iter::once(None)
            .chain(self.prob.caps.iter().map(|c| Some(pt.q.apply_adjoint(&c.vector))))
            .collect();
        let entry = |u: &Option<CVector>, a: usize, b: usize| match u {
            None => C64::new(if a == b { 1.0 } else { 0.0 }, 0.0),
            Some(u) => u[a] * u[b].conj(),
        };
        let k = us.len();
        let mut jac = vec![vec![0.0; k]; k];
        for i in 0..k {
            for l in i..k {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        if w[a][b] != 0.0 {
                            s += w[a][b] * (entry(&us[i], a, b).conj() * entry(&us[l], a, b)).re;
                        }
                    }
                }
                jac[i][l] = s;
                jac[l][i] = s;
            }
        }
        jac
    }

    fn lipschitz(&self) -> f64 {
        self.prob.dim() as f64 + self.prob.caps.iter().map(|c| c.vector.norm_sqr().powi(2)).sum::<f64>()
    }

    fn dykstra(&self, z: &HermitianMatrix) -> Result<Vec<f64>> {
        let n = self.prob.dim();
        let mut x = z.clone();
        let mut y = vec![0.0; self.prob.caps.len() + 1];
        let mut psd_inc = HermitianMatrix::zeros(n);
        let eye = HermitianMatrix::identity(n);
        for _ in 0..self.warm_sweeps {
            let before = x.clone();
            let zt = x.add(&eye.scale(y[0]));
            let excess = zt.trace() - self.prob.p;
            y[0] = if excess > 0.0 { excess / n as f64 } else { 0.0 };
            x = zt.shift(-y[0]);
            for (j, cap) in self.prob.caps.iter().enumerate() {
                let n4 = cap.vector.norm_sqr().powi(2);
                if n4 == 0.0 {
                    continue;
                }
                let zc = x.add(&self.outers[j].scale(y[j + 1]));
                let level = zc.quad_form(&cap.vector);
                let coeff = match cap.kind {
                    CapKind::Equality => (level - cap.bound) / n4,
                    CapKind::Upper => ((level - cap.bound) / n4).max(0.0),
                };
                x = zc.sub(&self.outers[j].scale(coeff));
                y[j + 1] = coeff;
            }
            let zp = x.add(&psd_inc);
            x = project_psd(&zp)?;
            psd_inc = zp.sub(&x);
            if x.sub(&before).max_abs() <= self.tol {
                break;
            }
        }
        Ok(y)
    }

    fn project(&self, z: &HermitianMatrix, warm: Option<&[f64]>) -> Result<Projection> {
        let mut y = match warm {
            Some(w) => w.to_vec(),
            None => self.dykstra(z)?,
        };
        self.clamp(&mut y);
        let k = y.len();
        let lip = self.lipschitz();
        let mut pt = self.evaluate(z, &y)?;
        let mut converged = false;
        for _ in 0..200 {
            if self.residual(&y, &pt.grad) <= self.tol {
                converged = true;
                break;
            }
            // Bound-constrained multipliers pushed against their bound stay fixed.
            let fixed: Vec<bool> =
                (0..k).map(|j| !self.is_equality(j) && y[j] <= 1e-14 && pt.grad[j] <= 0.0).collect();
            let jac = self.jacobian(&pt);
            let free: Vec<usize> = (0..k).filter(|&j| !fixed[j]).collect();
            let reg = 1e-12 * (1.0 + free.iter().map(|&j| jac[j][j]).fold(0.0, f64::max));
            let a: Vec<Vec<f64>> =
                free.iter().map(|&i| free.iter().map(|&l| jac[i][l] + if i == l { reg } else { 0.0 }).collect()).collect();
            let b: Vec<f64> = free.iter().map(|&j| pt.grad[j]).collect();
            let mut newton = vec![0.0; k];
            if let Some(d) = solve_dense(a, b) {
                for (&j, v) in free.iter().zip(d) {
                    newton[j] = v;
                }
            }
            let gradient: Vec<f64> = pt.grad.iter().map(|g| g / lip).collect();
            let mut moved = false;
            for dir in [newton, gradient] {
                if let Some((ny, npt)) = self.line_search(z, &y, &pt, &dir)? {
                    y = ny;
                    pt = npt;
                    moved = true;
                    break;
                }
            }
            if !moved {
                break;
            }
        }
        if !converged {
            converged = self.residual(&y, &pt.grad) <= self.tol;
        }
        Ok(Projection { point: pt.x, trace_coeff: y[0], cap_coeffs: y[1..].to_vec(), converged })
    }

    fn line_search(
        &self,
        z: &HermitianMatrix,
        y: &[f64],
        pt: &DualPoint,
        dir: &[f64],
    ) -> Result<Option<(Vec<f64>, DualPoint)>> {
        if dir.iter().all(|&d| d == 0.0) {
            return Ok(None);
        }
        let mut t = 1.0;
        for _ in 0..50 {
            let mut cand: Vec<f64> = y.iter().zip(dir).map(|(a, d)| a + t * d).collect();
            self.clamp(&mut cand);
            let step: f64 = cand.iter().zip(y).zip(&pt.grad).map(|((c, a), g)| (c - a) * g).sum();
            if cand.as_slice() == y {
                return Ok(None);
            }
            let npt = self.evaluate(z, &cand)?;
            if npt.theta >= pt.theta + 1e-4 * step.max(0.0) && npt.theta.is_finite() {
                return Ok(Some((cand, npt)));
            }
            t *= 0.5;
        }
        Ok(None)
    }
}

fn feasibility_prepass(prob: &ConstrainedMaxProblem, tol: f64) -> Result<()> {
    for (k, cap) in prob.caps.iter().enumerate() {
        let reach = prob.p * cap.vector.norm_sqr();
        if cap.kind == CapKind::Equality && cap.bound > reach + tol {
            return Err(Error::Infeasible(format!(
                "cap {} needs {} but at most {reach} is reachable",
                k + 1,
                cap.bound
            )));
        }
    }
    let proj = Projector::new(prob).project(&HermitianMatrix::zeros(prob.dim()), None)?;
    let worst = prob.residuals(&proj.point).into_iter().fold(0.0, f64::max);
    let psd = min_eigenvalue(&proj.point)?.min(0.0).abs();
    if worst.max(psd) > tol.max(1e-6) {
        return Err(Error::Infeasible(format!("caps are not jointly satisfiable (residual {worst:.3e})")));
    }
    Ok(())
}

/// Step scale `η·‖h‖²` of the projected gradient iteration.
const STEP_SCALE: f64 = 100.0;

/// Maximizes `h†Sh` over general-rank covariances.
///
/// `tol` bounds the accepted constraint residuals; `max_iter` caps the
/// number of projected gradient steps. Hitting the cap returns an
/// uncertified report.
pub fn general_rank_solve(prob: &ConstrainedMaxProblem, tol: f64, max_iter: usize) -> Result<OracleReport> {
    feasibility_prepass(prob, tol)?;
    let n = prob.dim();
    let h = &prob.target;
    let hh = h.norm_sqr();
    if hh == 0.0 || prob.p == 0.0 {
        let s = HermitianMatrix::zeros(n);
        return Ok(OracleReport {
            value: 0.0,
            residuals: prob.residuals(&s),
            covariance: s,
            iterations: 0,
            certified: true,
            multipliers: vec![0.0; prob.caps.len()],
            trace_multiplier: 0.0,
        });
    }
    let eta = STEP_SCALE / hh;
    let push = HermitianMatrix::outer(h).scale(eta);
    let projector = Projector::new(prob);
    let outer_tol = 1e-12 * prob.p.max(1.0);

    let mut s = projector.project(&HermitianMatrix::zeros(n), None)?.point;
    let mut last = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter.max(1) {
        iterations = it;
        let warm = last.as_ref().map(|p: &Projection| {
            let mut y = vec![p.trace_coeff];
            y.extend_from_slice(&p.cap_coeffs);
            y
        });
        let proj = projector.project(&s.add(&push), warm.as_deref())?;
        let change = proj.point.sub(&s).max_abs();
        s = proj.point.clone();
        let inner_ok = proj.converged;
        last = Some(proj);
        if change <= outer_tol && inner_ok {
            converged = true;
            break;
        }
    }
    let proj = last.expect("at least one iteration");

    // z − x = Σ increments, i.e. η hh† = Σ α_k c_k c_k† + β I − Z with
    // Z ⪰ 0; dividing by η gives the Lagrange multipliers.
    let multipliers: Vec<f64> = proj.cap_coeffs.iter().map(|a| a / eta).collect();
    let trace_multiplier = proj.trace_coeff / eta;
    let residuals = prob.residuals(&s);
    let value = s.quad_form(h);
    let certified = converged
        && residuals.iter().all(|&r| r <= tol)
        && kkt_certificate(prob, &s, &multipliers, trace_multiplier)?;
    Ok(OracleReport { value, covariance: s, residuals, iterations, certified, multipliers, trace_multiplier })
}

/// Dual feasibility and complementary slackness for the convex problem:
/// `W = −hh† + Σ λ_k c_k c_k† + λ_P I ⪰ 0`, `tr(WS) = 0`, sign conditions
/// on inequality multipliers, and the Lemma-6 inertia bound.
fn kkt_certificate(prob: &ConstrainedMaxProblem, s: &HermitianMatrix, lambdas: &[f64], lambda_p: f64) -> Result<bool> {
    let scale = prob.target.norm_sqr().max(1e-300);
    let tol = 1e-6 * scale;
    let mut w = HermitianMatrix::outer(&prob.target).scale(-1.0).shift(lambda_p);
    for (cap, &l) in prob.caps.iter().zip(lambdas) {
        w = w.add(&HermitianMatrix::outer(&cap.vector).scale(l));
    }
    if min_eigenvalue(&w)? < -tol {
        return Ok(false);
    }
    if w.inner(s).abs() > tol * prob.p.max(1.0) {
        return Ok(false);
    }
    if lambda_p < -tol {
        return Ok(false);
    }
    for (cap, &l) in prob.caps.iter().zip(lambdas) {
        if cap.kind == CapKind::Upper && l < -tol {
            return Ok(false);
        }
    }
    if lambdas.iter().all(|&l| l >= 0.0) {
        let vectors: Vec<CVector> = prob.caps.iter().map(|c| c.vector.clone()).collect();
        if !kkt_inertia_check(&prob.target, &vectors, lambdas)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True iff `C = −hh† + Σ λ_k c_k c_k†` has at most one eigenvalue below
/// `−1e-9·‖C‖_max`.
pub fn kkt_inertia_check(target: &CVector, caps: &[CVector], lambdas: &[f64]) -> Result<bool> {
    if caps.len() != lambdas.len() {
        return Err(Error::Dimension(format!("{} caps but {} multipliers", caps.len(), lambdas.len())));
    }
    if caps.iter().any(|c| c.dim() != target.dim()) {
        return Err(Error::Dimension("cap vectors must match the target dimension".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidInput("multipliers must be >= 0".into()));
    }
    let mut c = HermitianMatrix::outer(target).scale(-1.0);
    for (v, &l) in caps.iter().zip(lambdas) {
        c = c.add(&HermitianMatrix::outer(v).scale(l));
    }
    let thresh = 1e-9 * c.max_abs();
    let (_, values) = eig_hermitian(&c)?;
    Ok(values.iter().filter(|&&v| v < -thresh).count() <= 1)
}

fn random_real(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::new((0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).collect())
}

fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::new(
        (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
    )
}

fn project_ball(g: &CVector, p: f64) -> CVector {
    let nn = g.norm_sqr();
    if nn <= p {
        g.clone()
    } else {
        g.scale_real((p / nn).sqrt())
    }
}

/// Augmented-Lagrangian local search over beamformers.
struct BeamSearch<'a> {
    prob: &'a ConstrainedMaxProblem,
}

impl BeamSearch<'_> {
    fn levels(&self, g: &CVector) -> Vec<(C64, f64)> {
        self.prob
            .caps
            .iter()
            .map(|cap| {
                let a = cap.vector.dot(g);
                (a, a.norm_sqr() - cap.bound)
            })
            .collect()
    }

    fn weights(&self, viol: &[(C64, f64)], lambdas: &[f64], rho: f64) -> Vec<f64> {
        self.prob
            .caps
            .iter()
            .zip(viol)
            .zip(lambdas)
            .map(|((cap, &(_, g)), &l)| match cap.kind {
                CapKind::Equality => l + rho * g,
                CapKind::Upper => (l + rho * g).max(0.0),
            })
            .collect()
    }

    /// Augmented Lagrangian (to be minimized) and its gradient.
    fn lagrangian(&self, g: &CVector, lambdas: &[f64], rho: f64) -> (f64, CVector) {
        let th = self.prob.target.dot(g);
        let mut val = -th.norm_sqr();
        let mut grad = self.prob.target.scale(th * -2.0);
        let viol = self.levels(g);
        let w = self.weights(&viol, lambdas, rho);
        for (((cap, &(a, gk)), &l), &wk) in self.prob.caps.iter().zip(&viol).zip(lambdas).zip(&w) {
            val += match cap.kind {
                CapKind::Equality => l * gk + 0.5 * rho * gk * gk,
                CapKind::Upper => (wk * wk - l * l) / (2.0 * rho),
            };
            if wk != 0.0 {
                grad = grad.add(&cap.vector.scale(a * (2.0 * wk)));
            }
        }
        (val, grad)
    }

    fn violation(&self, g: &CVector) -> f64 {
        self.prob
            .caps
            .iter()
            .zip(self.levels(g))
            .map(|(cap, (_, gk))| match cap.kind {
                CapKind::Equality => gk.abs(),
                CapKind::Upper => gk.max(0.0),
            })
            .fold(0.0, f64::max)
    }

    fn inner(&self, mut g: CVector, lambdas: &[f64], rho: f64) -> CVector {
        let p = self.prob.p;
        let (mut val, mut grad) = self.lagrangian(&g, lambdas, rho);
        let mut step = 1.0 / (self.prob.target.norm_sqr() + rho * self.cap_scale()).max(1e-12);
        for _ in 0..3000 {
            let mut t = step;
            let (next, nval, ngrad) = loop {
                let cand = project_ball(&g.sub(&grad.scale_real(t)), p);
                let d = cand.sub(&g);
                let (cv, cg) = self.lagrangian(&cand, lambdas, rho);
                if cv <= val + grad.dot(&d).re + d.norm_sqr() / (2.0 * t) || t < 1e-20 {
                    break (cand, cv, cg);
                }
                t *= 0.5;
            };
            let s = next.sub(&g);
            let y = ngrad.sub(&grad);
            let moved = s.norm();
            g = next;
            val = nval;
            grad = ngrad;
            if moved <= 1e-13 * (1.0 + g.norm()) {
                break;
            }
            let sy = s.dot(&y).re;
            step = if sy > 0.0 { (s.norm_sqr() / sy).clamp(1e-12, 1e12) } else { t * 2.0 };
        }
        g
    }

    fn cap_scale(&self) -> f64 {
        self.prob.caps.iter().map(|c| c.vector.norm_sqr().powi(2) * self.prob.p).fold(0.0, f64::max)
    }

    /// Newton-type correction onto the active constraints (caps that are
    /// equalities or violated, plus the power budget when saturated).
    fn repair(&self, mut g: CVector) -> CVector {
        let p = self.prob.p;
        for _ in 0..8 {
            let mut rows: Vec<CVector> = Vec::new();
            let mut rhs: Vec<f64> = Vec::new();
            for cap in &self.prob.caps {
                let a = cap.vector.dot(&g);
                let gk = a.norm_sqr() - cap.bound;
                if cap.kind == CapKind::Equality || gk > 0.0 {
                    // d|c†g|² = 2 Re((c c†g)† δ)
                    rows.push(cap.vector.scale(a * 2.0));
                    rhs.push(-gk);
                }
            }
            if g.norm_sqr() >= p * (1.0 - 1e-9) {
                rows.push(g.scale_real(2.0));
                rhs.push(p - g.norm_sqr());
            }
            if rows.is_empty() || rhs.iter().all(|r| r.abs() <= 1e-15 * (1.0 + p)) {
                break;
            }
            match min_norm_step(&rows, &rhs) {
                Some(d) => g = project_ball(&g.add(&d), p),
                None => break,
            }
        }
        g
    }

    fn run(&self, start: CVector) -> CVector {
        let k = self.prob.caps.len();
        let mut lambdas = vec![0.0; k];
        let mut rho = 10.0 * self.prob.target.norm_sqr() / self.cap_scale().max(1e-12);
        let mut g = project_ball(&start, self.prob.p);
        let mut prev = f64::INFINITY;
        for _ in 0..60 {
            g = self.inner(g, &lambdas, rho);
            let viol = self.levels(&g);
            let w = self.weights(&viol, &lambdas, rho);
            lambdas = w;
            let v = self.violation(&g);
            if v <= 1e-12 * (1.0 + self.prob.p) {
                break;
            }
            if v > 0.25 * prev {
                rho *= 10.0;
            }
            prev = v;
        }
        self.repair(g)
    }
}

/// Minimum-norm `δ` with `Re(rows_k† δ) = rhs_k`, or `None` when the rows
/// are numerically dependent.
fn min_norm_step(rows: &[CVector], rhs: &[f64]) -> Option<CVector> {
    let k = rows.len();
    let gram: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| rows[i].dot(&rows[j]).re).collect()).collect();
    let y = solve_dense(gram, rhs.to_vec())?;
    let mut d = CVector::zeros(rows[0].dim());
    for (row, &yi) in rows.iter().zip(&y) {
        d = d.add(&row.scale_real(yi));
    }
    Some(d)
}

/// Gaussian elimination with partial pivoting; `None` on a tiny pivot.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[piv][col].abs() > 1e-14 * scale) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..k {
            let f = a[r][col] / a[col][col];
            for c in col..k {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut y = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = ((r + 1)..k).map(|c| a[r][c] * y[c]).sum();
        y[r] = (b[r] - s) / a[r][r];
    }
    Some(y)
}

/// Best beamforming covariance found by `starts` seeded local searches.
pub fn rank_one_search(prob: &ConstrainedMaxProblem, starts: usize, seed: u64) -> Result<OracleReport> {
    feasibility_prepass(prob, 1e-8)?;
    let n = prob.dim();
    let search = BeamSearch { prob };
    let feas_tol = 1e-8 * (1.0 + prob.p * prob.caps.iter().map(|c| c.vector.norm_sqr()).fold(0.0, f64::max));
    let runs: Vec<(f64, f64, CVector)> = (0..starts.max(1))
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let start = match prob.field {
                Field::Real => random_real(&mut rng, n),
                Field::Complex => random_complex(&mut rng, n),
            };
            let start = start.scale_real(prob.p.sqrt() / start.norm().max(1e-300));
            let g = search.run(start);
            (prob.target.dot(&g).norm_sqr(), prob.beam_residual(&g), g)
        })
        .collect();
    let best = runs
        .iter()
        .filter(|(_, r, _)| *r <= feas_tol)
        .fold(None, |acc: Option<&(f64, f64, CVector)>, cand| match acc {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        });
    let (best, certified) = match best {
        Some(b) => (b, true),
        None => (runs.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("at least one start"), false),
    };
    let s = HermitianMatrix::outer(&best.2);
    Ok(OracleReport {
        value: best.0,
        residuals: prob.residuals(&s),
        covariance: s,
        iterations: starts.max(1),
        certified,
        multipliers: Vec::new(),
        trace_multiplier: 0.0,
    })
}

/// Grid point maximizing `Σ μ_i R_i` over per-user spherical grids with
/// `resolution` values per angle.
pub fn weighted_sum_boundary(net: &MisoNetwork, mu: &[f64], resolution: usize, conv: RateConvention) -> Result<RegionSample> {
    if mu.len() != net.users() {
        return Err(Error::Dimension(format!("{} weights for {} users", mu.len(), net.users())));
    }
    if mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) || mu.iter().all(|&m| m == 0.0) {
        return Err(Error::InvalidInput("weights must be >= 0 and not all zero".into()));
    }
    let sweep = m_user_region(net, Sampler::Grid { points: resolution }, conv)?;
    sweep
        .best_by(|r| r.iter().zip(mu).map(|(a, b)| a * b).sum())
        .ok_or_else(|| Error::Numerical("empty sweep".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogBase;
    use crate::numlin::numerical_rank;
    use crate::twouser::{channel_angle, max_signal_given_interference};
    use approx::assert_abs_diff_eq;

    fn real(v: &[f64]) -> CVector {
        CVector::from_real(v)
    }

    pub(crate) fn example1(kind: CapKind) -> ConstrainedMaxProblem {
        let h11 = real(&[1.9574, 0.5045, 1.8645, -0.3398]);
        let h12 = real(&[-1.1398, -0.2111, 1.1902, -1.1162]);
        let h13 = real(&[0.6353, -0.6014, 0.5512, -1.0998]);
        ConstrainedMaxProblem::new(
            h11,
            vec![Cap { vector: h12, bound: 0.3, kind }, Cap { vector: h13, bound: 0.6, kind }],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uncapped_is_matched_filter() {
        let h = CVector::new(vec![C64::new(1.0, 1.0), C64::new(0.5, -2.0)]);
        let prob = ConstrainedMaxProblem::new(h.clone(), vec![], 1.0).unwrap();
        let rep = general_rank_solve(&prob, 1e-8, 200).unwrap();
        assert_abs_diff_eq!(rep.value, h.norm_sqr(), epsilon = 1e-9);
        let expected = HermitianMatrix::outer(&h).scale(1.0 / h.norm_sqr());
        assert!(rep.covariance.sub(&expected).max_abs() <= 1e-8);
        assert!(rep.certified);
        let beam = rank_one_search(&prob, 5, 1).unwrap();
        assert_abs_diff_eq!(beam.value, h.norm_sqr(), epsilon = 1e-9);
    }

    #[test]
    fn example1_values_and_rank() {
        let prob = example1(CapKind::Equality);
        let rep = general_rank_solve(&prob, 1e-8, 500).unwrap();
        assert!(rep.value >= 7.10, "{}", rep.value);
        assert!(rep.certified);
        let rank = numerical_rank(&rep.covariance, 1e-6).unwrap();
        assert_eq!(rank, 2);
        let beam = rank_one_search(&prob, 20, 7).unwrap();
        assert!((beam.value - 7.0805).abs() <= 0.01, "{}", beam.value);
        assert!(rep.value >= beam.value - 1e-6);
    }

    #[test]
    fn infeasible_caps_are_rejected() {
        let h = real(&[1.0, 0.0]);
        let c = real(&[0.0, 1.0]);
        let prob = ConstrainedMaxProblem::new(h, vec![Cap { vector: c, bound: 5.0, kind: CapKind::Equality }], 1.0).unwrap();
        assert!(matches!(general_rank_solve(&prob, 1e-8, 10), Err(Error::Infeasible(_))));
        assert!(matches!(rank_one_search(&prob, 2, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn single_upper_cap_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let n = rng.gen_range(2..=4);
            let h = random_complex(&mut rng, n);
            let c = random_complex(&mut rng, n);
            let p: f64 = rng.gen_range(0.5..3.0);
            let cap = rng.gen_range(0.0..1.0) * p * c.norm_sqr();
            let prob =
                ConstrainedMaxProblem::new(h.clone(), vec![Cap { vector: c.clone(), bound: cap, kind: CapKind::Upper }], p)
                    .unwrap();
            let rep = general_rank_solve(&prob, 1e-8, 500).unwrap();
            let z_free = p.sqrt() * c.norm() * channel_angle(&h, &c).cos();
            let (_, expected) = max_signal_given_interference(&h, &c, p, cap.sqrt().min(z_free)).unwrap();
            assert!((rep.value - expected).abs() <= 1e-4 * expected, "{} vs {expected}", rep.value);
            assert!(rep.certified);
        }
    }

    #[test]
    fn rank_one_matches_closed_form_on_equality_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let h = random_complex(&mut rng, n);
            let c = random_complex(&mut rng, n);
            let p: f64 = rng.gen_range(0.5..3.0);
            let z = rng.gen_range(0.0..1.0) * p.sqrt() * c.norm();
            let prob = ConstrainedMaxProblem::new(
                h.clone(),
                vec![Cap { vector: c.clone(), bound: z * z, kind: CapKind::Equality }],
                p,
            )
            .unwrap();
            let rep = rank_one_search(&prob, 10, 3).unwrap();
            let (_, expected) = max_signal_given_interference(&h, &c, p, z).unwrap();
            assert!((rep.value - expected).abs() <= 1e-6 * expected, "{} vs {expected}", rep.value);
        }
    }

    #[test]
    fn rank_one_is_deterministic() {
        let prob = example1(CapKind::Equality);
        assert_eq!(rank_one_search(&prob, 6, 11).unwrap(), rank_one_search(&prob, 6, 11).unwrap());
        assert_eq!(general_rank_solve(&prob, 1e-8, 50).unwrap(), general_rank_solve(&prob, 1e-8, 50).unwrap());
    }

    #[test]
    fn inertia_examples() {
        let h = real(&[1.0, 2.0, 0.5]);
        assert!(kkt_inertia_check(&h, &[], &[]).unwrap());
        let e = |k: usize| {
            let mut v = vec![0.0; 3];
            v[k] = 1.0;
            real(&v)
        };
        assert!(kkt_inertia_check(&e(0), &[e(1), e(2)], &[1.0, 2.0]).unwrap());
        assert!(kkt_inertia_check(&h, &[e(0)], &[-1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let n = rng.gen_range(1..=8);
            let k = rng.gen_range(0..=n + 1);
            let h = random_complex(&mut rng, n);
            let caps: Vec<CVector> = (0..k).map(|_| random_complex(&mut rng, n)).collect();
            let l: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..5.0)).collect();
            assert!(kkt_inertia_check(&h, &caps, &l).unwrap());
        }
    }

    #[test]
    fn weighted_sum_examples() {
        let d = real(&[1.0, 0.0]);
        let c = real(&[0.5, 0.5]);
        let net = MisoNetwork::new(vec![vec![d.clone(), c.clone()], vec![c, d]], vec![2.0, 2.0], Field::Real).unwrap();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let best = weighted_sum_boundary(&net, &[1.0, 0.0], 37, conv).unwrap();
        assert_abs_diff_eq!(best.rates[0], conv.rate(2.0), epsilon = 1e-12);
        let sym = weighted_sum_boundary(&net, &[1.0, 1.0], 37, conv).unwrap();
        assert!((sym.rates[0] - sym.rates[1]).abs() <= 1e-9);
        assert!(weighted_sum_boundary(&net, &[0.0, 0.0], 5, conv).is_err());
    }
}
