//! Reduction of a transmitter's covariance problem to the span of its
//! interfering channels, the spherical rank-one parametrization of the
//! reduced block, and the lift back to full dimension.
//!
//! For a transmitter with `t` antennas, own channel `h` and interfering
//! channels `h_1 … h_{m−1}`, a unitary `T` is accumulated so that `T†h_j`
//! is supported on its first `j` coordinates. Every interference power then
//! depends only on the leading `m̄ × m̄` block of `T†ST`, with
//! `m̄ = min(t, m−1)`.

use crate::error::{Error, Result};
use crate::numlin::{unitary_completion, CVector, HermitianMatrix, UnitaryMatrix, C64};
use crate::rankone::{lemma5_complete, CompletionInput, Y_ZERO};

/// Accumulated transform and reduced vectors for one transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFrame {
    t: UnitaryMatrix,
    h_low: CVector,
    h_hat: CVector,
    hj_low: Vec<CVector>,
    mbar: usize,
}

impl ReducedFrame {
    pub fn transform(&self) -> &UnitaryMatrix {
        &self.t
    }

    /// Own channel restricted to the leading `m̄` coordinates.
    pub fn h_low(&self) -> &CVector {
        &self.h_low
    }

    /// Own channel in the interference-free complement.
    pub fn h_hat(&self) -> &CVector {
        &self.h_hat
    }

    /// Interfering channels restricted to the leading `m̄` coordinates.
    pub fn hj_low(&self) -> &[CVector] {
        &self.hj_low
    }

    pub fn mbar(&self) -> usize {
        self.mbar
    }

    pub fn antennas(&self) -> usize {
        self.t.dim()
    }
}

/// Builds the reduced frame for `h_own` against `h_interf` (in the given
/// order).
pub fn reduce_interference_frame(h_own: &CVector, h_interf: &[CVector]) -> Result<ReducedFrame> {
    let t = h_own.dim();
    if t == 0 {
        return Err(Error::Dimension("channel vectors must have at least one entry".into()));
    }
    if let Some(bad) = h_interf.iter().position(|h| h.dim() != t) {
        return Err(Error::Dimension(format!(
            "interfering channel {} has {} entries, expected {t}",
            bad + 1,
            h_interf[bad].dim()
        )));
    }
    let mbar = t.min(h_interf.len());
    let mut transform = UnitaryMatrix::identity(t);
    for (j, h) in h_interf.iter().take(mbar).enumerate() {
        let v = transform.apply_adjoint(h);
        let u = unitary_completion(&v.segment(j, t));
        transform = transform.mul(&u.embed_lower(j));
    }
    let own = transform.apply_adjoint(h_own);
    let hj_low = h_interf.iter().map(|h| transform.apply_adjoint(h).segment(0, mbar)).collect();
    Ok(ReducedFrame {
        h_low: own.segment(0, mbar),
        h_hat: own.segment(mbar, t),
        hj_low,
        mbar,
        t: transform,
    })
}

/// Angles of the spherical parametrization: `ψ ∈ [0, π]`, `ω ∈ [0, 2π)`.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
pub struct SphericalParams {
    pub psi: Vec<f64>,
    pub omega: Vec<f64>,
}

impl SphericalParams {
    pub fn new(psi: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if psi.len() != omega.len() {
            return Err(Error::Dimension(format!("{} psi angles but {} omega angles", psi.len(), omega.len())));
        }
        Ok(SphericalParams { psi, omega })
    }

    pub fn zeros(mbar: usize) -> Self {
        SphericalParams { psi: vec![0.0; mbar], omega: vec![0.0; mbar] }
    }

    /// One real angle, no phase.
    pub fn single(psi: f64) -> Self {
        SphericalParams { psi: vec![psi], omega: vec![0.0] }
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }
}

/// Unit-ball vector `γ̃` with `γ̃_k = e^{iω_k} sinψ_k ∏_{j<k} cosψ_j`, and
/// `S11 = P γ̃γ̃†`.
///
/// Keeping the cosines signed makes `ψ ∈ [0, π]` cover every real sign
/// pattern up to a global sign.
pub fn spherical_rank_one(p: f64, params: &SphericalParams) -> (CVector, HermitianMatrix) {
    let gamma = spherical_vector(params);
    let s11 = HermitianMatrix::outer(&gamma).scale(p);
    (gamma, s11)
}

pub fn spherical_vector(params: &SphericalParams) -> CVector {
    let mut prod = 1.0;
    let mut entries = Vec::with_capacity(params.len());
    for (&psi, &omega) in params.psi.iter().zip(&params.omega) {
        let mag = psi.sin() * prod;
        entries.push(if omega == 0.0 { C64::new(mag, 0.0) } else { C64::from_polar(mag, omega) });
        prod *= psi.cos();
    }
    CVector::new(entries)
}

/// Angles reproducing `gamma` (with `‖gamma‖ ≤ 1`) up to a global phase.
///
/// The result has `ω_1 = 0`. For real input all `ω` are zero and signs are
/// carried by `ψ_k ∈ (π/2, π]`.
pub fn spherical_params_for(gamma: &CVector) -> SphericalParams {
    let n = gamma.dim();
    if n == 0 {
        return SphericalParams::zeros(0);
    }
    let real = gamma.is_real();
    // Global phase so the first nonzero entry is real and positive.
    let lead = gamma.iter().find(|z| z.norm() > 0.0).copied().unwrap_or(C64::new(1.0, 0.0));
    let g = gamma.scale(lead.conj() / lead.norm());

    let mut psi = vec![0.0; n];
    let mut omega = vec![0.0; n];
    let mut prod: f64 = 1.0;
    for k in 0..n {
        let mag = g[k].norm();
        let s = if prod.abs() > 0.0 { (mag / prod.abs()).clamp(0.0, 1.0) } else { 0.0 };
        psi[k] = s.asin();
        if real {
            // The sign of entry k is sign(prod); choose cos ψ_k so that the
            // next entry gets its sign.
            if let Some(next) = (k + 1 < n).then(|| g[k + 1].re) {
                if next != 0.0 && (next > 0.0) != (prod * psi[k].cos() > 0.0) {
                    psi[k] = std::f64::consts::PI - psi[k];
                }
            }
        } else if mag > 0.0 {
            omega[k] = if k == 0 { 0.0 } else { g[k].arg().rem_euclid(2.0 * std::f64::consts::PI) };
        }
        prod *= psi[k].cos();
    }
    SphericalParams { psi, omega }
}

/// Full covariance `S = T K* T†` from the reduced block via the rank-one
/// completion.
pub fn lift_covariance(frame: &ReducedFrame, s11: &HermitianMatrix, p: f64) -> Result<HermitianMatrix> {
    if s11.dim() != frame.mbar {
        return Err(Error::Dimension(format!("S11 is {0}x{0}, frame has m̄ = {1}", s11.dim(), frame.mbar)));
    }
    let inp = CompletionInput::new(frame.h_low.clone(), frame.h_hat.clone(), s11.clone(), p)?;
    let k = lemma5_complete(&inp)?;
    Ok(k.congruence(frame.t.as_matrix()))
}

/// Beamformer whose covariance is the lift of `P γ̃γ̃†`; same result as
/// [`lift_covariance`] without forming matrices.
pub fn lift_beamformer(frame: &ReducedFrame, gamma_tilde: &CVector, p: f64) -> Result<CVector> {
    if gamma_tilde.dim() != frame.mbar {
        return Err(Error::Dimension(format!(
            "reduced beamformer has {} entries, frame has m̄ = {}",
            gamma_tilde.dim(),
            frame.mbar
        )));
    }
    Ok(lift_scaled(frame, &gamma_tilde.scale_real(p.max(0.0).sqrt()), p))
}

/// Lift of an already-scaled head `u` (so `S11 = uu†`, `‖u‖² ≤ P`).
pub(crate) fn lift_scaled(frame: &ReducedFrame, u: &CVector, p: f64) -> CVector {
    let y_norm = frame.h_hat.norm();
    let tail = if y_norm <= Y_ZERO {
        CVector::zeros(frame.h_hat.dim())
    } else {
        let overlap = frame.h_low.dot(u);
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
        let r = (p - u.norm_sqr()).max(0.0);
        frame.h_hat.scale(phase * (r.sqrt() / y_norm))
    };
    frame.t.apply(&u.concat(&tail))
}

/// `cos⁻¹((cosθ02 − cosθ01 cosθ12)/(sinθ01 sinθ12))`, or π/2 when the
/// denominator is at most 1e-12.
pub fn theta_hat(theta01: f64, theta12: f64, theta02: f64) -> f64 {
    let den = theta01.sin() * theta12.sin();
    if den <= 1e-12 {
        return std::f64::consts::FRAC_PI_2;
    }
    ((theta02.cos() - theta01.cos() * theta12.cos()) / den).clamp(-1.0, 1.0).acos()
}

/// Signal and interference powers of the three-user lift for real
/// channels with norms `norm0` (own), `norm1`, `norm2` and pairwise angles.
#[allow(clippy::too_many_arguments)]
pub fn powers_closed_form(
    norm0: f64,
    norm1: f64,
    norm2: f64,
    theta01: f64,
    theta12: f64,
    theta02: f64,
    p: f64,
    psi1: f64,
    psi2: f64,
) -> (f64, f64, f64) {
    let th = theta_hat(theta01, theta12, theta02);
    let (s1, c1) = psi1.sin_cos();
    let (s2, c2) = psi2.sin_cos();
    let signal = p
        * norm0
        * norm0
        * ((theta01.cos() * s1 + theta01.sin() * th.cos() * c1 * s2).abs() + theta01.sin() * th.sin() * (c1 * c2).abs())
            .powi(2);
    let z1 = p * norm1 * norm1 * s1 * s1;
    let z2 = p * norm2 * norm2 * (theta12.cos() * s1 + theta12.sin() * c1 * s2).powi(2);
    (signal, z1, z2)
}

/// Signed angle `cos⁻¹(aᵀb/(‖a‖‖b‖)) ∈ [0, π]` between real vectors; π/2
/// if either is zero.
pub fn real_angle(a: &CVector, b: &CVector) -> f64 {
    let den = a.norm() * b.norm();
    if den == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    (a.dot(b).re / den).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::{numerical_rank, psd_check};
    use crate::rankone::lemma5_bound;
    use crate::twouser::max_signal_given_interference;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_vector(rng: &mut impl Rng, n: usize, complex: bool) -> CVector {
        CVector::new(
            (0..n)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), if complex { rng.gen_range(-1.0..1.0) } else { 0.0 }))
                .collect(),
        )
    }

    #[test]
    fn single_step_frame() {
        let h = CVector::from_real(&[1.0, 2.0, 0.5]);
        let h1 = CVector::from_real(&[0.0, 1.0, 1.0]);
        let f = reduce_interference_frame(&h, &[h1.clone()]).unwrap();
        assert_eq!(f.mbar(), 1);
        assert_abs_diff_eq!(f.h_low()[0].norm(), h1.dot(&h).norm() / h1.norm(), epsilon = 1e-12);
        assert_abs_diff_eq!(f.h_hat().norm(), (h.norm_sqr() - f.h_low().norm_sqr()).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_own_channel() {
        let h = CVector::from_real(&[1.0, 0.0]);
        let f = reduce_interference_frame(&h, &[CVector::from_real(&[0.0, 3.0])]).unwrap();
        assert_abs_diff_eq!(f.h_low().norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.h_hat().norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_with_more_interferers_than_antennas() {
        let h = CVector::from_real(&[1.0, 2.0]);
        let others: Vec<CVector> = (0..3).map(|k| CVector::from_real(&[k as f64, 1.0])).collect();
        let f = reduce_interference_frame(&h, &others).unwrap();
        assert_eq!(f.mbar(), 2);
        assert_eq!(f.h_hat().dim(), 0);
        assert!(reduce_interference_frame(&h, &[CVector::from_real(&[1.0])]).is_err());
    }

    #[test]
    fn frame_invariants_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t = rng.gen_range(1..=8);
            let m = rng.gen_range(2..=5);
            let complex = rng.gen_bool(0.5);
            let own = random_vector(&mut rng, t, complex);
            let others: Vec<CVector> = (0..m - 1).map(|_| random_vector(&mut rng, t, complex)).collect();
            let f = reduce_interference_frame(&own, &others).unwrap();
            assert_eq!(f.mbar(), t.min(m - 1));
            assert!(f.transform().unitarity_error() <= 1e-12);
            assert!((f.h_low().norm_sqr() + f.h_hat().norm_sqr() - own.norm_sqr()).abs() <= 1e-10);
            for (j, h) in others.iter().enumerate() {
                let rotated = f.transform().apply_adjoint(h);
                // Triangular support and vanishing tail.
                for k in (j + 1).min(t)..t {
                    assert!(rotated[k].norm() <= 1e-10, "support of interferer {j} leaks to {k}");
                }
                assert!(rotated.segment(0, f.mbar()).sub(&f.hj_low()[j]).norm() <= 1e-15);
            }

            // Lift consistency for a random reduced beam.
            let params = SphericalParams::new(
                (0..f.mbar()).map(|_| rng.gen_range(0.0..PI)).collect(),
                (0..f.mbar()).map(|k| if complex && k > 0 { rng.gen_range(0.0..2.0 * PI) } else { 0.0 }).collect(),
            )
            .unwrap();
            let p = rng.gen_range(0.1..3.0);
            let (gt, s11) = spherical_rank_one(p, &params);
            let s = lift_covariance(&f, &s11, p).unwrap();
            let g = lift_beamformer(&f, &gt, p).unwrap();
            let direct = HermitianMatrix::outer(&g);
            assert!(s.sub(&direct).max_abs() <= 1e-10);
            assert!(s.trace() <= p + 1e-12);
            for (j, h) in others.iter().enumerate() {
                assert!((s.quad_form(h) - s11.quad_form(&f.hj_low()[j])).abs() <= 1e-10);
            }
            let inp = CompletionInput::new(f.h_low().clone(), f.h_hat().clone(), s11.clone(), p).unwrap();
            assert!((s.quad_form(&own) - lemma5_bound(&inp)).abs() <= 1e-10 * p.max(1.0) * own.norm_sqr().max(1.0));
            if f.h_hat().norm() > 1e-6 {
                assert!((s.trace() - p).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn spherical_examples() {
        let (_, s) = spherical_rank_one(2.0, &SphericalParams::new(vec![FRAC_PI_2, 0.7], vec![0.0; 2]).unwrap());
        assert!(s.sub(&HermitianMatrix::from_real_diagonal(&[2.0, 0.0])).max_abs() <= 1e-15);
        let (_, s) = spherical_rank_one(2.0, &SphericalParams::new(vec![0.0, FRAC_PI_2], vec![0.0; 2]).unwrap());
        assert!(s.sub(&HermitianMatrix::from_real_diagonal(&[0.0, 2.0])).max_abs() <= 1e-15);
        let (_, s) = spherical_rank_one(1.0, &SphericalParams::new(vec![PI / 6.0, PI / 4.0], vec![0.0; 2]).unwrap());
        assert_abs_diff_eq!(s[(0, 0)].re, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s[(0, 1)].re, 0.3062, epsilon = 1e-4);
        assert_abs_diff_eq!(s[(1, 1)].re, 0.375, epsilon = 1e-12);
    }

    #[test]
    fn spherical_reproduces_printed_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        for _ in 0..1000 {
            let (a, b) = (rng.gen_range(0.0..PI), rng.gen_range(0.0..PI));
            let p = rng.gen_range(0.1..5.0);
            let (_, s) = spherical_rank_one(p, &SphericalParams::new(vec![a, b], vec![0.0; 2]).unwrap());
            let off = p * a.cos() * a.sin() * b.sin();
            assert!((s[(0, 0)].re - p * a.sin().powi(2)).abs() < 1e-12);
            assert!((s[(0, 1)].re - off).abs() < 1e-12);
            assert!((s[(1, 0)].re - off).abs() < 1e-12);
            assert!((s[(1, 1)].re - p * (a.cos() * b.sin()).powi(2)).abs() < 1e-12);
            assert!(numerical_rank(&s, 1e-8).unwrap() <= 1);
        }
    }

    #[test]
    fn lift_special_cases() {
        // Empty residual: S = T blockdiag(S11, 0) T†.
        let h = CVector::from_real(&[1.0, 1.0]);
        let f = reduce_interference_frame(&h, &[CVector::from_real(&[1.0, 0.0]), CVector::from_real(&[0.0, 1.0])]).unwrap();
        assert_eq!(f.h_hat().dim(), 0);
        let s11 = HermitianMatrix::from_real_diagonal(&[0.5, 0.25]);
        let s = lift_covariance(&f, &s11, 1.0).unwrap();
        assert!(s.sub(&s11.congruence(f.transform().as_matrix())).max_abs() <= 1e-15);

        // No reduced power: everything goes to the interference-free part.
        let h = CVector::from_real(&[1.0, 2.0, 2.0]);
        let f = reduce_interference_frame(&h, &[CVector::from_real(&[1.0, 0.0, 0.0])]).unwrap();
        let s = lift_covariance(&f, &HermitianMatrix::zeros(1), 3.0).unwrap();
        assert_abs_diff_eq!(s.quad_form(&h), 3.0 * 8.0, epsilon = 1e-12);
        assert!(psd_check(&s, 1e-12).unwrap());
    }

    #[test]
    fn lift_matches_closed_form_powers_for_real_three_user() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        for _ in 0..500 {
            let t = rng.gen_range(3..=6);
            let h0 = random_vector(&mut rng, t, false);
            let h1 = random_vector(&mut rng, t, false);
            let h2 = random_vector(&mut rng, t, false);
            let p = rng.gen_range(0.1..3.0);
            let (a, b) = (rng.gen_range(0.0..PI), rng.gen_range(0.0..PI));
            let f = reduce_interference_frame(&h0, &[h1.clone(), h2.clone()]).unwrap();
            let (gt, _) = spherical_rank_one(p, &SphericalParams::new(vec![a, b], vec![0.0; 2]).unwrap());
            let g = lift_beamformer(&f, &gt, p).unwrap();
            let (sig, z1, z2) = powers_closed_form(
                h0.norm(),
                h1.norm(),
                h2.norm(),
                real_angle(&h0, &h1),
                real_angle(&h1, &h2),
                real_angle(&h0, &h2),
                p,
                a,
                b,
            );
            assert!((h0.dot(&g).norm_sqr() - sig).abs() <= 1e-9, "signal");
            assert!((h1.dot(&g).norm_sqr() - z1).abs() <= 1e-9, "z1");
            assert!((h2.dot(&g).norm_sqr() - z2).abs() <= 1e-9, "z2");
        }
    }

    #[test]
    fn closed_form_special_angles() {
        let (t01, t12, t02) = (1.0, 1.2, 0.9);
        let th = theta_hat(t01, t12, t02);
        let (sig, z1, z2) = powers_closed_form(1.5, 1.0, 2.0, t01, t12, t02, 2.0, 0.0, 0.0);
        assert_abs_diff_eq!(sig, 2.0 * 2.25 * t01.sin().powi(2) * th.sin().powi(2), epsilon = 1e-12);
        assert_eq!((z1, z2), (0.0, 0.0));
        let (sig, z1, z2) = powers_closed_form(1.5, 1.0, 2.0, t01, t12, t02, 2.0, FRAC_PI_2 - t01, FRAC_PI_2 - th);
        assert_abs_diff_eq!(sig, 2.0 * 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(z1, 2.0 * t01.cos().powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(z2, 2.0 * 4.0 * t02.cos().powi(2), epsilon = 1e-12);
        let (sig, z1, z2) = powers_closed_form(1.5, 1.0, 2.0, FRAC_PI_2, FRAC_PI_2, FRAC_PI_2, 2.0, 0.0, 0.0);
        assert_abs_diff_eq!(sig, 4.5, epsilon = 1e-12);
        assert_eq!(z1, 0.0);
        assert_abs_diff_eq!(z2, 0.0, epsilon = 1e-30);
        assert_eq!(theta_hat(0.0, 1.0, 1.0), FRAC_PI_2);
    }

    #[test]
    fn two_user_reduction_attains_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let t = rng.gen_range(2..=5);
            let h = random_vector(&mut rng, t, true);
            let c = random_vector(&mut rng, t, true);
            let p = rng.gen_range(0.2..4.0);
            let f = reduce_interference_frame(&h, &[c.clone()]).unwrap();
            // Fine sweep of ψ over [0, π]; at each interference level the
            // best sweep value must equal the closed form.
            let target = rng.gen_range(0.0..1.0) * p * c.norm_sqr();
            let psi = (target / (p * c.norm_sqr())).sqrt().asin();
            let mut best = 0.0f64;
            for cand in [psi, PI - psi] {
                let g = lift_beamformer(&f, &spherical_vector(&SphericalParams::single(cand)), p).unwrap();
                assert!((c.dot(&g).norm_sqr() - target).abs() <= 1e-9 * target.max(1.0));
                best = best.max(h.dot(&g).norm_sqr());
            }
            let (_, v) = max_signal_given_interference(&h, &c, p, target.sqrt()).unwrap();
            assert!((best - v).abs() <= 1e-8 * v.max(1.0));
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.gen_range(1..=5);
            let complex = rng.gen_bool(0.5);
            let g = random_vector(&mut rng, n, complex);
            let g = g.scale_real(rng.gen_range(0.0..1.0) / g.norm());
            let params = spherical_params_for(&g);
            assert_eq!(params.omega[0], 0.0);
            if !complex {
                assert!(params.omega.iter().all(|&w| w == 0.0));
            }
            let back = spherical_vector(&params);
            // Equal up to a global phase.
            let phase = back.dot(&g);
            let aligned = back.scale(if phase.norm() > 0.0 { phase / phase.norm() } else { C64::new(1.0, 0.0) });
            assert!(aligned.sub(&g).norm() <= 1e-10, "{g:?} vs {back:?}");
        }
    }

    proptest! {
        #[test]
        fn spherical_vector_stays_in_unit_ball(psi in proptest::collection::vec(0.0..PI, 1..6), w in 0.0..6.28) {
            let n = psi.len();
            let mut omega = vec![w; n];
            omega[0] = 0.0;
            let g = spherical_vector(&SphericalParams::new(psi.clone(), omega).unwrap());
            let expected = 1.0 - psi.iter().map(|a| a.cos().powi(2)).product::<f64>();
            prop_assert!((g.norm_sqr() - expected).abs() < 1e-12);
        }
    }
}
