//! Closed-form two-user machinery.
//!
//! Channel naming follows the received-signal model: receiver 1 sees
//! `h1` (from transmitter 1) and `h2` (from transmitter 2), receiver 2 sees
//! `h3` (from transmitter 1) and `h4` (from transmitter 2).

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::model::{Field, MisoNetwork, RateConvention, RegionSample};
use crate::mreduce::SphericalParams;
use crate::numlin::{unitary_completion, CVector, C64};

/// `sin∠(h1, h3)` below this counts as linearly dependent.
pub const DEPENDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoUserChannel {
    pub h1: CVector,
    pub h2: CVector,
    pub h3: CVector,
    pub h4: CVector,
    pub p1: f64,
    pub p2: f64,
    pub field: Field,
}

impl TwoUserChannel {
    pub fn new(
        h1: CVector,
        h2: CVector,
        h3: CVector,
        h4: CVector,
        p1: f64,
        p2: f64,
        field: Field,
    ) -> Result<Self> {
        let ch = TwoUserChannel { h1, h2, h3, h4, p1, p2, field };
        // Network construction performs every consistency check we need.
        ch.to_network()?;
        Ok(ch)
    }

    pub fn from_network(net: &MisoNetwork) -> Result<Self> {
        if net.users() != 2 {
            return Err(Error::InvalidInput(format!("expected 2 users, got {}", net.users())));
        }
        Ok(TwoUserChannel {
            h1: net.channel(0, 0).clone(),
            h2: net.channel(1, 0).clone(),
            h3: net.channel(0, 1).clone(),
            h4: net.channel(1, 1).clone(),
            p1: net.power(0),
            p2: net.power(1),
            field: net.field(),
        })
    }

    pub fn to_network(&self) -> Result<MisoNetwork> {
        MisoNetwork::new(
            vec![vec![self.h1.clone(), self.h3.clone()], vec![self.h2.clone(), self.h4.clone()]],
            vec![self.p1, self.p2],
            self.field,
        )
    }

    /// Angle between transmitter 1's direct and cross channels.
    pub fn theta1(&self) -> f64 {
        channel_angle(&self.h1, &self.h3)
    }

    /// Angle between transmitter 2's direct and cross channels.
    pub fn theta2(&self) -> f64 {
        channel_angle(&self.h4, &self.h2)
    }

    /// Swaps the roles of the two users.
    pub fn swapped(&self) -> TwoUserChannel {
        TwoUserChannel {
            h1: self.h4.clone(),
            h2: self.h3.clone(),
            h3: self.h2.clone(),
            h4: self.h1.clone(),
            p1: self.p2,
            p2: self.p1,
            field: self.field,
        }
    }
}

/// `cos⁻¹(|a†b| / (‖a‖‖b‖))` in `[0, π/2]`; π/2 if either vector is zero.
pub fn channel_angle(a: &CVector, b: &CVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return FRAC_PI_2;
    }
    (a.dot(b).norm() / denom).clamp(0.0, 1.0).acos()
}

/// Two-user rate tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePair {
    pub r1: f64,
    pub r2: f64,
}

/// Maximizes `h1†S h1` over `S = γγ†`, `tr S ≤ P`, `h3†S h3 = z²`.
///
/// Returns the optimal beamformer and the achieved signal power.
pub fn max_signal_given_interference(h1: &CVector, h3: &CVector, p: f64, z: f64) -> Result<(CVector, f64)> {
    if h1.dim() != h3.dim() {
        return Err(Error::Dimension(format!("h1 has {} entries, h3 has {}", h1.dim(), h3.dim())));
    }
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::InvalidInput(format!("power budget {p} must be finite and >= 0")));
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::InvalidInput(format!("interference amplitude {z} must be finite and >= 0")));
    }
    let n1 = h1.norm();
    let n3 = h3.norm();
    if n3 == 0.0 {
        if z > 1e-12 {
            return Err(Error::Infeasible(format!("z = {z} > 0 with a zero cross channel")));
        }
        if n1 == 0.0 {
            return Ok((CVector::zeros(h1.dim()), 0.0));
        }
        return Ok((h1.scale_real(p.sqrt() / n1), p * n1 * n1));
    }
    let zmax = p.sqrt() * n3;
    if z > zmax * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::Infeasible(format!("z = {z} exceeds sqrt(P)·‖h3‖ = {zmax}")));
    }
    let z = z.min(zmax);
    let n3sq = n3 * n3;
    let cross = h3.dot(h1);

    let orth = h1.orthogonal_to(h3).norm();
    if orth <= DEPENDENCE_TOL * n1 || n1 == 0.0 {
        let gamma = h3.scale_real(z / n3sq);
        let value = cross.norm_sqr() * z * z / (n3sq * n3sq);
        return Ok((gamma, value));
    }

    let u3 = unitary_completion(h3);
    let rotated = u3.apply_adjoint(h1);
    let h11 = rotated[0];
    let beta = rotated.segment(1, rotated.dim());
    let beta_norm = beta.norm();
    let k = if h11.norm() > 0.0 { h11.conj() / h11.norm() } else { C64::new(1.0, 0.0) };
    let rem = (p - z * z / n3sq).max(0.0);
    let tail = beta.scale(k * (rem.sqrt() / beta_norm));
    let head = CVector::new(vec![C64::new(z / n3, 0.0)]);
    let gamma = u3.apply(&head.concat(&tail));
    let value = (z * cross.norm() / n3sq + ((n1 * n1 - cross.norm_sqr() / n3sq).max(0.0) * rem).sqrt()).powi(2);
    Ok((gamma, value))
}

/// Beamformer for a user on the sweep parameter `ψ`: interference
/// `P‖h_cross‖² sin²ψ`, signal `P‖h_direct‖² sin²(θ + ψ)`.
pub fn beam_at_angle(direct: &CVector, cross: &CVector, p: f64, psi: f64) -> Result<CVector> {
    let z = p.sqrt() * cross.norm() * psi.sin().max(0.0);
    Ok(max_signal_given_interference(direct, cross, p, z)?.0)
}

fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

fn sweep(
    ch: &TwoUserChannel,
    range1: f64,
    range2: f64,
    grid1: usize,
    grid2: usize,
    conv: RateConvention,
) -> Result<Vec<RegionSample>> {
    if grid1 < 2 || grid2 < 2 {
        return Err(Error::InvalidInput("grid sizes must be at least 2".into()));
    }
    let net = ch.to_network()?;
    let beams1 = grid_points(0.0, range1, grid1)
        .into_iter()
        .map(|psi| Ok((psi, beam_at_angle(&ch.h1, &ch.h3, ch.p1, psi)?)))
        .collect::<Result<Vec<_>>>()?;
    let beams2 = grid_points(0.0, range2, grid2)
        .into_iter()
        .map(|psi| Ok((psi, beam_at_angle(&ch.h4, &ch.h2, ch.p2, psi)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(grid1 * grid2);
    for (psi1, g1) in &beams1 {
        for (psi2, g2) in &beams2 {
            let params = vec![SphericalParams::single(*psi1), SphericalParams::single(*psi2)];
            out.push(RegionSample::from_beams(&net, params, vec![g1.clone(), g2.clone()], conv)?);
        }
    }
    Ok(out)
}

/// Grid over `ψ_i ∈ [0, π/2 − θ_i]` covering the two-user region.
pub fn two_user_region(ch: &TwoUserChannel, grid1: usize, grid2: usize, conv: RateConvention) -> Result<Vec<RegionSample>> {
    sweep(ch, FRAC_PI_2 - ch.theta1(), FRAC_PI_2 - ch.theta2(), grid1, grid2, conv)
}

/// Upper end of user 1's sweep when its interference at receiver 2 must
/// stay below `q1`.
pub fn limited_angle(p: f64, cross: &CVector, theta: f64, q: f64) -> f64 {
    let full = FRAC_PI_2 - theta;
    let gain = p * cross.norm_sqr();
    if q >= gain * theta.cos().powi(2) {
        return full;
    }
    full.min((q / gain).sqrt().clamp(0.0, 1.0).asin())
}

/// Region when each transmitter's interference at the other receiver is
/// capped (`q1` for transmitter 1, `q2` for transmitter 2).
pub fn interference_limited_region(
    ch: &TwoUserChannel,
    q1: f64,
    q2: f64,
    grid1: usize,
    grid2: usize,
    conv: RateConvention,
) -> Result<Vec<RegionSample>> {
    if ch.h2.norm() == 0.0 || ch.h3.norm() == 0.0 {
        return Err(Error::Hypothesis("cross channels must be nonzero".into()));
    }
    if !(q1 >= 0.0 && q2 >= 0.0) {
        return Err(Error::InvalidInput("interference caps must be >= 0".into()));
    }
    let r1 = limited_angle(ch.p1, &ch.h3, ch.theta1(), q1);
    let r2 = limited_angle(ch.p2, &ch.h2, ch.theta2(), q2);
    sweep(ch, r1, r2, grid1, grid2, conv)
}

/// Zero-forcing rate pair `(prefactor·log(1 + P_i‖h_ii‖² sin²θ_i))`.
pub fn zf_rates(ch: &TwoUserChannel, conv: RateConvention) -> RatePair {
    RatePair {
        r1: conv.rate(ch.p1 * ch.h1.norm_sqr() * ch.theta1().sin().powi(2)),
        r2: conv.rate(ch.p2 * ch.h4.norm_sqr() * ch.theta2().sin().powi(2)),
    }
}

/// Which power allocation maximizes the scalar sum rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumRateChoice {
    BothFull,
    OnlySecond,
    OnlyFirst,
}

/// Maximum sum rate of a scalar interference channel with cross gains
/// `a`, `b` under single-user detection.
pub fn scalar_sud_sum_rate(p1: f64, p2: f64, a: f64, b: f64, conv: RateConvention) -> Result<(f64, SumRateChoice)> {
    if [p1, p2, a, b].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("powers and gains must be finite and >= 0".into()));
    }
    let f = |x: f64, y: f64| conv.rate(x / (1.0 + a * y)) + conv.rate(y / (1.0 + b * x));
    let both = f(p1, p2);
    let second = f(0.0, p2);
    let first = f(p1, 0.0);
    if both >= second && both >= first {
        Ok((both, SumRateChoice::BothFull))
    } else if second >= first {
        Ok((second, SumRateChoice::OnlySecond))
    } else {
        Ok((first, SumRateChoice::OnlyFirst))
    }
}

/// Frequency-division baseline: user 1 gets bandwidth fraction `α`,
/// `α = k/(grid−1)`.
pub fn fdm_region(ch: &TwoUserChannel, grid: usize, conv: RateConvention) -> Result<Vec<RatePair>> {
    if grid < 2 {
        return Err(Error::InvalidInput("grid must be at least 2".into()));
    }
    let s1 = ch.p1 * ch.h1.norm_sqr();
    let s2 = ch.p2 * ch.h4.norm_sqr();
    let share = |frac: f64, snr: f64| if frac <= 0.0 { 0.0 } else { frac * conv.rate(snr / frac) };
    Ok((0..grid)
        .map(|k| {
            let alpha = k as f64 / (grid - 1) as f64;
            RatePair { r1: share(alpha, s1), r2: share(1.0 - alpha, s2) }
        })
        .collect())
}

/// `√((√(1+2P) − 1)/P)`, evaluated in the cancellation-free form
/// `√(2/(√(1+2P) + 1))`.
pub fn fdm_threshold(p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidInput(format!("power {p} must be finite and > 0")));
    }
    Ok((2.0 / ((1.0 + 2.0 * p).sqrt() + 1.0)).sqrt())
}

/// True when the zero-forcing point of a symmetric channel with angle `θ`
/// lies inside the FDM region for large cross gains.
pub fn fdm_beats_zf_condition(theta: f64, p: f64) -> Result<bool> {
    if !(0.0..=FRAC_PI_2).contains(&theta) {
        return Err(Error::InvalidInput(format!("theta {theta} outside [0, pi/2]")));
    }
    Ok(theta.sin() <= fdm_threshold(p)?)
}
