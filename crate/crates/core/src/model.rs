//! Network description, rate conventions and region samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mreduce::SphericalParams;
use crate::numlin::CVector;

/// Scalar field of the channel coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    Two,
    E,
}

/// How a SINR turns into a rate: `prefactor · log_base(1 + sinr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConvention {
    pub base: LogBase,
    pub prefactor: f64,
}

impl RateConvention {
    /// ½ for real-valued signalling, 1 for circularly symmetric complex.
    pub fn for_field(field: Field, base: LogBase) -> Self {
        let prefactor = match field {
            Field::Real => 0.5,
            Field::Complex => 1.0,
        };
        RateConvention { base, prefactor }
    }

    pub fn bits_complex() -> Self {
        RateConvention { base: LogBase::Two, prefactor: 1.0 }
    }

    pub fn rate(&self, sinr: f64) -> f64 {
        let nats = sinr.max(0.0).ln_1p();
        self.prefactor
            * match self.base {
                LogBase::Two => nats / std::f64::consts::LN_2,
                LogBase::E => nats,
            }
    }
}

/// m transmitter/receiver pairs. `channel(j, i)` is the vector from
/// transmitter `j` to receiver `i`; its length is the antenna count of `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisoNetwork {
    channels: Vec<Vec<CVector>>,
    powers: Vec<f64>,
    field: Field,
}

impl MisoNetwork {
    pub fn new(channels: Vec<Vec<CVector>>, powers: Vec<f64>, field: Field) -> Result<Self> {
        let m = channels.len();
        if m < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 users, got {m}")));
        }
        if powers.len() != m {
            return Err(Error::Dimension(format!("{} powers for {m} users", powers.len())));
        }
        for (j, row) in channels.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!(
                    "transmitter {} lists {} channels, expected {m}",
                    j + 1,
                    row.len()
                )));
            }
            let t = row[0].dim();
            if t == 0 {
                return Err(Error::Dimension(format!("transmitter {} has no antennas", j + 1)));
            }
            if row.iter().any(|h| h.dim() != t) {
                return Err(Error::Dimension(format!(
                    "transmitter {} channels have unequal antenna counts",
                    j + 1
                )));
            }
            if row.iter().any(|h| h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
                return Err(Error::InvalidInput(format!("transmitter {} has non-finite channel entries", j + 1)));
            }
            if field == Field::Real && row.iter().any(|h| !h.is_real()) {
                return Err(Error::InvalidInput(format!(
                    "real field requested but transmitter {} has complex entries",
                    j + 1
                )));
            }
        }
        for (i, &p) in powers.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidInput(format!("power of user {} must be finite and >= 0", i + 1)));
            }
        }
        Ok(MisoNetwork { channels, powers, field })
    }

    pub fn users(&self) -> usize {
        self.channels.len()
    }

    pub fn antennas(&self, j: usize) -> usize {
        self.channels[j][0].dim()
    }

    /// Channel from transmitter `j` to receiver `i`.
    pub fn channel(&self, j: usize, i: usize) -> &CVector {
        &self.channels[j][i]
    }

    pub fn channels(&self) -> &[Vec<CVector>] {
        &self.channels
    }

    pub fn power(&self, i: usize) -> f64 {
        self.powers[i]
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn with_power(&self, i: usize, p: f64) -> Result<MisoNetwork> {
        let mut powers = self.powers.clone();
        powers[i] = p;
        MisoNetwork::new(self.channels.clone(), powers, self.field)
    }

    /// Transmitter `i`'s own channel and its interfering channels to the
    /// other receivers in increasing receiver order.
    pub fn frame_vectors(&self, i: usize) -> (CVector, Vec<CVector>) {
        let own = self.channels[i][i].clone();
        let others = (0..self.users()).filter(|&k| k != i).map(|k| self.channels[i][k].clone()).collect();
        (own, others)
    }

    /// Receiver-side powers `z[j][i] = |h_ji† γ_j|²` for beamformers `γ_j`.
    pub fn power_matrix(&self, beams: &[CVector]) -> Result<Vec<Vec<f64>>> {
        let m = self.users();
        if beams.len() != m {
            return Err(Error::Dimension(format!("{} beamformers for {m} users", beams.len())));
        }
        for (j, b) in beams.iter().enumerate() {
            if b.dim() != self.antennas(j) {
                return Err(Error::Dimension(format!("beamformer {} has wrong dimension", j + 1)));
            }
        }
        Ok((0..m)
            .map(|j| (0..m).map(|i| self.channels[j][i].dot(&beams[j]).norm_sqr()).collect())
            .collect())
    }

    /// Rates under single-user detection from a power matrix as returned by
    /// [`MisoNetwork::power_matrix`].
    pub fn rates_from_powers(z: &[Vec<f64>], conv: RateConvention) -> Vec<f64> {
        let m = z.len();
        (0..m)
            .map(|i| {
                let noise: f64 = 1.0 + (0..m).filter(|&j| j != i).map(|j| z[j][i]).sum::<f64>();
                conv.rate(z[i][i] / noise)
            })
            .collect()
    }

    pub fn rates(&self, beams: &[CVector], conv: RateConvention) -> Result<Vec<f64>> {
        Ok(MisoNetwork::rates_from_powers(&self.power_matrix(beams)?, conv))
    }
}

/// One point of a swept region together with what achieves it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSample {
    pub params: Vec<SphericalParams>,
    pub rates: Vec<f64>,
    pub beamformers: Vec<CVector>,
    /// `interference[j][i] = |h_ji† γ_j|²`; the diagonal holds signal powers.
    pub interference: Vec<Vec<f64>>,
}

impl RegionSample {
    pub fn from_beams(
        net: &MisoNetwork,
        params: Vec<SphericalParams>,
        beamformers: Vec<CVector>,
        conv: RateConvention,
    ) -> Result<Self> {
        let interference = net.power_matrix(&beamformers)?;
        let rates = MisoNetwork::rates_from_powers(&interference, conv);
        Ok(RegionSample { params, rates, beamformers, interference })
    }

    /// All angle parameters flattened user by user (ψ's then ω's per user).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.psi.iter().chain(p.omega.iter()).copied()).collect()
    }
}

/// Returns true when `a` is at least `b` in every coordinate and strictly
/// larger in one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::C64;

    fn toy() -> MisoNetwork {
        let h = |a: f64, b: f64| CVector::from_real(&[a, b]);
        MisoNetwork::new(vec![vec![h(1.0, 0.0), h(0.0, 1.0)], vec![h(1.0, 1.0), h(2.0, 0.0)]], vec![1.0, 2.0], Field::Real)
            .unwrap()
    }

    #[test]
    fn rate_conventions() {
        let bits = RateConvention::for_field(Field::Complex, LogBase::Two);
        assert!((bits.rate(3.0) - 2.0).abs() < 1e-15);
        let half = RateConvention::for_field(Field::Real, LogBase::Two);
        assert!((half.rate(3.0) - 1.0).abs() < 1e-15);
        let nats = RateConvention::for_field(Field::Complex, LogBase::E);
        assert!((nats.rate(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_networks() {
        let h = CVector::from_real(&[1.0]);
        assert!(MisoNetwork::new(vec![vec![h.clone()]], vec![1.0], Field::Real).is_err());
        let two = vec![vec![h.clone(), h.clone()], vec![h.clone(), h.clone()]];
        assert!(MisoNetwork::new(two.clone(), vec![1.0, -1.0], Field::Real).is_err());
        assert!(MisoNetwork::new(two.clone(), vec![1.0], Field::Real).is_err());
        let c = CVector::new(vec![C64::new(0.0, 1.0)]);
        let complex = vec![vec![c.clone(), h.clone()], vec![h.clone(), h]];
        assert!(MisoNetwork::new(complex.clone(), vec![1.0, 1.0], Field::Real).is_err());
        assert!(MisoNetwork::new(complex, vec![1.0, 1.0], Field::Complex).is_ok());
    }

    #[test]
    fn sinr_rates() {
        let net = toy();
        let beams = vec![CVector::from_real(&[1.0, 0.0]), CVector::from_real(&[0.0, 1.0])];
        let z = net.power_matrix(&beams).unwrap();
        assert_eq!(z, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let r = net.rates(&beams, RateConvention::bits_complex()).unwrap();
        assert!((r[0] - 0.5f64.ln_1p() / std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn frame_vector_order() {
        let net = toy();
        let (own, others) = net.frame_vectors(1);
        assert_eq!(own, CVector::from_real(&[2.0, 0.0]));
        assert_eq!(others, vec![CVector::from_real(&[1.0, 1.0])]);
    }

    #[test]
    fn dominance() {
        assert!(dominates(&[1.0, 1.0], &[1.0, 0.5]));
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]));
        assert!(!dominates(&[2.0, 0.0], &[1.0, 1.0]));
    }
}
