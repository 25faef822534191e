//! Rank-preserving completion of a bordered covariance.
//!
//! Given a fixed upper-left block `K11`, find the remaining blocks of a PSD
//! `K` with `tr K ≤ P` maximizing `[x; y]† K [x; y]`. The optimum has the
//! closed form `(√(x†K11x) + ‖y‖·√(P − tr K11))²` and is attained without
//! raising the rank above `max(rank K11, 1)`.

use crate::error::{Error, Result};
use crate::numlin::{eig_hermitian, CMatrix, CVector, HermitianMatrix, C64};

/// PSD tolerance applied to `K11` on construction.
pub const PSD_TOL: f64 = 1e-9;
/// `x†K11x ≤ QUAD_ZERO · ‖x‖² · tr K11` selects the zero-projection branch.
pub const QUAD_ZERO: f64 = 1e-12;
/// `‖y‖ ≤ Y_ZERO` selects the empty-border branch.
pub const Y_ZERO: f64 = 1e-12;
/// Relative eigenvalue cut used for the square root of `K11`.
pub const EIG_CUT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionInput {
    x: CVector,
    y: CVector,
    k11: HermitianMatrix,
    p: f64,
}

/// Which construction produced the completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionCase {
    /// `x†K11x > 0`, `y ≠ 0`.
    Aligned,
    /// `x†K11x = 0`, `y ≠ 0`.
    ZeroProjection,
    /// `y = 0`.
    NoBorder,
}

impl CompletionInput {
    pub fn new(x: CVector, y: CVector, k11: HermitianMatrix, p: f64) -> Result<Self> {
        if k11.dim() != x.dim() {
            return Err(Error::Dimension(format!("K11 is {0}x{0} but x has {1} entries", k11.dim(), x.dim())));
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidInput(format!("trace budget {p} must be finite and >= 0")));
        }
        if k11.trace() > p + 1e-12 {
            return Err(Error::Infeasible(format!("tr(K11) = {} exceeds P = {p}", k11.trace())));
        }
        if k11.dim() > 0 {
            let (_, values) = eig_hermitian(&k11)?;
            if values[0] < -PSD_TOL {
                return Err(Error::InvalidInput(format!("K11 is not PSD (min eigenvalue {:.3e})", values[0])));
            }
        }
        Ok(CompletionInput { x, y, k11, p })
    }

    pub fn x(&self) -> &CVector {
        &self.x
    }

    pub fn y(&self) -> &CVector {
        &self.y
    }

    pub fn k11(&self) -> &HermitianMatrix {
        &self.k11
    }

    pub fn power(&self) -> f64 {
        self.p
    }

    /// Power left for the lower block.
    pub fn residual_power(&self) -> f64 {
        (self.p - self.k11.trace()).max(0.0)
    }

    fn quad(&self) -> f64 {
        if self.x.dim() == 0 {
            return 0.0;
        }
        self.k11.quad_form(&self.x).max(0.0)
    }

    pub fn case(&self) -> CompletionCase {
        if self.y.norm() <= Y_ZERO {
            return CompletionCase::NoBorder;
        }
        let q = self.quad();
        if q == 0.0 || q <= QUAD_ZERO * self.x.norm_sqr() * self.k11.trace() {
            CompletionCase::ZeroProjection
        } else {
            CompletionCase::Aligned
        }
    }
}

/// `(√(x†K11x) + ‖y‖·√(P − tr K11))²`.
pub fn lemma5_bound(inp: &CompletionInput) -> f64 {
    (inp.quad().sqrt() + inp.y.norm() * inp.residual_power().sqrt()).powi(2)
}

/// Completion attaining [`lemma5_bound`] with rank at most
/// `max(rank K11, 1)`.
pub fn lemma5_complete(inp: &CompletionInput) -> Result<HermitianMatrix> {
    let t1 = inp.x.dim();
    let t2 = inp.y.dim();
    let mut k = CMatrix::zeros(t1 + t2, t1 + t2);
    k.set_block(0, 0, inp.k11.as_matrix());
    let r = inp.residual_power();

    // Off-diagonal block K21 = y a† for a column vector a of length t1.
    let a = match inp.case() {
        CompletionCase::NoBorder => return HermitianMatrix::new(k),
        CompletionCase::Aligned => {
            let q = inp.quad();
            let k11x = inp.k11.as_matrix().mul_vec(&inp.x);
            k11x.scale_real(r.sqrt() / (inp.y.norm() * q.sqrt()))
        }
        CompletionCase::ZeroProjection => {
            let (vecs, values) = eig_hermitian(&inp.k11)?;
            match values.last() {
                Some(&top) if top > 0.0 && t1 > 0 => {
                    let v = vecs.column(t1 - 1);
                    // Align the phase with x so a residual x†K11x > 0 only helps.
                    let overlap = inp.x.dot(&v);
                    let phase = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { C64::new(1.0, 0.0) };
                    v.scale(phase * (top.sqrt() * r.sqrt() / inp.y.norm()))
                }
                _ => CVector::zeros(t1),
            }
        }
    };
    let ny2 = inp.y.norm_sqr();
    let k21 = CMatrix::outer(&inp.y, &a);
    k.set_block(t1, 0, &k21);
    k.set_block(0, t1, &k21.adjoint());
    let k22 = CMatrix::outer(&inp.y, &inp.y).scale(C64::new(r / ny2, 0.0));
    k.set_block(t1, t1, &k22);
    HermitianMatrix::new(k)
}
