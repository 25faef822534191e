//! Rate-region sweeps over the spherical beamformer parametrization,
//! special points and surfaces, and Pareto/hull post-processing.
//!
//! Each user's beamformer depends only on its own angles, so grid sweeps
//! precompute every user's candidate beams (and the powers they deliver at
//! each receiver) once and then stream the cross product.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Field, MisoNetwork, RateConvention, RegionSample};
use crate::mreduce::{lift_scaled, reduce_interference_frame, spherical_params_for, spherical_vector, ReducedFrame, SphericalParams};
use crate::numlin::CVector;

/// Cross-product indices per grid work unit.
const GRID_CHUNK: u64 = 1 << 14;
/// Samples per random shard; shard `s` draws from ChaCha stream `s`.
const RANDOM_SHARD: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// `points` values per angle: `ψ` uniform on `[0, π]` including both
    /// ends, `ω` uniform on `[0, 2π)`.
    Grid { points: usize },
    /// `count` i.i.d. uniform parameter tuples.
    Random { seed: u64, count: u64 },
}

/// One transmitter's reduced frame with its interferers in a chosen order.
#[derive(Debug, Clone)]
struct UserFrame {
    user: usize,
    frame: ReducedFrame,
    power: f64,
    complex: bool,
}

impl UserFrame {
    fn new(net: &MisoNetwork, user: usize, order: &[usize]) -> Result<Self> {
        let own = net.channel(user, user);
        let others: Vec<CVector> = order.iter().map(|&i| net.channel(user, i).clone()).collect();
        Ok(UserFrame {
            user,
            frame: reduce_interference_frame(own, &others)?,
            power: net.power(user),
            complex: net.field() == Field::Complex,
        })
    }

    fn natural(net: &MisoNetwork, user: usize) -> Result<Self> {
        let order: Vec<usize> = (0..net.users()).filter(|&i| i != user).collect();
        UserFrame::new(net, user, &order)
    }

    fn mbar(&self) -> usize {
        self.frame.mbar()
    }

    fn beam(&self, params: &SphericalParams) -> CVector {
        let u = spherical_vector(params).scale_real(self.power.sqrt());
        lift_scaled(&self.frame, &u, self.power)
    }

    /// Number of free phases (the first is pinned to 0 as a global phase).
    fn phases(&self) -> usize {
        if self.complex {
            self.mbar().saturating_sub(1)
        } else {
            0
        }
    }

    fn random_params(&self, rng: &mut ChaCha8Rng) -> SphericalParams {
        let n = self.mbar();
        let psi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=PI)).collect();
        let mut omega = vec![0.0; n];
        for w in omega.iter_mut().skip(1).take(self.phases()) {
            *w = rng.gen_range(0.0..2.0 * PI);
        }
        SphericalParams { psi, omega }
    }
}

fn psi_grid(points: usize) -> Vec<f64> {
    (0..points).map(|k| if k + 1 == points { PI } else { PI * k as f64 / (points - 1) as f64 }).collect()
}

fn omega_grid(points: usize) -> Vec<f64> {
    (0..points).map(|k| 2.0 * PI * k as f64 / points as f64).collect()
}

/// Beams one user contributes to a sweep, with the powers each delivers to
/// every receiver.
#[derive(Debug, Clone)]
struct Candidates {
    params: Vec<SphericalParams>,
    beams: Vec<CVector>,
    powers: Vec<Vec<f64>>,
}

impl Candidates {
    fn build(net: &MisoNetwork, user: usize, list: Vec<(SphericalParams, CVector)>) -> Self {
        let mut c = Candidates { params: Vec::new(), beams: Vec::new(), powers: Vec::new() };
        for (params, beam) in list {
            c.powers.push((0..net.users()).map(|i| net.channel(user, i).dot(&beam).norm_sqr()).collect());
            c.params.push(params);
            c.beams.push(beam);
        }
        c
    }

    fn len(&self) -> usize {
        self.params.len()
    }
}

/// Every combination of the given per-angle value lists, first list most
/// significant.
fn mixed_product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn grid_candidates(net: &MisoNetwork, uf: &UserFrame, points: usize) -> Candidates {
    let n = uf.mbar();
    if uf.power == 0.0 {
        let params = SphericalParams::zeros(n);
        let beam = CVector::zeros(net.antennas(uf.user));
        return Candidates::build(net, uf.user, vec![(params, beam)]);
    }
    let mut axes = vec![psi_grid(points); n];
    axes.extend(std::iter::repeat(omega_grid(points)).take(uf.phases()));
    let list = mixed_product(&axes)
        .into_iter()
        .map(|flat| {
            let mut omega = vec![0.0; n];
            if uf.phases() > 0 {
                omega[1..1 + uf.phases()].copy_from_slice(&flat[n..]);
            }
            let params = SphericalParams { psi: flat[..n].to_vec(), omega };
            let beam = uf.beam(&params);
            (params, beam)
        })
        .collect();
    Candidates::build(net, uf.user, list)
}

#[derive(Debug, Clone)]
enum SweepKind {
    Grid { candidates: Vec<Candidates>, total: u64 },
    Random { frames: Vec<UserFrame>, seed: u64, count: u64 },
}

/// A lazily evaluated region sweep.
#[derive(Debug, Clone)]
pub struct RegionSweep {
    net: MisoNetwork,
    conv: RateConvention,
    kind: SweepKind,
}

fn rates_from_rows(rows: &[&[f64]], conv: RateConvention, out: &mut [f64]) {
    let m = rows.len();
    for i in 0..m {
        let mut noise = 1.0;
        for (j, row) in rows.iter().enumerate() {
            if j != i {
                noise += row[i];
            }
        }
        out[i] = conv.rate(rows[i][i] / noise);
    }
}

/// Inserts `(idx, rates)` into a Pareto front unless it is weakly
/// dominated; removes points it dominates.
fn front_insert(front: &mut Vec<(u64, Vec<f64>)>, idx: u64, rates: &[f64]) {
    if front.iter().any(|(_, q)| q.iter().zip(rates).all(|(a, b)| a >= b)) {
        return;
    }
    front.retain(|(_, q)| !rates.iter().zip(q).all(|(a, b)| a >= b));
    front.push((idx, rates.to_vec()));
}

fn merge_fronts(mut a: Vec<(u64, Vec<f64>)>, b: Vec<(u64, Vec<f64>)>) -> Vec<(u64, Vec<f64>)> {
    for (idx, r) in b {
        front_insert(&mut a, idx, &r);
    }
    a
}

fn compare_params(a: &RegionSample, b: &RegionSample) -> Ordering {
    let (pa, pb) = (a.flat_params(), b.flat_params());
    for (x, y) in pa.iter().zip(&pb) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    pa.len().cmp(&pb.len())
}

impl RegionSweep {
    pub fn network(&self) -> &MisoNetwork {
        &self.net
    }

    /// Total number of samples the sweep emits.
    pub fn len(&self) -> u64 {
        match &self.kind {
            SweepKind::Grid { total, .. } => *total,
            SweepKind::Random { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn chunk_size(&self) -> u64 {
        match self.kind {
            SweepKind::Grid { .. } => GRID_CHUNK,
            SweepKind::Random { .. } => RANDOM_SHARD,
        }
    }

    /// Number of independent work units.
    pub fn chunks(&self) -> u64 {
        self.len().div_ceil(self.chunk_size())
    }

    fn chunk_range(&self, c: u64) -> (u64, u64) {
        let size = self.chunk_size();
        (c * size, ((c + 1) * size).min(self.len()))
    }

    fn decode(candidates: &[Candidates], mut idx: u64, digits: &mut [usize]) {
        for (d, c) in digits.iter_mut().zip(candidates).rev() {
            let n = c.len() as u64;
            *d = (idx % n) as usize;
            idx /= n;
        }
    }

    fn grid_sample(&self, candidates: &[Candidates], digits: &[usize]) -> RegionSample {
        let interference: Vec<Vec<f64>> = candidates.iter().zip(digits).map(|(c, &d)| c.powers[d].clone()).collect();
        let rates = MisoNetwork::rates_from_powers(&interference, self.conv);
        RegionSample {
            params: candidates.iter().zip(digits).map(|(c, &d)| c.params[d].clone()).collect(),
            rates,
            beamformers: candidates.iter().zip(digits).map(|(c, &d)| c.beams[d].clone()).collect(),
            interference,
        }
    }

    fn random_shard(&self, frames: &[UserFrame], seed: u64, shard: u64) -> Vec<RegionSample> {
        let (lo, hi) = self.chunk_range(shard);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shard);
        (lo..hi)
            .map(|_| {
                let params: Vec<SphericalParams> = frames.iter().map(|f| f.random_params(&mut rng)).collect();
                let beams: Vec<CVector> = frames.iter().zip(&params).map(|(f, p)| f.beam(p)).collect();
                RegionSample::from_beams(&self.net, params, beams, self.conv)
                    .expect("beam dimensions follow the network")
            })
            .collect()
    }

    /// All samples of work unit `c`, in emission order.
    pub fn chunk_samples(&self, c: u64) -> Vec<RegionSample> {
        match &self.kind {
            SweepKind::Grid { candidates, .. } => {
                let (lo, hi) = self.chunk_range(c);
                let mut digits = vec![0; candidates.len()];
                (lo..hi)
                    .map(|idx| {
                        Self::decode(candidates, idx, &mut digits);
                        self.grid_sample(candidates, &digits)
                    })
                    .collect()
            }
            SweepKind::Random { frames, seed, count: _ } => self.random_shard(frames, *seed, c),
        }
    }

    /// Streams every sample; work units are evaluated in parallel batches
    /// and emitted in order.
    pub fn iter(&self) -> SweepIter<'_> {
        SweepIter { sweep: self, next_chunk: 0, buffer: VecDeque::new() }
    }

    /// Rate vectors of work unit `c` with their global indices.
    fn chunk_rates(&self, c: u64, mut visit: impl FnMut(u64, &[f64])) {
        match &self.kind {
            SweepKind::Grid { candidates, .. } => {
                let (lo, hi) = self.chunk_range(c);
                let m = candidates.len();
                let mut digits = vec![0; m];
                let mut rates = vec![0.0; m];
                for idx in lo..hi {
                    Self::decode(candidates, idx, &mut digits);
                    let rows: Vec<&[f64]> = candidates.iter().zip(&digits).map(|(c, &d)| c.powers[d].as_slice()).collect();
                    rates_from_rows(&rows, self.conv, &mut rates);
                    visit(idx, &rates);
                }
            }
            SweepKind::Random { .. } => {
                let (lo, _) = self.chunk_range(c);
                for (k, s) in self.chunk_samples(c).iter().enumerate() {
                    visit(lo + k as u64, &s.rates);
                }
            }
        }
    }

    /// Materializes the samples at the given global indices.
    fn samples_at(&self, indices: &[u64]) -> Vec<RegionSample> {
        match &self.kind {
            SweepKind::Grid { candidates, .. } => {
                let mut digits = vec![0; candidates.len()];
                indices
                    .iter()
                    .map(|&idx| {
                        Self::decode(candidates, idx, &mut digits);
                        self.grid_sample(candidates, &digits)
                    })
                    .collect()
            }
            SweepKind::Random { .. } => {
                let mut by_shard: Vec<u64> = indices.iter().map(|i| i / RANDOM_SHARD).collect();
                by_shard.sort_unstable();
                by_shard.dedup();
                let shards: Vec<(u64, Vec<RegionSample>)> =
                    by_shard.par_iter().map(|&s| (s, self.chunk_samples(s))).collect();
                indices
                    .iter()
                    .map(|&idx| {
                        let shard = idx / RANDOM_SHARD;
                        let pos = shards.binary_search_by_key(&shard, |(s, _)| *s).expect("shard generated");
                        shards[pos].1[(idx % RANDOM_SHARD) as usize].clone()
                    })
                    .collect()
            }
        }
    }

    /// Maximal samples under componentwise dominance (one representative
    /// per distinct rate vector, the earliest in emission order), sorted
    /// by parameter tuple.
    pub fn pareto_front(&self) -> Vec<RegionSample> {
        let front = (0..self.chunks())
            .into_par_iter()
            .map(|c| {
                let mut local = Vec::new();
                self.chunk_rates(c, |idx, r| front_insert(&mut local, idx, r));
                local
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Vec::new(), merge_fronts);
        let mut indices: Vec<u64> = front.into_iter().map(|(i, _)| i).collect();
        indices.sort_unstable();
        let mut samples = self.samples_at(&indices);
        samples.sort_by(compare_params);
        samples
    }

    /// Sample maximizing `score(rates)`; the earliest wins ties.
    pub fn best_by<F>(&self, score: F) -> Option<RegionSample>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let best = (0..self.chunks())
            .into_par_iter()
            .map(|c| {
                let mut best: Option<(f64, u64)> = None;
                self.chunk_rates(c, |idx, r| {
                    let s = score(r);
                    if best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, idx));
                    }
                });
                best
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .fold(None, |acc: Option<(f64, u64)>, (s, i)| match acc {
                Some((b, j)) if b > s || (b == s && j < i) => Some((b, j)),
                _ => Some((s, i)),
            })?;
        self.samples_at(&[best.1]).pop()
    }
}

/// Pareto filter for an explicit sample list with the same conventions as
/// [`RegionSweep::pareto_front`].
pub fn pareto_samples(samples: Vec<RegionSample>) -> Vec<RegionSample> {
    let mut front = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        front_insert(&mut front, k as u64, &s.rates);
    }
    let mut keep: Vec<usize> = front.into_iter().map(|(i, _)| i as usize).collect();
    keep.sort_unstable();
    let mut out: Vec<RegionSample> = Vec::with_capacity(keep.len());
    let mut it = keep.into_iter().peekable();
    for (k, s) in samples.into_iter().enumerate() {
        if it.peek() == Some(&k) {
            it.next();
            out.push(s);
        }
    }
    out.sort_by(compare_params);
    out
}

/// Ordered streaming iterator over a [`RegionSweep`].
pub struct SweepIter<'a> {
    sweep: &'a RegionSweep,
    next_chunk: u64,
    buffer: VecDeque<RegionSample>,
}

impl Iterator for SweepIter<'_> {
    type Item = RegionSample;

    fn next(&mut self) -> Option<RegionSample> {
        if self.buffer.is_empty() {
            let total = self.sweep.chunks();
            if self.next_chunk >= total {
                return None;
            }
            let batch = (2 * rayon::current_num_threads() as u64).max(1);
            let end = (self.next_chunk + batch).min(total);
            let parts: Vec<Vec<RegionSample>> =
                (self.next_chunk..end).into_par_iter().map(|c| self.sweep.chunk_samples(c)).collect();
            self.next_chunk = end;
            self.buffer.extend(parts.into_iter().flatten());
        }
        self.buffer.pop_front()
    }
}

/// General m-user sweep. User `i` is parametrized in its own frame with
/// interferers in increasing receiver order.
pub fn m_user_region(net: &MisoNetwork, sampler: Sampler, conv: RateConvention) -> Result<RegionSweep> {
    let frames = (0..net.users()).map(|i| UserFrame::natural(net, i)).collect::<Result<Vec<_>>>()?;
    let kind = match sampler {
        Sampler::Grid { points } => {
            if points < 2 {
                return Err(Error::InvalidInput("grid must have at least 2 points per angle".into()));
            }
            let candidates: Vec<Candidates> = frames.iter().map(|f| grid_candidates(net, f, points)).collect();
            let total = candidates
                .iter()
                .try_fold(1u64, |acc, c| acc.checked_mul(c.len() as u64))
                .ok_or_else(|| Error::InvalidInput("grid sweep has more than 2^64 samples".into()))?;
            SweepKind::Grid { candidates, total }
        }
        Sampler::Random { seed, count } => SweepKind::Random { frames, seed, count },
    };
    Ok(RegionSweep { net: net.clone(), conv, kind })
}

/// Three-user sweep with six angles per real tuple.
pub fn three_user_region(net: &MisoNetwork, sampler: Sampler, conv: RateConvention) -> Result<RegionSweep> {
    if net.users() != 3 {
        return Err(Error::InvalidInput(format!("expected 3 users, got {}", net.users())));
    }
    m_user_region(net, sampler, conv)
}

/// All angles zero: each user beams orthogonally to every cross channel.
pub fn zf_point(net: &MisoNetwork, conv: RateConvention) -> Result<RegionSample> {
    let mut params = Vec::new();
    let mut beams = Vec::new();
    for i in 0..net.users() {
        let f = UserFrame::natural(net, i)?;
        let scale = net.channel(i, i).norm().max(1.0);
        if f.power > 0.0 && f.frame.h_hat().norm() <= 1e-12 * scale {
            return Err(Error::DegenerateZeroForcing { user: i + 1 });
        }
        let p = SphericalParams::zeros(f.mbar());
        beams.push(f.beam(&p));
        params.push(p);
    }
    RegionSample::from_beams(net, params, beams, conv)
}

/// Samples with `user` beaming along its own channel at full power while
/// every other transmitter nulls its interference at `user`.
///
/// Each other transmitter is parametrized with `user` as its first
/// interferer, its first angle fixed at 0 and the rest swept.
pub fn single_user_max_surface(net: &MisoNetwork, user: usize, grid: usize, conv: RateConvention) -> Result<Vec<RegionSample>> {
    let m = net.users();
    if user >= m {
        return Err(Error::InvalidInput(format!("user {} out of range for {m} users", user + 1)));
    }
    if grid < 2 {
        return Err(Error::InvalidInput("grid must have at least 2 points per angle".into()));
    }
    let mut all = Vec::with_capacity(m);
    for v in 0..m {
        if v == user {
            let f = UserFrame::natural(net, v)?;
            let h = net.channel(v, v);
            let head = if h.norm() > 0.0 { f.frame.h_low().scale_real(1.0 / h.norm()) } else { CVector::zeros(f.mbar()) };
            let params = spherical_params_for(&head);
            let beam = f.beam(&params);
            all.push(Candidates::build(net, v, vec![(params, beam)]));
            continue;
        }
        let mut order = vec![user];
        order.extend((0..m).filter(|&i| i != v && i != user));
        let f = UserFrame::new(net, v, &order)?;
        let n = f.mbar();
        let mut axes = vec![vec![0.0]];
        axes.extend(std::iter::repeat(psi_grid(grid)).take(n - 1));
        axes.extend(std::iter::repeat(omega_grid(grid)).take(f.phases()));
        let list = mixed_product(&axes)
            .into_iter()
            .map(|flat| {
                let mut omega = vec![0.0; n];
                if f.phases() > 0 {
                    omega[1..1 + f.phases()].copy_from_slice(&flat[n..]);
                }
                let params = SphericalParams { psi: flat[..n].to_vec(), omega };
                let beam = f.beam(&params);
                (params, beam)
            })
            .collect();
        all.push(Candidates::build(net, v, list));
    }
    let total: u64 = all.iter().map(|c| c.len() as u64).product();
    let sweep = RegionSweep { net: net.clone(), conv, kind: SweepKind::Grid { candidates: all, total } };
    Ok(sweep.iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HullMode {
    Pareto,
    Hull,
}

/// Pareto filtering or the extreme points of the time-sharing hull.
///
/// In hull mode the points are joined with their projections onto the
/// axes and the origin before taking the convex hull; this is done for two
/// users, while higher dimensions fall back to Pareto filtering.
pub fn pareto_hull(points: &[Vec<f64>], mode: HullMode) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no rate points".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("rate points of unequal length".into()));
    }
    if mode == HullMode::Hull && dim == 2 {
        return Ok(hull_2d(points));
    }
    let mut front: Vec<(u64, Vec<f64>)> = Vec::new();
    for (k, p) in points.iter().enumerate() {
        front_insert(&mut front, k as u64, p);
    }
    front.sort_by_key(|(k, _)| *k);
    Ok(front.into_iter().map(|(_, p)| p).collect())
}

fn cross(o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise extreme points (monotone chain), collinear points
/// dropped, starting from the lowest-leftmost point.
fn hull_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    for p in points {
        pts.push([p[0], p[1]]);
        pts.push([p[0], 0.0]);
        pts.push([0.0, p[1]]);
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts.into_iter().map(|p| p.to_vec()).collect();
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull.into_iter().map(|p| p.to_vec()).collect()
}

/// Random orthonormal basis of `R^dims` (Gram–Schmidt on uniform draws).
fn random_basis(rng: &mut ChaCha8Rng, dims: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dims);
    while basis.len() < dims {
        let mut v: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Maximizes `f` from `x` by polling `±step` along a freshly rotated
/// orthonormal basis each round. The step doubles on success and halves
/// after eight failed rotations; rotating the poll set lets it climb
/// ridges where `f` has a kink that no fixed direction set can follow.
fn pattern_search(f: impl Fn(&[f64]) -> f64, mut x: Vec<f64>, mut best: f64, step0: f64, seed: u64) -> (f64, Vec<f64>) {
    let dims = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut step = step0;
    let mut evals = 0usize;
    let mut misses = 0;
    while dims > 0 && step > 1e-12 && evals < 200_000 {
        let mut improved = false;
        'poll: for b in random_basis(&mut rng, dims) {
            for sign in [1.0, -1.0] {
                let y: Vec<f64> = x.iter().zip(&b).map(|(xi, bi)| xi + sign * step * bi).collect();
                let v = f(&y);
                evals += 1;
                if v > best {
                    best = v;
                    x = y;
                    improved = true;
                    break 'poll;
                }
            }
        }
        if improved {
            misses = 0;
            step = (2.0 * step).min(4.0 * step0);
        } else {
            misses += 1;
            if misses == 8 {
                misses = 0;
                step *= 0.5;
            }
        }
    }
    (best, x)
}

/// Best beamforming signal `|target†γ|²` over `‖γ‖² ≤ P` and upper caps
/// `|c_k†γ|² ≤ b_k`, found by sweeping the spherical parametrization of the
/// reduced block and refining the best grid points by pattern search.
///
/// Infeasible directions are pulled back by scaling the reduced block until
/// every cap holds, which keeps the swept objective continuous.
pub fn best_capped_beamformer(target: &CVector, caps: &[(CVector, f64)], p: f64, resolution: usize) -> Result<(f64, CVector)> {
    if resolution < 2 {
        return Err(Error::InvalidInput("resolution must be at least 2".into()));
    }
    if caps.iter().any(|(_, b)| !(*b >= 0.0)) {
        return Err(Error::InvalidInput("cap bounds must be >= 0".into()));
    }
    let vectors: Vec<CVector> = caps.iter().map(|(c, _)| c.clone()).collect();
    let frame = reduce_interference_frame(target, &vectors)?;
    let complex = !target.is_real() || vectors.iter().any(|c| !c.is_real());
    let n = frame.mbar();
    let phases = if complex { n.saturating_sub(1) } else { 0 };
    let dims = n + phases;

    let evaluate = |flat: &[f64]| -> (f64, CVector) {
        let mut omega = vec![0.0; n];
        if phases > 0 {
            omega[1..1 + phases].copy_from_slice(&flat[n..]);
        }
        let params = SphericalParams { psi: flat[..n].to_vec(), omega };
        let mut u = spherical_vector(&params).scale_real(p.sqrt());
        let mut s: f64 = 1.0;
        for ((_, b), c) in caps.iter().zip(frame.hj_low()) {
            let level = c.dot(&u).norm_sqr();
            if level > *b {
                s = s.min((b / level).sqrt());
            }
        }
        u = u.scale_real(s);
        let head = frame.h_low().dot(&u).norm();
        let tail = frame.h_hat().norm() * (p - u.norm_sqr()).max(0.0).sqrt();
        ((head + tail).powi(2), u)
    };

    let mut axes = vec![psi_grid(resolution); n];
    axes.extend(std::iter::repeat(omega_grid(resolution)).take(phases));
    let grid = mixed_product(&axes);
    let values: Vec<f64> = grid.par_iter().map(|f| evaluate(f).0).collect();

    // Refine the best grid-local maxima; the cap repair can create several
    // basins, so the top grid points alone may all sit in the wrong one.
    let strides: Vec<usize> = (0..dims).map(|a| resolution.pow((dims - 1 - a) as u32)).collect();
    let is_peak = |k: usize| {
        (0..dims).all(|a| {
            let digit = (k / strides[a]) % resolution;
            [-1i64, 1].iter().all(|&d| {
                let mut nd = digit as i64 + d;
                if a >= n {
                    nd = nd.rem_euclid(resolution as i64);
                } else if nd < 0 || nd >= resolution as i64 {
                    return true;
                }
                let nb = k - digit * strides[a] + nd as usize * strides[a];
                values[nb] <= values[k]
            })
        })
    };
    let mut peaks: Vec<(f64, usize)> =
        (0..values.len()).into_par_iter().filter(|&k| is_peak(k)).map(|k| (values[k], k)).collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let spacing = PI / (resolution - 1) as f64;
    let refined: Vec<(f64, Vec<f64>)> = peaks
        .iter()
        .take(16)
        .enumerate()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(rank, &(v0, k))| pattern_search(|x| evaluate(x).0, grid[k].clone(), v0, spacing, rank as u64))
        .collect();
    let (_, x) = refined
        .into_iter()
        .fold(None, |acc: Option<(f64, Vec<f64>)>, (v, x)| match acc {
            Some((b, bx)) if b >= v => Some((b, bx)),
            _ => Some((v, x)),
        })
        .unwrap_or((0.0, vec![0.0; dims]));
    let (value, u) = evaluate(&x);
    let gamma = lift_scaled(&frame, &u, p);
    Ok((value, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogBase;
    use crate::numlin::C64;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn real(v: &[f64]) -> CVector {
        CVector::from_real(v)
    }

    /// Columns of `H_j` are `h_j1, h_j2, h_j3`.
    fn three_user_network() -> MisoNetwork {
        let h1 = [[-2.1, 0.0, 0.5], [0.1, 0.2, 0.1], [1.5, 0.9, 0.3], [0.1, 0.2, -1.0], [0.2, 0.8, -0.9]];
        let h2 = [[0.0, 2.7, -0.5], [0.4, 0.4, 0.2], [-0.9, -1.3, -0.6], [0.8, 0.4, 0.0], [0.1, 0.5, 0.4]];
        let h3 = [[1.2, 0.0, 1.0], [0.8, 0.9, -1.7], [-2.6, 0.8, -1.0], [0.3, 1.3, 0.7], [0.8, 1.2, -1.0]];
        let col = |h: &[[f64; 3]; 5], k: usize| real(&h.iter().map(|r| r[k]).collect::<Vec<_>>());
        let channels = [h1, h2, h3].iter().map(|h| (0..3).map(|k| col(h, k)).collect()).collect();
        MisoNetwork::new(channels, vec![1.0, 1.5, 2.0], Field::Real).unwrap()
    }

    fn nats_unit() -> RateConvention {
        RateConvention { base: LogBase::E, prefactor: 1.0 }
    }

    #[test]
    fn zf_triple_and_nulls() {
        let net = three_user_network();
        let zf = zf_point(&net, nats_unit()).unwrap();
        assert_abs_diff_eq!(zf.rates[0], 1.8118, epsilon = 1e-3);
        assert_abs_diff_eq!(zf.rates[1], 2.2998, epsilon = 1e-3);
        assert_abs_diff_eq!(zf.rates[2], 2.3077, epsilon = 1e-3);
        for j in 0..3 {
            for i in 0..3 {
                if i != j {
                    assert!(zf.interference[j][i] <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn zf_is_dominated_by_a_swept_point() {
        // A witness found by direct search over the six angles; ψ values
        // are taken mod π (global sign).
        let net = three_user_network();
        let conv = nats_unit();
        let zf = zf_point(&net, conv).unwrap();
        let raw: [f64; 6] = [3.39021834, 0.04403394, 2.98207786, 2.88471256, 3.11885045, 0.12570657];
        let params: Vec<SphericalParams> = (0..3)
            .map(|u| SphericalParams::new(vec![raw[2 * u].rem_euclid(PI), raw[2 * u + 1]], vec![0.0; 2]).unwrap())
            .collect();
        let beams: Vec<CVector> =
            (0..3).map(|u| UserFrame::natural(&net, u).unwrap().beam(&params[u])).collect();
        let s = RegionSample::from_beams(&net, params, beams, conv).unwrap();
        for i in 0..3 {
            assert!(s.rates[i] > zf.rates[i] + 0.1, "user {i}: {} vs {}", s.rates[i], zf.rates[i]);
        }
    }

    #[test]
    fn grid_sweep_consistency() {
        let net = three_user_network();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let sweep = three_user_region(&net, Sampler::Grid { points: 3 }, conv).unwrap();
        assert_eq!(sweep.len(), 9 * 9 * 9);
        let samples: Vec<RegionSample> = sweep.iter().collect();
        assert_eq!(samples.len(), 729);
        let generic: Vec<RegionSample> = m_user_region(&net, Sampler::Grid { points: 3 }, conv).unwrap().iter().collect();
        assert_eq!(samples, generic);
        for s in &samples {
            let r = net.rates(&s.beamformers, conv).unwrap();
            for (a, b) in r.iter().zip(&s.rates) {
                assert!((a - b).abs() <= 1e-10);
            }
            for (u, g) in s.beamformers.iter().enumerate() {
                assert!(g.norm_sqr() <= net.power(u) + 1e-12);
            }
        }
        // Rows come out in lexicographic parameter order.
        for w in samples.windows(2) {
            assert_ne!(compare_params(&w[0], &w[1]), Ordering::Greater);
        }
        assert_eq!(samples[0].rates, zf_point(&net, conv).unwrap().rates);
        assert!(three_user_region(&MisoNetwork::new(vec![vec![real(&[1.0]); 2]; 2], vec![1.0; 2], Field::Real).unwrap(), Sampler::Grid { points: 2 }, conv).is_err());
    }

    #[test]
    fn random_sweep_is_deterministic() {
        let net = three_user_network();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let sampler = Sampler::Random { seed: 42, count: 10_000 };
        let a: Vec<RegionSample> = m_user_region(&net, sampler, conv).unwrap().iter().collect();
        let b: Vec<RegionSample> = m_user_region(&net, sampler, conv).unwrap().iter().collect();
        assert_eq!(a.len(), 10_000);
        assert_eq!(a, b);
        let front = m_user_region(&net, sampler, conv).unwrap().pareto_front();
        for f in &front {
            assert!(a.iter().all(|s| !crate::model::dominates(&s.rates, &f.rates)));
        }
        let c: Vec<RegionSample> = m_user_region(&net, Sampler::Random { seed: 43, count: 100 }, conv).unwrap().iter().collect();
        assert_ne!(a[..100], c[..]);
    }

    #[test]
    fn silent_users_collapse() {
        let net = three_user_network();
        let zero = MisoNetwork::new(net.channels().to_vec(), vec![0.0; 3], Field::Real).unwrap();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let samples: Vec<RegionSample> = m_user_region(&zero, Sampler::Grid { points: 5 }, conv).unwrap().iter().collect();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].rates, vec![0.0; 3]);
    }

    #[test]
    fn two_user_grid_front_matches_closed_form_region() {
        use crate::twouser::{two_user_region, TwoUserChannel};
        // θ = π/3 on both links makes π/2 − θ = 120·π/720, so the spherical
        // grid with 721 points contains the closed-form grid with 121.
        let theta = PI / 3.0;
        let ph = |a: f64| C64::from_polar(1.0, a);
        let d = CVector::new(vec![ph(0.3), C64::new(0.0, 0.0)]);
        let c = CVector::new(vec![ph(1.1) * theta.cos(), ph(-0.4) * theta.sin()]).scale_real(0.8);
        let d2 = CVector::new(vec![C64::new(0.0, 0.0), ph(2.0)]);
        let c2 = CVector::new(vec![ph(0.7) * theta.sin(), ph(-2.2) * theta.cos()]).scale_real(0.6);
        let ch = TwoUserChannel::new(d, c2, c, d2, 2.0, 3.0, Field::Complex).unwrap();
        assert_abs_diff_eq!(ch.theta1(), theta, epsilon = 1e-12);
        assert_abs_diff_eq!(ch.theta2(), theta, epsilon = 1e-12);
        let conv = RateConvention::bits_complex();
        let net = ch.to_network().unwrap();
        let front: Vec<Vec<f64>> =
            m_user_region(&net, Sampler::Grid { points: 721 }, conv).unwrap().pareto_front().into_iter().map(|s| s.rates).collect();
        let closed: Vec<Vec<f64>> = two_user_region(&ch, 121, 121, conv).unwrap().into_iter().map(|s| s.rates).collect();
        let closed_front = pareto_hull(&closed, HullMode::Pareto).unwrap();
        // Mirror angles ψ and π − ψ give the same rates up to rounding, so
        // match points with a tolerance instead of comparing lists.
        let near = |a: &[f64], set: &[Vec<f64>]| set.iter().any(|b| (a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9);
        assert!(front.iter().all(|a| near(a, &closed_front)));
        assert!(closed_front.iter().all(|a| near(a, &front)));
    }

    #[test]
    fn max_surface_keeps_user_at_maximum() {
        let net = three_user_network();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let surface = single_user_max_surface(&net, 0, 2, conv).unwrap();
        assert_eq!(surface.len(), 4);
        let expected = 0.5 * (net.power(0) * net.channel(0, 0).norm_sqr()).ln_1p() / std::f64::consts::LN_2;
        for s in &surface {
            assert_abs_diff_eq!(s.rates[0], expected, epsilon = 1e-10);
        }
        for user in 0..3 {
            let surf = single_user_max_surface(&net, user, 7, conv).unwrap();
            let top = conv.rate(net.power(user) * net.channel(user, user).norm_sqr());
            assert_eq!(surf.len(), 49);
            assert!(surf.iter().all(|s| (s.rates[user] - top).abs() <= 1e-10));
        }
    }

    #[test]
    fn max_surface_pins_reference_angles_for_real_channels() {
        use crate::mreduce::{real_angle, theta_hat};
        let net = three_user_network();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let s = &single_user_max_surface(&net, 0, 2, conv).unwrap()[0];
        let (h0, h1, h2) = (net.channel(0, 0), net.channel(0, 1), net.channel(0, 2));
        let t01 = real_angle(h0, h1);
        let th = theta_hat(t01, real_angle(h1, h2), real_angle(h0, h2));
        // Same reduced beam as the pinned angles (π/2 − θ01, π/2 − θ̂), up to sign.
        let half = std::f64::consts::FRAC_PI_2;
        let pinned = spherical_vector(&SphericalParams::new(vec![half - t01, half - th], vec![0.0; 2]).unwrap());
        let ours = spherical_vector(&s.params[0]);
        let sign = if pinned.dot(&ours).re < 0.0 { -1.0 } else { 1.0 };
        assert!(pinned.sub(&ours.scale_real(sign)).norm() < 1e-9);
    }

    #[test]
    fn orthogonal_surface_is_a_full_face() {
        let e = |k: usize| {
            let mut v = vec![0.0; 3];
            v[k] = 1.0;
            real(&v)
        };
        let channels = (0..3).map(|j| (0..3).map(|i| if i == j { e(j) } else { e((j + 1) % 3).scale_real(0.0) }).collect()).collect();
        let net = MisoNetwork::new(channels, vec![1.0, 1.0, 1.0], Field::Real).unwrap();
        let conv = RateConvention::for_field(Field::Real, LogBase::Two);
        let surface = single_user_max_surface(&net, 0, 5, conv).unwrap();
        let top = conv.rate(1.0);
        let corner = surface.iter().filter(|s| s.rates.iter().all(|r| (r - top).abs() < 1e-12)).count();
        assert!(corner >= 1);
    }

    #[test]
    fn pareto_and_hull_examples() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.4, 0.4]];
        assert_eq!(pareto_hull(&pts, HullMode::Pareto).unwrap(), pts);
        let hull = pareto_hull(&pts, HullMode::Hull).unwrap();
        assert_eq!(hull.len(), 3);
        for p in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] {
            assert!(hull.contains(&p.to_vec()));
        }
        let seg = vec![vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]];
        let hull = pareto_hull(&seg, HullMode::Hull).unwrap();
        assert!(!hull.contains(&vec![1.0, 1.0]));
        assert!(pareto_hull(&[], HullMode::Pareto).is_err());
    }

    #[test]
    fn hull_contains_tetragon_vertices_for_large_cross_gain() {
        use crate::twouser::{two_user_region, TwoUserChannel};
        let theta = PI / 3.0;
        let sigma = 30.0;
        let d = real(&[1.0, 0.0]);
        let c = real(&[sigma * theta.cos(), sigma * theta.sin()]);
        let ch = TwoUserChannel::new(d.clone(), c.clone(), c, d, 6.0, 6.0, Field::Complex).unwrap();
        let conv = RateConvention::bits_complex();
        let pts: Vec<Vec<f64>> = two_user_region(&ch, 61, 61, conv).unwrap().into_iter().map(|s| s.rates).collect();
        let hull = pareto_hull(&pts, HullMode::Hull).unwrap();
        let m = vec![7f64.log2(), 0.0];
        let n = vec![0.0, 7f64.log2()];
        let zf = crate::twouser::zf_rates(&ch, conv);
        let a = vec![zf.r1, zf.r2];
        for v in [&m, &n, &a] {
            assert!(hull.iter().any(|h| (h[0] - v[0]).abs() < 1e-9 && (h[1] - v[1]).abs() < 1e-9), "{v:?} not in {hull:?}");
        }
    }

    #[test]
    fn capped_sweep_without_caps_is_matched_filter() {
        let h = CVector::new(vec![C64::new(1.0, 0.5), C64::new(-0.3, 0.2)]);
        let (v, g) = best_capped_beamformer(&h, &[], 2.0, 5).unwrap();
        assert_abs_diff_eq!(v, 2.0 * h.norm_sqr(), epsilon = 1e-12);
        assert_abs_diff_eq!(h.dot(&g).norm_sqr(), v, epsilon = 1e-12);
    }

    #[test]
    fn capped_sweep_matches_two_user_closed_form() {
        use crate::twouser::{channel_angle, max_signal_given_interference};
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.gen_range(2..=4);
            let cv = |rng: &mut ChaCha8Rng| CVector::new((0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
            let h = cv(&mut rng);
            let c = cv(&mut rng);
            let p = rng.gen_range(0.5..3.0);
            let cap = rng.gen_range(0.0..1.0) * p * c.norm_sqr();
            let (v, g) = best_capped_beamformer(&h, &[(c.clone(), cap)], p, 31).unwrap();
            assert!(c.dot(&g).norm_sqr() <= cap + 1e-9);
            // Best over z ∈ [0, √cap]: the closed form at the smaller of the
            // cap and the unconstrained optimum's interference.
            let theta = channel_angle(&h, &c);
            let z_free = p.sqrt() * c.norm() * theta.cos();
            let (_, expected) = max_signal_given_interference(&h, &c, p, cap.sqrt().min(z_free)).unwrap();
            assert!((v - expected).abs() <= 1e-8 * expected.max(1.0), "{v} vs {expected}");
        }
    }
}
