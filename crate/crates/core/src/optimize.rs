//! Choosing window size W and ACK frequency N from a throughput-loss budget.
//!
//! The budget `e0` is split into a feedback part `e1` and a wasteful
//! retransmission part `e2 = e0 - e1`; `e1` is split again into a header
//! share, which fixes N, and a bitmap share. W is then bounded from above by
//! the feedback budget and searched downward by simulation at the worst
//! link probability of interest.

use rayon::prelude::*;
use thiserror::Error;

use crate::atom::AtomSpec;
use crate::sim::{run, AckMode, Coupling, SimConfig, SimError, Tracking};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("budget needs 0 < e1_header < e1 < e0 < 1, got e0={e0}, e1={e1}, e1_header={e1_header}")]
    BadBudget { e0: f64, e1: f64, e1_header: f64 },
    #[error("feedback budget e1={e1} cannot pay for N={n}, K={k}, D={d}: W bound {bound} <= 0")]
    Infeasible { e1: f64, n: u32, k: u32, d: u32, bound: f64 },
    #[error("simulation budget too small: CI half-width {ci95:.4} exceeds the e2 budget share {limit:.4}")]
    CiTooWide { ci95: f64, limit: f64 },
    #[error("search step must be positive")]
    ZeroStep,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadBudget {
    /// Total tolerated throughput loss.
    pub e0: f64,
    /// Feedback share of `e0`.
    pub e1: f64,
    /// Header share of `e1`; the rest pays for the bitmap.
    pub e1_header: f64,
}

impl Default for OverheadBudget {
    fn default() -> Self {
        Self {
            e0: 0.05,
            e1: 0.025,
            e1_header: 0.0125,
        }
    }
}

impl OverheadBudget {
    pub fn new(e0: f64, e1: f64, e1_header: f64) -> Result<Self, OptimizeError> {
        let b = Self { e0, e1, e1_header };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), OptimizeError> {
        let ok = 0.0 < self.e1_header && self.e1_header < self.e1 && self.e1 < self.e0 && self.e0 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(OptimizeError::BadBudget {
                e0: self.e0,
                e1: self.e1,
                e1_header: self.e1_header,
            })
        }
    }

    pub fn e1_bitmap(&self) -> f64 {
        self.e1 - self.e1_header
    }

    pub fn e2(&self) -> f64 {
        self.e0 - self.e1
    }
}

/// Average feedback overhead: `(K + W/8) / ((N/p^2) D)`.
pub fn overhead_e1(w: usize, n: u32, k: u32, d: u32, p: f64) -> f64 {
    (k as f64 + w as f64 / 8.0) / (n as f64 / (p * p) * d as f64)
}

/// Smallest N whose header cost `K / (N D)` fits in `e1_header`.
pub fn pick_n(e1_header: f64, k: u32, d: u32) -> u32 {
    let exact = k as f64 / (e1_header * d as f64);
    // Guard against 4.000000000001 style rounding.
    (exact - 1e-9).ceil().max(1.0) as u32
}

/// Largest W keeping the feedback overhead at `p = 1` within `e1`:
/// `floor(8 e1 N D - 8 K)`.
pub fn w_upper_bound(e1: f64, n: u32, k: u32, d: u32) -> Result<usize, OptimizeError> {
    let bound = 8.0 * e1 * n as f64 * d as f64 - 8.0 * k as f64;
    let w = (bound + 1e-9).floor();
    if w < 1.0 {
        return Err(OptimizeError::Infeasible { e1, n, k, d, bound });
    }
    Ok(w as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub budget: OverheadBudget,
    pub k: u32,
    pub d: u32,
    /// Homogeneous link probability used for the search.
    pub p_floor: f64,
    pub step: usize,
    pub refine_step: usize,
    pub rounds: u64,
    pub warmup: u64,
    /// Every W is simulated with this seed (common random numbers).
    pub seed: u64,
    pub tracking: Tracking,
    /// Fix N explicitly instead of deriving it from the header budget.
    pub n_override: Option<u32>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            budget: OverheadBudget::default(),
            k: 30,
            d: 600,
            p_floor: 0.57,
            step: 10,
            refine_step: 2,
            rounds: 200_000,
            warmup: 10_000,
            seed: 1,
            tracking: Tracking::Single,
            n_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub w: usize,
    pub throughput: f64,
    pub ci95: f64,
    pub wasteful_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub w: usize,
    pub n: u32,
    pub w_max: usize,
    /// Realistic throughput per round at `(w, n)` and `p_floor`.
    pub throughput: f64,
    pub ci95: f64,
    /// Idealized throughput per round at `p_floor`, the reference for
    /// degradation.
    pub benchmark: f64,
    pub degradation: f64,
    /// Feedback overhead of the chosen point at `p = 1`.
    pub e1_at_p1: f64,
    /// Every simulated point, coarse pass then refinement, in W order.
    pub sweep: Vec<SweepPoint>,
}

fn realistic(atom: &AtomSpec, opts: &OptimizeOptions, w: usize, n: u32) -> SimConfig {
    SimConfig {
        mode: AckMode::Realistic,
        coupling: Coupling::NonCoupled,
        tracking: opts.tracking,
        w,
        n,
        k: opts.k,
        d: opts.d,
        seed: opts.seed,
        rounds: opts.rounds,
        warmup: opts.warmup,
        ..SimConfig::new(atom.clone())
    }
}

fn simulate(atom: &AtomSpec, opts: &OptimizeOptions, ws: &[usize], n: u32) -> Result<Vec<SweepPoint>, OptimizeError> {
    ws.par_iter()
        .map(|&w| {
            let st = run(&realistic(atom, opts, w, n))?;
            Ok(SweepPoint {
                w,
                throughput: st.throughput_per_round,
                ci95: st.ci95,
                wasteful_fraction: st.wasteful_fraction(),
            })
        })
        .collect()
}

/// Walks `points` (ordered by decreasing W) and returns the index of the
/// running maximum at the moment throughput falls more than one CI
/// half-width below it, or the overall maximum if it never does.
fn stop_index(points: &[SweepPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.throughput > points[best].throughput {
            best = i;
        } else if p.throughput < points[best].throughput - points[best].ci95.max(p.ci95) {
            break;
        }
    }
    best
}

/// Runs the budget-driven search on `atom` with every link set to
/// `opts.p_floor`.
pub fn optimize(atom: &AtomSpec, opts: &OptimizeOptions) -> Result<OptimizeResult, OptimizeError> {
    opts.budget.check()?;
    if opts.step == 0 || opts.refine_step == 0 {
        return Err(OptimizeError::ZeroStep);
    }
    let atom = atom
        .with_uniform_lsp(opts.p_floor)
        .map_err(|_| SimError::InvalidAtom(Vec::new()))?;
    let n = opts.n_override.unwrap_or_else(|| pick_n(opts.budget.e1_header, opts.k, opts.d));
    let w_max = w_upper_bound(opts.budget.e1, n, opts.k, opts.d)?;

    let coarse: Vec<usize> = std::iter::successors(Some(w_max), |w| w.checked_sub(opts.step).filter(|w| *w >= 1)).collect();
    let coarse_pts = simulate(&atom, opts, &coarse, n)?;
    let top = &coarse_pts[0];
    let limit = opts.budget.e2() * top.throughput;
    if top.ci95 > limit {
        return Err(OptimizeError::CiTooWide { ci95: top.ci95, limit });
    }
    let best = coarse_pts[stop_index(&coarse_pts)].w;

    let lo = best.saturating_sub(opts.step).max(1);
    let hi = (best + opts.step).min(w_max);
    let fine: Vec<usize> = (lo..=hi)
        .rev()
        .step_by(opts.refine_step)
        .filter(|w| !coarse.contains(w))
        .collect();
    let mut sweep = coarse_pts;
    sweep.extend(simulate(&atom, opts, &fine, n)?);
    sweep.sort_by_key(|p| std::cmp::Reverse(p.w));
    let window: Vec<SweepPoint> = sweep.iter().copied().filter(|p| p.w >= lo && p.w <= hi).collect();
    let chosen = window
        .iter()
        .copied()
        .max_by(|a, b| a.throughput.total_cmp(&b.throughput))
        .unwrap_or(sweep[0]);

    let bench_cfg = SimConfig {
        mode: AckMode::Idealized,
        w: 1,
        n: 1,
        ..realistic(&atom, opts, 1, 1)
    };
    let benchmark = run(&bench_cfg)?.throughput_per_round;
    sweep.sort_by_key(|p| p.w);
    Ok(OptimizeResult {
        w: chosen.w,
        n,
        w_max,
        throughput: chosen.throughput,
        ci95: chosen.ci95,
        benchmark,
        degradation: crate::sim::degradation(chosen.throughput, benchmark),
        e1_at_p1: overhead_e1(chosen.w, n, opts.k, opts.d, 1.0),
        sweep,
    })
}
