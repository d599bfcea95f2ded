//! User allocation algorithms.
//!
//! - `direct`: LISA-style greedy ZF on the direct channel only.
//! - `random`: the same greedy ZF on the composite channel with random phases.
//! - `greedy`: Greedy-RIS-LISA, users added one by one with the relaxed
//!   metric until the relaxed sum-SE stops improving.
//! - `addone`: AddOne-RIS-LISA, which only inspects allocations with `i_D`
//!   and `i_D + 1` users, `i_D` being the size of the direct allocation.
//!
//! Every RIS algorithm ends with the unit-modulus refinement; the relaxed
//! evaluator only steers the allocation and never produces the reported SE.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::numerics::{self, hermitian_condition, hermitian_evd, inverse, CMat, CVec, C64};
use crate::phase_opt::{
    evaluate_allocation, finalize_phases, relaxed_metric, singular_relaxed_metric, waterfill,
    EvalOptions, Evaluation, FinalizeOptions, Finalized,
};
use crate::zf_core::{
    composite_all, gram_gains, select_rows, sum_se, Allocation, PowerAllocation, SubspaceCache,
    ZF_RANK_TOL,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Direct,
    Random,
    Greedy,
    AddOne,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Direct,
        Algorithm::Random,
        Algorithm::Greedy,
        Algorithm::AddOne,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Direct => "direct",
            Algorithm::Random => "random",
            Algorithm::Greedy => "greedy",
            Algorithm::AddOne => "addone",
        }
    }

    pub fn uses_ris(self) -> bool {
        !matches!(self, Algorithm::Direct)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoOptions {
    pub eval: EvalOptions,
    pub finalize: FinalizeOptions,
    /// Score AddOne's two candidates at full dimension instead of in the subspace.
    pub addone_explicit: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Users proposed by the selection metric.
    pub selections: usize,
    /// Relaxed allocation evaluations.
    pub evaluations: usize,
    /// Alternating-optimization iterations over all evaluations.
    pub eval_iterations: usize,
    pub finalize_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    /// Allocated users in allocation order.
    pub allocation: Vec<usize>,
    /// Size of the direct-channel allocation, where one was computed.
    pub i_direct: Option<usize>,
    /// RIS phases; `None` for the direct baseline.
    pub theta: Option<CVec>,
    pub power: PowerAllocation,
    pub se: f64,
    pub diagnostics: Diagnostics,
}

/// A realization together with its per-realization subspace data.
#[derive(Debug, Clone)]
pub struct Instance {
    pub realization: ChannelRealization,
    pub cache: SubspaceCache,
}

impl Instance {
    pub fn new(realization: ChannelRealization) -> Result<Self> {
        let cache = SubspaceCache::new(&realization)?;
        Ok(Self { realization, cache })
    }
}

/// Relaxed selection metric of extending `allocation` by one user:
/// `tr(C^-1) - lambda_max(A)`, or its rank-deficient counterpart once the
/// extended allocation fills all BS antennas. Returns the lowest-metric
/// candidate, ties going to the lower index.
pub fn select_next_user(
    allocation: &Allocation,
    cache: &SubspaceCache,
    candidates: &[usize],
) -> Result<(usize, f64)> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, f64)> = None;
    for &k in &sorted {
        if allocation.contains(k) {
            return Err(Error::Domain(format!("candidate {k} is already allocated")));
        }
        let Ok(ext) = allocation.extended(cache, k) else {
            continue;
        };
        let metric = if ext.singular {
            singular_relaxed_metric(&ext.c_mat, &ext.r_block, &vec![1.0; ext.len()], cache.n_ris)
        } else {
            relaxed_metric(&ext.c_mat, &ext.rr, cache.n_ris).map(|(m, _)| m)
        }
        .unwrap_or(f64::INFINITY);
        if metric.is_finite() && best.is_none_or(|(_, b)| metric < b) {
            best = Some((k, metric));
        }
    }
    best.ok_or(Error::SelectionFailed)
}

fn unallocated(allocation: &Allocation, k: usize) -> Vec<usize> {
    (0..k).filter(|u| !allocation.contains(*u)).collect()
}

/// Greedy ZF allocation over the rows of `h` with waterfilling: add the user
/// minimizing `||H^+||_F^2` while the sum-SE strictly improves.
#[derive(Debug, Clone)]
pub struct LisaOutcome {
    pub order: Vec<usize>,
    pub power: PowerAllocation,
    pub se: f64,
}

pub fn lisa(h: &CMat, ptx: f64) -> Result<LisaOutcome> {
    let (k, nb) = h.shape();
    let mut order: Vec<usize> = Vec::new();
    let mut best = LisaOutcome {
        order: Vec::new(),
        power: PowerAllocation {
            gains: Vec::new(),
            powers: Vec::new(),
            ptx,
        },
        se: 0.0,
    };
    while order.len() < k.min(nb) {
        let mut pick: Option<(usize, f64)> = None;
        for u in (0..k).filter(|u| !order.contains(u)) {
            let mut trial = order.clone();
            trial.push(u);
            let metric = frob_pinv_sq(&select_rows(h, &trial)).unwrap_or(f64::INFINITY);
            if metric.is_finite() && pick.is_none_or(|(_, m)| metric < m) {
                pick = Some((u, metric));
            }
        }
        let Some((u, _)) = pick else { break };
        let mut trial = order.clone();
        trial.push(u);
        let gains = gram_gains(&select_rows(h, &trial))?;
        let powers = waterfill(&gains, ptx);
        let power = PowerAllocation { gains, powers, ptx };
        let se = sum_se(&power)?;
        if se > best.se {
            order = trial;
            best = LisaOutcome {
                order: order.clone(),
                power,
                se,
            };
        } else {
            break;
        }
    }
    Ok(best)
}

/// `||H^+||_F^2 = tr((H H^H)^-1)` for full-row-rank `H`.
fn frob_pinv_sq(h: &CMat) -> Result<f64> {
    let g = numerics::mul(h, &h.adjoint());
    let cond = hermitian_condition(&hermitian_evd(&g)?);
    if cond > 1.0 / (ZF_RANK_TOL * ZF_RANK_TOL) {
        return Err(Error::Rank(format!("Gram condition number {cond:.3e}")));
    }
    Ok(numerics::trace_re(&inverse(&g)?))
}

fn from_lisa(algorithm: Algorithm, out: LisaOutcome, theta: Option<CVec>) -> AlgorithmResult {
    let i_direct = matches!(algorithm, Algorithm::Direct).then_some(out.order.len());
    AlgorithmResult {
        algorithm,
        allocation: out.order,
        i_direct,
        theta,
        power: out.power,
        se: out.se,
        diagnostics: Diagnostics::default(),
    }
}

/// Direct-channel baseline.
pub fn lisa_direct(realization: &ChannelRealization, ptx: f64) -> Result<AlgorithmResult> {
    Ok(from_lisa(
        Algorithm::Direct,
        lisa(&realization.h_direct, ptx)?,
        None,
    ))
}

/// Uniform random phases from `seed`, then LISA on the composite channel.
pub fn random_phases(n_ris: usize, seed: u64) -> CVec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CVec::from_fn(n_ris, |_, _| {
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.random::<f64>())
    })
}

pub fn random_phase_baseline(
    realization: &ChannelRealization,
    ptx: f64,
    seed: u64,
) -> Result<AlgorithmResult> {
    let theta = random_phases(realization.n_ris(), seed);
    let h = composite_all(realization, &theta)?;
    Ok(from_lisa(Algorithm::Random, lisa(&h, ptx)?, Some(theta)))
}

/// With a silent RIS every phase is equivalent; the direct baseline is
/// reported with all-ones phases.
fn dead_ris_result(inst: &Instance, algorithm: Algorithm, ptx: f64) -> Result<AlgorithmResult> {
    let mut out = lisa_direct(&inst.realization, ptx)?;
    out.algorithm = algorithm;
    out.theta = Some(CVec::from_element(inst.cache.n_ris, C64::new(1.0, 0.0)));
    Ok(out)
}

fn from_finalized(
    algorithm: Algorithm,
    fin: Finalized,
    i_direct: Option<usize>,
    diagnostics: Diagnostics,
) -> AlgorithmResult {
    AlgorithmResult {
        algorithm,
        allocation: fin.allocation.order,
        i_direct,
        theta: Some(fin.theta),
        power: fin.power,
        se: fin.se,
        diagnostics: Diagnostics {
            finalize_iterations: fin.iterations,
            ..diagnostics
        },
    }
}

/// Greedy-RIS-LISA.
pub fn greedy_ris_lisa(inst: &Instance, ptx: f64, opts: &AlgoOptions) -> Result<AlgorithmResult> {
    let cache = &inst.cache;
    if cache.ris_is_dead() {
        return dead_ris_result(inst, Algorithm::Greedy, ptx);
    }
    let k = cache.n_users();
    let limit = k.min(cache.n_bs);
    let mut diag = Diagnostics::default();
    let mut alloc = Allocation::new(cache, Vec::new())?;
    let mut best: Option<Evaluation> = None;
    while alloc.len() < limit {
        let candidates = unallocated(&alloc, k);
        let (user, _) = match select_next_user(&alloc, cache, &candidates) {
            Ok(pick) => pick,
            Err(Error::SelectionFailed) => break,
            Err(e) => return Err(e),
        };
        diag.selections += 1;
        let ext = alloc.extended(cache, user)?;
        let ev = match evaluate_allocation(&ext, cache, ptx, &opts.eval) {
            Ok(ev) => ev,
            Err(Error::Degenerate(_)) => break,
            Err(e) => return Err(e),
        };
        diag.evaluations += 1;
        diag.eval_iterations += ev.state.iteration;
        if best.as_ref().is_some_and(|b| ev.se <= b.se) {
            break;
        }
        alloc = ev.allocation.clone();
        best = Some(ev);
    }
    let Some(best) = best else {
        return dead_ris_result(inst, Algorithm::Greedy, ptx);
    };
    let fin = finalize_phases(&best, cache, ptx, &opts.finalize)?;
    Ok(from_finalized(Algorithm::Greedy, fin, None, diag))
}

/// AddOne-RIS-LISA.
///
/// Candidate A drops the last user of the direct allocation and lets the
/// RIS-aware metric pick a replacement; candidate B adds one RIS-aware user
/// on top of the direct allocation. The better of the two is refined.
pub fn add_one_ris_lisa(inst: &Instance, ptx: f64, opts: &AlgoOptions) -> Result<AlgorithmResult> {
    let cache = &inst.cache;
    if cache.ris_is_dead() {
        return dead_ris_result(inst, Algorithm::AddOne, ptx);
    }
    let k = cache.n_users();
    let direct = lisa(&inst.realization.h_direct, ptx)?;
    let i_d = direct.order.len();
    let mut diag = Diagnostics::default();

    let mut bases = Vec::new();
    if i_d == 0 {
        bases.push(Allocation::new(cache, Vec::new())?);
    } else {
        bases.push(Allocation::new(cache, direct.order[..i_d - 1].to_vec())?);
        if i_d < k.min(cache.n_bs) {
            bases.push(Allocation::new(cache, direct.order.clone())?);
        }
    }

    let mut candidates = Vec::new();
    for base in &bases {
        let pool = unallocated(base, k);
        if pool.is_empty() {
            continue;
        }
        if let Ok((user, _)) = select_next_user(base, cache, &pool) {
            diag.selections += 1;
            let mut ext = base.extended(cache, user)?;
            ext.i_direct = Some(i_d);
            candidates.push(ext);
        }
    }
    if candidates.is_empty() {
        let mut fallback = Allocation::new(cache, direct.order.clone())?;
        fallback.i_direct = Some(i_d);
        candidates.push(fallback);
    }

    let mut winner: Option<(f64, Evaluation, Option<Finalized>)> = None;
    for cand in &candidates {
        let ev = match evaluate_allocation(cand, cache, ptx, &opts.eval) {
            Ok(ev) => ev,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        diag.evaluations += 1;
        diag.eval_iterations += ev.state.iteration;
        let (score, fin) = if opts.addone_explicit {
            let fin = finalize_phases(&ev, cache, ptx, &opts.finalize)?;
            (fin.se, Some(fin))
        } else {
            (ev.se, None)
        };
        if winner.as_ref().is_none_or(|w| score > w.0) {
            winner = Some((score, ev, fin));
        }
    }
    let Some((_, ev, fin)) = winner else {
        return dead_ris_result(inst, Algorithm::AddOne, ptx);
    };
    let fin = match fin {
        Some(fin) => fin,
        None => finalize_phases(&ev, cache, ptx, &opts.finalize)?,
    };
    Ok(from_finalized(Algorithm::AddOne, fin, Some(i_d), diag))
}

/// Runs one algorithm on an instance.
pub fn run_algorithm(
    algorithm: Algorithm,
    inst: &Instance,
    ptx: f64,
    phase_seed: u64,
    opts: &AlgoOptions,
) -> Result<AlgorithmResult> {
    match algorithm {
        Algorithm::Direct => lisa_direct(&inst.realization, ptx),
        Algorithm::Random => random_phase_baseline(&inst.realization, ptx, phase_seed),
        Algorithm::Greedy => greedy_ris_lisa(inst, ptx, opts),
        Algorithm::AddOne => add_one_ris_lisa(inst, ptx, opts),
    }
}

/// Sum-SE of a result recomputed from its users, phases and powers through
/// the composite channel, the ZF precoder and the per-user SINR.
pub fn recompute_se(realization: &ChannelRealization, result: &AlgorithmResult) -> Result<f64> {
    if result.allocation.is_empty() {
        return Ok(0.0);
    }
    let h = match &result.theta {
        Some(theta) => crate::zf_core::composite_matrix(realization, &result.allocation, theta)?,
        None => select_rows(&realization.h_direct, &result.allocation),
    };
    let p = crate::zf_core::zf_precoder(&h, &result.power)?;
    Ok(crate::zf_core::sinr_sum_se(&h, &p))
}
