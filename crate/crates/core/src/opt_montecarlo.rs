//! Monte Carlo costate search.
//!
//! Random Λ(0) are pushed through the geodesic equation and the resulting
//! U(τ) is compared with the target in principal-log coordinates,
//! d = Σ_k |c_k − c̃_k|. The closest samples are then refined with a
//! Nelder–Mead simplex on the infidelity.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{principal_log_unitary, Coords, CostateCoords, GeneratorBasis, LogCoords, DIM};
use crate::error::{invalid, Error, Result};
use crate::metrics::{Method, OptimizationReport};
use crate::model::GateTarget;
use crate::opt_variational::{select_best, uniform_costate, GeodesicProblem};

/// Principal-log coordinates c̃_k of the target (with its branch flag).
pub fn gate_coords(target: &GateTarget) -> LogCoords {
    principal_log_unitary(target.matrix(), GeneratorBasis::pauli())
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Position in the sample stream.
    pub index: usize,
    pub lambda0: CostateCoords,
    /// Principal-log coordinates of U(τ).
    pub coords: Coords,
    pub branch_flag: bool,
    /// Σ_k |c_k − c̃_k|.
    pub distance: f64,
}

impl SampleRecord {
    /// Selection order: distance, then unflagged before flagged, then index.
    fn rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.branch_flag.cmp(&other.branch_flag))
            .then(self.index.cmp(&other.index))
    }
}

pub fn coord_distance(a: &Coords, b: &Coords) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Evaluates a single costate against the target coordinates.
pub fn evaluate_sample(
    problem: &GeodesicProblem,
    index: usize,
    lambda0: CostateCoords,
    target_coords: &Coords,
) -> Result<SampleRecord> {
    let u = problem.endpoint(&lambda0)?;
    let log = principal_log_unitary(&u, GeneratorBasis::pauli());
    Ok(SampleRecord {
        index,
        lambda0,
        distance: coord_distance(&log.coords, target_coords),
        coords: log.coords,
        branch_flag: log.near_branch_cut,
    })
}

/// Draws `n_samples` costates with λ_k uniform in [−bound, bound] from a
/// ChaCha8 stream seeded with `seed` and evaluates them all.
///
/// Draws happen sequentially before the (parallel) evaluation, so the
/// result does not depend on the thread count. Samples whose integration
/// fails the accuracy contract are dropped.
pub fn evaluate_samples(
    problem: &GeodesicProblem,
    n_samples: usize,
    coord_bound: f64,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    if !(coord_bound > 0.0 && coord_bound.is_finite()) {
        return Err(invalid(format!("coord_bound must be positive, got {coord_bound}")));
    }
    let target = gate_coords(&problem.target).coords;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<CostateCoords> = (0..n_samples).map(|_| uniform_costate(&mut rng, coord_bound)).collect();
    let evaluated: Vec<Result<SampleRecord>> = draws
        .into_par_iter()
        .enumerate()
        .map(|(i, lambda)| evaluate_sample(problem, i, lambda, &target))
        .collect();
    let mut records = Vec::with_capacity(n_samples);
    for r in evaluated {
        match r {
            Ok(rec) => records.push(rec),
            Err(Error::IntegrationAccuracy { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(records)
}

/// The `keep` best samples in selection order.
pub fn best_samples(mut records: Vec<SampleRecord>, keep: usize) -> Vec<SampleRecord> {
    records.sort_by(|a, b| a.rank(b));
    records.truncate(keep);
    records
}

/// The sample whose U(τ) is closest to the target in log coordinates.
pub fn sample_and_select(
    problem: &GeodesicProblem,
    n_samples: usize,
    coord_bound: f64,
    seed: u64,
) -> Result<SampleRecord> {
    let records = evaluate_samples(problem, n_samples, coord_bound, seed)?;
    best_samples(records, 1)
        .pop()
        .ok_or_else(|| invalid("every sample failed the integration accuracy check; use a finer grid"))
}

/// Nelder–Mead settings. Coefficients follow the dimension-adapted choice of
/// Gao and Han (2012): reflection 1, expansion 1 + 2/n, contraction
/// 3/4 − 1/(2n), shrink 1 − 1/n, with n = 15.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexSettings {
    /// Stop once the best vertex reaches this infidelity.
    pub infidelity_tol: f64,
    /// Stop once every vertex lies within this distance (max-norm) of the best.
    pub spread_tol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex around the candidate.
    pub initial_step: f64,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        SimplexSettings { infidelity_tol: 1e-8, spread_tol: 1e-10, max_evals: 50_000, initial_step: 0.05 }
    }
}

/// Outcome of [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub best: Coords,
    pub value: f64,
    pub evaluations: usize,
    /// Best value after each iteration (entry 0 is the starting point).
    pub trace: Vec<f64>,
    pub stop_reason: &'static str,
}

/// Minimizes `f` over ℝ^15 from `start`. Non-finite values are treated as
/// +∞ (rejected moves).
pub fn nelder_mead<F>(f: F, start: &Coords, settings: &SimplexSettings) -> SimplexResult
where
    F: Fn(&Coords) -> f64,
{
    let n = DIM as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / n, 0.75 - 0.5 / n, 1.0 - 1.0 / n);
    let eval = |x: &Coords| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evaluations = 0;
    let mut simplex: Vec<(Coords, f64)> = Vec::with_capacity(DIM + 1);
    simplex.push((*start, eval(start)));
    for k in 0..DIM {
        let mut x = *start;
        x[k] += settings.initial_step;
        simplex.push((x, eval(&x)));
    }
    evaluations += DIM + 1;
    let order = |s: &mut Vec<(Coords, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut trace = vec![simplex[0].1];
    let point = |c: &Coords, d: &Coords, t: f64| -> Coords { std::array::from_fn(|k| c[k] + t * (d[k] - c[k])) };

    let stop_reason = loop {
        if simplex[0].1 <= settings.infidelity_tol {
            break "infidelity tolerance reached";
        }
        let spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= settings.spread_tol {
            break "simplex spread below tolerance";
        }
        if evaluations >= settings.max_evals {
            break "evaluation budget exhausted";
        }

        let mut centroid = [0.0; DIM];
        for (x, _) in &simplex[..DIM] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n;
            }
        }
        let worst = simplex[DIM];
        let second_worst = simplex[DIM - 1].1;
        let best = simplex[0].1;

        let reflected = point(&centroid, &worst.0, -alpha);
        let fr = eval(&reflected);
        evaluations += 1;
        if fr < best {
            let expanded = point(&centroid, &worst.0, -gamma);
            let fe = eval(&expanded);
            evaluations += 1;
            simplex[DIM] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < second_worst {
            simplex[DIM] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst.1 {
                let c = point(&centroid, &reflected, rho);
                (c, eval(&c))
            } else {
                let c = point(&centroid, &worst.0, rho);
                (c, eval(&c))
            };
            evaluations += 1;
            if fc < fr.min(worst.1) {
                simplex[DIM] = (contracted, fc);
            } else {
                let anchor = simplex[0].0;
                for vertex in simplex.iter_mut().skip(1) {
                    let x = point(&anchor, &vertex.0, sigma);
                    *vertex = (x, eval(&x));
                }
                evaluations += DIM;
            }
        }
        order(&mut simplex);
        trace.push(simplex[0].1);
    };
    SimplexResult { best: simplex[0].0, value: simplex[0].1, evaluations, trace, stop_reason }
}

/// Nelder–Mead refinement of a candidate Λ(0) on the infidelity.
pub fn refine(
    problem: &GeodesicProblem,
    candidate: &CostateCoords,
    settings: &SimplexSettings,
    seed: u64,
) -> Result<OptimizationReport> {
    if !candidate.is_finite() {
        return Err(invalid("candidate costate must be finite"));
    }
    let objective = |x: &Coords| problem.infidelity_at(&CostateCoords(*x)).unwrap_or(f64::INFINITY);
    let result = nelder_mead(objective, &candidate.0, settings);
    let forward = problem.solve(&CostateCoords(result.best))?;
    let converged = result.value <= settings.infidelity_tol;
    let notes = vec![format!("{} after {} evaluations", result.stop_reason, result.evaluations)];
    Ok(problem.report(Method::MonteCarlo, &forward, result.trace.len() - 1, seed, converged, result.trace, notes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSettings {
    pub n_samples: usize,
    pub coord_bound: f64,
    pub seed: u64,
    /// Number of closest samples refined; the converged refinement with the
    /// lowest energy is reported.
    pub refine_top: usize,
    pub simplex: SimplexSettings,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        MonteCarloSettings {
            n_samples: 10_000,
            coord_bound: 1.0,
            seed: 1,
            refine_top: 1,
            simplex: SimplexSettings::default(),
        }
    }
}

impl MonteCarloSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.refine_top == 0 {
            return Err(invalid("n_samples and refine_top must be at least 1"));
        }
        if !(self.coord_bound > 0.0 && self.coord_bound.is_finite()) {
            return Err(invalid(format!("coord_bound must be positive, got {}", self.coord_bound)));
        }
        let s = &self.simplex;
        if !(s.initial_step > 0.0 && s.initial_step.is_finite()) || s.max_evals == 0 {
            return Err(invalid("simplex initial_step must be positive and max_evals at least 1"));
        }
        if !(s.infidelity_tol >= 0.0 && s.spread_tol >= 0.0) {
            return Err(invalid("simplex tolerances must be non-negative"));
        }
        Ok(())
    }
}

/// Sampling, selection and refinement in one call.
pub fn monte_carlo_optimize(problem: &GeodesicProblem, settings: &MonteCarloSettings) -> Result<OptimizationReport> {
    settings.validate()?;
    let records = evaluate_samples(problem, settings.n_samples, settings.coord_bound, settings.seed)?;
    let candidates = best_samples(records, settings.refine_top);
    if candidates.is_empty() {
        return Err(invalid("every sample failed the integration accuracy check; use a finer grid"));
    }
    let reports = candidates
        .par_iter()
        .map(|c| {
            refine(problem, &c.lambda0, &settings.simplex, settings.seed).map(|mut r| {
                r.notes.push(format!("sample {} at distance {:.4}", c.index, c.distance));
                r
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select_best(reports).expect("at least one candidate"))
}
