//! Empirical verification of the estimator error decomposition.
//!
//! The total estimator error splits into a sampling term (rate `1/sqrt(M)`),
//! a finite-table term (rate `1/sqrt(L)`), and a soft-bucketization bias
//! controlled by the temperature. The sweeps here measure each term against
//! its reference, fit log-log slopes with bootstrap confidence intervals,
//! check the realized-constant bias inequality, and compare the hard and
//! soft scoring rules' correlation with the true similarity signal.

use crate::attention::{
    angular_attention, finite_table_output, population_estimate, sample_estimator,
    PopulationEstimate, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::linalg::{l2_distance, norm_f64_slice, spectral_norm};
use crate::lsh::{build_tables, hash_keys, LshParams};
use crate::parallel::chunked_partials;
use crate::rng::{derive_seed, stream_rng};
use crate::soft::{soft_bucket_probs, soft_score, SoftHashConfig, SoftScoreSet};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::time::Instant;

// Stream ids for deriving independent sub-seeds from an instance seed.
const STREAM_CACHE: u64 = 0x01;
const STREAM_QUERY: u64 = 0x02;
const STREAM_POPULATION: u64 = 0x03;
const STREAM_SWEEP: u64 = 0x04;
const STREAM_BOOTSTRAP: u64 = 0x05;
const STREAM_FROZEN_TABLES: u64 = 0x06;

/// A synthetic Gaussian instance for the verification experiments.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct InstanceSpec {
    pub tokens: usize,
    pub dim: usize,
    pub hyperplanes: u32,
    pub tau: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 {
            return Err(Error::param("tokens", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if self.hyperplanes == 0 || self.hyperplanes > 16 {
            return Err(Error::param("hyperplanes", "must be in 1..=16"));
        }
        SoftHashConfig::new(self.tau).map(|_| ())
    }

    /// Standard-Gaussian cache and query, deterministic per instance seed.
    pub fn realize(&self) -> Result<(KvCache, Vec<f32>)> {
        self.validate()?;
        let cache = KvCache::gaussian(self.tokens, self.dim, derive_seed(self.seed, STREAM_CACHE))?;
        let q_cache = KvCache::gaussian(1, self.dim, derive_seed(self.seed, STREAM_QUERY))?;
        Ok((cache, q_cache.key(0).to_vec()))
    }

    fn config(&self) -> SoftHashConfig {
        SoftHashConfig { tau: self.tau }
    }
}

/// Which reference the error in a [`SweepResult`] is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum TargetKind {
    /// The angular attention target.
    #[serde(rename = "y_star")]
    Angular,
    /// The Monte-Carlo population output.
    #[serde(rename = "y_tau")]
    Population,
    /// The finite-table soft-count output.
    #[serde(rename = "y_tau_l")]
    FiniteTable,
}

/// One sweep measurement.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepResult {
    pub swept_param: &'static str,
    pub value: f64,
    pub error_l2: f64,
    pub target_kind: TargetKind,
    pub v_spectral_norm: f64,
    /// Measured angular normalizer of the instance.
    pub realized_z: f64,
    /// Measured soft normalizer: the population one for table sweeps, the
    /// frozen-table one for sample sweeps.
    pub realized_z_tau: f64,
    /// Largest bucket occupancy of the tables behind this measurement.
    pub realized_b: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Least-squares slope with a bootstrap confidence interval.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_samples: usize,
}

/// A sweep's raw measurements plus its fitted decay slope.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepOutcome {
    pub results: Vec<SweepResult>,
    pub slope: SlopeFit,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `log(mean error)` against `log(value)` and bootstraps the replicas
/// (1000 resamples) for a 95% interval.
fn fit_with_bootstrap(values: &[f64], errors_per_point: &[Vec<f64>], seed: u64) -> SlopeFit {
    let xs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mean_log: Vec<f64> = errors_per_point
        .iter()
        .map(|errs| (errs.iter().sum::<f64>() / errs.len() as f64).max(1e-300).ln())
        .collect();
    let (slope, intercept) = fit_line(&xs, &mean_log);

    let boots = 1000usize;
    let mut rng = stream_rng(seed, 0);
    let mut slopes = Vec::with_capacity(boots);
    for _ in 0..boots {
        let ys: Vec<f64> = errors_per_point
            .iter()
            .map(|errs| {
                let mut total = 0.0;
                for _ in 0..errs.len() {
                    total += errs[rng.random_range(0..errs.len())];
                }
                (total / errs.len() as f64).max(1e-300).ln()
            })
            .collect();
        slopes.push(fit_line(&xs, &ys).0);
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    SlopeFit {
        slope,
        intercept,
        ci_low: slopes[(boots as f64 * 0.025) as usize],
        ci_high: slopes[(boots as f64 * 0.975) as usize - 1],
        bootstrap_samples: boots,
    }
}

fn check_grid<T: PartialOrd + Copy>(grid: &[T], name: &'static str) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::param(name, "need at least 4 sweep points"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param(name, "must be strictly increasing"));
    }
    Ok(())
}

/// Sweeps the table count: for every count and replica, builds fresh tables
/// and measures the finite-table output against the population output
/// (estimated once from `mc_tables` Monte-Carlo tables and shared across the
/// sweep). The error decays like `1/sqrt(L)`.
pub fn sweep_tables(
    spec: &InstanceSpec,
    table_counts: &[usize],
    replicas: usize,
    mc_tables: usize,
) -> Result<SweepOutcome> {
    check_grid(table_counts, "table_counts")?;
    if replicas == 0 {
        return Err(Error::param("replicas", "must be positive"));
    }
    let (cache, q) = spec.realize()?;
    let population = population_estimate(
        &q,
        &cache,
        &spec.config(),
        spec.hyperplanes,
        mc_tables,
        derive_seed(spec.seed, STREAM_POPULATION),
    )?;
    let angular = angular_attention(&q, &cache, spec.hyperplanes)?;
    let v_norm = spectral_norm(cache.values_matrix(), cache.tokens(), cache.dim());
    let sweep_master = derive_seed(spec.seed, STREAM_SWEEP);

    let jobs: Vec<(usize, usize)> = table_counts
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| (0..replicas).map(move |r| (pi, r)))
        .collect();
    let results: Vec<SweepResult> = jobs
        .into_par_iter()
        .map(|(pi, replica)| {
            let num_tables = table_counts[pi];
            let table_seed = derive_seed(sweep_master, ((pi as u64) << 32) | replica as u64);
            let start = Instant::now();
            let params = LshParams {
                hyperplanes: spec.hyperplanes,
                num_tables,
                dim: spec.dim,
                seed: table_seed,
            };
            let tables = build_tables(&params).expect("validated params");
            let assignment = hash_keys(&tables, &cache).expect("dims match");
            let dist = soft_bucket_probs(&tables, &q, &spec.config()).expect("dims match");
            let scores = soft_score(&dist, &assignment).expect("tables match");
            let output = finite_table_output(&scores, &cache).expect("dims match");
            SweepResult {
                swept_param: "num_tables",
                value: num_tables as f64,
                error_l2: l2_distance(&output, &population.output),
                target_kind: TargetKind::Population,
                v_spectral_norm: v_norm,
                realized_z: angular.normalizer,
                realized_z_tau: population.normalizer,
                realized_b: assignment.max_bucket_occupancy(),
                seed: table_seed,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        })
        .collect();

    let errors_per_point: Vec<Vec<f64>> = table_counts
        .iter()
        .enumerate()
        .map(|(pi, _)| {
            results[pi * replicas..(pi + 1) * replicas]
                .iter()
                .map(|r| r.error_l2)
                .collect()
        })
        .collect();
    let values: Vec<f64> = table_counts.iter().map(|l| *l as f64).collect();
    let slope = fit_with_bootstrap(
        &values,
        &errors_per_point,
        derive_seed(spec.seed, STREAM_BOOTSTRAP),
    );
    Ok(SweepOutcome { results, slope })
}

/// Sweeps the sample count against a frozen table set: for every count and
/// replica, draws fresh samples and measures the estimator against the
/// finite-table output. The error decays like `1/sqrt(M)`.
pub fn sweep_samples(
    spec: &InstanceSpec,
    num_tables: usize,
    sample_counts: &[usize],
    replicas: usize,
) -> Result<SweepOutcome> {
    check_grid(sample_counts, "sample_counts")?;
    if replicas == 0 {
        return Err(Error::param("replicas", "must be positive"));
    }
    let (cache, q, scores, reference, realized_b) = frozen_instance(spec, num_tables)?;
    let angular = angular_attention(&q, &cache, spec.hyperplanes)?;
    let v_norm = spectral_norm(cache.values_matrix(), cache.tokens(), cache.dim());
    let sweep_master = derive_seed(spec.seed, STREAM_SWEEP);

    let jobs: Vec<(usize, usize)> = sample_counts
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| (0..replicas).map(move |r| (pi, r)))
        .collect();
    let results: Vec<SweepResult> = jobs
        .into_par_iter()
        .map(|(pi, replica)| {
            let num_samples = sample_counts[pi];
            let sample_seed = derive_seed(sweep_master, ((pi as u64) << 32) | replica as u64);
            let start = Instant::now();
            let sampler = SamplerConfig::from_scores(&scores, &cache, num_samples, sample_seed)
                .expect("positive sample count");
            let estimate = sample_estimator(&scores, &cache, &sampler).expect("dims match");
            SweepResult {
                swept_param: "num_samples",
                value: num_samples as f64,
                error_l2: l2_distance(&estimate, &reference),
                target_kind: TargetKind::FiniteTable,
                v_spectral_norm: v_norm,
                realized_z: angular.normalizer,
                realized_z_tau: scores.normalizer,
                realized_b,
                seed: sample_seed,
                wall_time_s: start.elapsed().as_secs_f64(),
            }
        })
        .collect();

    let errors_per_point: Vec<Vec<f64>> = sample_counts
        .iter()
        .enumerate()
        .map(|(pi, _)| {
            results[pi * replicas..(pi + 1) * replicas]
                .iter()
                .map(|r| r.error_l2)
                .collect()
        })
        .collect();
    let values: Vec<f64> = sample_counts.iter().map(|m| *m as f64).collect();
    let slope = fit_with_bootstrap(
        &values,
        &errors_per_point,
        derive_seed(spec.seed, STREAM_BOOTSTRAP),
    );
    Ok(SweepOutcome { results, slope })
}

type FrozenInstance = (KvCache, Vec<f32>, SoftScoreSet, Vec<f64>, usize);

/// Builds the instance with one frozen table set and scores it once.
fn frozen_instance(spec: &InstanceSpec, num_tables: usize) -> Result<FrozenInstance> {
    let (cache, q) = spec.realize()?;
    let params = LshParams::new(
        spec.hyperplanes,
        num_tables,
        spec.dim,
        derive_seed(spec.seed, STREAM_FROZEN_TABLES),
    )?;
    let tables = build_tables(&params)?;
    let assignment = hash_keys(&tables, &cache)?;
    let dist = soft_bucket_probs(&tables, &q, &spec.config())?;
    let scores = soft_score(&dist, &assignment)?;
    let reference = finite_table_output(&scores, &cache)?;
    let realized_b = assignment.max_bucket_occupancy();
    Ok((cache, q, scores, reference, realized_b))
}

/// One temperature point of the bias sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TauPoint {
    pub tau: f64,
    /// Estimated expected mass outside the hard query bucket.
    pub nondominant_mass: f64,
    pub nondominant_mass_se: f64,
    /// Measured `||y_tau - y_star||_2`.
    pub bias_l2: f64,
    /// Realized right-hand side `2B(1/Z_tau + sqrt(B)/(Z Z_tau)) eps ||V||`.
    pub bound_rhs: f64,
    pub holds: bool,
    pub realized_b: usize,
    pub realized_z: f64,
    pub realized_z_tau: f64,
    /// Table count Theorem-style concentration would require at delta = 0.1,
    /// `2 B^2 log(8/delta) / Z_tau^2`, reported per instance.
    pub min_tables_for_concentration: f64,
}

/// Sweeps the temperature and checks the realized-constant bias inequality
/// at every point. `tau_values` must be increasing and span at least two
/// decades.
pub fn sweep_tau(
    spec: &InstanceSpec,
    tau_values: &[f64],
    mc_tables: usize,
) -> Result<Vec<TauPoint>> {
    if tau_values.len() < 2 {
        return Err(Error::param("tau_values", "need at least 2 points"));
    }
    if tau_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("tau_values", "must be strictly increasing"));
    }
    if tau_values[tau_values.len() - 1] / tau_values[0] < 100.0 {
        return Err(Error::param("tau_values", "must span at least two decades"));
    }
    let (cache, q) = spec.realize()?;
    let angular = angular_attention(&q, &cache, spec.hyperplanes)?;
    let v_norm = spectral_norm(cache.values_matrix(), cache.tokens(), cache.dim());
    tau_values
        .iter()
        .enumerate()
        .map(|(ti, tau)| {
            let cfg = SoftHashConfig::new(*tau)?;
            let est = population_estimate(
                &q,
                &cache,
                &cfg,
                spec.hyperplanes,
                mc_tables,
                derive_seed(spec.seed, STREAM_POPULATION ^ ((ti as u64 + 1) << 16)),
            )?;
            Ok(tau_point(*tau, &est, &angular.output, angular.normalizer, v_norm))
        })
        .collect()
}

fn tau_point(
    tau: f64,
    est: &PopulationEstimate,
    angular_output: &[f64],
    angular_z: f64,
    v_norm: f64,
) -> TauPoint {
    let bias = l2_distance(&est.output, angular_output);
    let b = est.max_bucket_occupancy as f64;
    let rhs = 2.0
        * b
        * (1.0 / est.normalizer + b.sqrt() / (angular_z * est.normalizer))
        * est.nondominant_mass
        * v_norm;
    TauPoint {
        tau,
        nondominant_mass: est.nondominant_mass,
        nondominant_mass_se: est.nondominant_mass_se,
        bias_l2: bias,
        bound_rhs: rhs,
        holds: bias <= rhs,
        realized_b: est.max_bucket_occupancy,
        realized_z: angular_z,
        realized_z_tau: est.normalizer,
        min_tables_for_concentration: 2.0 * b * b * (8.0f64 / 0.1).ln()
            / (est.normalizer * est.normalizer),
    }
}

/// How the projection rows for the correlation experiment are prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionRows {
    /// Exact Gram-Schmidt orthonormalization of Gaussian rows (the lemma's
    /// hypothesis).
    Orthonormal,
    /// Raw Gaussian rows, report-only: the closed forms are then approximate.
    Gaussian,
}

/// Empirical and closed-form correlations between the true similarity and the
/// per-plane aggregated score, for the hard and soft scoring rules.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CorrelationExperiment {
    pub hard_empirical: f64,
    pub hard_closed_form: f64,
    pub soft_empirical: f64,
    pub soft_closed_form: f64,
    /// Standard error on the Fisher z scale, `1/sqrt(pairs - 3)`.
    pub fisher_se: f64,
    pub pairs: usize,
    pub hyperplanes: u32,
    pub dim: usize,
    pub rows: ProjectionRows,
}

impl CorrelationExperiment {
    /// |atanh(empirical) - atanh(closed)| for the hard rule, in Fisher units.
    pub fn hard_z_gap(&self) -> f64 {
        (self.hard_empirical.atanh() - self.hard_closed_form.atanh()).abs()
    }

    pub fn soft_z_gap(&self) -> f64 {
        (self.soft_empirical.atanh() - self.soft_closed_form.atanh()).abs()
    }
}

/// Draws `pairs` Gaussian keys against a fixed unit query and fixed planes,
/// and correlates the true similarity `q.k` with the sign-aggregated scores
/// `sum_i sign(w_i.k) s_i` for `s = sign(Wq)` (hard) and `s = tanh(Wq)`
/// (soft).
pub fn correlation_experiment(
    hyperplanes: u32,
    dim: usize,
    pairs: usize,
    seed: u64,
    rows: ProjectionRows,
) -> Result<CorrelationExperiment> {
    if hyperplanes == 0 {
        return Err(Error::param("hyperplanes", "must be positive"));
    }
    let p = hyperplanes as usize;
    if p > dim {
        return Err(Error::param("hyperplanes", "must not exceed dim"));
    }
    if pairs < 10 {
        return Err(Error::param("pairs", "need at least 10 pairs"));
    }

    // Fixed unit query.
    let mut rng = stream_rng(seed, 0);
    let mut q: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let qn = norm_f64_slice(&q);
    q.iter_mut().for_each(|x| *x /= qn);

    // Projection rows.
    let mut planes: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut r = stream_rng(seed, 1 + i as u64);
            (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()
        })
        .collect();
    if rows == ProjectionRows::Orthonormal {
        for i in 0..p {
            for j in 0..i {
                let proj: f64 = planes[i].iter().zip(&planes[j]).map(|(a, b)| a * b).sum();
                for c in 0..dim {
                    planes[i][c] -= proj * planes[j][c];
                }
            }
            let norm = norm_f64_slice(&planes[i]);
            assert!(norm > 1e-8, "degenerate Gram-Schmidt row");
            planes[i].iter_mut().for_each(|x| *x /= norm);
        }
    } else {
        // Unit rows keep the closed forms on the same scale.
        for row in planes.iter_mut() {
            let norm = norm_f64_slice(row);
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }

    let projected_query: Vec<f64> = planes
        .iter()
        .map(|w| w.iter().zip(&q).map(|(a, b)| a * b).sum())
        .collect();
    let s_hard: Vec<f64> = projected_query
        .iter()
        .map(|x| if *x >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let s_soft: Vec<f64> = projected_query.iter().map(|x| x.tanh()).collect();

    #[derive(Default)]
    struct Moments {
        x: f64,
        xx: f64,
        yh: f64,
        yhh: f64,
        xyh: f64,
        ys: f64,
        yss: f64,
        xys: f64,
    }
    let partials = chunked_partials(pairs, 2048, |range| {
        let mut m = Moments::default();
        for pair in range {
            let mut r = stream_rng(seed, 0x1000 + pair as u64);
            let key: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let x: f64 = q.iter().zip(&key).map(|(a, b)| a * b).sum();
            let mut yh = 0.0;
            let mut ys = 0.0;
            for (i, w) in planes.iter().enumerate() {
                let side = w.iter().zip(&key).map(|(a, b)| a * b).sum::<f64>();
                let sign = if side >= 0.0 { 1.0 } else { -1.0 };
                yh += sign * s_hard[i];
                ys += sign * s_soft[i];
            }
            m.x += x;
            m.xx += x * x;
            m.yh += yh;
            m.yhh += yh * yh;
            m.xyh += x * yh;
            m.ys += ys;
            m.yss += ys * ys;
            m.xys += x * ys;
        }
        m
    });
    let mut total = Moments::default();
    for m in partials {
        total.x += m.x;
        total.xx += m.xx;
        total.yh += m.yh;
        total.yhh += m.yhh;
        total.xyh += m.xyh;
        total.ys += m.ys;
        total.yss += m.yss;
        total.xys += m.xys;
    }
    let n = pairs as f64;
    let corr = |sy: f64, syy: f64, sxy: f64| {
        let cov = sxy / n - (total.x / n) * (sy / n);
        let vx = total.xx / n - (total.x / n).powi(2);
        let vy = syy / n - (sy / n).powi(2);
        cov / (vx * vy).sqrt()
    };

    let c = (2.0 / std::f64::consts::PI).sqrt();
    let l1: f64 = projected_query.iter().map(|x| x.abs()).sum();
    let hard_closed_form = c * l1 / (p as f64).sqrt();
    let soft_inner: f64 = projected_query
        .iter()
        .zip(&s_soft)
        .map(|(x, s)| x * s)
        .sum();
    let soft_closed_form = c * soft_inner / norm_f64_slice(&s_soft);

    Ok(CorrelationExperiment {
        hard_empirical: corr(total.yh, total.yhh, total.xyh),
        hard_closed_form,
        soft_empirical: corr(total.ys, total.yss, total.xys),
        soft_closed_form,
        fisher_se: 1.0 / ((pairs as f64) - 3.0).sqrt(),
        pairs,
        hyperplanes,
        dim,
        rows,
    })
}

/// The realized error-decomposition terms for one instance.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TriangleReport {
    /// `||T - y_star||`
    pub total: f64,
    /// `||T - y_tau_l||`
    pub sampling_term: f64,
    /// `||y_tau_l - y_tau||`
    pub finite_table_term: f64,
    /// `||y_tau - y_star||`
    pub bias_term: f64,
    pub holds: bool,
}

/// Realizes one table set and one sample draw and reports the three
/// decomposition terms; the total never exceeds their sum.
pub fn triangle_report(
    spec: &InstanceSpec,
    num_tables: usize,
    num_samples: usize,
    mc_tables: usize,
) -> Result<TriangleReport> {
    let (cache, q, scores, finite, _) = frozen_instance(spec, num_tables)?;
    let angular = angular_attention(&q, &cache, spec.hyperplanes)?;
    let population = population_estimate(
        &q,
        &cache,
        &spec.config(),
        spec.hyperplanes,
        mc_tables,
        derive_seed(spec.seed, STREAM_POPULATION),
    )?;
    let sampler = SamplerConfig::from_scores(
        &scores,
        &cache,
        num_samples,
        derive_seed(spec.seed, STREAM_SWEEP),
    )?;
    let estimate = sample_estimator(&scores, &cache, &sampler)?;

    let total = l2_distance(&estimate, &angular.output);
    let sampling_term = l2_distance(&estimate, &finite);
    let finite_table_term = l2_distance(&finite, &population.output);
    let bias_term = l2_distance(&population.output, &angular.output);
    Ok(TriangleReport {
        total,
        sampling_term,
        finite_table_term,
        bias_term,
        // Triangle inequality on the realized vectors; the epsilon only
        // absorbs rounding in the norm evaluations themselves.
        holds: total <= sampling_term + finite_table_term + bias_term + 1e-12,
    })
}

/// Empirical check of the sampling tail bound at failure probability `delta`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TailBoundReport {
    /// `||V|| sqrt(8 log(2/delta) / M)`
    pub bound: f64,
    pub trials: usize,
    pub violations: usize,
    pub delta: f64,
    /// `violations/trials` must stay below `delta + 3 SE`.
    pub allowed_rate: f64,
    pub holds: bool,
}

/// Draws `trials` independent sample sets against frozen tables and counts
/// how often the estimator misses the finite-table output by more than the
/// stated high-probability bound.
pub fn tail_bound_report(
    spec: &InstanceSpec,
    num_tables: usize,
    num_samples: usize,
    trials: usize,
    delta: f64,
) -> Result<TailBoundReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be positive"));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::param("delta", "must be in (0, 1)"));
    }
    let (cache, _q, scores, reference, _) = frozen_instance(spec, num_tables)?;
    let v_norm = spectral_norm(cache.values_matrix(), cache.tokens(), cache.dim());
    let bound = v_norm * (8.0 * (2.0 / delta).ln() / num_samples as f64).sqrt();
    let sweep_master = derive_seed(spec.seed, STREAM_SWEEP);
    let violations: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let sampler = SamplerConfig::from_scores(
                &scores,
                &cache,
                num_samples,
                derive_seed(sweep_master, trial as u64),
            )
            .expect("positive sample count");
            let estimate = sample_estimator(&scores, &cache, &sampler).expect("dims match");
            u64::from(l2_distance(&estimate, &reference) > bound)
        })
        .sum();
    let violations = violations as usize;
    let rate = violations as f64 / trials as f64;
    let allowed_rate = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    Ok(TailBoundReport {
        bound,
        trials,
        violations,
        delta,
        allowed_rate,
        holds: rate <= allowed_rate,
    })
}
