//! Lebesgue volume of finite-time pseudo-basins
//! `A_{ε,n}(μ) = {x : dist*(σ_n(x), μ) < ε}` and their exponential decay rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{HyperbolicToralMap, TorusPoint};
use crate::weak_star::{MomentAccumulator, MomentVector, TestFunctionFamily};

pub const DEFAULT_MIN_HITS: u64 = 30;
const MIN_REGRESSION_ROWS: usize = 3;

/// `G²` start points, one per cell of the uniform `G×G` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub resolution: usize,
    #[serde(default)]
    pub jitter: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SampleGrid {
    pub fn centers(resolution: usize) -> Self {
        Self {
            resolution,
            jitter: false,
            seed: 0,
        }
    }

    pub fn jittered(resolution: usize, seed: u64) -> Self {
        Self {
            resolution,
            jitter: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::InvalidArgument(
                "grid resolution must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    /// Start point of cell `(i, j)`; `i` indexes `x1`, `j` indexes `x2`.
    pub fn point(&self, i: usize, j: usize) -> TorusPoint {
        let g = self.resolution as f64;
        let (du, dv) = if self.jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream((j * self.resolution + i) as u64);
            (rng.gen::<f64>(), rng.gen::<f64>())
        } else {
            (0.5, 0.5)
        };
        TorusPoint::new((i as f64 + du) / g, (j as f64 + dv) / g)
    }

    pub fn points(&self) -> impl Iterator<Item = TorusPoint> + '_ {
        (0..self.resolution).flat_map(move |j| (0..self.resolution).map(move |i| self.point(i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasinRow {
    pub n: usize,
    pub hits: u64,
    pub samples: u64,
}

impl BasinRow {
    pub fn fraction(&self) -> f64 {
        self.hits as f64 / self.samples as f64
    }

    pub fn log_fraction(&self) -> f64 {
        self.fraction().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinCurve {
    pub target_moments: MomentVector,
    pub epsilon: f64,
    pub rows: Vec<BasinRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub fraction: f64,
    pub hits: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub epsilon: f64,
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub window: (usize, usize),
    pub censored: Vec<usize>,
    pub min_hits: u64,
    /// `(n, observed − fitted)` for every uncensored row.
    pub residuals: Vec<(usize, f64)>,
    pub valid: bool,
}

fn check_family(target: &MomentVector, family: &TestFunctionFamily) -> Result<()> {
    if target.len() != family.size() {
        return Err(Error::FamilyMismatch {
            left: target.len(),
            right: family.size(),
        });
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ε must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

/// Whether `dist*(σ_n(p), target) < ε`.
pub fn basin_membership(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    target: &MomentVector,
    eps: f64,
    n: usize,
    family: &TestFunctionFamily,
) -> Result<bool> {
    check_family(target, family)?;
    check_epsilon(eps)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut acc = MomentAccumulator::new(family);
    for x in map.iter_from(p).take(n) {
        acc.push(x);
    }
    Ok(acc.distance_to(target) < eps)
}

pub fn basin_volume_estimate(
    map: &HyperbolicToralMap,
    target: &MomentVector,
    eps: f64,
    n: usize,
    grid: &SampleGrid,
    family: &TestFunctionFamily,
) -> Result<VolumeEstimate> {
    let curve = basin_curve(map, target, eps, &[n], grid, family)?;
    let row = curve.rows[0];
    Ok(VolumeEstimate {
        fraction: row.fraction(),
        hits: row.hits,
        samples: row.samples,
    })
}

pub fn basin_curve(
    map: &HyperbolicToralMap,
    target: &MomentVector,
    eps: f64,
    n_range: &[usize],
    grid: &SampleGrid,
    family: &TestFunctionFamily,
) -> Result<BasinCurve> {
    let mut curves = basin_curves(map, target, &[eps], n_range, grid, family)?;
    Ok(curves.remove(0))
}

/// One curve per ε from a single orbit traversal per start point.
pub fn basin_curves(
    map: &HyperbolicToralMap,
    target: &MomentVector,
    eps_list: &[f64],
    n_range: &[usize],
    grid: &SampleGrid,
    family: &TestFunctionFamily,
) -> Result<Vec<BasinCurve>> {
    check_family(target, family)?;
    grid.validate()?;
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("ε list is empty".into()));
    }
    for &e in eps_list {
        check_epsilon(e)?;
    }
    if n_range.is_empty() || n_range[0] == 0 || n_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "n range must be non-empty, positive and strictly increasing".into(),
        ));
    }
    let n_max = *n_range.last().expect("non-empty");
    let n_cols = n_range.len();
    let stride = eps_list.len() * n_cols;

    let counts = (0..grid.resolution)
        .into_par_iter()
        .map(|j| {
            let mut local = vec![0u64; stride];
            for i in 0..grid.resolution {
                let mut acc = MomentAccumulator::new(family);
                let mut next_col = 0;
                let mut x = grid.point(i, j);
                for step in 1..=n_max {
                    acc.push(x);
                    if step == n_range[next_col] {
                        let d = acc.distance_to(target);
                        for (e_idx, &eps) in eps_list.iter().enumerate() {
                            if d < eps {
                                local[e_idx * n_cols + next_col] += 1;
                            }
                        }
                        next_col += 1;
                    }
                    if step < n_max {
                        x = map.step(x);
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; stride],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let samples = grid.len() as u64;
    Ok(eps_list
        .iter()
        .enumerate()
        .map(|(e_idx, &epsilon)| BasinCurve {
            target_moments: target.clone(),
            epsilon,
            rows: n_range
                .iter()
                .enumerate()
                .map(|(c, &n)| BasinRow {
                    n,
                    hits: counts[e_idx * n_cols + c],
                    samples,
                })
                .collect(),
        })
        .collect())
}

/// Least-squares slope of `log(hits/samples)` against `n` over the rows in
/// `window` with at least `min_hits` hits.
pub fn rate_estimate(
    curve: &BasinCurve,
    window: (usize, usize),
    min_hits: u64,
) -> Result<RateEstimate> {
    let in_window: Vec<&BasinRow> = curve
        .rows
        .iter()
        .filter(|r| r.n >= window.0 && r.n <= window.1)
        .collect();
    let censored: Vec<usize> = in_window
        .iter()
        .filter(|r| r.hits < min_hits.max(1))
        .map(|r| r.n)
        .collect();
    let used: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|r| r.hits >= min_hits.max(1))
        .map(|r| (r.n as f64, r.log_fraction()))
        .collect();
    if used.len() < MIN_REGRESSION_ROWS {
        return Err(Error::InsufficientData {
            uncensored: used.len(),
            required: MIN_REGRESSION_ROWS,
        });
    }
    let m = used.len() as f64;
    let mean_x = used.iter().map(|(x, _)| x).sum::<f64>() / m;
    let mean_y = used.iter().map(|(_, y)| y).sum::<f64>() / m;
    let sxx: f64 = used.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = used.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residuals: Vec<(usize, f64)> = used
        .iter()
        .map(|(x, y)| (*x as usize, y - (intercept + slope * x)))
        .collect();
    let ssr: f64 = residuals.iter().map(|(_, r)| r * r).sum();
    let stderr = (ssr / (m - 2.0) / sxx).sqrt();
    Ok(RateEstimate {
        epsilon: curve.epsilon,
        slope,
        stderr,
        intercept,
        window,
        censored,
        min_hits,
        residuals,
        valid: slope.is_finite() && stderr.is_finite(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeTrend {
    /// Slopes become more negative as ε shrinks.
    Decreasing,
    Increasing,
    Flat,
    Mixed,
    /// Fewer than two valid estimates.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub curve: BasinCurve,
    pub estimate: Option<RateEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub trend: SlopeTrend,
    /// Estimate at the smallest ε that produced one; a finite-ε value, not a limit.
    pub last_valid: Option<RateEstimate>,
}

impl SweepReport {
    pub fn estimates(&self) -> Vec<RateEstimate> {
        self.entries
            .iter()
            .filter_map(|e| e.estimate.clone())
            .collect()
    }
}

/// Trend of slopes ordered by decreasing ε. Consecutive changes smaller than
/// their combined standard error count as no change.
pub fn slope_trend(estimates: &[RateEstimate]) -> SlopeTrend {
    let valid: Vec<&RateEstimate> = estimates.iter().filter(|e| e.valid).collect();
    if valid.len() < 2 {
        return SlopeTrend::Undetermined;
    }
    let (mut down, mut up) = (false, false);
    for w in valid.windows(2) {
        let delta = w[1].slope - w[0].slope;
        let noise = w[0].stderr.hypot(w[1].stderr);
        if delta < -noise {
            down = true;
        } else if delta > noise {
            up = true;
        }
    }
    match (down, up) {
        (false, false) => SlopeTrend::Flat,
        (true, false) => SlopeTrend::Decreasing,
        (false, true) => SlopeTrend::Increasing,
        (true, true) => SlopeTrend::Mixed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub eps_list: Vec<f64>,
    pub n_range: Vec<usize>,
    pub window: (usize, usize),
    pub min_hits: u64,
}

/// Rate estimates for a strictly decreasing list of ε. Per-ε regression
/// failures are recorded in the entry and do not abort the sweep.
pub fn epsilon_sweep(
    map: &HyperbolicToralMap,
    target: &MomentVector,
    params: &SweepParams,
    grid: &SampleGrid,
    family: &TestFunctionFamily,
) -> Result<SweepReport> {
    if params.eps_list.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument(
            "ε list must be strictly decreasing".into(),
        ));
    }
    let curves = basin_curves(map, target, &params.eps_list, &params.n_range, grid, family)?;
    let entries: Vec<SweepEntry> = curves
        .into_iter()
        .map(|curve| {
            let (estimate, error) = match rate_estimate(&curve, params.window, params.min_hits) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepEntry {
                epsilon: curve.epsilon,
                curve,
                estimate,
                error,
            }
        })
        .collect();
    let estimates: Vec<RateEstimate> = entries.iter().filter_map(|e| e.estimate.clone()).collect();
    Ok(SweepReport {
        trend: slope_trend(&estimates),
        last_valid: estimates.iter().rev().find(|e| e.valid).cloned(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentWithZero,
    NegativeRate,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::ConsistentWithZero => "consistent_with_zero",
            Verdict::NegativeRate => "negative_rate",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// `ConsistentWithZero` if every valid slope lies in `[−tol, tol]`,
/// `NegativeRate` if some slope is below `−3·stderr − tol`.
pub fn weak_pseudo_physical_verdict(estimates: &[RateEstimate], tol: f64) -> Verdict {
    let valid: Vec<&RateEstimate> = estimates.iter().filter(|e| e.valid).collect();
    if valid.is_empty() {
        return Verdict::Inconclusive;
    }
    if valid.iter().all(|e| e.slope.abs() <= tol) {
        Verdict::ConsistentWithZero
    } else if valid.iter().any(|e| e.slope < -3.0 * e.stderr - tol) {
        Verdict::NegativeRate
    } else {
        Verdict::Inconclusive
    }
}

/// `a − (h − ∫ψ)`: zero when the measured rate matches entropy minus the
/// unstable Lyapunov integral.
pub fn rate_formula_residual(a_est: f64, h_est: f64, integral_est: f64) -> f64 {
    a_est - (h_est - integral_est)
}

/// `h − ∫ψ`: zero when the entropy formula holds, negative otherwise.
pub fn pesin_defect(h_est: f64, integral_est: f64) -> f64 {
    h_est - integral_est
}

pub fn curves_to_csv(curves: &[BasinCurve]) -> String {
    let mut out = String::from("epsilon,n,hits,samples,log_fraction\n");
    for c in curves {
        for r in &c.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.epsilon,
                r.n,
                r.hits,
                r.samples,
                r.log_fraction()
            ));
        }
    }
    out
}
