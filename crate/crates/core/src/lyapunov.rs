//! Lyapunov exponents, the unstable direction `F(x)` and the unstable
//! log-Jacobian `ψ(x) = log|det Df_x|_{F(x)}|`.
//!
//! On T² the unstable bundle is one-dimensional, so `ψ(x) = log‖Df_x u‖`
//! for a unit vector `u ∈ F(x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{HyperbolicToralMap, TorusPoint};
use crate::weak_star::{DiscreteMeasure, MeasureRep};

/// Backward warm-up length used to approximate `F(x)`.
pub const DEFAULT_WARMUP: usize = 60;
/// Side of the uniform quadrature grid for Lebesgue integrals.
pub const DEFAULT_QUADRATURE_RESOLUTION: usize = 512;
/// Forward transient discarded before QR accumulation starts.
pub const QR_TRANSIENT: usize = 60;

const SEED_VECTOR: [f64; 2] = [1.0, 0.618_033_988_749_894_9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    pub chi_plus: f64,
    pub chi_minus: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnstableSample {
    pub point: TorusPoint,
    pub direction: [f64; 2],
    pub psi: f64,
    pub warmup_n: usize,
}

#[inline]
fn normalize(v: [f64; 2]) -> ([f64; 2], f64) {
    let n = v[0].hypot(v[1]);
    ([v[0] / n, v[1] / n], n)
}

/// Lyapunov exponents from re-orthonormalized products of `Df` along the
/// orbit of `p`. A forward transient of [`QR_TRANSIENT`] steps aligns the
/// frame before `n` steps are averaged.
pub fn lyapunov_spectrum_qr(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    n: usize,
) -> Result<LyapunovSpectrum> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "QR spectrum needs n ≥ 100, got {n}"
        )));
    }
    let mut q1 = [1.0, 0.0];
    let mut q2 = [0.0, 1.0];
    let mut x = p;
    let mut sum1 = 0.0;
    let mut sum2 = 0.0;
    for step in 0..QR_TRANSIENT + n {
        let df = map.differential(x);
        let m1 = df.apply(q1);
        let m2 = df.apply(q2);
        let (u1, r11) = normalize(m1);
        let r12 = u1[0] * m2[0] + u1[1] * m2[1];
        let w = [m2[0] - r12 * u1[0], m2[1] - r12 * u1[1]];
        let (u2, r22) = normalize(w);
        if !(r11 > 0.0 && r22 > 0.0 && r11.is_finite() && r22.is_finite()) {
            return Err(Error::DegenerateCocycle { step });
        }
        if step >= QR_TRANSIENT {
            sum1 += r11.ln();
            sum2 += r22.ln();
        }
        q1 = u1;
        q2 = u2;
        x = map.step(x);
    }
    Ok(LyapunovSpectrum {
        chi_plus: sum1 / n as f64,
        chi_minus: sum2 / n as f64,
        n_steps: n,
    })
}

/// Fixed generic start vector; rotated by π/4 if it is too close to the
/// stable eigendirection of the linear part.
fn seed_vector(map: &HyperbolicToralMap) -> [f64; 2] {
    let (v, _) = normalize(SEED_VECTOR);
    let es = map.splitting().stable;
    if (v[0] * es[0] + v[1] * es[1]).abs() > 0.999 {
        let (s, c) = std::f64::consts::FRAC_PI_4.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    } else {
        v
    }
}

/// Orients `v` to have a non-negative component along the unstable
/// eigenvector of the linear part.
#[inline]
fn orient(map: &HyperbolicToralMap, v: [f64; 2]) -> [f64; 2] {
    let eu = map.splitting().unstable;
    if v[0] * eu[0] + v[1] * eu[1] < 0.0 {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Approximates the unit vector spanning `F(p)` by pushing a generic vector
/// forward along `f^{-N}(p), …, f^{-1}(p)` with normalization at every step.
pub fn unstable_direction(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    warmup_n: usize,
) -> Result<[f64; 2]> {
    if warmup_n == 0 {
        return Err(Error::InvalidArgument("warmup_N must be at least 1".into()));
    }
    let mut backward = Vec::with_capacity(warmup_n);
    let mut q = p;
    for _ in 0..warmup_n {
        q = map.step_inverse(q)?;
        backward.push(q);
    }
    let mut v = seed_vector(map);
    for x in backward.iter().rev() {
        v = normalize(map.differential(*x).apply(v)).0;
    }
    Ok(orient(map, v))
}

pub fn unstable_sample(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    warmup_n: usize,
) -> Result<UnstableSample> {
    let direction = unstable_direction(map, p, warmup_n)?;
    let w = map.differential(p).apply(direction);
    Ok(UnstableSample {
        point: p,
        direction,
        psi: w[0].hypot(w[1]).ln(),
        warmup_n,
    })
}

/// `ψ(p) = log‖Df_p u‖` with `u` the unit unstable direction at `p`.
pub fn log_unstable_jacobian(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    warmup_n: usize,
) -> Result<f64> {
    unstable_sample(map, p, warmup_n).map(|s| s.psi)
}

fn weighted_psi_sum(
    map: &HyperbolicToralMap,
    mu: &DiscreteMeasure,
    warmup_n: usize,
) -> Result<f64> {
    let terms: Vec<f64> = mu
        .atoms()
        .par_iter()
        .zip(mu.weights().par_iter())
        .map(|(p, w)| log_unstable_jacobian(map, *p, warmup_n).map(|psi| w * psi))
        .collect::<Result<_>>()?;
    // sequential sum in atom order, independent of the thread count
    Ok(terms.iter().sum())
}

/// `∫ψ dμ`. Discrete measures are summed atom by atom; Lebesgue uses the
/// mid-point rule on a `G×G` grid.
pub fn unstable_integral(
    map: &HyperbolicToralMap,
    mu: &MeasureRep,
    warmup_n: usize,
    grid_resolution: usize,
) -> Result<f64> {
    match mu {
        MeasureRep::Discrete(d) => weighted_psi_sum(map, d, warmup_n),
        MeasureRep::LebesgueExact => {
            if grid_resolution == 0 {
                return Err(Error::InvalidArgument(
                    "quadrature grid must be non-empty".into(),
                ));
            }
            let g = grid_resolution;
            let gf = g as f64;
            let rows: Vec<f64> = (0..g)
                .into_par_iter()
                .map(|j| {
                    let x2 = (j as f64 + 0.5) / gf;
                    (0..g).try_fold(0.0, |acc, i| {
                        let p = TorusPoint::new((i as f64 + 0.5) / gf, x2);
                        log_unstable_jacobian(map, p, warmup_n).map(|psi| acc + psi)
                    })
                })
                .collect::<Result<_>>()?;
            Ok(rows.iter().sum::<f64>() / (gf * gf))
        }
        MeasureRep::Mixture(parts) => parts.iter().try_fold(0.0, |acc, (w, m)| {
            unstable_integral(map, m, warmup_n, grid_resolution).map(|v| acc + w * v)
        }),
    }
}

/// `(1/n) Σ_{j<n} ψ(f^j p)`; the unstable direction is found once at `p`
/// and then carried forward by `Df`, which is the telescoping `ψ_n = log‖Df^n u‖`.
pub fn birkhoff_unstable_average(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    n: usize,
    warmup_n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "Birkhoff average needs n ≥ 1".into(),
        ));
    }
    let mut u = unstable_direction(map, p, warmup_n)?;
    let mut sum = 0.0;
    for x in map.iter_from(p).take(n) {
        let (next, growth) = normalize(map.differential(x).apply(u));
        sum += growth.ln();
        u = next;
    }
    Ok(sum / n as f64)
}
