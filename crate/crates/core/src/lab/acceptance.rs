//! Registered acceptance criteria with their pinned tolerances.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basin::{SampleGrid, SlopeTrend, Verdict};
use crate::error::Result;
use crate::lyapunov::{lyapunov_spectrum_qr, unstable_integral, DEFAULT_WARMUP};
use crate::markov::{
    bound_check_from_samples, cat_map_partition, cylinder_count_rate, entropy_rate_from_samples,
    CylinderSamples, CylinderSource, MarkovPartition,
};
use crate::torus::{
    verify_hyperbolicity, HyperbolicToralMap, MapSpec, PerturbationTerm, TorusPoint,
};
use crate::weak_star::{
    discrete_moments, invariance_defect, DiscreteMeasure, FamilySpec, MeasureRep,
    TestFunctionFamily,
};

use super::config::{
    default_orbit_start, periodic_orbit, EntropySpec, Expectations, ExperimentConfig, NValues,
    TargetSpec,
};
use super::run::execute;

/// `log((3+√5)/2)`, the unstable exponent of the cat map.
pub fn log_lambda() -> f64 {
    ((3.0 + 5f64.sqrt()) / 2.0).ln()
}

pub const ORBIT_LENGTH: usize = 10_000_000;
pub const ENTROPY_DEPTH: usize = 14;
pub const QUADRATURE: usize = 512;
pub const BOUND_TOLERANCE: f64 = 0.05;
pub const GUARD: f64 = 0.05;
pub const PERTURBATION: f64 = 0.005;

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {} ({:.1} s) {}",
            self.id,
            self.title,
            if self.pass { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    check: fn() -> Result<(bool, String)>,
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: 1,
            title: "lyapunov exactness",
            check: lyapunov_exactness,
        },
        Criterion {
            id: 2,
            title: "metric axioms and convexity",
            check: metric_suite,
        },
        Criterion {
            id: 3,
            title: "invariance defect",
            check: invariance,
        },
        Criterion {
            id: 4,
            title: "lebesgue basin rate",
            check: lebesgue_rate,
        },
        Criterion {
            id: 5,
            title: "dirac basin rate",
            check: dirac_rate,
        },
        Criterion {
            id: 6,
            title: "entropy pipeline",
            check: entropy_pipeline,
        },
        Criterion {
            id: 7,
            title: "cylinder count bound",
            check: count_bound,
        },
        Criterion {
            id: 8,
            title: "entropy guard",
            check: entropy_guard,
        },
        Criterion {
            id: 9,
            title: "mixture affinity",
            check: mixture_affinity,
        },
        Criterion {
            id: 10,
            title: "perturbed map",
            check: perturbed_map,
        },
    ]
}

pub fn run_criterion(id: u8) -> Outcome {
    let c = criteria()
        .into_iter()
        .find(|c| c.id == id)
        .expect("registered criterion");
    let start = Instant::now();
    let (pass, detail) = match (c.check)() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome {
        id,
        title: c.title,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn partition() -> &'static MarkovPartition {
    static P: OnceLock<MarkovPartition> = OnceLock::new();
    P.get_or_init(|| cat_map_partition().expect("partition validates"))
}

/// Depth-14 itineraries along one 10⁷-step cat-map orbit, shared by the entropy criteria.
fn lebesgue_samples() -> &'static CylinderSamples {
    static S: OnceLock<CylinderSamples> = OnceLock::new();
    S.get_or_init(|| {
        let source = CylinderSource::Orbit {
            start: default_orbit_start().into(),
            length: ORBIT_LENGTH,
        };
        CylinderSamples::collect(
            &HyperbolicToralMap::cat_map(),
            partition(),
            &source,
            ENTROPY_DEPTH,
        )
        .expect("orbit locates")
    })
}

fn discrete_samples(measure: DiscreteMeasure) -> Result<CylinderSamples> {
    let source = CylinderSource::Discrete {
        measure,
        samples: ORBIT_LENGTH as u64,
    };
    CylinderSamples::collect(
        &HyperbolicToralMap::cat_map(),
        partition(),
        &source,
        ENTROPY_DEPTH,
    )
}

fn depths() -> Vec<usize> {
    (1..=ENTROPY_DEPTH).collect()
}

fn entropy_of(samples: &CylinderSamples) -> Result<f64> {
    Ok(entropy_rate_from_samples(
        &HyperbolicToralMap::cat_map(),
        partition(),
        samples,
        &depths(),
    )?
    .rate)
}

fn lyapunov_exactness() -> Result<(bool, String)> {
    let start = Instant::now();
    let s = lyapunov_spectrum_qr(
        &HyperbolicToralMap::cat_map(),
        TorusPoint::new(0.3, 0.7),
        10_000,
    )?;
    let secs = start.elapsed().as_secs_f64();
    let e1 = (s.chi_plus - log_lambda()).abs();
    let e2 = (s.chi_plus + s.chi_minus).abs();
    Ok((
        e1 < 1e-9 && e2 < 1e-9 && secs < 1.0,
        format!("|χ₁ − log λ| = {e1:.2e}, |χ₁ + χ₂| = {e2:.2e}, {secs:.3} s"),
    ))
}

fn random_measure(rng: &mut ChaCha8Rng) -> DiscreteMeasure {
    let n = rng.gen_range(1..=6);
    let atoms: Vec<TorusPoint> = (0..n)
        .map(|_| TorusPoint::new(rng.gen(), rng.gen()))
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).expect("valid weights")
}

fn metric_suite() -> Result<(bool, String)> {
    let start = Instant::now();
    let fam = TestFunctionFamily::new(FamilySpec::default().k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let slack = 1e-12;
    let mut failures = 0;
    for _ in 0..200 {
        let m: Vec<_> = (0..3)
            .map(|_| discrete_moments(&random_measure(&mut rng), &fam))
            .collect();
        let d = |i: usize, j: usize| m[i].distance(&m[j]).expect("same family");
        let ok = d(0, 0) <= slack
            && (d(0, 1) - d(1, 0)).abs() <= slack
            && d(0, 2) <= d(0, 1) + d(1, 2) + slack
            && d(1, 2) <= d(1, 0) + d(0, 2) + slack
            && d(0, 1) <= d(0, 2) + d(2, 1) + slack;
        failures += usize::from(!ok);
    }
    let mut convexity_failures = 0;
    for _ in 0..100 {
        let centre = discrete_moments(&random_measure(&mut rng), &fam);
        let a = random_measure(&mut rng);
        let b = random_measure(&mut rng);
        let (da, db) = (
            discrete_moments(&a, &fam).distance(&centre)?,
            discrete_moments(&b, &fam).distance(&centre)?,
        );
        let radius = da.max(db) * (1.0 + rng.gen::<f64>() * 0.1);
        let t: f64 = rng.gen();
        let mix = DiscreteMeasure::mix(t, &a, &b)?;
        convexity_failures +=
            usize::from(discrete_moments(&mix, &fam).distance(&centre)? > radius + slack);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        failures == 0 && convexity_failures == 0 && secs < 5.0,
        format!("{failures}/200 axiom failures, {convexity_failures}/100 convexity failures, {secs:.2} s"),
    ))
}

fn invariance() -> Result<(bool, String)> {
    let start = Instant::now();
    let cat = HyperbolicToralMap::cat_map();
    let fam = TestFunctionFamily::new(FamilySpec::default().k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = TorusPoint::new(rng.gen(), rng.gen());
        for n in [10usize, 100, 1000] {
            worst = worst.max(invariance_defect(&cat, x, n, &fam)? * n as f64);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 2.0 && secs < 5.0,
        format!("max n·defect = {worst:.4} (bound 2), {secs:.2} s"),
    ))
}

fn basin_config(
    name: &str,
    map: MapSpec,
    target: TargetSpec,
    grid: usize,
    tol: f64,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        map,
        family: FamilySpec::default(),
        grid: SampleGrid::centers(grid),
        target,
        epsilons: vec![0.2, 0.1],
        n_values: NValues::Range {
            start: 100,
            end: 500,
            step: 50,
        },
        window: Some((100, 500)),
        min_hits: 30,
        verdict_tolerance: tol,
        warmup: DEFAULT_WARMUP,
        quadrature_resolution: QUADRATURE,
        entropy: None,
        expectations: Expectations::default(),
        output_dir: "records".into(),
    }
}

fn slopes_of(record: &super::ExperimentRecord) -> Vec<f64> {
    record
        .sweep
        .iter()
        .flat_map(|s| s.estimates())
        .map(|e| e.slope)
        .collect()
}

fn lebesgue_rate() -> Result<(bool, String)> {
    let config = basin_config(
        "lebesgue-rate",
        HyperbolicToralMap::cat_map().spec(),
        TargetSpec::Lebesgue,
        512,
        0.01,
    );
    let record = execute(&config)?;
    let slopes = slopes_of(&record);
    let pass = slopes.len() == 2
        && slopes.iter().all(|s| s.abs() <= 0.005)
        && record.verdict == Some(Verdict::ConsistentWithZero);
    Ok((
        pass,
        format!("slopes {slopes:?}, verdict {:?}", record.verdict),
    ))
}

fn dirac_rate() -> Result<(bool, String)> {
    let mut config = basin_config(
        "dirac-rate",
        HyperbolicToralMap::cat_map().spec(),
        TargetSpec::Dirac { point: [0.0, 0.0] },
        2048,
        0.01,
    );
    config.n_values = NValues::Range {
        start: 1,
        end: 12,
        step: 1,
    };
    config.window = Some((4, 12));
    let record = execute(&config)?;
    let sweep = record.sweep.as_ref().expect("sweep ran");
    let slopes = slopes_of(&record);
    let target = -log_lambda();
    let final_slope = sweep
        .last_valid
        .as_ref()
        .map(|e| e.slope)
        .unwrap_or(f64::NAN);
    // entropy of a point mass is 0 and its unstable integral is log λ
    let residual = crate::basin::rate_formula_residual(final_slope, 0.0, log_lambda());
    let within = (final_slope - target).abs() <= 0.25 * target.abs();
    let pass = slopes.len() == 2
        && within
        && sweep.trend == SlopeTrend::Decreasing
        && record.verdict == Some(Verdict::NegativeRate)
        && residual.abs() <= 0.25;
    Ok((
        pass,
        format!(
            "slopes {slopes:?} (target {target:.4} ± 25%), trend {:?}, verdict {:?}, residual {residual:.4}",
            sweep.trend, record.verdict
        ),
    ))
}

fn entropy_pipeline() -> Result<(bool, String)> {
    let rate12 = lebesgue_samples().entropy(12) / 12.0;
    let counts = cylinder_count_rate(partition(), &[14])?;
    let count14 = counts.rows[0].rate;
    let l = log_lambda();
    Ok((
        (rate12 - l).abs() <= 0.1 && (count14 - l).abs() <= 0.1 * l,
        format!("H₁₂/12 = {rate12:.4}, count rate at 14 = {count14:.4}, target {l:.4}"),
    ))
}

fn count_bound() -> Result<(bool, String)> {
    let leb = lebesgue_samples();
    let b = bound_check_from_samples(partition(), leb, 0.1, 10)?;
    let all = (leb.counts(10).len() as f64).ln() - leb.entropy(10);
    let dirac = discrete_samples(DiscreteMeasure::dirac(TorusPoint::origin()))?;
    let d = bound_check_from_samples(partition(), &dirac, 0.1, 10)?;
    Ok((
        b.margin >= -BOUND_TOLERANCE && all >= 0.0 && d.margin >= 0.0,
        format!(
            "Leb margin {:.4} (tolerance {BOUND_TOLERANCE}), full-cover margin {all:.4}, fixed-point margin {:.4}",
            b.margin, d.margin
        ),
    ))
}

fn entropy_guard() -> Result<(bool, String)> {
    let cat = HyperbolicToralMap::cat_map();
    let mut rows = Vec::new();
    let h_leb = entropy_of(lebesgue_samples())?;
    let i_leb = unstable_integral(&cat, &MeasureRep::LebesgueExact, DEFAULT_WARMUP, QUADRATURE)?;
    rows.push(("Leb", h_leb, i_leb));
    let points = [
        ("δ₀", [0.0, 0.0]),
        ("period 2", [0.2, 0.4]),
        ("period 3", [0.75, 0.5]),
    ];
    for (name, seed) in points {
        let orbit = periodic_orbit(&cat, seed.into(), 10)?;
        let measure = DiscreteMeasure::uniform(&orbit)?;
        let h = entropy_of(&discrete_samples(measure.clone())?)?;
        let i = unstable_integral(
            &cat,
            &MeasureRep::Discrete(measure),
            DEFAULT_WARMUP,
            QUADRATURE,
        )?;
        rows.push((name, h, i));
    }
    let pass = rows.iter().all(|(_, h, i)| *h <= i + GUARD);
    let detail = rows
        .iter()
        .map(|(n, h, i)| format!("{n}: h {h:.4} ≤ {i:.4} + {GUARD}"))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((pass, detail))
}

fn mixture_affinity() -> Result<(bool, String)> {
    let cat = HyperbolicToralMap::cat_map();
    let leb = lebesgue_samples();
    let dirac = discrete_samples(DiscreteMeasure::dirac(TorusPoint::origin()))?;
    let mixed = CylinderSamples::merged(&[leb, &dirac])?;
    let h_mix = entropy_of(&mixed)?;
    let mixture = MeasureRep::Mixture(vec![
        (0.5, MeasureRep::LebesgueExact),
        (0.5, MeasureRep::dirac(TorusPoint::origin())),
    ]);
    let i_mix = unstable_integral(&cat, &mixture, DEFAULT_WARMUP, QUADRATURE)?;
    let h_leb = entropy_of(leb)?;
    let i_leb = unstable_integral(&cat, &MeasureRep::LebesgueExact, DEFAULT_WARMUP, QUADRATURE)?;
    let d_mix = crate::basin::pesin_defect(h_mix, i_mix);
    let d_leb = crate::basin::pesin_defect(h_leb, i_leb);
    let target = -0.5 * log_lambda();
    Ok((
        (d_mix - target).abs() <= 0.2 * target.abs() && d_leb.abs() <= 0.05,
        format!("mixture defect {d_mix:.4} (target {target:.4} ± 20%), Leb defect {d_leb:.4}"),
    ))
}

/// The single-mode perturbation `x ↦ Ax + ε_p (sin 2πx₂, 0)`.
pub fn perturbed_spec() -> MapSpec {
    MapSpec {
        matrix: [[2, 1], [1, 1]],
        amplitude: PERTURBATION,
        perturbation: vec![PerturbationTerm::new([1.0, 0.0], [0, 1])],
    }
}

fn perturbed_map() -> Result<(bool, String)> {
    let map = HyperbolicToralMap::try_from(perturbed_spec())?;
    let cone = verify_hyperbolicity(&map, 256)?;
    let mut config = basin_config(
        "perturbed",
        perturbed_spec(),
        TargetSpec::EmpiricalOrbit {
            start: default_orbit_start(),
            length: 1_000_000,
        },
        512,
        0.02,
    );
    config.entropy = Some(EntropySpec {
        depths: (1..=13).collect(),
        samples: ORBIT_LENGTH as u64,
        orbit_start: default_orbit_start(),
    });
    let record = execute(&config)?;
    let entropy = record.entropy.as_ref();
    let non_exact = entropy.is_some_and(|e| e.non_exact_partition);
    let defect = record.pesin_defect.unwrap_or(f64::NAN);
    let pass = cone.pass
        && record.verdict == Some(Verdict::ConsistentWithZero)
        && defect.abs() <= 0.1
        && non_exact
        && record.stage_errors.is_empty();
    Ok((
        pass,
        format!(
            "cone {}, slopes {:?}, verdict {:?}, h {:.4}, ∫ψ {:.4}, non-exact flag {non_exact}",
            cone.pass,
            slopes_of(&record),
            record.verdict,
            entropy.map(|e| e.rate).unwrap_or(f64::NAN),
            record.unstable_integral.unwrap_or(f64::NAN)
        ),
    ))
}
