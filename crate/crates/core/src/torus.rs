//! Hyperbolic toral maps on T² = R²/Z² and their tangent cocycle.
//!
//! A map is an integer unimodular matrix `A` plus a small trigonometric
//! perturbation, `f(x) = A·x + ε·Σ c_k sin(2π k·x) (mod 1)`. The derivative
//! of the perturbation is analytic, so `Df` is exact at every point.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the torus distance `dist(f(q), p)` accepted by [`HyperbolicToralMap::step_inverse`].
pub const INVERSE_TOLERANCE: f64 = 1e-12;
/// Iteration cap for the inverse fixed-point solve.
pub const INVERSE_MAX_ITERATIONS: usize = 100;
/// Half-angle (radians) of the stable/unstable cones used by [`verify_hyperbolicity`].
pub const DEFAULT_CONE_HALF_ANGLE: f64 = 0.05;

/// Reduce a real coordinate to the canonical representative in `[0, 1)`.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    // v slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed offset of `v` to its nearest integer, in `[-1/2, 1/2]`.
#[inline]
pub fn nearest_offset(v: f64) -> f64 {
    v - v.round()
}

/// A point of the 2-torus, stored as its canonical representative in `[0,1)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct TorusPoint {
    x1: f64,
    x2: f64,
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            x1: wrap_unit(x1),
            x2: wrap_unit(x2),
        }
    }

    pub const fn origin() -> Self {
        Self { x1: 0.0, x2: 0.0 }
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn coords(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// Shortest displacement `other - self` over all integer translates.
    #[inline]
    pub fn displacement_to(&self, other: &TorusPoint) -> [f64; 2] {
        [
            nearest_offset(other.x1 - self.x1),
            nearest_offset(other.x2 - self.x2),
        ]
    }

    /// Flat torus distance; never exceeds `√2/2`.
    #[inline]
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        let [d1, d2] = self.displacement_to(other);
        d1.hypot(d2)
    }
}

impl From<[f64; 2]> for TorusPoint {
    fn from(v: [f64; 2]) -> Self {
        TorusPoint::new(v[0], v[1])
    }
}

impl From<TorusPoint> for [f64; 2] {
    fn from(p: TorusPoint) -> Self {
        p.coords()
    }
}

/// A real 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianMatrix(pub [[f64; 2]; 2]);

impl JacobianMatrix {
    pub fn identity() -> Self {
        JacobianMatrix([[1.0, 0.0], [0.0, 1.0]])
    }

    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// `self · other`
    pub fn mul(&self, other: &JacobianMatrix) -> JacobianMatrix {
        let (a, b) = (&self.0, &other.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        JacobianMatrix(out)
    }

    pub fn inverse(&self) -> Option<JacobianMatrix> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(JacobianMatrix([
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ]))
    }

    /// Spectral (operator 2-) norm.
    pub fn operator_norm(&self) -> f64 {
        let m = &self.0;
        // largest eigenvalue of MᵀM
        let p = m[0][0] * m[0][0] + m[1][0] * m[1][0];
        let q = m[0][1] * m[0][1] + m[1][1] * m[1][1];
        let r = m[0][0] * m[0][1] + m[1][0] * m[1][1];
        let mean = 0.5 * (p + q);
        let disc = (0.25 * (p - q) * (p - q) + r * r).sqrt();
        (mean + disc).sqrt()
    }
}

/// One term `c · sin(2π k·x)` of the perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTerm {
    pub coefficient: [f64; 2],
    pub frequency: [i64; 2],
}

impl PerturbationTerm {
    pub fn new(coefficient: [f64; 2], frequency: [i64; 2]) -> Self {
        Self {
            coefficient,
            frequency,
        }
    }

    /// Upper bound on the operator norm of the term's derivative.
    fn lipschitz_bound(&self) -> f64 {
        let c = self.coefficient[0].hypot(self.coefficient[1]);
        let k = (self.frequency[0] as f64).hypot(self.frequency[1] as f64);
        TAU * c * k
    }
}

/// Serialized form of a map: the config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub matrix: [[i64; 2]; 2],
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub perturbation: Vec<PerturbationTerm>,
}

/// Eigen-data of the linear part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSplitting {
    /// Eigenvalue with `|λ| > 1`.
    pub unstable_eigenvalue: f64,
    /// Eigenvalue with `|λ| < 1`.
    pub stable_eigenvalue: f64,
    /// Unit eigenvector for the unstable eigenvalue.
    pub unstable: [f64; 2],
    /// Unit eigenvector for the stable eigenvalue.
    pub stable: [f64; 2],
    /// Rows of the inverse of `[unstable | stable]`: coordinate functionals.
    dual: [[f64; 2]; 2],
}

impl LinearSplitting {
    fn from_matrix(m: [[i64; 2]; 2]) -> Self {
        let (a, b, c, d) = (
            m[0][0] as f64,
            m[0][1] as f64,
            m[1][0] as f64,
            m[1][1] as f64,
        );
        let tr = a + d;
        let det = a * d - b * c;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let (l1, l2) = (0.5 * (tr + disc), 0.5 * (tr - disc));
        let (lu, ls) = if l1.abs() > l2.abs() {
            (l1, l2)
        } else {
            (l2, l1)
        };
        let eigvec = |lambda: f64| -> [f64; 2] {
            let v1 = [b, lambda - a];
            let v2 = [lambda - d, c];
            let n1 = v1[0].hypot(v1[1]);
            let n2 = v2[0].hypot(v2[1]);
            let (v, n) = if n1 >= n2 { (v1, n1) } else { (v2, n2) };
            let mut u = [v[0] / n, v[1] / n];
            if u[0] < 0.0 || (u[0] == 0.0 && u[1] < 0.0) {
                u = [-u[0], -u[1]];
            }
            u
        };
        let unstable = eigvec(lu);
        let stable = eigvec(ls);
        let basis = JacobianMatrix([[unstable[0], stable[0]], [unstable[1], stable[1]]]);
        let dual = basis
            .inverse()
            .expect("eigenvectors of a hyperbolic matrix are independent")
            .0;
        Self {
            unstable_eigenvalue: lu,
            stable_eigenvalue: ls,
            unstable,
            stable,
            dual,
        }
    }

    /// Coordinates `(a, b)` of `v = a·e_u + b·e_s`.
    #[inline]
    pub fn coordinates(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.dual[0][0] * v[0] + self.dual[0][1] * v[1],
            self.dual[1][0] * v[0] + self.dual[1][1] * v[1],
        ]
    }
}

/// A hyperbolic automorphism of T² plus a small sine-series perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapSpec", into = "MapSpec")]
pub struct HyperbolicToralMap {
    matrix: [[i64; 2]; 2],
    inverse: [[i64; 2]; 2],
    amplitude: f64,
    perturbation: Vec<PerturbationTerm>,
    splitting: LinearSplitting,
    contraction_factor: f64,
}

impl HyperbolicToralMap {
    /// Validates unimodularity, hyperbolicity of the linear part, and the
    /// contraction condition `ε·‖A⁻¹‖·Lip(ψ) < 1/2` for the inverse solve.
    pub fn new(
        matrix: [[i64; 2]; 2],
        amplitude: f64,
        perturbation: Vec<PerturbationTerm>,
    ) -> Result<Self> {
        let [[a, b], [c, d]] = matrix;
        let det = a * d - b * c;
        let tr = a + d;
        if det.abs() != 1 {
            return Err(Error::InvalidMap(format!(
                "matrix must be unimodular, got det = {det}"
            )));
        }
        // det = 1 needs |tr| > 2; det = -1 has real eigenvalues ±1 only when tr = 0
        let hyperbolic = if det == 1 { tr.abs() > 2 } else { tr != 0 };
        if !hyperbolic {
            return Err(Error::InvalidMap(format!(
                "hyperbolicity check failed: trace {tr} with det {det} gives an eigenvalue of modulus 1"
            )));
        }
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidMap(format!(
                "amplitude must be finite and non-negative, got {amplitude}"
            )));
        }
        for term in &perturbation {
            if !term.coefficient.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidMap(
                    "non-finite perturbation coefficient".into(),
                ));
            }
            if term.frequency == [0, 0] {
                return Err(Error::InvalidMap(
                    "perturbation frequency (0, 0) is not allowed".into(),
                ));
            }
        }
        // A⁻¹ = det · [[d, -b], [-c, a]] since det = ±1
        let inverse = [[det * d, -det * b], [-det * c, det * a]];
        let inv_norm = JacobianMatrix([
            [inverse[0][0] as f64, inverse[0][1] as f64],
            [inverse[1][0] as f64, inverse[1][1] as f64],
        ])
        .operator_norm();
        let lip: f64 = perturbation
            .iter()
            .map(PerturbationTerm::lipschitz_bound)
            .sum();
        let contraction_factor = amplitude * inv_norm * lip;
        if contraction_factor >= 0.5 {
            return Err(Error::InvalidMap(format!(
                "inverse contraction condition failed: ε·‖A⁻¹‖·Lip = {contraction_factor:.4} ≥ 1/2"
            )));
        }
        Ok(Self {
            matrix,
            inverse,
            amplitude,
            perturbation,
            splitting: LinearSplitting::from_matrix(matrix),
            contraction_factor,
        })
    }

    pub fn linear(matrix: [[i64; 2]; 2]) -> Result<Self> {
        Self::new(matrix, 0.0, Vec::new())
    }

    /// The Arnold cat map `[[2,1],[1,1]]`.
    pub fn cat_map() -> Self {
        Self::linear([[2, 1], [1, 1]]).expect("cat map is hyperbolic")
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn inverse_matrix(&self) -> [[i64; 2]; 2] {
        self.inverse
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn perturbation(&self) -> &[PerturbationTerm] {
        &self.perturbation
    }

    pub fn splitting(&self) -> &LinearSplitting {
        &self.splitting
    }

    /// `ε·‖A⁻¹‖·Lip(ψ)`, the contraction factor of the inverse iteration.
    pub fn contraction_factor(&self) -> f64 {
        self.contraction_factor
    }

    pub fn is_linear(&self) -> bool {
        self.amplitude == 0.0 || self.perturbation.is_empty()
    }

    pub fn spec(&self) -> MapSpec {
        MapSpec {
            matrix: self.matrix,
            amplitude: self.amplitude,
            perturbation: self.perturbation.clone(),
        }
    }

    /// `ψ_pert(x) = Σ c_k sin(2π k·x)`, unscaled by the amplitude.
    #[inline]
    fn perturbation_at(&self, x: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for t in &self.perturbation {
            let phase = TAU * (t.frequency[0] as f64 * x[0] + t.frequency[1] as f64 * x[1]);
            let s = phase.sin();
            out[0] += t.coefficient[0] * s;
            out[1] += t.coefficient[1] * s;
        }
        out
    }

    #[inline]
    fn linear_lift(m: &[[i64; 2]; 2], x: [f64; 2]) -> [f64; 2] {
        [
            m[0][0] as f64 * x[0] + m[0][1] as f64 * x[1],
            m[1][0] as f64 * x[0] + m[1][1] as f64 * x[1],
        ]
    }

    /// `f(p) = A·p + ε·ψ_pert(p) (mod 1)`.
    #[inline]
    pub fn step(&self, p: TorusPoint) -> TorusPoint {
        let x = p.coords();
        let mut y = Self::linear_lift(&self.matrix, x);
        if !self.is_linear() {
            let psi = self.perturbation_at(x);
            y[0] += self.amplitude * psi[0];
            y[1] += self.amplitude * psi[1];
        }
        TorusPoint::new(y[0], y[1])
    }

    /// Solves `f(q) = p` by the fixed-point iteration `q ← A⁻¹(p − ε·ψ_pert(q))`.
    pub fn step_inverse(&self, p: TorusPoint) -> Result<TorusPoint> {
        let x = p.coords();
        let mut q = {
            let y = Self::linear_lift(&self.inverse, x);
            TorusPoint::new(y[0], y[1])
        };
        if self.is_linear() {
            return Ok(q);
        }
        let mut residual = f64::INFINITY;
        for _ in 0..INVERSE_MAX_ITERATIONS {
            residual = self.step(q).distance(&p);
            if residual <= INVERSE_TOLERANCE {
                return Ok(q);
            }
            let psi = self.perturbation_at(q.coords());
            let rhs = [
                x[0] - self.amplitude * psi[0],
                x[1] - self.amplitude * psi[1],
            ];
            let y = Self::linear_lift(&self.inverse, rhs);
            q = TorusPoint::new(y[0], y[1]);
        }
        Err(Error::IterationDivergence {
            iterations: INVERSE_MAX_ITERATIONS,
            residual,
        })
    }

    /// `Df_p = A + ε·Dψ_pert(p)` with the analytic derivative of the sine series.
    #[inline]
    pub fn differential(&self, p: TorusPoint) -> JacobianMatrix {
        let m = &self.matrix;
        let mut out = [
            [m[0][0] as f64, m[0][1] as f64],
            [m[1][0] as f64, m[1][1] as f64],
        ];
        if !self.is_linear() {
            let x = p.coords();
            for t in &self.perturbation {
                let k = [t.frequency[0] as f64, t.frequency[1] as f64];
                let phase = TAU * (k[0] * x[0] + k[1] * x[1]);
                let scale = self.amplitude * TAU * phase.cos();
                for (i, row) in out.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell += scale * t.coefficient[i] * k[j];
                    }
                }
            }
        }
        JacobianMatrix(out)
    }

    /// `[p, f(p), …, f^{n−1}(p)]`.
    pub fn orbit(&self, p: TorusPoint, n: usize) -> Result<Vec<TorusPoint>> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "orbit length must be at least 1".into(),
            ));
        }
        Ok(self.iter_from(p).take(n).collect())
    }

    /// Infinite forward orbit starting at (and including) `p`.
    pub fn iter_from(&self, p: TorusPoint) -> Orbit<'_> {
        Orbit { map: self, next: p }
    }
}

impl TryFrom<MapSpec> for HyperbolicToralMap {
    type Error = Error;

    fn try_from(spec: MapSpec) -> Result<Self> {
        HyperbolicToralMap::new(spec.matrix, spec.amplitude, spec.perturbation)
    }
}

impl From<HyperbolicToralMap> for MapSpec {
    fn from(map: HyperbolicToralMap) -> Self {
        map.spec()
    }
}

pub struct Orbit<'a> {
    map: &'a HyperbolicToralMap,
    next: TorusPoint,
}

impl Iterator for Orbit<'_> {
    type Item = TorusPoint;

    #[inline]
    fn next(&mut self) -> Option<TorusPoint> {
        let current = self.next;
        self.next = self.map.step(current);
        Some(current)
    }
}

/// Outcome of the numerical cone check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    /// Minimal growth of the unstable coordinate over the unstable cone.
    pub lambda_expand: f64,
    /// Maximal contraction of the stable coordinate, `1 / min growth` under `Df⁻¹`.
    pub lambda_contract: f64,
    pub cone_half_angle: f64,
    pub grid_resolution: usize,
    pub pass: bool,
}

/// Cone check with the default half-angle.
pub fn verify_hyperbolicity(
    map: &HyperbolicToralMap,
    grid_resolution: usize,
) -> Result<ConeReport> {
    verify_hyperbolicity_with(map, grid_resolution, DEFAULT_CONE_HALF_ANGLE)
}

/// Checks, at every cell centre of a `G×G` grid, that `Df` maps the cone of
/// the given half-angle around the unstable eigendirection of `A` strictly
/// into itself while expanding the unstable coordinate, and that `Df⁻¹` does
/// the same for the stable cone.
///
/// Growth is measured in the eigen-coordinates of `A`; for the linear map this
/// makes the reported rates exactly `|λ_u|` and `|λ_s|`.
pub fn verify_hyperbolicity_with(
    map: &HyperbolicToralMap,
    grid_resolution: usize,
    half_angle: f64,
) -> Result<ConeReport> {
    if grid_resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "grid_resolution must be at least 16, got {grid_resolution}"
        )));
    }
    if !(half_angle > 0.0 && half_angle < 0.5 * PI) {
        return Err(Error::InvalidArgument(format!(
            "cone half-angle must lie in (0, π/2), got {half_angle}"
        )));
    }
    let split = map.splitting();
    let slope = half_angle.tan();
    let edge = |centre: [f64; 2], side: [f64; 2], t: f64| -> [f64; 2] {
        [
            centre[0] + t * slope * side[0],
            centre[1] + t * slope * side[1],
        ]
    };
    let g = grid_resolution as f64;
    let mut lambda_expand = f64::INFINITY;
    let mut lambda_contract: f64 = 0.0;
    for i in 0..grid_resolution {
        for j in 0..grid_resolution {
            let p = TorusPoint::new((i as f64 + 0.5) / g, (j as f64 + 0.5) / g);
            let df = map.differential(p);
            let df_inv = df.inverse().ok_or_else(|| Error::NotHyperbolic {
                x1: p.x1(),
                x2: p.x2(),
                reason: "singular differential".into(),
            })?;

            // unstable cone {a e_u + b e_s : |b| ≤ tan θ |a|} under Df
            let mut growth = f64::INFINITY;
            let mut sign = 0.0;
            for t in [-1.0, 1.0] {
                let [a, b] = split.coordinates(df.apply(edge(split.unstable, split.stable, t)));
                if sign == 0.0 {
                    sign = a.signum();
                }
                if a.signum() != sign || a == 0.0 {
                    return Err(Error::NotHyperbolic {
                        x1: p.x1(),
                        x2: p.x2(),
                        reason: "unstable cone image folds over the stable axis".into(),
                    });
                }
                if b.abs() >= slope * a.abs() {
                    return Err(Error::NotHyperbolic {
                        x1: p.x1(),
                        x2: p.x2(),
                        reason: format!(
                            "unstable cone not mapped into itself (image angle {:.4} ≥ {half_angle})",
                            (b / a).abs().atan()
                        ),
                    });
                }
                growth = growth.min(a.abs());
            }
            if growth <= 1.0 {
                return Err(Error::NotHyperbolic {
                    x1: p.x1(),
                    x2: p.x2(),
                    reason: format!("unstable growth {growth:.6} ≤ 1"),
                });
            }
            lambda_expand = lambda_expand.min(growth);

            // stable cone {a e_u + b e_s : |a| ≤ tan θ |b|} under Df⁻¹
            let mut growth = f64::INFINITY;
            let mut sign = 0.0;
            for t in [-1.0, 1.0] {
                let [a, b] = split.coordinates(df_inv.apply(edge(split.stable, split.unstable, t)));
                if sign == 0.0 {
                    sign = b.signum();
                }
                if b.signum() != sign || b == 0.0 {
                    return Err(Error::NotHyperbolic {
                        x1: p.x1(),
                        x2: p.x2(),
                        reason: "stable cone image folds over the unstable axis".into(),
                    });
                }
                if a.abs() >= slope * b.abs() {
                    return Err(Error::NotHyperbolic {
                        x1: p.x1(),
                        x2: p.x2(),
                        reason: format!(
                            "stable cone not mapped into itself under Df⁻¹ (image angle {:.4} ≥ {half_angle})",
                            (a / b).abs().atan()
                        ),
                    });
                }
                growth = growth.min(b.abs());
            }
            if growth <= 1.0 {
                return Err(Error::NotHyperbolic {
                    x1: p.x1(),
                    x2: p.x2(),
                    reason: format!("stable growth under Df⁻¹ {growth:.6} ≤ 1"),
                });
            }
            lambda_contract = lambda_contract.max(1.0 / growth);
        }
    }
    Ok(ConeReport {
        lambda_expand,
        lambda_contract,
        cone_half_angle: half_angle,
        grid_resolution,
        pass: true,
    })
}
