//! Markov partition of the cat map `[[2,1],[1,1]]`, symbolic itineraries,
//! cylinder statistics and plug-in entropy.
//!
//! Geometry is handled in the orthonormal eigen-frame `(u, s)`, where the
//! linear map acts as `(u, s) ↦ (λu, s/λ)` and `Z²` becomes the lattice
//! spanned by `(a, −b)` and `(b, a)`. Every piece is a rectangle in this
//! frame, taken modulo the lattice.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basin::SampleGrid;
use crate::error::{Error, Result};
use crate::torus::{HyperbolicToralMap, TorusPoint};
use crate::weak_star::DiscreteMeasure;

/// Closed-polygon tolerance used by [`MarkovPartition::locate`].
pub const LOCATE_TOLERANCE: f64 = 1e-12;
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;
pub const DIAMETER_BOUND: f64 = 0.5;
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 10_000;
/// Samples required per admissible word for a depth to count as adequate.
pub const SAMPLES_PER_WORD: u64 = 10;
pub const STABILITY_GATE: f64 = 0.05;

const PHI: f64 = 1.618_033_988_749_895;
const LAMBDA: f64 = PHI * PHI;
const LATTICE_RANGE: i64 = 8;

fn frame() -> ([f64; 2], [f64; 2]) {
    let c = 1.0 / (1.0 + PHI * PHI).sqrt();
    ([c * PHI, c], [-c, c * PHI])
}

fn to_eigen(x: [f64; 2]) -> [f64; 2] {
    let (eu, es) = frame();
    [x[0] * eu[0] + x[1] * eu[1], x[0] * es[0] + x[1] * es[1]]
}

fn from_eigen(v: [f64; 2]) -> [f64; 2] {
    let (eu, es) = frame();
    [v[0] * eu[0] + v[1] * es[0], v[0] * eu[1] + v[1] * es[1]]
}

/// Image of the integer vector `(m, n)` in the eigen-frame.
fn lattice(m: i64, n: i64) -> [f64; 2] {
    to_eigen([m as f64, n as f64])
}

fn lattice_vectors(range: i64) -> impl Iterator<Item = [f64; 2]> {
    (-range..=range).flat_map(move |m| (-range..=range).map(move |n| lattice(m, n)))
}

/// Axis-aligned rectangle `[u0,u1]×[s0,s1]` in the eigen-frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub u: [f64; 2],
    pub s: [f64; 2],
}

impl Rect {
    fn new(u0: f64, u1: f64, s0: f64, s1: f64) -> Self {
        Self {
            u: [u0, u1],
            s: [s0, s1],
        }
    }

    pub fn width(&self) -> f64 {
        self.u[1] - self.u[0]
    }

    pub fn height(&self) -> f64 {
        self.s[1] - self.s[0]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn translate(&self, t: [f64; 2]) -> Rect {
        Rect::new(
            self.u[0] + t[0],
            self.u[1] + t[0],
            self.s[0] + t[1],
            self.s[1] + t[1],
        )
    }

    fn forward(&self) -> Rect {
        Rect::new(
            self.u[0] * LAMBDA,
            self.u[1] * LAMBDA,
            self.s[0] / LAMBDA,
            self.s[1] / LAMBDA,
        )
    }

    fn backward(&self) -> Rect {
        Rect::new(
            self.u[0] / LAMBDA,
            self.u[1] / LAMBDA,
            self.s[0] * LAMBDA,
            self.s[1] * LAMBDA,
        )
    }

    fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.u[0].max(other.u[0]),
            self.u[1].min(other.u[1]),
            self.s[0].max(other.s[0]),
            self.s[1].min(other.s[1]),
        );
        (r.width() > 1e-12 && r.height() > 1e-12).then_some(r)
    }

    fn contains(&self, v: [f64; 2], tol: f64) -> bool {
        v[0] >= self.u[0] - tol
            && v[0] <= self.u[1] + tol
            && v[1] >= self.s[0] - tol
            && v[1] <= self.s[1] + tol
    }

    fn center(&self) -> [f64; 2] {
        [0.5 * (self.u[0] + self.u[1]), 0.5 * (self.s[0] + self.s[1])]
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.u[0], self.s[0]],
            [self.u[1], self.s[0]],
            [self.u[1], self.s[1]],
            [self.u[0], self.s[1]],
        ]
    }
}

/// All intersections `r ∩ (q + ℓ)` with non-empty interior over lattice translates `ℓ`.
fn lattice_intersections(r: &Rect, q: &Rect) -> Vec<Rect> {
    lattice_vectors(LATTICE_RANGE)
        .filter_map(|l| r.intersect(&q.translate(l)))
        .collect()
}

/// Largest torus distance between two points of `r`, sampled on a
/// `(2m+1)²` grid over the difference rectangle.
fn torus_diameter(r: &Rect, m: usize) -> f64 {
    let (w, h) = (r.width(), r.height());
    let shifts: Vec<[f64; 2]> = lattice_vectors(3).collect();
    let mut best: f64 = 0.0;
    for i in 0..=2 * m {
        let du = w * (i as f64 / m as f64 - 1.0);
        for j in 0..=2 * m {
            let ds = h * (j as f64 / m as f64 - 1.0);
            let d = shifts
                .iter()
                .map(|l| (du - l[0]).hypot(ds - l[1]))
                .fold(f64::INFINITY, f64::min);
            best = best.max(d);
        }
    }
    best
}

fn clip(poly: &[[f64; 2]], axis: usize, bound: f64, keep_below: bool) -> Vec<[f64; 2]> {
    let inside = |p: &[f64; 2]| {
        if keep_below {
            p[axis] <= bound
        } else {
            p[axis] >= bound
        }
    };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for (idx, cur) in poly.iter().enumerate() {
        let prev = &poly[(idx + poly.len() - 1) % poly.len()];
        let crossing = || {
            let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
            let mut p = [
                prev[0] + t * (cur[0] - prev[0]),
                prev[1] + t * (cur[1] - prev[1]),
            ];
            p[axis] = bound;
            p
        };
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(*cur),
            (true, false) => out.push(crossing()),
            (false, true) => {
                out.push(crossing());
                out.push(*cur);
            }
            (false, false) => {}
        }
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        .abs()
}

/// Fragments of the torus image of `r` inside the unit square.
fn unit_square_polygons(r: &Rect) -> Vec<Vec<[f64; 2]>> {
    let quad: Vec<[f64; 2]> = r.corners().iter().map(|c| from_eigen(*c)).collect();
    let mut out = Vec::new();
    for m in -3i64..=3 {
        for n in -3i64..=3 {
            let shifted: Vec<[f64; 2]> = quad
                .iter()
                .map(|p| [p[0] + m as f64, p[1] + n as f64])
                .collect();
            let mut poly = shifted;
            for (axis, bound, below) in [
                (0, 0.0, false),
                (0, 1.0, true),
                (1, 0.0, false),
                (1, 1.0, true),
            ] {
                if poly.is_empty() {
                    break;
                }
                poly = clip(&poly, axis, bound, below);
            }
            if poly.len() >= 3 && polygon_area(&poly) > 1e-14 {
                out.push(poly);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub rect: Rect,
    /// Fragments inside the unit square, vertices counter-clockwise.
    pub polygons: Vec<Vec<[f64; 2]>>,
    pub area: f64,
    /// Lattice shifts `ℓ` with `(rect − ℓ)` meeting the eigen-frame image of the unit square.
    shifts: Vec<[f64; 2]>,
}

impl Piece {
    fn new(rect: Rect) -> Self {
        let polygons = unit_square_polygons(&rect);
        let area = polygons.iter().map(|p| polygon_area(p)).sum();
        let box_u = [0.0, to_eigen([1.0, 1.0])[0]];
        let box_s = [to_eigen([1.0, 0.0])[1], to_eigen([0.0, 1.0])[1]];
        let margin = 1e-6;
        let shifts = lattice_vectors(LATTICE_RANGE)
            .filter(|l| {
                rect.u[0] - l[0] <= box_u[1] + margin
                    && rect.u[1] - l[0] >= box_u[0] - margin
                    && rect.s[0] - l[1] <= box_s[1] + margin
                    && rect.s[1] - l[1] >= box_s[0] - margin
            })
            .collect();
        Self {
            rect,
            polygons,
            area,
            shifts,
        }
    }

    fn contains_eigen(&self, v: [f64; 2], tol: f64) -> bool {
        self.shifts
            .iter()
            .any(|l| self.rect.contains([v[0] + l[0], v[1] + l[1]], tol))
    }

    /// A point in the interior of the piece.
    pub fn centroid(&self) -> TorusPoint {
        let x = from_eigen(self.rect.center());
        TorusPoint::new(x[0], x[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub area_sum: f64,
    pub max_diameter: f64,
    pub generator_diameter: f64,
    pub boundary_samples: usize,
    pub max_stable_defect: f64,
    pub max_unstable_defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPartition {
    pieces: Vec<Piece>,
    transition: Vec<Vec<u8>>,
    max_diameter: f64,
    generator_diameter: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PieceExport {
    pub index: usize,
    pub area: f64,
    pub diameter: f64,
    pub polygons: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PartitionExport {
    pub matrix: [[i64; 2]; 2],
    pub alphabet_size: usize,
    pub max_diameter: f64,
    pub generator_diameter: f64,
    pub transition_matrix: Vec<Vec<u8>>,
    pub pieces: Vec<PieceExport>,
}

/// Builds the partition and runs the full validation at
/// [`DEFAULT_BOUNDARY_SAMPLES`] boundary samples.
pub fn cat_map_partition() -> Result<MarkovPartition> {
    let partition = MarkovPartition::build();
    let report = partition.validate(DEFAULT_BOUNDARY_SAMPLES);
    if !report.pass {
        return Err(Error::ConstructionInvalid(format!("{report:?}")));
    }
    Ok(partition)
}

impl MarkovPartition {
    /// The two-square tiling `Q_a = [0,a]²`, `Q_b = [a,a+b]×[a−b,a]` refined by
    /// its preimage, so pieces are the components of `Q_i ∩ f^{-1}(Q_j)`.
    fn build() -> Self {
        let c = 1.0 / (1.0 + PHI * PHI).sqrt();
        let (a, b) = (c * PHI, c);
        let squares = [Rect::new(0.0, a, 0.0, a), Rect::new(a, a + b, a - b, a)];
        let mut rects = Vec::new();
        for q in &squares {
            for r in &squares {
                let mut parts = lattice_intersections(q, &r.backward());
                parts.sort_by(|x, y| x.u[0].total_cmp(&y.u[0]).then(x.s[0].total_cmp(&y.s[0])));
                rects.extend(parts);
            }
        }
        let pieces: Vec<Piece> = rects.into_iter().map(Piece::new).collect();
        let transition = pieces
            .iter()
            .map(|p| {
                let image = p.rect.forward();
                pieces
                    .iter()
                    .map(|q| u8::from(!lattice_intersections(&image, &q.rect).is_empty()))
                    .collect()
            })
            .collect();
        let max_diameter = pieces
            .iter()
            .map(|p| torus_diameter(&p.rect, 200))
            .fold(0.0, f64::max);
        let generator_diameter = pieces
            .iter()
            .flat_map(|p| {
                squares
                    .iter()
                    .flat_map(move |q| lattice_intersections(&p.rect, &q.forward()))
            })
            .map(|r| torus_diameter(&r, 200))
            .fold(0.0, f64::max);
        Self {
            pieces,
            transition,
            max_diameter,
            generator_diameter,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Largest torus diameter of a single piece.
    pub fn max_diameter(&self) -> f64 {
        self.max_diameter
    }

    /// Largest torus diameter of a piece of the join `ℛ ∨ fℛ`.
    pub fn generator_diameter(&self) -> f64 {
        self.generator_diameter
    }

    /// `T[i][j] = 1` iff `f(R_i) ∩ R_j` has non-empty interior.
    pub fn transition_matrix(&self) -> &[Vec<u8>] {
        &self.transition
    }

    /// Index of the piece containing `p`; the lowest index wins on shared boundaries.
    pub fn locate(&self, p: TorusPoint) -> Result<usize> {
        let v = to_eigen(p.coords());
        self.pieces
            .iter()
            .position(|piece| piece.contains_eigen(v, LOCATE_TOLERANCE))
            .ok_or(Error::LocationFailure {
                x1: p.x1(),
                x2: p.x2(),
            })
    }

    fn on_boundary(&self, p: TorusPoint, stable: bool) -> f64 {
        let v = to_eigen(p.coords());
        let mut best = f64::INFINITY;
        for piece in &self.pieces {
            for l in &piece.shifts {
                let w = [v[0] + l[0], v[1] + l[1]];
                let r = &piece.rect;
                let (along, across, span) = if stable {
                    (w[1], w[0], r.u)
                } else {
                    (w[0], w[1], r.s)
                };
                let range = if stable { r.s } else { r.u };
                if along < range[0] - BOUNDARY_TOLERANCE || along > range[1] + BOUNDARY_TOLERANCE {
                    continue;
                }
                best = best
                    .min((across - span[0]).abs())
                    .min((across - span[1]).abs());
            }
        }
        best
    }

    /// Re-runs the area, diameter and boundary checks. Boundary samples are
    /// spread over the stable sides (mapped by `f`) and unstable sides
    /// (mapped by `f^{-1}`) of every piece.
    pub fn validate(&self, boundary_samples: usize) -> ValidationReport {
        let cat = HyperbolicToralMap::cat_map();
        let area_sum: f64 = self.pieces.iter().map(|p| p.area).sum();
        let sides = 4 * self.pieces.len();
        let per_side = boundary_samples.div_ceil(sides).max(1);
        let mut max_stable: f64 = 0.0;
        let mut max_unstable: f64 = 0.0;
        for piece in &self.pieces {
            let r = piece.rect;
            for k in 0..per_side {
                let t = (k as f64 + 0.5) / per_side as f64;
                for side in 0..2 {
                    let s = r.s[0] + t * r.height();
                    let x = from_eigen([r.u[side], s]);
                    let image = cat.step(TorusPoint::new(x[0], x[1]));
                    max_stable = max_stable.max(self.on_boundary(image, true));

                    let u = r.u[0] + t * r.width();
                    let x = from_eigen([u, r.s[side]]);
                    let pre = cat
                        .step_inverse(TorusPoint::new(x[0], x[1]))
                        .expect("linear inverse");
                    max_unstable = max_unstable.max(self.on_boundary(pre, false));
                }
            }
        }
        let pass = (area_sum - 1.0).abs() <= 1e-9
            && self
                .pieces
                .iter()
                .all(|p| (p.area - p.rect.area()).abs() <= 1e-9)
            && self.generator_diameter < DIAMETER_BOUND
            && max_stable <= BOUNDARY_TOLERANCE
            && max_unstable <= BOUNDARY_TOLERANCE;
        ValidationReport {
            area_sum,
            max_diameter: self.max_diameter,
            generator_diameter: self.generator_diameter,
            boundary_samples: per_side * sides,
            max_stable_defect: max_stable,
            max_unstable_defect: max_unstable,
            pass,
        }
    }

    /// Number of admissible words of length `n ≥ 1`: `1ᵀ T^{n−1} 1`.
    pub fn admissible_words(&self, n: usize) -> u128 {
        let k = self.alphabet_size();
        let mut v = vec![1u128; k];
        for _ in 1..n {
            v = (0..k)
                .map(|i| (0..k).map(|j| self.transition[i][j] as u128 * v[j]).sum())
                .collect();
        }
        v.iter().sum()
    }

    /// Spectral radius of the transition matrix by power iteration.
    pub fn spectral_radius(&self) -> f64 {
        let k = self.alphabet_size();
        let mut v = vec![1.0; k];
        let mut rho = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..k)
                .map(|i| (0..k).map(|j| self.transition[i][j] as f64 * v[j]).sum())
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            rho = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        rho
    }

    pub fn export(&self) -> PartitionExport {
        PartitionExport {
            matrix: [[2, 1], [1, 1]],
            alphabet_size: self.alphabet_size(),
            max_diameter: self.max_diameter,
            generator_diameter: self.generator_diameter,
            transition_matrix: self.transition.clone(),
            pieces: self
                .pieces
                .iter()
                .enumerate()
                .map(|(index, p)| PieceExport {
                    index,
                    area: p.area,
                    diameter: torus_diameter(&p.rect, 200),
                    polygons: p.polygons.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }

    fn bits_per_symbol(&self) -> u32 {
        usize::BITS - (self.alphabet_size() - 1).leading_zeros()
    }

    fn max_depth(&self) -> usize {
        (64 / self.bits_per_symbol()) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Itinerary {
    pub symbols: Vec<u8>,
}

impl fmt::Display for Itinerary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Symbols of `f^j(p)` for `j < n`.
pub fn itinerary(
    map: &HyperbolicToralMap,
    partition: &MarkovPartition,
    p: TorusPoint,
    n: usize,
) -> Result<Itinerary> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "itinerary length must be at least 1".into(),
        ));
    }
    let symbols = map
        .iter_from(p)
        .take(n)
        .map(|x| partition.locate(x).map(|s| s as u8))
        .collect::<Result<_>>()?;
    Ok(Itinerary { symbols })
}

/// Where cylinder statistics are sampled from.
#[derive(Debug, Clone, PartialEq)]
pub enum CylinderSource {
    /// Windows `f^t(start), t < length`, of one long orbit.
    Orbit {
        start: TorusPoint,
        length: usize,
    },
    Grid(SampleGrid),
    /// Each atom contributes `round(weight · samples)` copies of its itinerary.
    Discrete {
        measure: DiscreteMeasure,
        samples: u64,
    },
    /// Pooled samples of all parts.
    Combined(Vec<CylinderSource>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderTable {
    pub n: usize,
    pub counts: BTreeMap<Itinerary, u64>,
    pub total: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CylinderTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("itinerary,count\n");
        for (it, c) in &self.counts {
            out.push_str(&format!("{it},{c}\n"));
        }
        out
    }

    /// Table at depth `n − 1` obtained by dropping the last symbol.
    pub fn marginalize(&self) -> CylinderTable {
        let mut counts = BTreeMap::new();
        for (it, c) in &self.counts {
            let key = Itinerary {
                symbols: it.symbols[..it.symbols.len() - 1].to_vec(),
            };
            *counts.entry(key).or_insert(0) += c;
        }
        CylinderTable {
            n: self.n - 1,
            counts,
            total: self.total,
            warnings: vec![],
        }
    }
}

/// Itinerary samples at a fixed maximal depth, packed one word per sample
/// (first symbol in the high bits), sorted and run-length encoded. Tables
/// at smaller depths are prefixes, so they share one sample set.
#[derive(Debug, Clone)]
pub struct CylinderSamples {
    depth: usize,
    bits: u32,
    runs: Vec<(u64, u64)>,
    total: u64,
}

fn run_length(mut codes: Vec<u64>) -> Vec<(u64, u64)> {
    codes.par_sort_unstable();
    let mut runs: Vec<(u64, u64)> = Vec::new();
    for c in codes {
        match runs.last_mut() {
            Some((last, count)) if *last == c => *count += 1,
            _ => runs.push((c, 1)),
        }
    }
    runs
}

fn merge_runs(mut runs: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    runs.sort_unstable_by_key(|r| r.0);
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(runs.len());
    for (c, k) in runs {
        match out.last_mut() {
            Some((last, count)) if *last == c => *count += k,
            _ => out.push((c, k)),
        }
    }
    out
}

const ORBIT_CHUNK: usize = 1 << 20;

impl CylinderSamples {
    pub fn collect(
        map: &HyperbolicToralMap,
        partition: &MarkovPartition,
        source: &CylinderSource,
        depth: usize,
    ) -> Result<Self> {
        if depth == 0 || depth > partition.max_depth() {
            return Err(Error::InvalidArgument(format!(
                "cylinder depth must be in 1..={}, got {depth}",
                partition.max_depth()
            )));
        }
        let bits = partition.bits_per_symbol();
        let runs = Self::runs(map, partition, source, depth, bits)?;
        let total = runs.iter().map(|r| r.1).sum();
        Ok(Self {
            depth,
            bits,
            runs,
            total,
        })
    }

    fn pack(symbols: &[u8], bits: u32) -> u64 {
        symbols
            .iter()
            .fold(0u64, |acc, s| (acc << bits) | *s as u64)
    }

    fn code_of(
        map: &HyperbolicToralMap,
        partition: &MarkovPartition,
        p: TorusPoint,
        depth: usize,
        bits: u32,
    ) -> Result<u64> {
        itinerary(map, partition, p, depth).map(|it| Self::pack(&it.symbols, bits))
    }

    fn runs(
        map: &HyperbolicToralMap,
        partition: &MarkovPartition,
        source: &CylinderSource,
        depth: usize,
        bits: u32,
    ) -> Result<Vec<(u64, u64)>> {
        match source {
            CylinderSource::Orbit { start, length } => {
                let needed = length + depth - 1;
                let mut symbols = Vec::with_capacity(needed);
                let mut x = *start;
                let mut chunk = Vec::with_capacity(ORBIT_CHUNK.min(needed));
                while symbols.len() < needed {
                    chunk.clear();
                    let take = ORBIT_CHUNK.min(needed - symbols.len());
                    for _ in 0..take {
                        chunk.push(x);
                        x = map.step(x);
                    }
                    let located: Vec<u8> = chunk
                        .par_iter()
                        .map(|p| partition.locate(*p).map(|s| s as u8))
                        .collect::<Result<_>>()?;
                    symbols.extend(located);
                }
                let mask = if bits as usize * depth == 64 {
                    u64::MAX
                } else {
                    (1u64 << (bits as usize * depth)) - 1
                };
                let mut code = Self::pack(&symbols[..depth - 1], bits);
                let codes: Vec<u64> = symbols[depth - 1..]
                    .iter()
                    .map(|s| {
                        code = ((code << bits) | *s as u64) & mask;
                        code
                    })
                    .collect();
                Ok(run_length(codes))
            }
            CylinderSource::Grid(grid) => {
                grid.validate()?;
                let codes: Vec<u64> = (0..grid.resolution)
                    .into_par_iter()
                    .map(|j| {
                        (0..grid.resolution)
                            .map(|i| Self::code_of(map, partition, grid.point(i, j), depth, bits))
                            .collect::<Result<Vec<u64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect();
                Ok(run_length(codes))
            }
            CylinderSource::Discrete { measure, samples } => {
                let mut runs = Vec::with_capacity(measure.len());
                for (p, w) in measure.iter() {
                    let count = (w * *samples as f64).round() as u64;
                    if count > 0 {
                        runs.push((Self::code_of(map, partition, p, depth, bits)?, count));
                    }
                }
                Ok(merge_runs(runs))
            }
            CylinderSource::Combined(parts) => {
                let mut runs = Vec::new();
                for part in parts {
                    runs.extend(Self::runs(map, partition, part, depth, bits)?);
                }
                Ok(merge_runs(runs))
            }
        }
    }

    /// Pools several sample sets taken at the same depth.
    pub fn merged(parts: &[&CylinderSamples]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
        if parts
            .iter()
            .any(|p| p.depth != first.depth || p.bits != first.bits)
        {
            return Err(Error::InvalidArgument("sample sets differ in depth".into()));
        }
        let runs = merge_runs(parts.iter().flat_map(|p| p.runs.iter().copied()).collect());
        let total = runs.iter().map(|r| r.1).sum();
        Ok(Self {
            depth: first.depth,
            bits: first.bits,
            runs,
            total,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Counts of the depth-`n` cylinders in lexicographic order.
    pub fn counts(&self, n: usize) -> Vec<(u64, u64)> {
        assert!(
            n >= 1 && n <= self.depth,
            "depth {n} outside 1..={}",
            self.depth
        );
        let shift = self.bits as usize * (self.depth - n);
        let mut out: Vec<(u64, u64)> = Vec::new();
        for &(code, c) in &self.runs {
            let prefix = code >> shift;
            match out.last_mut() {
                Some((last, count)) if *last == prefix => *count += c,
                _ => out.push((prefix, c)),
            }
        }
        out
    }

    pub fn entropy(&self, n: usize) -> f64 {
        entropy_of_counts(self.counts(n).iter().map(|r| r.1), self.total)
    }

    pub fn table(&self, partition: &MarkovPartition, n: usize) -> CylinderTable {
        let mask = (1u64 << self.bits) - 1;
        let counts = self
            .counts(n)
            .into_iter()
            .map(|(code, c)| {
                let symbols = (0..n)
                    .rev()
                    .map(|j| ((code >> (self.bits as usize * j)) & mask) as u8)
                    .collect();
                (Itinerary { symbols }, c)
            })
            .collect();
        let mut warnings = Vec::new();
        let needed = SAMPLES_PER_WORD as u128 * partition.admissible_words(n);
        if (self.total as u128) < needed {
            warnings.push(format!(
                "depth {n}: {} samples is below the adequacy threshold {needed}",
                self.total
            ));
        }
        CylinderTable {
            n,
            counts,
            total: self.total,
            warnings,
        }
    }
}

fn entropy_of_counts(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    let t = total as f64;
    -counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / t;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn cylinder_frequencies(
    map: &HyperbolicToralMap,
    partition: &MarkovPartition,
    source: &CylinderSource,
    n: usize,
) -> Result<CylinderTable> {
    Ok(CylinderSamples::collect(map, partition, source, n)?.table(partition, n))
}

/// Plug-in entropy `−Σ p log p` of a table, natural log.
pub fn partition_entropy(table: &CylinderTable) -> f64 {
    entropy_of_counts(table.counts.values().copied(), table.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub n: usize,
    pub entropy: f64,
    pub rate: f64,
    pub cylinders: usize,
    pub samples: u64,
    pub adequate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// `H(ℛ_n, μ)/n` at the deepest adequate depth.
    pub rate: f64,
    pub depth: usize,
    pub rows: Vec<EntropyRow>,
    /// The two deepest adequate rates differ by less than [`STABILITY_GATE`].
    pub stable: bool,
    /// The map is not the linear map the partition was built for.
    pub non_exact_partition: bool,
    pub warnings: Vec<String>,
}

fn is_exact_for(map: &HyperbolicToralMap) -> bool {
    map.is_linear() && map.matrix() == [[2, 1], [1, 1]]
}

pub fn entropy_rate_estimate(
    map: &HyperbolicToralMap,
    partition: &MarkovPartition,
    source: &CylinderSource,
    n_range: &[usize],
) -> Result<EntropyEstimate> {
    if n_range.is_empty() || n_range[0] == 0 || n_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "depth range must be non-empty, positive and increasing".into(),
        ));
    }
    let samples =
        CylinderSamples::collect(map, partition, source, *n_range.last().expect("non-empty"))?;
    entropy_rate_from_samples(map, partition, &samples, n_range)
}

pub fn entropy_rate_from_samples(
    map: &HyperbolicToralMap,
    partition: &MarkovPartition,
    samples: &CylinderSamples,
    n_range: &[usize],
) -> Result<EntropyEstimate> {
    let mut warnings = Vec::new();
    let rows: Vec<EntropyRow> = n_range
        .iter()
        .map(|&n| {
            let counts = samples.counts(n);
            let entropy = entropy_of_counts(counts.iter().map(|r| r.1), samples.total());
            let adequate =
                samples.total() as u128 >= SAMPLES_PER_WORD as u128 * partition.admissible_words(n);
            EntropyRow {
                n,
                entropy,
                rate: entropy / n as f64,
                cylinders: counts.len(),
                samples: samples.total(),
                adequate,
            }
        })
        .collect();
    let adequate: Vec<&EntropyRow> = rows.iter().filter(|r| r.adequate).collect();
    let best = adequate.last().ok_or_else(|| {
        Error::InsufficientSamples(format!(
            "{} samples are not adequate at any depth in {:?}",
            samples.total(),
            n_range
        ))
    })?;
    let stable = match adequate.as_slice() {
        [.., prev, last] => (last.rate - prev.rate).abs() < STABILITY_GATE,
        _ => true,
    };
    if !stable {
        warnings.push("entropy rate still moves by more than the stability gate at the deepest adequate depths".into());
    }
    let non_exact_partition = !is_exact_for(map);
    if non_exact_partition {
        warnings.push("partition is exact only for the linear cat map".into());
    }
    Ok(EntropyEstimate {
        rate: best.rate,
        depth: best.n,
        stable,
        non_exact_partition,
        warnings,
        rows: rows.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub n: usize,
    pub words: u128,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRates {
    pub rows: Vec<CountRow>,
    /// Supremum of `log #ℛ_n / n` over the range.
    pub k0: f64,
}

/// `log #ℛ_n / n` from exact admissible-word counts.
pub fn cylinder_count_rate(partition: &MarkovPartition, n_range: &[usize]) -> Result<CountRates> {
    if n_range.is_empty() || n_range.contains(&0) {
        return Err(Error::InvalidArgument(
            "depth range must be non-empty and positive".into(),
        ));
    }
    let rows: Vec<CountRow> = n_range
        .iter()
        .map(|&n| {
            let words = partition.admissible_words(n);
            CountRow {
                n,
                words,
                rate: (words as f64).ln() / n as f64,
            }
        })
        .collect();
    let k0 = rows
        .iter()
        .map(|r| r.rate)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CountRates { rows, k0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub n: usize,
    pub epsilon: f64,
    pub entropy: f64,
    pub k0: f64,
    /// Cylinders in the smallest union carrying mass `> 1 − ε`.
    pub covering_cylinders: usize,
    pub covered_mass: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// `log #A − (H − nK₀ε + ε log ε + (1−ε) log(1−ε))`, where `A` is the smallest
/// union of depth-`n` cylinders with empirical mass above `1 − ε`.
pub fn entropy_count_bound_check(
    map: &HyperbolicToralMap,
    partition: &MarkovPartition,
    source: &CylinderSource,
    eps: f64,
    n: usize,
) -> Result<BoundCheck> {
    let samples = CylinderSamples::collect(map, partition, source, n)?;
    bound_check_from_samples(partition, &samples, eps, n)
}

pub fn bound_check_from_samples(
    partition: &MarkovPartition,
    samples: &CylinderSamples,
    eps: f64,
    n: usize,
) -> Result<BoundCheck> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::InvalidArgument(format!(
            "ε must lie in (0, 1/4), got {eps}"
        )));
    }
    if samples.total() == 0 {
        return Err(Error::InsufficientSamples("empty cylinder sample".into()));
    }
    let mut counts: Vec<u64> = samples.counts(n).into_iter().map(|r| r.1).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total = samples.total() as f64;
    let mut mass = 0u64;
    let mut covering = 0;
    for c in &counts {
        if mass as f64 > (1.0 - eps) * total {
            break;
        }
        mass += c;
        covering += 1;
    }
    let entropy = samples.entropy(n);
    let range: Vec<usize> = (1..=n).collect();
    let k0 = cylinder_count_rate(partition, &range)?.k0;
    let lhs = (covering as f64).ln();
    let rhs = entropy - n as f64 * k0 * eps + eps * eps.ln() + (1.0 - eps) * (1.0 - eps).ln();
    Ok(BoundCheck {
        n,
        epsilon: eps,
        entropy,
        k0,
        covering_cylinders: covering,
        covered_mass: mass as f64 / total,
        lhs,
        rhs,
        margin: lhs - rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn partition() -> &'static MarkovPartition {
        static P: OnceLock<MarkovPartition> = OnceLock::new();
        P.get_or_init(|| cat_map_partition().unwrap())
    }

    fn fib(k: usize) -> u128 {
        let (mut a, mut b) = (0u128, 1u128);
        for _ in 0..k {
            (a, b) = (b, a + b);
        }
        a
    }

    fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
        let n = poly.len();
        (0..n).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
        })
    }

    #[test]
    fn construction_is_valid() {
        let p = partition();
        assert_eq!(p.alphabet_size(), 5);
        let r = p.validate(DEFAULT_BOUNDARY_SAMPLES);
        assert!(r.pass, "{r:?}");
        assert!(r.boundary_samples >= DEFAULT_BOUNDARY_SAMPLES);
        assert_abs_diff_eq!(r.area_sum, 1.0, epsilon = 1e-9);
        assert!(p.generator_diameter() < DIAMETER_BOUND);
        assert!(p.max_diameter() >= p.generator_diameter());
        for piece in p.pieces() {
            for poly in &piece.polygons {
                assert!(poly
                    .iter()
                    .all(|v| (0.0..=1.0).contains(&v[0]) && (0.0..=1.0).contains(&v[1])));
            }
        }
    }

    #[test]
    fn transition_matrix_has_golden_growth() {
        let p = partition();
        let lam = (3.0 + 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(p.spectral_radius(), lam, epsilon = 1e-6);
        for n in 1..=20 {
            assert_eq!(p.admissible_words(n), fib(2 * n + 3));
        }
    }

    #[test]
    fn sampled_transitions_match_matrix() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let k = p.alphabet_size();
        let mut seen = vec![vec![0u8; k]; k];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200_000 {
            let x = TorusPoint::new(rng.gen(), rng.gen());
            seen[p.locate(x).unwrap()][p.locate(cat.step(x)).unwrap()] = 1;
        }
        assert_eq!(seen, p.transition_matrix());
    }

    #[test]
    fn locate_examples() {
        let p = partition();
        for (i, piece) in p.pieces().iter().enumerate() {
            assert_eq!(p.locate(piece.centroid()).unwrap(), i);
        }
        let incident = p
            .pieces()
            .iter()
            .position(|piece| piece.contains_eigen([0.0, 0.0], LOCATE_TOLERANCE))
            .unwrap();
        assert_eq!(p.locate(TorusPoint::origin()).unwrap(), incident);
        assert_eq!(
            p.locate(TorusPoint::new(1.0 - 1e-17, 0.0)).unwrap(),
            incident
        );
    }

    #[test]
    fn random_points_locate_consistently_with_polygons() {
        let p = partition();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1_000_000 {
            let x = TorusPoint::new(rng.gen(), rng.gen());
            let s = p.locate(x).unwrap();
            assert!(p.pieces()[s]
                .polygons
                .iter()
                .any(|poly| point_in_polygon(x.coords(), poly)));
        }
    }

    #[test]
    fn itinerary_examples() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let fixed = itinerary(&cat, p, TorusPoint::origin(), 9).unwrap();
        assert!(fixed.symbols.iter().all(|s| *s == fixed.symbols[0]));
        let x = TorusPoint::new(0.123, 0.456);
        assert_eq!(
            itinerary(&cat, p, x, 1).unwrap().symbols,
            vec![p.locate(x).unwrap() as u8]
        );
        let long = itinerary(&cat, p, x, 12).unwrap();
        let tail = itinerary(&cat, p, cat.step(x), 11).unwrap();
        assert_eq!(&long.symbols[1..], &tail.symbols[..]);
        assert!(itinerary(&cat, p, x, 0).is_err());
        let t = p.transition_matrix();
        assert!(long
            .symbols
            .windows(2)
            .all(|w| t[w[0] as usize][w[1] as usize] == 1));
    }

    #[test]
    fn fixed_point_source_has_one_cylinder() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let src = CylinderSource::Discrete {
            measure: DiscreteMeasure::dirac(TorusPoint::origin()),
            samples: 1000,
        };
        let t = cylinder_frequencies(&cat, p, &src, 6).unwrap();
        assert_eq!(t.counts.len(), 1);
        assert_eq!(t.total, 1000);
        assert_eq!(partition_entropy(&t), 0.0);
        let orbit = CylinderSource::Orbit {
            start: TorusPoint::origin(),
            length: 500,
        };
        let t2 = cylinder_frequencies(&cat, p, &orbit, 6).unwrap();
        assert_eq!(
            t2.counts.keys().collect::<Vec<_>>(),
            t.counts.keys().collect::<Vec<_>>()
        );
    }

    #[test]
    fn grid_frequencies_match_areas() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let g = 512;
        let t = cylinder_frequencies(&cat, p, &CylinderSource::Grid(SampleGrid::centers(g)), 1)
            .unwrap();
        for (it, c) in &t.counts {
            let area = p.pieces()[it.symbols[0] as usize].area;
            assert!((*c as f64 / t.total as f64 - area).abs() < 2.0 / g as f64);
        }
        let oracle: f64 = -p.pieces().iter().map(|q| q.area * q.area.ln()).sum::<f64>();
        assert_abs_diff_eq!(partition_entropy(&t), oracle, epsilon = 0.01);
    }

    #[test]
    fn tables_are_shift_consistent_and_admissible() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let src = CylinderSource::Orbit {
            start: TorusPoint::new(0.1234, 0.5678),
            length: 200_000,
        };
        let samples = CylinderSamples::collect(&cat, p, &src, 8).unwrap();
        for n in 2..=8 {
            let t = samples.table(p, n);
            assert_eq!(
                t.marginalize(),
                CylinderTable {
                    warnings: vec![],
                    ..samples.table(p, n - 1)
                }
            );
            assert!(t.counts.len() as u128 <= p.admissible_words(n));
            assert!(partition_entropy(&t) <= (t.counts.len() as f64).ln() + 1e-12);
            assert_eq!(t.counts.values().sum::<u64>(), t.total);
        }
        let table = samples.table(p, 8);
        let direct = cylinder_frequencies(&cat, p, &src, 8).unwrap();
        assert_eq!(table, direct);
    }

    #[test]
    fn entropy_of_uniform_table() {
        let counts = (0..7u8)
            .map(|i| (Itinerary { symbols: vec![i] }, 3))
            .collect();
        let t = CylinderTable {
            n: 1,
            counts,
            total: 21,
            warnings: vec![],
        };
        assert_abs_diff_eq!(partition_entropy(&t), 7f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn entropy_rate_of_fixed_point_is_zero() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let src = CylinderSource::Discrete {
            measure: DiscreteMeasure::dirac(TorusPoint::origin()),
            samples: 10_000_000,
        };
        let e = entropy_rate_estimate(&cat, p, &src, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(e.rows.iter().all(|r| r.entropy == 0.0));
        assert!(!e.non_exact_partition);
        let small = CylinderSource::Orbit {
            start: TorusPoint::new(0.3, 0.1),
            length: 10,
        };
        assert!(matches!(
            entropy_rate_estimate(&cat, p, &small, &[2, 3]),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn count_rates() {
        let p = partition();
        let r = cylinder_count_rate(p, &(1..=14).collect::<Vec<_>>()).unwrap();
        assert_abs_diff_eq!(r.rows[0].rate, 5f64.ln(), epsilon = 1e-15);
        let l = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((r.rows[13].rate - l).abs() < 0.1 * l);
        assert!(r.rows.iter().all(|row| row.rate <= r.k0));
    }

    #[test]
    fn bound_check_examples() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let dirac = CylinderSource::Discrete {
            measure: DiscreteMeasure::dirac(TorusPoint::origin()),
            samples: 100,
        };
        let b = entropy_count_bound_check(&cat, p, &dirac, 0.1, 5).unwrap();
        assert!(b.margin >= 0.0);
        assert!(entropy_count_bound_check(&cat, p, &dirac, 0.3, 5).is_err());
        let leb = CylinderSource::Orbit {
            start: TorusPoint::new(0.2113, 0.7319),
            length: 1_000_000,
        };
        let samples = CylinderSamples::collect(&cat, p, &leb, 10).unwrap();
        let b = bound_check_from_samples(p, &samples, 0.1, 10).unwrap();
        assert!(b.covered_mass > 0.9);
        assert!(b.margin >= 0.0, "{b:?}");
        let everything = (samples.counts(10).len() as f64).ln();
        assert!(everything >= samples.entropy(10));
    }

    #[test]
    fn json_export_round_trips() {
        let p = partition();
        let json = p.to_json().unwrap();
        let back: PartitionExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.alphabet_size, 5);
        let area: f64 = back.pieces.iter().map(|q| q.area).sum();
        assert_abs_diff_eq!(area, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn table_csv_format() {
        let p = partition();
        let cat = HyperbolicToralMap::cat_map();
        let src = CylinderSource::Discrete {
            measure: DiscreteMeasure::dirac(TorusPoint::origin()),
            samples: 4,
        };
        let csv = cylinder_frequencies(&cat, p, &src, 3).unwrap().to_csv();
        let s = p.locate(TorusPoint::origin()).unwrap();
        assert_eq!(csv, format!("itinerary,count\n{s}{s}{s},4\n"));
    }
}
