//! Seeded synthetic world standing in for a camera front-end.
//!
//! A [`WorldModel`] owns a ground-truth trajectory sampled every
//! `step_length` meters along a course that revisits itself. From it the
//! simulator derives noisy odometry, scored retrieval candidates with
//! planted perceptual aliasing, and a verification oracle whose
//! acceptance rates are configured directly.
//!
//! Locations are pose indices. A past location `j` is a ground-truth match
//! of query `i` when the two are closer than `revisit_radius` and the robot
//! travelled more than `triviality_cutoff` meters between them.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::rng::{purpose, stream};
use crate::se2::Pose2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("unsupported course kind {0:?} (expected loop, figure_eight or campus_multi_loop)")]
    UnsupportedKind(String),
    #[error("course length must be at least 10 poses, got {0}")]
    TooShort(usize),
    #[error("invalid world parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CourseKind {
    Loop,
    FigureEight,
    CampusMultiLoop,
}

impl CourseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CourseKind::Loop => "loop",
            CourseKind::FigureEight => "figure_eight",
            CourseKind::CampusMultiLoop => "campus_multi_loop",
        }
    }
}

impl fmt::Display for CourseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CourseKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loop" => Ok(CourseKind::Loop),
            "figure_eight" => Ok(CourseKind::FigureEight),
            "campus_multi_loop" => Ok(CourseKind::CampusMultiLoop),
            other => Err(WorldError::UnsupportedKind(other.to_string())),
        }
    }
}

/// Retrieval score populations, each `N(mean, sigma)` clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreModel {
    pub true_mean: f64,
    pub aliased_mean: f64,
    pub distractor_mean: f64,
    pub sigma: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            true_mean: 0.7,
            aliased_mean: 0.5,
            distractor_mean: 0.3,
            sigma: 0.15,
        }
    }
}

/// Noise of the relative pose attached to a loop constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopMeasurementModel {
    /// Noise on the true relative pose for spatially close pairs.
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    /// Spread of the "same place" pose claimed for pairs that are not close.
    pub false_sigma_xy: f64,
    pub false_sigma_theta: f64,
}

impl Default for LoopMeasurementModel {
    fn default() -> Self {
        Self {
            sigma_xy: 0.01,
            sigma_theta: 0.002,
            false_sigma_xy: 1.0,
            false_sigma_theta: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldParams {
    pub step_length: f64,
    pub revisit_radius: f64,
    pub triviality_cutoff: f64,
    pub scores: ScoreModel,
    pub loop_measurement: LoopMeasurementModel,
    /// One aliasing cluster per this many poses.
    pub poses_per_alias_cluster: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            step_length: 0.25,
            revisit_radius: 10.0,
            triviality_cutoff: 100.0,
            scores: ScoreModel::default(),
            loop_measurement: LoopMeasurementModel::default(),
            poses_per_alias_cluster: 400,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalCandidate {
    pub query: usize,
    pub matched: usize,
    pub score: f64,
}

/// Acceptance behavior of the verification oracle at [`ORACLE_THRESHOLD`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub p_true_accept: f64,
    pub p_false_accept: f64,
    pub score_noise_sigma: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            p_true_accept: 0.8,
            p_false_accept: 0.1,
            score_noise_sigma: 0.05,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.p_true_accept) || !unit(self.p_false_accept) {
            return Err(WorldError::InvalidParameter("oracle probabilities must lie in [0, 1]".into()));
        }
        if self.p_true_accept <= self.p_false_accept {
            return Err(WorldError::InvalidParameter("p_true_accept must exceed p_false_accept".into()));
        }
        if !(self.score_noise_sigma >= 0.0 && self.score_noise_sigma.is_finite()) {
            return Err(WorldError::InvalidParameter("score_noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Oracle scores at or above this value carry the configured acceptance mass.
pub const ORACLE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct WorldModel {
    pub kind: CourseKind,
    pub ground_truth: Vec<Pose2>,
    /// Disjoint sets of similar-looking locations, each sorted.
    pub aliasing_clusters: Vec<Vec<usize>>,
    pub revisit_radius: f64,
    pub triviality_cutoff: f64,
    pub rng_seed: u64,
    pub params: WorldParams,
    travel: Vec<f64>,
    cluster_of: Vec<Option<u32>>,
    ranges: Vec<Vec<(usize, usize)>>,
}

pub fn generate_course(kind: CourseKind, length: usize, seed: u64) -> Result<WorldModel, WorldError> {
    generate_course_with(kind, length, seed, &WorldParams::default())
}

pub fn generate_course_with(kind: CourseKind, length: usize, seed: u64, params: &WorldParams) -> Result<WorldModel, WorldError> {
    if length < 10 {
        return Err(WorldError::TooShort(length));
    }
    if !(params.step_length > 0.0 && params.revisit_radius > 0.0 && params.triviality_cutoff >= 0.0) {
        return Err(WorldError::InvalidParameter("step length and radii must be positive".into()));
    }
    let mut rng = stream(seed, &[purpose::COURSE]);
    let total = params.step_length * (length - 1) as f64;
    let path = match kind {
        CourseKind::Loop => loop_route(total, &mut rng),
        CourseKind::FigureEight => figure_eight_route(total, &mut rng),
        CourseKind::CampusMultiLoop => campus_route(total, &mut rng),
    };
    let ground_truth = sample_path(&path, length, params.step_length, &mut rng);
    let aliasing_clusters = plant_aliasing(length, params.poses_per_alias_cluster, seed);
    Ok(WorldModel::from_parts(kind, ground_truth, aliasing_clusters, seed, *params))
}

impl WorldModel {
    /// Assembles a world from an explicit trajectory. Clusters must be
    /// disjoint and in range; overlapping members are dropped from later
    /// clusters.
    pub fn from_parts(kind: CourseKind, ground_truth: Vec<Pose2>, aliasing_clusters: Vec<Vec<usize>>, rng_seed: u64, params: WorldParams) -> Self {
        let n = ground_truth.len();
        let mut travel = Vec::with_capacity(n);
        let mut acc = 0.0;
        for (k, p) in ground_truth.iter().enumerate() {
            if k > 0 {
                acc += ground_truth[k - 1].planar_distance(p);
            }
            travel.push(acc);
        }
        let mut cluster_of = vec![None; n];
        let mut clusters = Vec::with_capacity(aliasing_clusters.len());
        for members in aliasing_clusters {
            let id = clusters.len() as u32;
            let mut kept: Vec<usize> = members
                .into_iter()
                .filter(|&m| m < n && cluster_of[m].is_none())
                .collect();
            kept.sort_unstable();
            kept.dedup();
            for &m in &kept {
                cluster_of[m] = Some(id);
            }
            clusters.push(kept);
        }
        let mut world = Self {
            kind,
            ground_truth,
            aliasing_clusters: clusters,
            revisit_radius: params.revisit_radius,
            triviality_cutoff: params.triviality_cutoff,
            rng_seed,
            params,
            travel,
            cluster_of,
            ranges: Vec::new(),
        };
        world.ranges = (0..n).map(|q| world.scan_ranges(q)).collect();
        world
    }

    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    /// Distance travelled from pose 0 to pose `k`.
    pub fn travel_distance(&self, k: usize) -> f64 {
        self.travel[k]
    }

    pub fn total_travel(&self) -> f64 {
        self.travel.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_of(&self, k: usize) -> Option<u32> {
        self.cluster_of.get(k).copied().flatten()
    }

    /// Pair `(query, past)` far enough apart along the trajectory to count
    /// as a loop closure rather than a trivial neighbor.
    pub fn is_nontrivial(&self, query: usize, past: usize) -> bool {
        past < query && self.travel[query] - self.travel[past] > self.triviality_cutoff
    }

    fn is_true_match(&self, query: usize, past: usize) -> bool {
        self.is_nontrivial(query, past)
            && self.ground_truth[query].planar_distance(&self.ground_truth[past]) < self.revisit_radius
    }

    fn scan_ranges(&self, query: usize) -> Vec<(usize, usize)> {
        let mut ranges = Vec::new();
        let mut open: Option<usize> = None;
        for j in 0..query {
            match (self.is_true_match(query, j), open) {
                (true, None) => open = Some(j),
                (false, Some(b)) => {
                    ranges.push((b, j - 1));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(b) = open {
            ranges.push((b, query - 1));
        }
        ranges
    }

    /// All maximal inclusive index ranges of ground-truth matches of
    /// `query`; empty when the query revisits nothing.
    pub fn ground_truth_range(&self, query: usize) -> &[(usize, usize)] {
        self.ranges.get(query).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_correct_pair(&self, query: usize, past: usize) -> bool {
        self.ground_truth_range(query)
            .iter()
            .any(|&(b, e)| b <= past && past <= e)
    }

    /// Queries that have at least one ground-truth match.
    pub fn revisit_queries(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&q| !self.ranges[q].is_empty())
    }

    /// Top `n_candidates` scored past locations for `query`, descending by
    /// score (ties by ascending index). Locations within the triviality
    /// cutoff of the query are not in the database.
    pub fn retrieve(&self, query: usize, n_candidates: usize) -> Vec<RetrievalCandidate> {
        if query == 0 || query >= self.len() || n_candidates == 0 {
            return Vec::new();
        }
        let s = &self.params.scores;
        let mut rng = stream(self.rng_seed, &[purpose::RETRIEVAL, query as u64]);
        let noise = Normal::new(0.0, s.sigma.max(0.0)).expect("finite sigma");

        let mut classes: Vec<Option<u32>> = Vec::new();
        if let Some(c) = self.cluster_of(query) {
            classes.push(Some(c));
        }
        for &(b, e) in self.ground_truth_range(query) {
            for j in b..=e {
                if let Some(c) = self.cluster_of(j) {
                    if !classes.contains(&Some(c)) {
                        classes.push(Some(c));
                    }
                }
            }
        }

        let horizon = self.travel[query] - self.triviality_cutoff;
        let mut candidates: Vec<RetrievalCandidate> = (0..query)
            .take_while(|&j| self.travel[j] < horizon)
            .map(|j| {
                let mean = if self.is_true_match(query, j) {
                    s.true_mean
                } else if self.cluster_of(j).is_some() && classes.contains(&self.cluster_of(j)) {
                    s.aliased_mean
                } else {
                    s.distractor_mean
                };
                let score = (mean + noise.sample(&mut rng)).clamp(0.0, 1.0);
                RetrievalCandidate { query, matched: j, score }
            })
            .collect();
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.matched.cmp(&b.matched)));
        candidates.truncate(n_candidates);
        candidates
    }

    /// Verification score in `[0, 1]` for the pair, deterministic in
    /// `(seed, query, past)`. The mass at or above [`ORACLE_THRESHOLD`] is
    /// `p_true_accept` for correct pairs and `p_false_accept` otherwise;
    /// within each side, correct pairs lean high and incorrect pairs low.
    pub fn verify_oracle(&self, config: &OracleConfig, pair: (usize, usize), seed: u64) -> f64 {
        let (query, past) = pair;
        let correct = query != past && self.is_correct_pair(query, past);
        let mut rng = stream(seed, &[purpose::ORACLE, query as u64, past as u64]);
        let accept_p = if correct { config.p_true_accept } else { config.p_false_accept };
        let accept = rng.random::<f64>() < accept_p;
        let shape = if correct { Beta::new(4.0, 2.0) } else { Beta::new(2.0, 4.0) }.expect("valid beta");
        let jitter = Normal::new(0.0, config.score_noise_sigma).expect("validated sigma");
        let (lo, hi) = if accept {
            (ORACLE_THRESHOLD, 1.0)
        } else {
            (0.0, f64::from_bits(ORACLE_THRESHOLD.to_bits() - 1))
        };
        let u = shape.sample(&mut rng) + jitter.sample(&mut rng);
        (lo + (hi - lo) * u).clamp(lo, hi)
    }

    /// Relative pose of `query` in the frame of `past` as a place matcher
    /// would report it: the true transform plus noise when the two poses are
    /// close, otherwise a spurious near-identity transform.
    pub fn loop_measurement(&self, query: usize, past: usize, seed: u64) -> Pose2 {
        let m = &self.params.loop_measurement;
        let mut rng = stream(seed, &[purpose::LOOP_MEASUREMENT, query as u64, past as u64]);
        let mut gauss = |sigma: f64| Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng);
        let a = &self.ground_truth[past];
        let b = &self.ground_truth[query];
        if a.planar_distance(b) < self.revisit_radius {
            let truth = a.relative(b);
            truth.compose(&Pose2::new(gauss(m.sigma_xy), gauss(m.sigma_xy), gauss(m.sigma_theta)))
        } else {
            Pose2::new(gauss(m.false_sigma_xy), gauss(m.false_sigma_xy), gauss(m.false_sigma_theta))
        }
    }
}

/// Per-step relative motions with additive noise in the body frame.
/// `noise = (sigma_xy, sigma_theta)`; zero noise yields the exact motions.
pub fn sample_odometry(world: &WorldModel, noise: (f64, f64), seed: u64) -> Vec<Pose2> {
    let (sigma_xy, sigma_theta) = noise;
    let nxy = Normal::new(0.0, sigma_xy).expect("sigma_xy must be finite and >= 0");
    let nth = Normal::new(0.0, sigma_theta).expect("sigma_theta must be finite and >= 0");
    let mut rng = stream(seed, &[purpose::ODOMETRY]);
    world
        .ground_truth
        .windows(2)
        .map(|w| {
            let exact = w[0].relative(&w[1]);
            if sigma_xy == 0.0 && sigma_theta == 0.0 {
                return exact;
            }
            let dx = nxy.sample(&mut rng);
            let dy = nxy.sample(&mut rng);
            let dt = nth.sample(&mut rng);
            exact.compose(&Pose2::new(dx, dy, dt))
        })
        .collect()
}

/// `CAND query match score`, one candidate per line.
pub fn write_candidates<W: Write>(w: &mut W, candidates: &[RetrievalCandidate]) -> io::Result<()> {
    for c in candidates {
        writeln!(w, "CAND {} {} {}", c.query, c.matched, c.score)?;
    }
    Ok(())
}

fn loop_route<R: Rng>(total: f64, rng: &mut R) -> Vec<[f64; 2]> {
    // Rounded rectangle traversed about 1.6 times.
    let perimeter = total / 1.6;
    let aspect = rng.random_range(1.0..2.0);
    let h = perimeter / (2.0 * (1.0 + aspect));
    let w = aspect * h;
    let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    let laps = (total / perimeter).ceil() as usize + 1;
    let mut poly: Vec<[f64; 2]> = (0..laps).flat_map(|_| corners).collect();
    poly.push(corners[0]);
    chaikin(&poly, 4)
}

fn figure_eight_route<R: Rng>(total: f64, rng: &mut R) -> Vec<[f64; 2]> {
    // Gerono lemniscate, arc length of one lap ~ 6.1 * a for this aspect.
    let stretch = rng.random_range(0.8..1.2);
    let lap = |a: f64| {
        let n = 2000;
        let pts: Vec<[f64; 2]> = (0..=n)
            .map(|k| {
                let u = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [a * u.sin(), stretch * a * u.sin() * u.cos()]
            })
            .collect();
        pts
    };
    let unit = lap(1.0);
    let unit_len: f64 = unit.windows(2).map(|w| dist(w[0], w[1])).sum();
    let a = (total / 1.6) / unit_len;
    let one = lap(a);
    let laps = 3;
    let mut poly = Vec::with_capacity(one.len() * laps);
    for _ in 0..laps {
        poly.extend_from_slice(&one[..one.len() - 1]);
    }
    poly.push(one[0]);
    poly
}

fn campus_route<R: Rng>(total: f64, rng: &mut R) -> Vec<[f64; 2]> {
    // A 2x2-block street grid. One cycle covers 12 block edges: a small
    // loop, then an outer detour that re-drives two of its streets.
    const CYCLE: [[i32; 2]; 12] = [
        [0, 0], [1, 0], [1, 1], [0, 1], [0, 0], [1, 0], [2, 0], [2, 1],
        [1, 1], [1, 2], [0, 2], [0, 1],
    ];
    let block = rng.random_range(55.0..65.0);
    let jitter: Vec<[f64; 2]> = (0..9)
        .map(|_| [rng.random_range(-0.08..0.08) * block, rng.random_range(-0.08..0.08) * block])
        .collect();
    let node = |g: [i32; 2]| {
        let j = jitter[(g[0] * 3 + g[1]) as usize];
        [g[0] as f64 * block + j[0], g[1] as f64 * block + j[1]]
    };
    let cycles = (total / (12.0 * block)).ceil() as usize + 1;
    let mut poly: Vec<[f64; 2]> = (0..cycles).flat_map(|_| CYCLE.iter().map(|&g| node(g))).collect();
    poly.push(node(CYCLE[0]));
    chaikin(&poly, 4)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Corner cutting on an open polyline; endpoints are preserved.
fn chaikin(poly: &[[f64; 2]], iterations: usize) -> Vec<[f64; 2]> {
    let mut cur = poly.to_vec();
    for _ in 0..iterations {
        let mut next = Vec::with_capacity(cur.len() * 2);
        next.push(cur[0]);
        for w in cur.windows(2) {
            let (a, b) = (w[0], w[1]);
            next.push([0.75 * a[0] + 0.25 * b[0], 0.75 * a[1] + 0.25 * b[1]]);
            next.push([0.25 * a[0] + 0.75 * b[0], 0.25 * a[1] + 0.75 * b[1]]);
        }
        next.push(*cur.last().expect("nonempty polyline"));
        cur = next;
    }
    cur
}

/// Samples `count` poses every `step` meters of arc length, adds a slow
/// seeded lateral weave so repeated passes do not coincide, and takes
/// headings from the direction of travel.
fn sample_path<R: Rng>(path: &[[f64; 2]], count: usize, step: f64, rng: &mut R) -> Vec<Pose2> {
    let amplitude = rng.random_range(0.5..2.0);
    let wavelength = rng.random_range(80.0..160.0);
    let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);

    // Dense centerline, weaved along a tangent smoothed over about a metre so
    // polyline kinks do not make the offset jump, then arc-length
    // resampling at exactly `step`.
    let fine = step / 8.0;
    let mut center = Vec::new();
    let mut arc = Vec::new();
    let mut s = 0.0;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = dist(a, b);
        if len < 1e-12 {
            continue;
        }
        let n = (len / fine).ceil() as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            center.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
            arc.push(s + f * len);
        }
        s += len;
    }
    let half = (0.5 / fine).ceil() as usize;
    let last = center.len() - 1;
    let dense: Vec<[f64; 2]> = (0..center.len())
        .map(|k| {
            let (a, b) = (center[k.saturating_sub(half)], center[(k + half).min(last)]);
            let len = dist(a, b).max(1e-12);
            let (tx, ty) = ((b[0] - a[0]) / len, (b[1] - a[1]) / len);
            let off = amplitude * (2.0 * std::f64::consts::PI * arc[k] / wavelength + phase).sin();
            [center[k][0] - ty * off, center[k][1] + tx * off]
        })
        .collect();
    let mut points = Vec::with_capacity(count + 1);
    points.push(dense[0]);
    let mut carry = 0.0;
    let mut k = 0;
    while points.len() < count + 1 {
        let (a, b) = (dense[k % dense.len()], dense[(k + 1) % dense.len()]);
        let len = dist(a, b);
        let mut used = 0.0;
        while carry + (len - used) >= step && points.len() < count + 1 {
            used += step - carry;
            carry = 0.0;
            let f = used / len;
            points.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        }
        carry += len - used;
        k += 1;
    }
    (0..count)
        .map(|k| {
            let (a, b) = (points[k], points[k + 1]);
            Pose2::new(a[0], a[1], (b[1] - a[1]).atan2(b[0] - a[0]))
        })
        .collect()
}

fn plant_aliasing(length: usize, per_cluster: usize, seed: u64) -> Vec<Vec<usize>> {
    const SEGMENTS: usize = 3;
    const SEGMENT_LEN: usize = 12;
    let mut rng = stream(seed, &[purpose::ALIASING]);
    let n_clusters = (length / per_cluster.max(1)).max(1);
    if length < SEGMENTS * SEGMENT_LEN * 2 {
        return Vec::new();
    }
    let mut taken = vec![false; length];
    let mut clusters = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        let mut members = Vec::new();
        for _ in 0..SEGMENTS {
            for _attempt in 0..32 {
                let start = rng.random_range(0..length - SEGMENT_LEN);
                if taken[start..start + SEGMENT_LEN].iter().all(|t| !t) {
                    taken[start..start + SEGMENT_LEN].iter_mut().for_each(|t| *t = true);
                    members.extend(start..start + SEGMENT_LEN);
                    break;
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::dead_reckon;

    fn world(kind: CourseKind, n: usize, seed: u64) -> WorldModel {
        generate_course(kind, n, seed).unwrap()
    }

    #[test]
    fn courses_are_deterministic() {
        for kind in [CourseKind::Loop, CourseKind::FigureEight, CourseKind::CampusMultiLoop] {
            let a = world(kind, 400, 9);
            let b = world(kind, 400, 9);
            assert_eq!(a.ground_truth, b.ground_truth);
            assert_eq!(a.aliasing_clusters, b.aliasing_clusters);
            assert_ne!(a.ground_truth, world(kind, 400, 10).ground_truth);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("figure_eight".parse::<CourseKind>().unwrap(), CourseKind::FigureEight);
        assert!(matches!("spiral".parse::<CourseKind>(), Err(WorldError::UnsupportedKind(_))));
        assert!(matches!(generate_course(CourseKind::Loop, 9, 0), Err(WorldError::TooShort(9))));
    }

    #[test]
    fn steps_are_quarter_meter() {
        let w = world(CourseKind::CampusMultiLoop, 3000, 4);
        for p in w.ground_truth.windows(2) {
            let d = p[0].planar_distance(&p[1]);
            assert!((0.2..0.3).contains(&d), "step {d}");
            assert!(p[0].relative(&p[1]).theta.abs() < 0.2);
        }
    }

    #[test]
    fn large_scale_campus_distance() {
        let w = world(CourseKind::CampusMultiLoop, 5759, 1);
        let d = w.total_travel();
        assert!((1100.0..=1600.0).contains(&d), "travel {d}");
    }

    #[test]
    fn loop_course_revisits() {
        for kind in [CourseKind::Loop, CourseKind::FigureEight, CourseKind::CampusMultiLoop] {
            let w = world(kind, 2000, 3);
            let gt = &w.ground_truth;
            let found = (0..gt.len()).any(|i| (0..i.saturating_sub(400)).any(|j| gt[i].planar_distance(&gt[j]) < 10.0));
            assert!(found, "{kind} never revisits");
            assert!(w.revisit_queries().count() > 0);
        }
    }

    #[test]
    fn clusters_are_disjoint_and_valid() {
        let w = world(CourseKind::Loop, 3000, 5);
        let mut seen = vec![false; w.len()];
        for c in &w.aliasing_clusters {
            for &m in c {
                assert!(m < w.len());
                assert!(!seen[m]);
                seen[m] = true;
            }
        }
        assert!(!w.aliasing_clusters.is_empty());
    }

    #[test]
    fn ranges_match_exhaustive_scan() {
        let w = world(CourseKind::CampusMultiLoop, 2500, 8);
        for q in (0..w.len()).step_by(7) {
            let mut expected = Vec::new();
            for j in 0..q {
                let close = w.ground_truth[q].planar_distance(&w.ground_truth[j]) < 10.0;
                let far = w.travel_distance(q) - w.travel_distance(j) > 100.0;
                if close && far {
                    match expected.last_mut() {
                        Some((_, e)) if *e + 1 == j => *e = j,
                        _ => expected.push((j, j)),
                    }
                }
            }
            assert_eq!(w.ground_truth_range(q), expected.as_slice(), "query {q}");
        }
    }

    #[test]
    fn never_revisited_query_has_no_range() {
        let w = world(CourseKind::Loop, 2000, 2);
        assert!(w.ground_truth_range(50).is_empty());
        assert!(w.ground_truth_range(0).is_empty());
    }

    #[test]
    fn short_travel_pairs_are_excluded() {
        // straight out and back: the return leg passes within 10 m of poses
        // only 50 m of travel earlier near the turnaround
        let mut gt: Vec<Pose2> = (0..=200).map(|k| Pose2::new(k as f64 * 0.25, 0.0, 0.0)).collect();
        gt.extend((1..=200).map(|k| Pose2::new(50.0 - k as f64 * 0.25, 1.0, std::f64::consts::PI)));
        let w = WorldModel::from_parts(CourseKind::Loop, gt, vec![], 0, WorldParams::default());
        // query 300 sits at x = 25 on the return leg; pose 100 (x = 25) is 50 m back
        assert!(w.ground_truth[300].planar_distance(&w.ground_truth[100]) < 10.0);
        assert!(!w.is_correct_pair(300, 100));
    }

    #[test]
    fn zero_noise_odometry_reproduces_truth() {
        let w = world(CourseKind::FigureEight, 800, 1);
        let u = sample_odometry(&w, (0.0, 0.0), 5);
        let dr = dead_reckon(&u, w.ground_truth[0]);
        for (a, b) in dr.iter().zip(&w.ground_truth) {
            assert!(a.planar_distance(b) < 1e-9);
        }
        let n1 = sample_odometry(&w, (0.01, 0.001), 5);
        assert_eq!(n1, sample_odometry(&w, (0.01, 0.001), 5));
        assert_ne!(n1, sample_odometry(&w, (0.01, 0.001), 6));
    }

    #[test]
    fn retrieval_contract() {
        let w = world(CourseKind::Loop, 2000, 1);
        assert!(w.retrieve(1, 50).is_empty());
        let c = w.retrieve(1800, 50);
        assert_eq!(c.len(), 50);
        for win in c.windows(2) {
            assert!(win[0].score >= win[1].score);
        }
        for q in (1..2000).step_by(13) {
            for cand in w.retrieve(q, 50) {
                assert!(cand.matched < q);
                assert!(cand.score.is_finite() && (0.0..=1.0).contains(&cand.score));
            }
        }
        assert_eq!(w.retrieve(1800, 50), w.retrieve(1800, 50));
    }

    #[test]
    fn separated_scores_rank_true_matches_first() {
        let params = WorldParams {
            scores: ScoreModel { sigma: 0.0, ..ScoreModel::default() },
            ..WorldParams::default()
        };
        let w = generate_course_with(CourseKind::Loop, 2000, 1, &params).unwrap();
        let q = w.revisit_queries().last().unwrap();
        let cands = w.retrieve(q, 2000);
        let first_false = cands.iter().position(|c| !w.is_correct_pair(q, c.matched)).unwrap();
        assert!(first_false > 0);
        assert!(cands[first_false..].iter().all(|c| !w.is_correct_pair(q, c.matched)));
    }

    #[test]
    fn oracle_is_deterministic_and_bounded() {
        let w = world(CourseKind::Loop, 2000, 1);
        let cfg = OracleConfig::default();
        for (i, j) in [(1800, 20), (1900, 5), (1500, 1499)] {
            let s = w.verify_oracle(&cfg, (i, j), 3);
            assert_eq!(s, w.verify_oracle(&cfg, (i, j), 3));
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn oracle_extremes() {
        let w = world(CourseKind::Loop, 2000, 1);
        let cfg = OracleConfig { p_true_accept: 1.0, p_false_accept: 0.0, score_noise_sigma: 0.2 };
        let q = w.revisit_queries().last().unwrap();
        let (b, e) = w.ground_truth_range(q)[0];
        for j in b..=e {
            assert!(w.verify_oracle(&cfg, (q, j), 1) >= ORACLE_THRESHOLD);
        }
        for j in 0..200 {
            if !w.is_correct_pair(q, j) {
                assert!(w.verify_oracle(&cfg, (q, j), 1) < ORACLE_THRESHOLD);
            }
        }
    }

    #[test]
    fn oracle_config_validation() {
        assert!(OracleConfig::default().validate().is_ok());
        assert!(OracleConfig { p_true_accept: 0.1, p_false_accept: 0.2, ..Default::default() }.validate().is_err());
        assert!(OracleConfig { p_true_accept: 1.2, ..Default::default() }.validate().is_err());
    }
}
