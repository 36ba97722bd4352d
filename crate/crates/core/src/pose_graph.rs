//! SE(2) pose-graph optimization.
//!
//! A [`PoseGraph`] is an odometry chain `0 -> 1 -> ... -> T-1` plus any
//! number of loop edges. [`optimize`] runs Gauss-Newton on the additive
//! `(x, y, theta)` parametrization with pose 0 held fixed, escalating an
//! additive damping term whenever a step fails to reduce chi2.

use nalgebra::{Matrix3, Vector3};

use crate::se2::{normalize_angle, Pose2};
use crate::sparse::{BlockMatrix, SymbolicFactor};

pub type Information = Matrix3<f64>;

/// `diag(1/sigma_xy^2, 1/sigma_xy^2, 1/sigma_theta^2)`.
pub fn diagonal_information(sigma_xy: f64, sigma_theta: f64) -> Information {
    Matrix3::from_diagonal(&Vector3::new(
        1.0 / (sigma_xy * sigma_xy),
        1.0 / (sigma_xy * sigma_xy),
        1.0 / (sigma_theta * sigma_theta),
    ))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("edge {from}->{to} references a pose outside 0..{len}")]
    IndexOutOfBounds { from: usize, to: usize, len: usize },
    #[error("edge connects pose {0} to itself")]
    SelfEdge(usize),
    #[error("information matrix of edge {from}->{to} is not symmetric positive definite")]
    BadInformation { from: usize, to: usize },
    #[error("odometry edge {index} is {from}->{to}, expected {index}->{next}", next = index + 1)]
    BrokenChain { index: usize, from: usize, to: usize },
    #[error("pose graph has {poses} poses but {edges} odometry edges")]
    ChainLength { poses: usize, edges: usize },
    #[error("pose {0} is not finite")]
    NonFinitePose(usize),
}

/// A relative-pose measurement between two poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from_index: usize,
    pub to_index: usize,
    /// Pose of `to` expressed in the frame of `from`.
    pub measurement: Pose2,
    pub information: Information,
}

impl Edge {
    pub fn new(from_index: usize, to_index: usize, measurement: Pose2, information: Information) -> Self {
        Self {
            from_index,
            to_index,
            measurement,
            information,
        }
    }

    fn validate(&self, len: usize) -> Result<(), GraphError> {
        let (from, to) = (self.from_index, self.to_index);
        if from >= len || to >= len {
            return Err(GraphError::IndexOutOfBounds { from, to, len });
        }
        if from == to {
            return Err(GraphError::SelfEdge(from));
        }
        let info = &self.information;
        let symmetric = (info - info.transpose()).abs().max() <= 1e-12 * (1.0 + info.abs().max());
        if !symmetric || !info.iter().all(|v| v.is_finite()) || nalgebra::Cholesky::new(*info).is_none() {
            return Err(GraphError::BadInformation { from, to });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph {
    pub poses: Vec<Pose2>,
    pub odometry_edges: Vec<Edge>,
    pub loop_edges: Vec<Edge>,
}

/// Integrates relative motions from `origin`.
pub fn dead_reckon(odometry: &[Pose2], origin: Pose2) -> Vec<Pose2> {
    let mut poses = Vec::with_capacity(odometry.len() + 1);
    poses.push(origin);
    let mut current = origin;
    for u in odometry {
        current = current.compose(u);
        poses.push(current);
    }
    poses
}

impl PoseGraph {
    /// Chain graph whose initial poses are the dead-reckoned trajectory.
    pub fn from_odometry(odometry: &[Pose2], origin: Pose2, information: Information) -> Self {
        let poses = dead_reckon(odometry, origin);
        let odometry_edges = odometry
            .iter()
            .enumerate()
            .map(|(t, u)| Edge::new(t, t + 1, *u, information))
            .collect();
        Self {
            poses,
            odometry_edges,
            loop_edges: Vec::new(),
        }
    }

    /// Builds a graph from raw parts, checking every invariant.
    pub fn from_parts(poses: Vec<Pose2>, odometry_edges: Vec<Edge>, loop_edges: Vec<Edge>) -> Result<Self, GraphError> {
        let graph = Self {
            poses,
            odometry_edges,
            loop_edges,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn add_loop_edge(&mut self, edge: Edge) -> Result<(), GraphError> {
        edge.validate(self.poses.len())?;
        self.loop_edges.push(edge);
        Ok(())
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.odometry_edges.iter().chain(&self.loop_edges)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if let Some(i) = self.poses.iter().position(|p| !p.is_finite()) {
            return Err(GraphError::NonFinitePose(i));
        }
        if self.odometry_edges.len() + 1 != self.poses.len() && !self.poses.is_empty() {
            return Err(GraphError::ChainLength {
                poses: self.poses.len(),
                edges: self.odometry_edges.len(),
            });
        }
        for (index, e) in self.odometry_edges.iter().enumerate() {
            if e.from_index != index || e.to_index != index + 1 {
                return Err(GraphError::BrokenChain {
                    index,
                    from: e.from_index,
                    to: e.to_index,
                });
            }
        }
        self.edges().try_for_each(|e| e.validate(self.poses.len()))
    }

    /// Residual of one edge: `measurement^-1 ⊕ (pose_from^-1 ⊕ pose_to)`.
    pub fn edge_error(&self, edge: &Edge) -> Result<Vector3<f64>, GraphError> {
        let len = self.poses.len();
        let (from, to) = (edge.from_index, edge.to_index);
        if from >= len || to >= len {
            return Err(GraphError::IndexOutOfBounds { from, to, len });
        }
        Ok(residual(&self.poses[from], &self.poses[to], &edge.measurement))
    }

    /// `sum e^T Omega e` over all edges.
    pub fn chi2(&self) -> f64 {
        self.edges()
            .map(|e| {
                let r = residual(&self.poses[e.from_index], &self.poses[e.to_index], &e.measurement);
                r.dot(&(e.information * r))
            })
            .sum()
    }
}

fn residual(a: &Pose2, b: &Pose2, z: &Pose2) -> Vector3<f64> {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let tx = c * dx + s * dy - z.x;
    let ty = -s * dx + c * dy - z.y;
    let (sz, cz) = z.theta.sin_cos();
    Vector3::new(
        cz * tx + sz * ty,
        -sz * tx + cz * ty,
        normalize_angle(b.theta - a.theta - z.theta),
    )
}

/// Residual and its Jacobians with respect to `(x, y, theta)` of both poses.
pub fn linearize_edge(a: &Pose2, b: &Pose2, z: &Pose2) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let rz_t = Matrix3::new(cz, sz, 0.0, -sz, cz, 0.0, 0.0, 0.0, 1.0);
    // d/dtheta_a of R_a^T (t_b - t_a)
    let d_rot = Vector3::new(-s * dx + c * dy, -c * dx - s * dy, 0.0);
    let ja_local = Matrix3::new(-c, -s, d_rot[0], s, -c, d_rot[1], 0.0, 0.0, -1.0);
    let jb_local = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    (residual(a, b, z), rz_t * ja_local, rz_t * jb_local)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Stop once the relative chi2 decrease of an accepted step falls below this.
    pub tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_chi2: f64,
    pub final_chi2: f64,
    pub converged: bool,
    /// chi2 after each accepted step, starting with the initial value.
    pub chi2_history: Vec<f64>,
}

const MAX_DAMPING_RETRIES: usize = 12;

/// Gauss-Newton with damping fallback. Pose 0 is gauge-fixed and returned
/// bit-identical. On a singular system the input graph is returned as-is
/// with `converged == false`.
pub fn optimize(graph: &PoseGraph, options: &OptimizeOptions) -> (PoseGraph, OptimizeReport) {
    let initial_chi2 = graph.chi2();
    let mut report = OptimizeReport {
        iterations: 0,
        initial_chi2,
        final_chi2: initial_chi2,
        converged: false,
        chi2_history: vec![initial_chi2],
    };
    let n_free = graph.len().saturating_sub(1);
    if n_free == 0 || initial_chi2 == 0.0 {
        report.converged = true;
        return (graph.clone(), report);
    }

    let mut current = graph.clone();
    let mut chi2 = initial_chi2;
    let mut damping = 0.0;
    let mut symbolic: Option<SymbolicFactor> = None;

    while report.iterations < options.max_iters {
        report.iterations += 1;
        let (hessian, gradient) = build_normal_equations(&current);
        let symbolic = symbolic.get_or_insert_with(|| {
            let s = SymbolicFactor::analyze(&hessian);
            log::debug!("{} poses, {} loop edges, factor holds {} entries", graph.len(), graph.loop_edges.len(), s.fill());
            s
        });
        let damping_floor = 1e-9 * hessian.max_diagonal().max(1e-12);

        let mut accepted = None;
        let mut factored_once = false;
        for _ in 0..MAX_DAMPING_RETRIES {
            let factor = match symbolic.factor(&hessian, damping) {
                Ok(f) => {
                    factored_once = true;
                    f
                }
                Err(_) => {
                    damping = (damping * 10.0).max(damping_floor);
                    continue;
                }
            };
            let rhs: Vec<Vector3<f64>> = gradient.iter().map(|g| -g).collect();
            let step = factor.solve(&rhs);
            let candidate = apply_step(&current, &step);
            let candidate_chi2 = candidate.chi2();
            if candidate_chi2.is_finite() && candidate_chi2 < chi2 {
                accepted = Some((candidate, candidate_chi2));
                damping /= 10.0;
                if damping < damping_floor {
                    damping = 0.0;
                }
                break;
            }
            damping = (damping * 10.0).max(damping_floor);
        }

        match accepted {
            Some((candidate, new_chi2)) => {
                let decrease = (chi2 - new_chi2) / chi2;
                current = candidate;
                chi2 = new_chi2;
                report.chi2_history.push(chi2);
                if decrease < options.tol || chi2 == 0.0 {
                    report.converged = true;
                    break;
                }
            }
            None if !factored_once => {
                // never solvable, even at maximal damping
                log::debug!("normal equations singular after maximal damping");
                report.final_chi2 = initial_chi2;
                report.chi2_history.truncate(1);
                return (graph.clone(), report);
            }
            None => {
                // no descent at any damping: stationary to working precision
                report.converged = true;
                break;
            }
        }
    }

    report.final_chi2 = chi2;
    log::debug!("optimize: {} iterations, chi2 {} -> {}", report.iterations, initial_chi2, chi2);
    (current, report)
}

/// `H = J^T Omega J` and `g = J^T Omega e` over the free poses `1..T`.
/// Block `k` corresponds to pose `k + 1`.
pub fn build_normal_equations(graph: &PoseGraph) -> (BlockMatrix, Vec<Vector3<f64>>) {
    let n_free = graph.len().saturating_sub(1);
    let mut hessian = BlockMatrix::new(n_free);
    let mut gradient = vec![Vector3::zeros(); n_free];
    for e in graph.edges() {
        let (r, ja, jb) = linearize_edge(&graph.poses[e.from_index], &graph.poses[e.to_index], &e.measurement);
        let omega = &e.information;
        let va = e.from_index.checked_sub(1);
        let vb = e.to_index.checked_sub(1);
        let wr = omega * r;
        if let Some(a) = va {
            hessian.add_diag(a, &(ja.transpose() * omega * ja));
            gradient[a] += ja.transpose() * wr;
        }
        if let Some(b) = vb {
            hessian.add_diag(b, &(jb.transpose() * omega * jb));
            gradient[b] += jb.transpose() * wr;
        }
        if let (Some(a), Some(b)) = (va, vb) {
            // block (b, a) = Jb^T Omega Ja
            hessian.add_off_diag(b, a, jb.transpose() * omega * ja);
        }
    }
    (hessian, gradient)
}

fn apply_step(graph: &PoseGraph, step: &[Vector3<f64>]) -> PoseGraph {
    let mut next = graph.clone();
    for (pose, d) in next.poses.iter_mut().skip(1).zip(step) {
        *pose = Pose2::new(pose.x + d[0], pose.y + d[1], pose.theta + d[2]);
    }
    next
}

/// Root-mean-square planar position error between two trajectories,
/// over their common prefix.
pub fn position_rmse(estimate: &[Pose2], truth: &[Pose2]) -> f64 {
    let n = estimate.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| {
            let d = a.planar_distance(b);
            d * d
        })
        .sum();
    (sum / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, loops: usize) -> PoseGraph {
        let odometry: Vec<Pose2> = (0..n - 1)
            .map(|_| Pose2::new(rng.random_range(0.2..1.5), rng.random_range(-0.3..0.3), rng.random_range(-0.6..0.6)))
            .collect();
        let mut g = PoseGraph::from_odometry(&odometry, Pose2::identity(), diagonal_information(0.1, 0.05));
        for p in g.poses.iter_mut().skip(1) {
            *p = Pose2::new(
                p.x + rng.random_range(-0.5..0.5),
                p.y + rng.random_range(-0.5..0.5),
                p.theta + rng.random_range(-0.2..0.2),
            );
        }
        for _ in 0..loops {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                let z = Pose2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-PI..PI));
                g.add_loop_edge(Edge::new(i, j, z, Matrix3::identity() * 5.0)).unwrap();
            }
        }
        g
    }

    #[test]
    fn dead_reckon_examples() {
        assert_eq!(dead_reckon(&[], Pose2::new(1.0, 2.0, 0.3)), vec![Pose2::new(1.0, 2.0, 0.3)]);
        let line = dead_reckon(&[Pose2::new(1.0, 0.0, 0.0); 4], Pose2::identity());
        for (i, p) in line.iter().enumerate() {
            assert_eq!(*p, Pose2::new(i as f64, 0.0, 0.0));
        }
        let square = dead_reckon(&[Pose2::new(3.0, 0.0, PI / 2.0); 4], Pose2::identity());
        let end = square.last().unwrap();
        assert!(end.x.abs() < 1e-12 && end.y.abs() < 1e-12 && end.theta.abs() < 1e-12);
        assert!((square[2].x - 3.0).abs() < 1e-12 && (square[2].y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_chain_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let odometry: Vec<Pose2> = (0..30)
            .map(|_| Pose2::new(rng.random_range(0.0..1.0), rng.random_range(-0.2..0.2), rng.random_range(-1.0..1.0)))
            .collect();
        let g = PoseGraph::from_odometry(&odometry, Pose2::identity(), Matrix3::identity());
        for e in g.edges() {
            assert!(g.edge_error(e).unwrap().norm() < 1e-12);
        }
        let a = g.poses[3];
        let b = g.poses[17];
        let e = Edge::new(3, 17, a.relative(&b), Matrix3::identity());
        assert!(g.edge_error(&e).unwrap().norm() < 1e-12);
        let bad = Edge::new(3, 99, a, Matrix3::identity());
        assert!(matches!(g.edge_error(&bad), Err(GraphError::IndexOutOfBounds { .. })));
    }

    #[test]
    fn graph_invariants_are_checked() {
        let mut g = PoseGraph::from_odometry(&[Pose2::new(1.0, 0.0, 0.0); 3], Pose2::identity(), Matrix3::identity());
        assert!(g.validate().is_ok());
        assert_eq!(
            g.add_loop_edge(Edge::new(1, 1, Pose2::identity(), Matrix3::identity())),
            Err(GraphError::SelfEdge(1))
        );
        let asym = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            g.add_loop_edge(Edge::new(0, 2, Pose2::identity(), asym)),
            Err(GraphError::BadInformation { .. })
        ));
        assert!(matches!(
            g.add_loop_edge(Edge::new(0, 2, Pose2::identity(), -Matrix3::identity())),
            Err(GraphError::BadInformation { .. })
        ));
        g.odometry_edges.swap(0, 1);
        assert!(matches!(g.validate(), Err(GraphError::BrokenChain { .. })));
    }

    fn error_fd(a: &Pose2, b: &Pose2, z: &Pose2, which: usize, k: usize, h: f64) -> Vector3<f64> {
        let bump = |p: &Pose2, d: f64| {
            let mut arr = p.to_array();
            arr[k] += d;
            Pose2 { x: arr[0], y: arr[1], theta: arr[2] }
        };
        let (ap, am, bp, bm) = if which == 0 {
            (bump(a, h), bump(a, -h), *b, *b)
        } else {
            (*a, *a, bump(b, h), bump(b, -h))
        };
        let rp = residual(&ap, &bp, z);
        let rm = residual(&am, &bm, z);
        let mut d = (rp - rm) / (2.0 * h);
        d[2] = normalize_angle(rp[2] - rm[2]) / (2.0 * h);
        d
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..100 {
            let n = rng.random_range(2..=20);
            let g = random_graph(&mut rng, n, 3);
            for e in g.edges() {
                let a = g.poses[e.from_index];
                let b = g.poses[e.to_index];
                let (_, ja, jb) = linearize_edge(&a, &b, &e.measurement);
                for k in 0..3 {
                    for (which, jac) in [(0, &ja), (1, &jb)] {
                        let fd = error_fd(&a, &b, &e.measurement, which, k, h);
                        let an = jac.column(k);
                        let rel = (an - fd).norm() / an.norm().max(1.0);
                        assert!(rel < 1e-5, "rel {rel}");
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_chi2_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 8, 2);
        let (_, grad) = build_normal_equations(&g);
        let h = 1e-6;
        for p in 1..g.len() {
            for k in 0..3 {
                let mut plus = g.clone();
                let mut minus = g.clone();
                let mut ap = plus.poses[p].to_array();
                ap[k] += h;
                plus.poses[p] = Pose2 { x: ap[0], y: ap[1], theta: ap[2] };
                let mut am = minus.poses[p].to_array();
                am[k] -= h;
                minus.poses[p] = Pose2 { x: am[0], y: am[1], theta: am[2] };
                // d chi2 = 2 g
                let fd = (plus.chi2() - minus.chi2()) / (2.0 * h) / 2.0;
                let an = grad[p - 1][k];
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "pose {p} comp {k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn noise_free_loop_converges_to_dead_reckoning() {
        let odometry = vec![Pose2::new(1.0, 0.1, 0.3); 12];
        let mut g = PoseGraph::from_odometry(&odometry, Pose2::identity(), Matrix3::identity());
        let z = g.poses[2].relative(&g.poses[11]);
        g.add_loop_edge(Edge::new(2, 11, z, Matrix3::identity() * 10.0)).unwrap();
        let reference = g.poses.clone();
        let (out, report) = optimize(&g, &OptimizeOptions::default());
        assert!(report.final_chi2 < 1e-18);
        assert!(report.converged);
        for (a, b) in out.poses.iter().zip(&reference) {
            assert!(a.planar_distance(b) < 1e-9 && (a.theta - b.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn chain_only_graph_is_untouched() {
        let odometry = vec![Pose2::new(0.5, 0.0, 0.1); 20];
        let g = PoseGraph::from_odometry(&odometry, Pose2::new(3.0, -1.0, 0.5), Matrix3::identity());
        let (out, report) = optimize(&g, &OptimizeOptions::default());
        assert_eq!(out.poses, dead_reckon(&odometry, Pose2::new(3.0, -1.0, 0.5)));
        assert!(report.converged);
    }

    /// Newton's method on the explicit objective with finite-difference
    /// derivatives, independent of the analytic Jacobians.
    fn brute_force_newton(graph: &PoseGraph) -> Vec<f64> {
        let nv = 3 * (graph.len() - 1);
        let objective = |x: &[f64]| {
            let mut g = graph.clone();
            for p in 1..g.len() {
                g.poses[p] = Pose2 { x: x[3 * (p - 1)], y: x[3 * (p - 1) + 1], theta: x[3 * (p - 1) + 2] };
            }
            g.chi2()
        };
        let mut x: Vec<f64> = graph.poses[1..].iter().flat_map(|p| p.to_array()).collect();
        let h = 1e-4;
        for _ in 0..30 {
            let mut grad = DVector::zeros(nv);
            let mut hess = DMatrix::zeros(nv, nv);
            let f0 = objective(&x);
            for i in 0..nv {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                grad[i] = (objective(&xp) - objective(&xm)) / (2.0 * h);
                hess[(i, i)] = (objective(&xp) - 2.0 * f0 + objective(&xm)) / (h * h);
                for j in 0..i {
                    let eval = |di: f64, dj: f64| {
                        let mut y = x.clone();
                        y[i] += di;
                        y[j] += dj;
                        objective(&y)
                    };
                    let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                }
            }
            let step = hess.lu().solve(&(-grad)).unwrap();
            for i in 0..nv {
                x[i] += step[i];
            }
            if step.norm() < 1e-12 {
                break;
            }
        }
        x
    }

    #[test]
    fn three_pose_graph_matches_dense_oracle() {
        let odometry = vec![Pose2::new(1.0, 0.0, 0.0); 2];
        let mut g = PoseGraph::from_odometry(&odometry, Pose2::identity(), Matrix3::identity());
        g.add_loop_edge(Edge::new(0, 2, Pose2::new(1.8, 0.0, 0.0), Matrix3::identity())).unwrap();
        let oracle = brute_force_newton(&g);
        let (out, report) = optimize(&g, &OptimizeOptions { max_iters: 50, tol: 1e-12 });
        assert!(report.final_chi2 <= report.initial_chi2);
        for p in 1..3 {
            let got = out.poses[p].to_array();
            for k in 0..3 {
                assert!((got[k] - oracle[3 * (p - 1) + k]).abs() < 1e-6, "pose {p}: {got:?} vs {oracle:?}");
            }
        }
        // closed form of the same quadratic: x1 = 2.8/3, x2 = 5.6/3
        assert!((out.poses[1].x - 2.8 / 3.0).abs() < 1e-9);
        assert!((out.poses[2].x - 5.6 / 3.0).abs() < 1e-9);
        assert_eq!(out.poses[0], Pose2::identity());
    }

    #[test]
    fn optimizer_is_monotone_and_keeps_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let n = rng.random_range(3..=20);
            let loops = rng.random_range(0..4);
            let g = random_graph(&mut rng, n, loops);
            let (out, report) = optimize(&g, &OptimizeOptions::default());
            assert_eq!(out.poses[0].to_array().map(f64::to_bits), g.poses[0].to_array().map(f64::to_bits));
            for w in report.chi2_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!(report.final_chi2 <= report.initial_chi2 + 1e-12);
            assert!((out.chi2() - report.final_chi2).abs() <= 1e-9 * report.final_chi2.max(1.0));
        }
    }

    #[test]
    fn unconstrained_pose_is_singular_without_damping_but_solved() {
        // A graph whose Hessian is only PSD: zero-information odometry is
        // rejected by validation, so build the singular case via a loop
        // edge that cannot pin rotation. Damping escalation keeps it solvable.
        let odometry = vec![Pose2::new(1.0, 0.0, 0.0); 2];
        let mut g = PoseGraph::from_odometry(&odometry, Pose2::identity(), Matrix3::identity() * 1e-3);
        g.poses[2].y = 4.0;
        g.add_loop_edge(Edge::new(0, 2, Pose2::new(2.0, 0.0, 0.0), Matrix3::identity() * 1e3)).unwrap();
        let (out, report) = optimize(&g, &OptimizeOptions::default());
        assert!(report.final_chi2 < report.initial_chi2);
        assert!(out.poses[2].y.abs() < 0.1);
    }
}
