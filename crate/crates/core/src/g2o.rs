//! Reader and writer for the SE(2) subset of the g2o text format:
//!
//! ```text
//! VERTEX_SE2 id x y theta
//! EDGE_SE2 from to dx dy dtheta i11 i12 i13 i22 i23 i33
//! ```
//!
//! Floats are written in Rust's shortest round-trip notation, so a
//! write/read cycle reproduces every value exactly.

use std::io::{self, Write};

use nalgebra::Matrix3;

use crate::pose_graph::{Edge, GraphError, PoseGraph};
use crate::se2::Pose2;

#[derive(Debug, thiserror::Error)]
pub enum G2oError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vertex ids must be 0..{count} without gaps; found {id}")]
    VertexIds { count: usize, id: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parsed contents of a g2o file, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct G2oDocument {
    pub vertices: Vec<(usize, Pose2)>,
    pub edges: Vec<Edge>,
}

pub fn write_vertex<W: Write>(w: &mut W, id: usize, p: &Pose2) -> io::Result<()> {
    writeln!(w, "VERTEX_SE2 {id} {} {} {}", p.x, p.y, p.theta)
}

pub fn write_edge<W: Write>(w: &mut W, e: &Edge) -> io::Result<()> {
    let m = &e.information;
    let z = &e.measurement;
    writeln!(
        w,
        "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
        e.from_index,
        e.to_index,
        z.x,
        z.y,
        z.theta,
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 2)]
    )
}

pub fn write_trajectory<W: Write>(w: &mut W, poses: &[Pose2]) -> io::Result<()> {
    for (id, p) in poses.iter().enumerate() {
        write_vertex(w, id, p)?;
    }
    Ok(())
}

pub fn write_graph<W: Write>(w: &mut W, graph: &PoseGraph) -> io::Result<()> {
    write_trajectory(w, &graph.poses)?;
    for e in graph.edges() {
        write_edge(w, e)?;
    }
    Ok(())
}

fn field<T: std::str::FromStr>(tokens: &[&str], k: usize, line: usize) -> Result<T, G2oError> {
    let tok = tokens.get(k).ok_or_else(|| G2oError::Parse {
        line,
        message: format!("expected at least {} fields, got {}", k + 1, tokens.len()),
    })?;
    tok.parse().map_err(|_| G2oError::Parse {
        line,
        message: format!("cannot parse field {k} ({tok:?})"),
    })
}

/// Parses `VERTEX_SE2` and `EDGE_SE2` records. Blank lines and `#` comments
/// are skipped; any other record is an error.
pub fn parse(text: &str) -> Result<G2oDocument, G2oError> {
    let mut doc = G2oDocument::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let expected = match tokens[0] {
            "VERTEX_SE2" => 5,
            "EDGE_SE2" => 12,
            other => {
                return Err(G2oError::Parse {
                    line,
                    message: format!("unsupported record {other}"),
                })
            }
        };
        if tokens.len() != expected {
            return Err(G2oError::Parse {
                line,
                message: format!("{} expects {} fields, got {}", tokens[0], expected, tokens.len()),
            });
        }
        let f = |k| field::<f64>(&tokens, k, line);
        if tokens[0] == "VERTEX_SE2" {
            let id = field::<usize>(&tokens, 1, line)?;
            doc.vertices.push((id, Pose2::new(f(2)?, f(3)?, f(4)?)));
        } else {
            let from = field::<usize>(&tokens, 1, line)?;
            let to = field::<usize>(&tokens, 2, line)?;
            let z = Pose2::new(f(3)?, f(4)?, f(5)?);
            let (i11, i12, i13, i22, i23, i33) = (f(6)?, f(7)?, f(8)?, f(9)?, f(10)?, f(11)?);
            let info = Matrix3::new(i11, i12, i13, i12, i22, i23, i13, i23, i33);
            doc.edges.push(Edge::new(from, to, z, info));
        }
    }
    Ok(doc)
}

impl G2oDocument {
    /// Poses ordered by id; ids must be exactly `0..n`.
    pub fn trajectory(&self) -> Result<Vec<Pose2>, G2oError> {
        let count = self.vertices.len();
        let mut poses = vec![None; count];
        for &(id, p) in &self.vertices {
            match poses.get_mut(id) {
                Some(slot @ None) => *slot = Some(p),
                _ => return Err(G2oError::VertexIds { count, id }),
            }
        }
        Ok(poses.into_iter().map(|p| p.expect("all slots filled")).collect())
    }

    /// Splits edges into the odometry chain (the first `t -> t+1` edge for
    /// each `t`) and loop edges, then validates the graph.
    pub fn into_pose_graph(self) -> Result<PoseGraph, G2oError> {
        let poses = self.trajectory()?;
        let mut chain: Vec<Option<Edge>> = vec![None; poses.len().saturating_sub(1)];
        let mut loops = Vec::new();
        for e in self.edges {
            let slot = (e.to_index == e.from_index + 1)
                .then(|| chain.get_mut(e.from_index))
                .flatten()
                .filter(|s| s.is_none());
            match slot {
                Some(s) => *s = Some(e),
                None => loops.push(e),
            }
        }
        let odometry: Vec<Edge> = chain
            .into_iter()
            .enumerate()
            .map(|(index, e)| {
                e.ok_or(GraphError::BrokenChain {
                    index,
                    from: index,
                    to: index,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(PoseGraph::from_parts(poses, odometry, loops)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::diagonal_information;
    use proptest::prelude::*;

    #[test]
    fn parses_records_and_comments() {
        let text = "# header\nVERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1.5 -2 0.25\n\nEDGE_SE2 0 1 1.5 -2 0.25 10 0 0 10 0 20\n";
        let doc = parse(text).unwrap();
        assert_eq!(doc.vertices.len(), 2);
        assert_eq!(doc.vertices[1].1, Pose2::new(1.5, -2.0, 0.25));
        assert_eq!(doc.edges[0].information[(2, 2)], 20.0);
        let g = doc.into_pose_graph().unwrap();
        assert_eq!(g.odometry_edges.len(), 1);
        assert!(g.loop_edges.is_empty());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(parse("VERTEX_SE2 0 1 2"), Err(G2oError::Parse { line: 1, .. })));
        assert!(matches!(parse("VERTEX_SE2 0 0 0 0\nFOO 1"), Err(G2oError::Parse { line: 2, .. })));
        assert!(matches!(parse("VERTEX_SE2 0 a 0 0"), Err(G2oError::Parse { .. })));
        let gap = parse("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 2 0 0 0").unwrap();
        assert!(matches!(gap.trajectory(), Err(G2oError::VertexIds { .. })));
    }

    #[test]
    fn loop_edges_survive_split() {
        let odometry = vec![Pose2::new(1.0, 0.0, 0.2); 5];
        let mut g = PoseGraph::from_odometry(&odometry, Pose2::identity(), diagonal_information(0.1, 0.01));
        g.add_loop_edge(Edge::new(1, 2, Pose2::new(0.9, 0.1, 0.1), Matrix3::identity())).unwrap();
        g.add_loop_edge(Edge::new(4, 0, Pose2::new(-3.0, 0.5, -0.8), Matrix3::identity() * 2.0)).unwrap();
        let mut buf = Vec::new();
        write_graph(&mut buf, &g).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap().into_pose_graph().unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            poses in prop::collection::vec((-1e4..1e4f64, -1e4..1e4f64, -3.0..3.0f64), 2..30),
            info in (1e-3..1e6f64, -0.5..0.5f64, 1e-3..1e6f64),
        ) {
            let poses: Vec<Pose2> = poses.into_iter().map(|(x, y, t)| Pose2::new(x, y, t)).collect();
            let odometry: Vec<Pose2> = poses.windows(2).map(|w| w[0].relative(&w[1])).collect();
            let off = info.1 * info.0;
            let m = Matrix3::new(info.0, off, 0.0, off, info.0, 0.0, 0.0, 0.0, info.2);
            let mut g = PoseGraph::from_odometry(&odometry, poses[0], m);
            g.poses = poses;
            let mut buf = Vec::new();
            write_graph(&mut buf, &g).unwrap();
            let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap().into_pose_graph().unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
