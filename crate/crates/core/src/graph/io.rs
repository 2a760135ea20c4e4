//! Edge-list text format for a graph.
//!
//! ```text
//! # fedsim graph
//! n 4
//! epsilon 0.1
//! sigma2 0.01
//! 0 1 0.000045399929762484854
//! 1 3 0.0001234
//! ```
//!
//! One line per present edge with `i < j`; absent edges are omitted. Weights
//! are printed in shortest round-trip form, so a parsed graph has bit-equal
//! weights. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph3DG;
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

pub fn write_edge_list(g: &Graph3DG) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# fedsim graph");
    let _ = writeln!(s, "n {}", g.size());
    let _ = writeln!(s, "epsilon {}", g.epsilon);
    let _ = writeln!(s, "sigma2 {}", g.sigma2);
    for (i, j, w) in g.edges() {
        let _ = writeln!(s, "{i} {j} {w}");
    }
    s
}

pub fn write_edge_list_file(path: &Path, g: &Graph3DG) -> Result<()> {
    fs::write(path, write_edge_list(g)).map_err(|e| Error::io(path, e))
}

fn header<T: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<T> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing `{key}` header")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse(format!("expected `{key}` header, found `{line}`")));
    }
    parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad value in `{line}`")))
}

pub fn parse_edge_list(text: &str) -> Result<Graph3DG> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let n: usize = header(lines.next(), "n")?;
    let epsilon: f64 = header(lines.next(), "epsilon")?;
    let sigma2: f64 = header(lines.next(), "sigma2")?;
    let mut r = SquareMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { f64::INFINITY });
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Parse(format!("bad edge line `{line}`"));
        if f.len() != 3 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let j: usize = f[1].parse().map_err(|_| bad())?;
        let w: f64 = f[2].parse().map_err(|_| bad())?;
        if i >= n || j >= n || i == j || !(w.is_finite() && w >= 0.0) {
            return Err(bad());
        }
        r[(i, j)] = w;
        r[(j, i)] = w;
    }
    Ok(Graph3DG::from_adjacency(r, epsilon, sigma2))
}

pub fn read_edge_list(path: &Path) -> Result<Graph3DG> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph3DG, SimilarityMatrix};

    #[test]
    fn round_trip() {
        let v = SimilarityMatrix::new(SquareMatrix::from_rows(&[
            vec![1.0, 0.3, 0.05, 0.9],
            vec![0.3, 1.0, 0.77, 0.0],
            vec![0.05, 0.77, 1.0, 0.2],
            vec![0.9, 0.0, 0.2, 1.0],
        ]));
        let g = Graph3DG::from_similarity(&v, 0.1, 0.01).unwrap();
        let text = write_edge_list(&g);
        assert!(text.contains("n 4"));
        assert_eq!(text.lines().count(), 4 + g.edges().len());
        let back = parse_edge_list(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_edge_list("n 2\nepsilon 0.1\n").is_err());
        assert!(parse_edge_list("n 2\nepsilon 0.1\nsigma2 1\n0 2 1.0\n").is_err());
        assert!(parse_edge_list("n 2\nepsilon 0.1\nsigma2 1\n0 1\n").is_err());
        assert!(parse_edge_list("epsilon 0.1\nn 2\nsigma2 1\n").is_err());
    }
}
