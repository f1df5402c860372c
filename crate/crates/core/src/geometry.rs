//! Point clouds: representation, xyz-text ingestion, unit-cube normalization
//! and seeded subsampling.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered set of `n` points of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    id: String,
    dim: usize,
    coords: Vec<f64>,
    class_label: Option<i64>,
    part_labels: Option<Vec<i64>>,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, dim: usize, coords: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if dim < 2 {
            return Err(Error::Argument(format!(
                "point dimension must be at least 2, got {dim}"
            )));
        }
        if coords.is_empty() {
            return Err(Error::EmptyCloud(id));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Argument(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(PointCloud {
            id,
            dim,
            coords,
            class_label: None,
            part_labels: None,
        })
    }

    pub fn from_points<P: AsRef<[f64]>>(id: impl Into<String>, points: &[P]) -> Result<Self> {
        let id = id.into();
        let dim = match points.first() {
            Some(p) => p.as_ref().len(),
            None => return Err(Error::EmptyCloud(id)),
        };
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::Argument(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::new(id, dim, coords)
    }

    pub fn with_class(mut self, class: i64) -> Self {
        self.class_label = Some(class);
        self
    }

    pub fn with_part_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Argument(format!(
                "{} part labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Row-major coordinate buffer of length `n * d`.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn class_label(&self) -> Option<i64> {
        self.class_label
    }

    pub fn part_labels(&self) -> Option<&[i64]> {
        self.part_labels.as_deref()
    }

    /// Largest pairwise Euclidean distance. Quadratic in `n`.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            let p = self.point(i);
            for j in (i + 1)..n {
                best = best.max(distance(p, self.point(j)));
            }
        }
        best
    }

    /// Translates every point by `offset` (one entry per dimension).
    pub fn translated(&self, offset: &[f64]) -> Self {
        let mut out = self.clone();
        for p in out.coords.chunks_exact_mut(self.dim) {
            for (x, o) in p.iter_mut().zip(offset) {
                *x += o;
            }
        }
        out
    }
}

/// Euclidean distance. Every module uses this one routine so that stored
/// labels and invariant checks agree bit-for-bit.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn is_integer_literal(tok: &str) -> bool {
    let digits = tok.strip_prefix(['-', '+']).unwrap_or(tok);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Parses xyz-text: one point per line, whitespace-separated decimals,
/// `#` comments and blank lines skipped.
///
/// The column layout is fixed by the first data line. Rows with four or more
/// columns whose last column is an integer literal are read as coordinates
/// plus a part label; otherwise every column is a coordinate.
pub fn parse_xyz(text: &str, id: &str) -> Result<PointCloud> {
    let mut columns: Option<usize> = None;
    let mut labelled = false;
    let mut coords = Vec::new();
    let mut labels = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::Parse {
            path: id.to_string(),
            line: lineno,
            msg,
        };
        let cols = match columns {
            Some(c) => {
                if toks.len() != c {
                    return Err(err(format!("expected {c} columns, found {}", toks.len())));
                }
                c
            }
            None => {
                labelled = toks.len() >= 4 && is_integer_literal(toks[toks.len() - 1]);
                columns = Some(toks.len());
                toks.len()
            }
        };
        let ncoord = if labelled { cols - 1 } else { cols };
        for tok in &toks[..ncoord] {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("`{tok}` is not finite")));
            }
            coords.push(v);
        }
        if labelled {
            let tok = toks[cols - 1];
            let label: i64 = tok
                .parse()
                .map_err(|_| err(format!("part label `{tok}` is not an integer")))?;
            labels.push(label);
        }
    }

    let cols = columns.ok_or_else(|| Error::EmptyCloud(id.to_string()))?;
    let dim = if labelled { cols - 1 } else { cols };
    if dim < 2 {
        return Err(Error::Parse {
            path: id.to_string(),
            line: 1,
            msg: format!("points need at least 2 coordinates, found {dim}"),
        });
    }
    let cloud = PointCloud::new(id, dim, coords)?;
    if labelled {
        cloud.with_part_labels(labels)
    } else {
        Ok(cloud)
    }
}

/// Reads an xyz-text file. The cloud id is the path as given.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, &path.to_string_lossy())
}

/// Writes xyz-text with full round-trip precision, including part labels.
pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write;
    let mut out = String::new();
    for (i, p) in cloud.points().enumerate() {
        for (k, x) in p.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            // Debug formatting of f64 is shortest-round-trip and always keeps
            // a decimal point, so coordinates never look like label columns.
            let _ = write!(out, "{x:?}");
        }
        if let Some(labels) = cloud.part_labels() {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Translates by the per-axis minimum and divides every axis by the largest
/// axis extent. A cloud with zero extent maps to the origin.
pub fn normalize_unit_cube(cloud: &PointCloud) -> PointCloud {
    let d = cloud.dim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in cloud.points() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max);

    let mut out = cloud.clone();
    for p in out.coords.chunks_exact_mut(d) {
        for k in 0..d {
            p[k] = if extent > 0.0 {
                (p[k] - lo[k]) / extent
            } else {
                0.0
            };
        }
    }
    out
}

/// Uniform sample of `k` points without replacement, kept in original order.
pub fn subsample(cloud: &PointCloud, k: usize, seed: u64) -> Result<PointCloud> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!(
            "cannot subsample {k} points from a cloud of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();

    let d = cloud.dim;
    let mut coords = Vec::with_capacity(k * d);
    for &i in &picked {
        coords.extend_from_slice(cloud.point(i));
    }
    Ok(PointCloud {
        id: cloud.id.clone(),
        dim: d,
        coords,
        class_label: cloud.class_label,
        part_labels: cloud
            .part_labels
            .as_ref()
            .map(|l| picked.iter().map(|&i| l[i]).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[&[f64]]) -> PointCloud {
        PointCloud::from_points("t", points).unwrap()
    }

    #[test]
    fn parses_two_points() {
        let c = parse_xyz("0 0 0\n1 1 1\n", "f").unwrap();
        assert_eq!((c.len(), c.dim()), (2, 3));
        assert_eq!(c.point(1), &[1.0, 1.0, 1.0]);
        assert!(c.part_labels().is_none());
    }

    #[test]
    fn parses_label_column() {
        let c = parse_xyz("# header\n0 0 0 5\n", "f").unwrap();
        assert_eq!((c.len(), c.dim()), (1, 3));
        assert_eq!(c.part_labels(), Some(&[5][..]));
    }

    #[test]
    fn ragged_rows_name_the_line() {
        match parse_xyz("0 0\n0 0 0\n", "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_empty_cloud() {
        assert!(matches!(
            parse_xyz("# nothing\n\n", "f"),
            Err(Error::EmptyCloud(_))
        ));
    }

    #[test]
    fn bad_number_is_a_parse_error() {
        assert!(matches!(
            parse_xyz("0 0 x\n", "f"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn xyz_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = cloud(&[&[0.1, 1.0 / 3.0, 2.0], &[-4.0, 5.5, 1e-17]])
            .with_part_labels(vec![3, 7])
            .unwrap();
        write_xyz(&c, &path).unwrap();
        let back = load_cloud(&path).unwrap();
        assert_eq!(back.coords(), c.coords());
        assert_eq!(back.part_labels(), c.part_labels());
    }

    #[test]
    fn normalize_segment() {
        let n = normalize_unit_cube(&cloud(&[&[2.0, 2.0, 2.0], &[4.0, 4.0, 4.0]]));
        assert_eq!(n.coords(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn normalize_is_uniform_scale() {
        let n = normalize_unit_cube(&cloud(&[&[0.0, 0.0, 0.0], &[2.0, 1.0, 0.0]]));
        assert_eq!(n.coords(), &[0.0, 0.0, 0.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn normalize_degenerate() {
        let n = normalize_unit_cube(&cloud(&[&[7.0, 7.0, 7.0]]));
        assert_eq!(n.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn subsample_full_and_oversample() {
        let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 0.0]).collect();
        let c = PointCloud::from_points("t", &pts).unwrap();
        assert_eq!(subsample(&c, 100, 3).unwrap(), c);
        assert!(matches!(subsample(&c, 128, 3), Err(Error::Argument(_))));
        assert!(matches!(subsample(&c, 0, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn subsample_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..1024).map(|i| vec![i as f64, -(i as f64)]).collect();
        let c = PointCloud::from_points("t", &pts).unwrap();
        let a = subsample(&c, 128, 7).unwrap();
        let b = subsample(&c, 128, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
        assert_ne!(a, subsample(&c, 128, 8).unwrap());
    }
}
