//! Riemann-sum 2-Wasserstein distance between quantile functions on a
//! shared probability grid.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::quantile::{GridRule, Interval, ProbGrid, QuantileFunction, QuantileRule};

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("quantile functions are on different probability grids ({left} vs {right} points)")]
    GridMismatch { left: usize, right: usize },
    #[error("{ids} ids for {functions} quantile functions")]
    IdCount { ids: usize, functions: usize },
    #[error("distance file: {0}")]
    Parse(String),
}

/// Grid plus quantile rule: everything that fixes a distance variant.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceConfig {
    pub grid: Arc<ProbGrid>,
    pub quantile_rule: QuantileRule,
}

impl DistanceConfig {
    /// One-line description, also used as the distance-file header.
    pub fn describe(&self) -> String {
        format!(
            "J={} interval={} rule={} quantile={} j_eff={}",
            self.grid.nominal_j(),
            self.grid.interval(),
            self.grid.rule(),
            self.quantile_rule,
            self.grid.j_eff()
        )
    }

    /// Inverse of [`describe`](Self::describe).
    pub fn parse_description(s: &str) -> Result<Self, DistanceError> {
        let bad = |m: &str| DistanceError::Parse(format!("{m} in config line {s:?}"));
        let mut j = None;
        let mut interval = None;
        let mut rule = GridRule::default();
        let mut qrule = QuantileRule::default();
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match k {
                "J" => j = Some(v.parse::<usize>().map_err(|_| bad("bad J"))?),
                "interval" => interval = Some(v.parse::<Interval>().map_err(|_| bad("bad interval"))?),
                "rule" => rule = v.parse().map_err(|_| bad("bad rule"))?,
                "quantile" => qrule = v.parse().map_err(|_| bad("bad quantile rule"))?,
                "j_eff" => {}
                _ => return Err(bad("unknown key")),
            }
        }
        let grid = crate::quantile::build_grid(
            j.ok_or_else(|| bad("missing J"))?,
            interval.ok_or_else(|| bad("missing interval"))?,
            rule,
        )
        .map_err(|e| DistanceError::Parse(e.to_string()))?;
        Ok(Self {
            grid: Arc::new(grid),
            quantile_rule: qrule,
        })
    }
}

fn check_same_grid(a: &QuantileFunction, b: &QuantileFunction) -> Result<(), DistanceError> {
    if Arc::ptr_eq(a.grid(), b.grid()) || a.grid().same_points(b.grid()) {
        Ok(())
    } else {
        Err(DistanceError::GridMismatch {
            left: a.grid().j_eff(),
            right: b.grid().j_eff(),
        })
    }
}

/// Sum of squared differences, accumulated in grid order.
#[inline]
fn sum_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

pub fn sq_discrepancy(q1: &QuantileFunction, q2: &QuantileFunction) -> Result<f64, DistanceError> {
    check_same_grid(q1, q2)?;
    Ok(sum_sq(q1.values(), q2.values()))
}

/// `sqrt(sq_discrepancy / J_eff)`.
pub fn wasserstein(q1: &QuantileFunction, q2: &QuantileFunction) -> Result<f64, DistanceError> {
    let s = sq_discrepancy(q1, q2)?;
    Ok((s / q1.grid().j_eff() as f64).sqrt())
}

/// Symmetric distance matrix with zero diagonal, stored as the condensed
/// upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    upper: Vec<f64>,
    config: DistanceConfig,
}

#[inline]
fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn config(&self) -> &DistanceConfig {
        &self.config
    }

    /// Number of stored pairs, `n (n - 1) / 2`.
    pub fn n_pairs(&self) -> usize {
        self.upper.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.upper[condensed_index(self.n(), i, j)],
            std::cmp::Ordering::Greater => self.upper[condensed_index(self.n(), j, i)],
        }
    }

    /// Upper-triangle distances, row by row.
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `(i, j, d)` for `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.get(i, j))))
    }

    /// Writes `id_a,id_b,distance` rows under a `# ` config comment line.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(out, "# {}", self.config.describe())?;
        writeln!(out, "id_a,id_b,distance")?;
        for (i, j, d) in self.pairs() {
            writeln!(out, "{},{},{}", self.ids[i], self.ids[j], d)?;
        }
        out.flush()
    }

    /// Reads a file written by [`write_csv`](Self::write_csv), re-ordering
    /// to `ids`. Every pair of `ids` must be present.
    pub fn read_csv<R: BufRead>(input: R, ids: &[String]) -> Result<Self, DistanceError> {
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let n = ids.len();
        let mut upper = vec![f64::NAN; n * n.saturating_sub(1) / 2];
        let mut config = None;
        let mut seen_header = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| DistanceError::Parse(e.to_string()))?;
            let line = line.trim();
            if let Some(c) = line.strip_prefix('#') {
                if config.is_none() {
                    config = Some(DistanceConfig::parse_description(c.trim())?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !seen_header {
                if line != "id_a,id_b,distance" {
                    return Err(DistanceError::Parse(format!("line {}: expected header", lineno + 1)));
                }
                seen_header = true;
                continue;
            }
            let bad = |m: &str| DistanceError::Parse(format!("line {}: {m}", lineno + 1));
            let mut f = line.split(',');
            let (a, b, d) = match (f.next(), f.next(), f.next(), f.next()) {
                (Some(a), Some(b), Some(d), None) => (a, b, d),
                _ => return Err(bad("expected 3 columns")),
            };
            let d: f64 = d.parse().map_err(|_| bad("bad distance"))?;
            if !(d.is_finite() && d >= 0.0) {
                return Err(bad("distance must be finite and non-negative"));
            }
            let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
                continue;
            };
            if i == j {
                return Err(bad("self pair"));
            }
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            upper[condensed_index(n, i, j)] = d;
        }
        let config = config.ok_or_else(|| DistanceError::Parse("missing `# J=...` config line".into()))?;
        if let Some(k) = upper.iter().position(|d| d.is_nan()) {
            let (i, j) = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .nth(k)
                .unwrap_or((0, 0));
            return Err(DistanceError::Parse(format!("missing pair ({}, {})", ids[i], ids[j])));
        }
        Ok(Self {
            ids: ids.to_vec(),
            upper,
            config,
        })
    }
}

fn validate(
    ids: &[String],
    qfs: &[QuantileFunction],
    config: &DistanceConfig,
) -> Result<(), DistanceError> {
    if ids.len() != qfs.len() {
        return Err(DistanceError::IdCount {
            ids: ids.len(),
            functions: qfs.len(),
        });
    }
    for q in qfs {
        if !(Arc::ptr_eq(q.grid(), &config.grid) || q.grid().same_points(&config.grid)) {
            return Err(DistanceError::GridMismatch {
                left: config.grid.j_eff(),
                right: q.grid().j_eff(),
            });
        }
    }
    Ok(())
}

fn fill_row(row: &mut [f64], i: usize, qfs: &[QuantileFunction], j_eff: f64) {
    let a = qfs[i].values();
    for (slot, q) in row.iter_mut().zip(&qfs[i + 1..]) {
        *slot = (sum_sq(a, q.values()) / j_eff).sqrt();
    }
}

fn split_rows(upper: &mut [f64], n: usize) -> Vec<&mut [f64]> {
    let mut rows = Vec::with_capacity(n);
    let mut rest = upper;
    for i in 0..n {
        let (row, tail) = rest.split_at_mut(n - 1 - i);
        rows.push(row);
        rest = tail;
    }
    rows
}

/// All pairwise distances. Rows are computed in parallel; each entry is the
/// same scalar computation as [`wasserstein`], so the result does not
/// depend on the thread count.
pub fn pairwise_matrix(
    ids: &[String],
    qfs: &[QuantileFunction],
    config: &DistanceConfig,
) -> Result<DistanceMatrix, DistanceError> {
    pairwise_impl(ids, qfs, config, true)
}

/// Single-threaded [`pairwise_matrix`].
pub fn pairwise_matrix_serial(
    ids: &[String],
    qfs: &[QuantileFunction],
    config: &DistanceConfig,
) -> Result<DistanceMatrix, DistanceError> {
    pairwise_impl(ids, qfs, config, false)
}

fn pairwise_impl(
    ids: &[String],
    qfs: &[QuantileFunction],
    config: &DistanceConfig,
    parallel: bool,
) -> Result<DistanceMatrix, DistanceError> {
    validate(ids, qfs, config)?;
    let n = ids.len();
    let mut upper = vec![0.0; n * n.saturating_sub(1) / 2];
    let j_eff = config.grid.j_eff() as f64;
    let rows = split_rows(&mut upper, n);
    if parallel {
        rows.into_par_iter()
            .enumerate()
            .with_min_len(8)
            .for_each(|(i, row)| fill_row(row, i, qfs, j_eff));
    } else {
        for (i, row) in rows.into_iter().enumerate() {
            fill_row(row, i, qfs, j_eff);
        }
    }
    Ok(DistanceMatrix {
        ids: ids.to_vec(),
        upper,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::{build_grid, GridRule, Interval};

    fn qf(grid: &Arc<ProbGrid>, v: &[f64]) -> QuantileFunction {
        QuantileFunction::from_values(Arc::clone(grid), v.to_vec(), v.len())
    }

    fn config(j: usize) -> DistanceConfig {
        DistanceConfig {
            grid: Arc::new(build_grid(j, Interval::UNIT, GridRule::Truncated).unwrap()),
            quantile_rule: QuantileRule::Linear,
        }
    }

    #[test]
    fn identity_and_constants() {
        let c = config(3);
        let a = qf(&c.grid, &[1.0, 2.0, 3.0]);
        assert_eq!(wasserstein(&a, &a).unwrap(), 0.0);
        let k1 = qf(&c.grid, &[2.5; 3]);
        let k2 = qf(&c.grid, &[7.0; 3]);
        assert_eq!(wasserstein(&k1, &k2).unwrap(), 4.5);
    }

    #[test]
    fn mismatched_grids() {
        let a = qf(&config(3).grid, &[1.0, 2.0, 3.0]);
        let b = qf(&config(1).grid, &[1.0]);
        assert_eq!(
            sq_discrepancy(&a, &b),
            Err(DistanceError::GridMismatch { left: 3, right: 1 })
        );
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(pairwise_matrix(&ids, &[a.clone(), b], &config(3)).is_err());
        assert!(matches!(
            pairwise_matrix(&ids[..1], &[a.clone(), a], &config(3)),
            Err(DistanceError::IdCount { .. })
        ));
    }

    #[test]
    fn single_participant_matrix() {
        let c = config(1);
        let m = pairwise_matrix(&["x".into()], &[qf(&c.grid, &[3.0])], &c).unwrap();
        assert_eq!(m.n_pairs(), 0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn three_by_three_matches_scalar_calls() {
        let c = config(3);
        let qs = vec![
            qf(&c.grid, &[0.0, 1.0, 5.0]),
            qf(&c.grid, &[0.0, 3.0, 9.0]),
            qf(&c.grid, &[2.0, 2.0, 2.0]),
        ];
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m = pairwise_matrix(&ids, &qs, &c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { wasserstein(&qs[i], &qs[j]).unwrap() };
                assert_eq!(m.get(i, j).to_bits(), expect.to_bits());
            }
        }
        // (0,1): (0 + 4 + 16) / 3
        assert_eq!(m.get(0, 1), (20.0f64 / 3.0).sqrt());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let c = config(4);
        let qs: Vec<_> = (0..5)
            .map(|k| {
                let k = k as f64;
                qf(&c.grid, &[k * 0.1, k * 0.3, k * 1.7 + 0.01, k * k + 2.0 * k + 0.02])
            })
            .collect();
        let ids: Vec<String> = (0..5).map(|k| format!("p{k}")).collect();
        let m = pairwise_matrix(&ids, &qs, &c).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# J=4 interval=[0,1] rule=truncated quantile=linear j_eff=4\n"));
        let mut reversed = ids.clone();
        reversed.reverse();
        let back = DistanceMatrix::read_csv(buf.as_slice(), &reversed).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(back.get(4 - i, 4 - j).to_bits(), m.get(i, j).to_bits());
            }
        }
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn csv_missing_pair() {
        let text = "# J=1 interval=[0,1]\nid_a,id_b,distance\na,b,1\n";
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let err = DistanceMatrix::read_csv(text.as_bytes(), &ids).unwrap_err();
        assert!(err.to_string().contains("missing pair (a, c)"));
    }
}
