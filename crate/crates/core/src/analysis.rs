//! Archive statistics, milestone tables, seed selection and rank tests.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::evolution::{Archive, RunLog, CELLS};
use crate::genome::DesignRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveStats {
    pub coverage: f64,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    /// Sum of fitness over occupied cells, negatives counted as zero.
    pub qd_score: f64,
    /// Mean of the top ⌈10%⌉ of occupied cells by fitness.
    pub elite_mean: f64,
}

pub fn archive_stats(a: &Archive) -> Result<ArchiveStats> {
    let mut f: Vec<f64> = a.occupied().map(|(_, i)| i.fitness).collect();
    if f.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let n = f.len();
    let mean = f.iter().sum::<f64>() / n as f64;
    let qd = f.iter().map(|v| v.max(0.0)).sum();
    f.sort_by(|a, b| b.total_cmp(a));
    let top = n.div_ceil(10);
    Ok(ArchiveStats {
        coverage: n as f64 / CELLS as f64,
        mean_fitness: mean,
        best_fitness: f[0],
        qd_score: qd,
        elite_mean: f[..top].iter().sum::<f64>() / top as f64,
    })
}

/// Best fitness seen in each cell across a set of archives.
pub fn best_per_cell(archives: &[&Archive]) -> Vec<Option<f64>> {
    let mut best: Vec<Option<f64>> = vec![None; CELLS];
    for a in archives {
        for (i, f) in a.fitness_grid().into_iter().enumerate() {
            if let Some(f) = f {
                best[i] = Some(best[i].map_or(f, |b: f64| b.max(f)));
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunQuality {
    pub reliability: f64,
    pub precision: f64,
}

/// Per-run cell fitness normalised by the best known fitness of that cell,
/// averaged over all cells (reliability) and over occupied cells (precision).
/// Ratios are clamped at zero; cells whose best known fitness is not
/// positive contribute zero.
pub fn reliability_precision(archives: &[&Archive]) -> Vec<RunQuality> {
    let best = best_per_cell(archives);
    archives
        .iter()
        .map(|a| {
            let mut sum = 0.0;
            let mut occupied = 0usize;
            for (i, f) in a.fitness_grid().into_iter().enumerate() {
                if let Some(f) = f {
                    occupied += 1;
                    let b = best[i].expect("occupied cell has a best");
                    if b > 0.0 {
                        sum += (f / b).max(0.0);
                    }
                }
            }
            RunQuality {
                reliability: sum / CELLS as f64,
                precision: if occupied == 0 {
                    0.0
                } else {
                    sum / occupied as f64
                },
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MilestoneMode {
    Mean,
    Elite,
}

/// Index of the initial dip: the lowest value within the first ⌈10%⌉ of the
/// series, earliest on ties.
pub fn initial_dip(series: &[f64]) -> Option<usize> {
    let window = series.len().div_ceil(10);
    series[..window]
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v >= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// First index strictly after the initial dip reaching each percentage of
/// the final value. Undefined when the final value is not positive.
pub fn series_milestones(series: &[f64], percents: &[f64]) -> Vec<Option<u32>> {
    let (Some(&last), Some(dip)) = (series.last(), initial_dip(series)) else {
        return vec![None; percents.len()];
    };
    if last <= 0.0 {
        return vec![None; percents.len()];
    }
    percents
        .iter()
        .map(|p| {
            let goal = p / 100.0 * last;
            series
                .iter()
                .enumerate()
                .skip(dip + 1)
                .find(|(_, v)| **v >= goal)
                .map(|(i, _)| i as u32)
        })
        .collect()
}

pub fn fitness_milestones(log: &RunLog, percents: &[f64], mode: MilestoneMode) -> Vec<Option<u32>> {
    let series = match mode {
        MilestoneMode::Mean => log.series(|r| r.mean_fitness),
        MilestoneMode::Elite => log.series(|r| r.elite_mean),
    };
    series_milestones(&series, percents)
        .into_iter()
        .map(|m| m.map(|i| log.records[i as usize].iter))
        .collect()
}

pub fn coverage_milestones(log: &RunLog, percents: &[f64]) -> Vec<Option<u32>> {
    percents
        .iter()
        .map(|p| {
            let goal = p / 100.0;
            log.records
                .iter()
                .find(|r| r.coverage >= goal)
                .map(|r| r.iter)
        })
        .collect()
}

fn user_key(r: &DesignRecord, index: usize) -> String {
    r.user_id.clone().unwrap_or_else(|| format!("anon{index}"))
}

/// Drop designs identical to the same user's previous design in the same
/// environment.
pub fn dedup_pool(records: &[DesignRecord]) -> Vec<DesignRecord> {
    let mut last: HashMap<(Option<String>, Option<String>), &crate::genome::Genome> =
        HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let key = (r.user_id.clone(), r.environment.clone());
        if r.user_id.is_some() && last.get(&key) == Some(&&r.genome) {
            continue;
        }
        last.insert(key, &r.genome);
        out.push(r.clone());
    }
    out
}

/// Number of designs the greedy rule can take under `cap` per user.
pub fn selectable(pool: &[DesignRecord], cap: usize) -> usize {
    let mut per_user: HashMap<String, usize> = HashMap::new();
    for (i, r) in pool.iter().enumerate() {
        *per_user.entry(user_key(r, i)).or_default() += 1;
    }
    per_user.values().map(|n| (*n).min(cap)).sum()
}

/// Greedy pick in order of recorded fitness (desc), user id (asc) and
/// iteration (asc), taking a design only while its user is under `cap`.
pub fn select_seeds(pool: &[DesignRecord], n: usize, cap: usize) -> Result<Vec<DesignRecord>> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let fit = |i: usize| pool[i].recorded_fitness.unwrap_or(f64::NEG_INFINITY);
    order.sort_by(|&a, &b| {
        fit(b)
            .total_cmp(&fit(a))
            .then_with(|| user_key(&pool[a], a).cmp(&user_key(&pool[b], b)))
            .then_with(|| pool[a].iteration.cmp(&pool[b].iteration))
            .then(a.cmp(&b))
    });
    let mut taken: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for i in order {
        if out.len() == n {
            break;
        }
        let count = taken.entry(user_key(&pool[i], i)).or_default();
        if *count < cap {
            *count += 1;
            out.push(pool[i].clone());
        }
    }
    if out.len() < n {
        return Err(Error::InfeasibleSeeds {
            need: n,
            have: out.len(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Largest combined sample size that gets an exact p-value.
pub const EXACT_LIMIT: usize = 20;

/// Midranks of the pooled sample, doubled so they are integers.
fn doubled_ranks(pooled: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        // Positions i..=j share the rank ((i+1) + (j+1)) / 2.
        let doubled = (i + j + 2) as u64;
        for k in i..=j {
            ranks[idx[k]] = doubled;
        }
        i = j + 1;
    }
    ranks
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> MannWhitney {
    assert!(
        !x.is_empty() && !y.is_empty(),
        "both samples must be non-empty"
    );
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let rx: u64 = ranks[..n1].iter().sum();
    let u = rx as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    if n1 + n2 <= EXACT_LIMIT {
        MannWhitney {
            u,
            p: exact_p(&ranks, n1, rx),
            exact: true,
        }
    } else {
        MannWhitney {
            u,
            p: normal_p(&ranks, n1, n2, u),
            exact: false,
        }
    }
}

/// Share of all n1-subsets of the pooled ranks whose rank sum lies at least
/// as far from its mean as the observed one.
fn exact_p(ranks: &[u64], n1: usize, observed: u64) -> f64 {
    let n = ranks.len();
    let max_sum: u64 = ranks.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s.
    let mut counts = vec![vec![0u64; max_sum as usize + 1]; n1 + 1];
    counts[0][0] = 1;
    for &r in ranks {
        for k in (1..=n1).rev() {
            for s in (r as usize..=max_sum as usize).rev() {
                counts[k][s] += counts[k - 1][s - r as usize];
            }
        }
    }
    // Mean of the doubled rank sum.
    let centre = (n1 * (n + 1)) as i64;
    let dev = |s: u64| (s as i64 - centre).abs();
    let cut = dev(observed);
    let (mut hit, mut total) = (0u64, 0u64);
    for (s, &c) in counts[n1].iter().enumerate() {
        total += c;
        if dev(s as u64) >= cut {
            hit += c;
        }
    }
    hit as f64 / total as f64
}

fn normal_p(ranks: &[u64], n1: usize, n2: usize, u: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let mut tie_counts: HashMap<u64, usize> = HashMap::new();
    for r in ranks {
        *tie_counts.entry(*r).or_default() += 1;
    }
    let ties: f64 = tie_counts.values().map(|&t| (t * t * t - t) as f64).sum();
    let (a, b) = (n1 as f64, n2 as f64);
    let var = a * b / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - a * b / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// The column result is larger.
    Larger,
    /// The column result is smaller.
    Smaller,
    /// Difference under 0.5% of the smaller value.
    Similar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub direction: Direction,
    pub p: f64,
    pub significant: bool,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = match self.direction {
            Direction::Larger => "+",
            Direction::Smaller => "-",
            Direction::Similar => "~",
        };
        write!(f, "{mark}{}", if self.significant { "*" } else { "" })
    }
}

pub const SIGNIFICANCE: f64 = 0.05;
pub const SIMILARITY: f64 = 0.005;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Compare the column sample against the row sample by mean, with a
/// two-sided rank test for significance.
pub fn compare(row: &[f64], col: &[f64]) -> Comparison {
    let (r, c) = (mean(row), mean(col));
    let smaller = r.abs().min(c.abs());
    let direction = if (c - r).abs() < SIMILARITY * smaller || c == r {
        Direction::Similar
    } else if c > r {
        Direction::Larger
    } else {
        Direction::Smaller
    };
    let p = mann_whitney_u(row, col).p;
    Comparison {
        direction,
        p,
        significant: p < SIGNIFICANCE,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub labels: Vec<String>,
    /// cells[row][col]; the diagonal is empty.
    pub cells: Vec<Vec<Option<Comparison>>>,
}

pub fn pairwise(groups: &[(String, Vec<f64>)]) -> PairwiseMatrix {
    let cells = groups
        .iter()
        .enumerate()
        .map(|(i, (_, row))| {
            groups
                .iter()
                .enumerate()
                .map(|(j, (_, col))| (i != j).then(|| compare(row, col)))
                .collect()
        })
        .collect();
    PairwiseMatrix {
        labels: groups.iter().map(|g| g.0.clone()).collect(),
        cells,
    }
}

impl PairwiseMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row\\col");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.cells) {
            out.push_str(l);
            for c in row {
                out.push(',');
                if let Some(c) = c {
                    out.push_str(&c.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::LogRecord;
    use crate::evolution::{Individual, Provenance, RunLog};
    use crate::genome::Genome;

    fn archive_with(fitness: &[f64]) -> Archive {
        let mut a = Archive::new();
        let mut g = Genome::neutral();
        for (i, f) in fitness.iter().enumerate() {
            g.body_scale[0] = 0.5 + 0.09 * i as f64;
            a.insert(Individual::new(g.clone(), *f, Provenance::Random));
        }
        assert_eq!(a.len(), fitness.len());
        a
    }

    #[test]
    fn one_cell_stats() {
        let s = archive_stats(&archive_with(&[5.0])).unwrap();
        assert_eq!(s.coverage, 1.0 / 400.0);
        assert_eq!(
            (s.mean_fitness, s.best_fitness, s.qd_score, s.elite_mean),
            (5.0, 5.0, 5.0, 5.0)
        );
    }

    #[test]
    fn negative_fitness_is_clamped_in_qd() {
        let s = archive_stats(&archive_with(&[-2.0, 4.0])).unwrap();
        assert_eq!(
            (s.qd_score, s.mean_fitness, s.best_fitness),
            (4.0, 1.0, 4.0)
        );
    }

    #[test]
    fn elite_mean_uses_top_tenth_rounded_up() {
        let f: Vec<f64> = (1..=11).map(f64::from).collect();
        let s = archive_stats(&archive_with(&f)).unwrap();
        assert_eq!(s.elite_mean, (11.0 + 10.0) / 2.0);
    }

    #[test]
    fn empty_archive_has_no_stats() {
        assert!(matches!(
            archive_stats(&Archive::new()),
            Err(Error::EmptyArchive)
        ));
    }

    #[test]
    fn single_run_is_its_own_best() {
        let a = archive_with(&[1.0, 2.0, 3.0]);
        let q = reliability_precision(&[&a])[0];
        assert_eq!(q.precision, 1.0);
        assert_eq!(q.reliability, 3.0 / 400.0);
    }

    #[test]
    fn disjoint_runs() {
        let mut g = Genome::neutral();
        let mut a = Archive::new();
        a.insert(Individual::new(g.clone(), 2.0, Provenance::Random));
        g.body_scale[0] = 0.5;
        let mut b = Archive::new();
        b.insert(Individual::new(g, 6.0, Provenance::Random));
        let q = reliability_precision(&[&a, &b]);
        for r in q {
            assert_eq!(r.precision, 1.0);
            assert_eq!(r.reliability, 1.0 / 400.0);
        }
    }

    #[test]
    fn shared_cell_halves_the_weaker_run() {
        let a = archive_with(&[2.0]);
        let b = archive_with(&[4.0]);
        let q = reliability_precision(&[&a, &b]);
        assert_eq!(q[0].precision, 0.5);
        assert_eq!(q[1].precision, 1.0);
        assert!(q.iter().all(|r| r.reliability <= r.precision));
    }

    #[test]
    fn milestone_examples() {
        let constant = vec![3.0; 50];
        assert_eq!(
            series_milestones(&constant, &[50.0, 100.0]),
            vec![Some(1), Some(1)]
        );
        let ramp: Vec<f64> = (0..=100).map(|i| i as f64 / 10.0).collect();
        assert_eq!(series_milestones(&ramp, &[50.0]), vec![Some(50)]);
        // Starts high, dips at 3, then climbs to 10.
        let mut dip = vec![8.0, 6.0, 4.0, 1.0];
        dip.extend((1..=36).map(|i| 1.0 + i as f64 * 0.25));
        assert_eq!(initial_dip(&dip), Some(3));
        // 50% of 10 is 5, first reached after the dip at 1 + 16 * 0.25.
        assert_eq!(series_milestones(&dip, &[50.0]), vec![Some(19)]);
        assert_eq!(series_milestones(&[-1.0, -0.5], &[50.0]), vec![None]);
        assert_eq!(series_milestones(&[1.0, 2.0], &[150.0]), vec![None]);
    }

    fn log_with_coverage(c: &[f64]) -> RunLog {
        RunLog {
            records: c
                .iter()
                .enumerate()
                .map(|(i, &coverage)| LogRecord {
                    iter: i as u32,
                    coverage,
                    mean_fitness: 0.0,
                    best_fitness: 0.0,
                    qd_score: 0.0,
                    elite_mean: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn coverage_milestone_examples() {
        assert_eq!(
            coverage_milestones(&log_with_coverage(&[1.0, 1.0]), &[50.0, 100.0]),
            vec![Some(0), Some(0)]
        );
        let c: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        assert_eq!(
            coverage_milestones(&log_with_coverage(&c), &[50.0]),
            vec![Some(15)]
        );
        assert_eq!(
            coverage_milestones(&log_with_coverage(&c), &[99.0]),
            vec![None]
        );
    }

    fn rec(user: &str, fitness: f64, iteration: u32) -> DesignRecord {
        DesignRecord {
            user_id: Some(user.into()),
            recorded_fitness: Some(fitness),
            iteration: Some(iteration),
            ..DesignRecord::bare(Genome::neutral())
        }
    }

    #[test]
    fn seed_selection_examples() {
        let pool = vec![
            rec("u1", 9.0, 1),
            rec("u1", 8.0, 2),
            rec("u2", 7.0, 1),
            rec("u3", 6.0, 1),
        ];
        let fit = |v: Vec<DesignRecord>| {
            v.iter()
                .map(|r| r.recorded_fitness.unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(fit(select_seeds(&pool, 3, 1).unwrap()), vec![9.0, 7.0, 6.0]);
        assert_eq!(fit(select_seeds(&pool, 3, 2).unwrap()), vec![9.0, 8.0, 7.0]);
        let err = select_seeds(&pool, 4, 1).unwrap_err();
        assert_eq!(err.to_string(), "need 4 seeds, have 3");
        assert_eq!(selectable(&pool, 1), 3);
    }

    #[test]
    fn seed_ties_break_on_user_then_iteration() {
        let pool = vec![rec("u2", 5.0, 1), rec("u1", 5.0, 4), rec("u1", 5.0, 2)];
        let got = select_seeds(&pool, 3, 3).unwrap();
        let keys: Vec<(String, u32)> = got
            .iter()
            .map(|r| (r.user_id.clone().unwrap(), r.iteration.unwrap()))
            .collect();
        assert_eq!(
            keys,
            vec![("u1".into(), 2), ("u1".into(), 4), ("u2".into(), 1)]
        );
    }

    #[test]
    fn consecutive_duplicates_are_dropped() {
        let mut other = Genome::neutral();
        other.body_scale[1] = 1.2;
        let a = rec("u1", 1.0, 0);
        let mut b = rec("u1", 2.0, 1);
        b.genome = other;
        let pool = vec![a.clone(), a.clone(), b, a.clone(), rec("u2", 1.0, 0)];
        assert_eq!(dedup_pool(&pool).len(), 4);
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        assert_eq!(r.u, 0.0);
        assert!((r.p - 0.1).abs() < 1e-15);
        assert!(r.exact);
        let x = [3.0, 1.0, 2.0];
        assert_eq!(mann_whitney_u(&x, &x).p, 1.0);
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let b: Vec<f64> = (11..=20).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b);
        assert_eq!(r.u, 0.0);
        assert_eq!(r.p, 2.0 / 184_756.0);
    }

    #[test]
    fn large_samples_use_the_normal_approximation() {
        let a: Vec<f64> = (0..15).map(f64::from).collect();
        let b: Vec<f64> = (0..15).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&a, &b);
        assert!(!r.exact);
        assert!(r.p > 0.5 && r.p <= 1.0);
        let c: Vec<f64> = (100..115).map(f64::from).collect();
        assert!(mann_whitney_u(&a, &c).p < 1e-4);
    }

    #[test]
    fn pairwise_marks() {
        let groups = vec![
            ("h0".to_string(), vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            ("h5".to_string(), vec![10.0, 11.0, 12.0, 13.0, 14.0]),
            ("h15".to_string(), vec![1.001, 2.0, 3.0, 4.0, 5.0]),
        ];
        let m = pairwise(&groups);
        assert_eq!(m.cells[0][1].unwrap().to_string(), "+*");
        assert_eq!(m.cells[1][0].unwrap().to_string(), "-*");
        assert_eq!(m.cells[0][2].unwrap().direction, Direction::Similar);
        assert!(m.cells[0][0].is_none());
        let csv = m.to_csv();
        assert!(csv.starts_with("row\\col,h0,h5,h15\nh0,,+*,~\n"));
    }
}
