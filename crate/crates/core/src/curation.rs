//! Curricula, filters, loss weights, pair scores and distribution reports
//! built from annotated records.

use std::cmp::Ordering;
use std::f64::consts::E;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnnotatedRecord, SourceClass};
use crate::seeding;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("every record has u = e; UDPO coefficients are undefined")]
    DegenerateWeights,
    #[error("record {0:?} has no source class")]
    MissingClass(String),
    #[error("record {id:?}: invalid weight input {value}")]
    InvalidWeight { id: String, value: f64 },
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Epistemic,
    Aleatoric,
    Balent,
    Bad,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Epistemic,
        Strategy::Aleatoric,
        Strategy::Balent,
        Strategy::Bad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Epistemic => "epistemic",
            Strategy::Aleatoric => "aleatoric",
            Strategy::Balent => "balent",
            Strategy::Bad => "bad",
        }
    }

    fn metric(self, rec: &AnnotatedRecord) -> Option<f64> {
        let u = &rec.uncertainty;
        match self {
            Strategy::Epistemic => Some(u.epistemic),
            Strategy::Aleatoric => Some(u.aleatoric),
            Strategy::Balent => Some(u.balent),
            Strategy::Random | Strategy::Bad => None,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = CurationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CurationError::Unknown {
                kind: "strategy",
                value: s.into(),
            })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ascending,
    Descending,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Ascending => "ascending",
            Direction::Descending => "descending",
            Direction::NotApplicable => "n/a",
        })
    }
}

/// One epoch's record order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub strategy: Strategy,
    pub direction: Direction,
    pub seed: u64,
    pub ranking: Vec<String>,
}

impl CurriculumPlan {
    /// One id per line.
    pub fn write_text<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for id in &self.ranking {
            writeln!(sink, "{id}")?;
        }
        sink.flush()
    }

    /// `{"id": .., "rank": ..}` per line, ranks from 0.
    pub fn write_jsonl<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for (rank, id) in self.ranking.iter().enumerate() {
            let line = serde_json::json!({ "id": id, "rank": rank });
            writeln!(sink, "{line}")?;
        }
        sink.flush()
    }
}

fn shuffled_ids<'a>(ids: impl Iterator<Item = &'a str>, seed: u64) -> Vec<String> {
    let mut out: Vec<String> = ids.map(str::to_owned).collect();
    out.shuffle(&mut seeding::rng(seed));
    out
}

fn sorted_ids(records: &[&AnnotatedRecord], key: impl Fn(&AnnotatedRecord) -> f64, desc: bool) -> Vec<String> {
    let mut v: Vec<&AnnotatedRecord> = records.to_vec();
    v.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        let ord = if desc { kb.total_cmp(&ka) } else { ka.total_cmp(&kb) };
        ord.then_with(|| a.pair.id.cmp(&b.pair.id))
    });
    v.into_iter().map(|r| r.pair.id.clone()).collect()
}

/// Orders records by an uncertainty metric, or shuffles them for
/// [`Strategy::Random`]. Ties always break by ascending id, in both
/// directions. [`Strategy::Bad`] is forwarded to [`bad_curriculum`].
pub fn order_by(
    records: &[AnnotatedRecord],
    strategy: Strategy,
    direction: Direction,
    seed: u64,
) -> Result<CurriculumPlan, CurationError> {
    if records.is_empty() {
        return Err(CurationError::EmptyDataset);
    }
    let (ranking, direction) = match strategy {
        Strategy::Bad => return bad_curriculum(records, seed),
        Strategy::Random => (
            shuffled_ids(records.iter().map(|r| r.pair.id.as_str()), seed),
            Direction::NotApplicable,
        ),
        _ => {
            let desc = direction == Direction::Descending;
            let refs: Vec<&AnnotatedRecord> = records.iter().collect();
            let key = |r: &AnnotatedRecord| strategy.metric(r).unwrap_or(0.0);
            let dir = if desc { Direction::Descending } else { Direction::Ascending };
            (sorted_ids(&refs, key, desc), dir)
        }
    };
    Ok(CurriculumPlan {
        strategy,
        direction,
        seed,
        ranking,
    })
}

/// Adversarial ordering: positive-gap records by descending balanced
/// entropy, then every record with `mu <= 0` in shuffled order.
pub fn bad_curriculum(records: &[AnnotatedRecord], seed: u64) -> Result<CurriculumPlan, CurationError> {
    if records.is_empty() {
        return Err(CurationError::EmptyDataset);
    }
    let (pos, neg): (Vec<&AnnotatedRecord>, Vec<&AnnotatedRecord>) =
        records.iter().partition(|r| r.posterior.mu > 0.0);
    let mut ranking = sorted_ids(&pos, |r| r.uncertainty.balent, true);
    ranking.extend(shuffled_ids(neg.iter().map(|r| r.pair.id.as_str()), seed));
    Ok(CurriculumPlan {
        strategy: Strategy::Bad,
        direction: Direction::NotApplicable,
        seed,
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapFilter {
    PositiveGapOnly,
    MinGap(f64),
}

impl GapFilter {
    pub fn keeps(&self, mu: f64) -> bool {
        match *self {
            GapFilter::PositiveGapOnly => mu > 0.0,
            GapFilter::MinGap(t) => mu >= t,
        }
    }
}

/// Order-preserving subset.
pub fn filter_by_gap(records: &[AnnotatedRecord], filter: GapFilter) -> Vec<AnnotatedRecord> {
    records
        .iter()
        .filter(|r| filter.keeps(r.posterior.mu))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub id: String,
    /// UDPO coefficient `(e - u) / mean(e - u)`.
    pub c_u: Option<f64>,
    /// UCPO per-record weight `r_c + gamma (1 - u_tilde)`.
    pub ucpo_weight: Option<f64>,
    /// Min-max normalised `u` over the dataset.
    pub u_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcpoConfig {
    pub gamma: f64,
    pub reward_expert: f64,
    pub reward_suboptimal: f64,
}

impl Default for UcpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            reward_expert: 1.0,
            reward_suboptimal: 0.1,
        }
    }
}

impl UcpoConfig {
    pub fn class_reward(&self, class: SourceClass) -> Option<f64> {
        match class {
            SourceClass::Expert => Some(self.reward_expert),
            SourceClass::Suboptimal => Some(self.reward_suboptimal),
            SourceClass::Unlabeled => None,
        }
    }
}

/// Normalises non-negative deficits `e - u` to mean one.
pub fn udpo_coefficients(deficits: &[f64]) -> Result<Vec<f64>, CurationError> {
    if deficits.is_empty() {
        return Err(CurationError::EmptyDataset);
    }
    let mean = deficits.iter().sum::<f64>() / deficits.len() as f64;
    if !(mean > 0.0) {
        return Err(CurationError::DegenerateWeights);
    }
    Ok(deficits.iter().map(|d| d / mean).collect())
}

/// `(u - min) / (max - min)`, or 0.5 everywhere when all `u` are equal.
pub fn min_max_normalize(us: &[f64]) -> Vec<f64> {
    let lo = us.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    us.iter()
        .map(|&u| if span > 0.0 { ((u - lo) / span).clamp(0.0, 1.0) } else { 0.5 })
        .collect()
}

fn checked_u(records: &[AnnotatedRecord]) -> Result<Vec<f64>, CurationError> {
    if records.is_empty() {
        return Err(CurationError::EmptyDataset);
    }
    records
        .iter()
        .map(|r| {
            let u = r.uncertainty.u;
            if (0.0..=E).contains(&u) {
                Ok(u)
            } else {
                Err(CurationError::InvalidWeight {
                    id: r.pair.id.clone(),
                    value: u,
                })
            }
        })
        .collect()
}

/// UDPO coefficients normalised over the whole dataset. Classes are not
/// required; `ucpo_weight` is left empty.
pub fn udpo_weights(records: &[AnnotatedRecord]) -> Result<Vec<WeightRecord>, CurationError> {
    let us = checked_u(records)?;
    let deficits: Vec<f64> = us.iter().map(|u| E - u).collect();
    let c = udpo_coefficients(&deficits)?;
    let tilde = min_max_normalize(&us);
    Ok(records
        .iter()
        .zip(c)
        .zip(tilde)
        .map(|((r, c_u), u_tilde)| WeightRecord {
            id: r.pair.id.clone(),
            c_u: Some(c_u),
            ucpo_weight: None,
            u_tilde,
        })
        .collect())
}

pub fn ucpo_weights(
    records: &[AnnotatedRecord],
    config: &UcpoConfig,
) -> Result<Vec<WeightRecord>, CurationError> {
    let us = checked_u(records)?;
    let tilde = min_max_normalize(&us);
    records
        .iter()
        .zip(tilde)
        .map(|(r, u_tilde)| {
            let rc = config
                .class_reward(r.pair.source_class)
                .ok_or_else(|| CurationError::MissingClass(r.pair.id.clone()))?;
            Ok(WeightRecord {
                id: r.pair.id.clone(),
                c_u: None,
                ucpo_weight: Some(rc + config.gamma * (1.0 - u_tilde)),
                u_tilde,
            })
        })
        .collect()
}

pub fn write_weights<W: Write>(weights: &[WeightRecord], mut sink: W) -> std::io::Result<()> {
    for w in weights {
        serde_json::to_writer(&mut sink, w)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

/// Benchmark pair-comparison score `(2W + D) / (W + D + L) * 100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairScore {
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
}

impl PairScore {
    pub fn new(wins: u64, draws: u64, losses: u64) -> Result<Self, CurationError> {
        if wins + draws + losses == 0 {
            return Err(CurationError::EmptyDataset);
        }
        Ok(Self { wins, draws, losses })
    }

    pub fn total(&self) -> u64 {
        self.wins + self.draws + self.losses
    }

    /// Exact numerator and denominator of the score.
    pub fn as_ratio(&self) -> (u128, u128) {
        (
            u128::from(2 * self.wins + self.draws) * 100,
            u128::from(self.total()),
        )
    }

    pub fn value(&self) -> f64 {
        let (num, den) = self.as_ratio();
        num as f64 / den as f64
    }

    /// Score in tenths, rounded half to even on the exact rational.
    pub fn tenths(&self) -> u128 {
        let (num, den) = self.as_ratio();
        let scaled = num * 10;
        let (q, r) = (scaled / den, scaled % den);
        match (2 * r).cmp(&den) {
            Ordering::Less => q,
            Ordering::Greater => q + 1,
            Ordering::Equal => q + (q & 1),
        }
    }
}

impl fmt::Display for PairScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        write!(f, "{}.{}", t / 10, t % 10)
    }
}

pub fn pair_score(wins: u64, draws: u64, losses: u64) -> Result<f64, CurationError> {
    Ok(PairScore::new(wins, draws, losses)?.value())
}

pub const REPORT_FIELDS: [&str; 3] = ["u", "aleatoric", "epistemic"];
pub const DEFAULT_REPORT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GapBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Means of [`REPORT_FIELDS`]; NaN for empty bins.
    pub means: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub n_records: usize,
    pub bins: Vec<GapBin>,
    /// Pearson correlations among [`REPORT_FIELDS`]; NaN when undefined.
    pub correlation: [[f64; 3]; 3],
    pub zero_variance: [bool; 3],
}

fn fields_of(r: &AnnotatedRecord) -> [f64; 3] {
    let u = &r.uncertainty;
    [u.u, u.aleatoric, u.epistemic]
}

/// Pearson correlation; `None` if fewer than two points or either side has
/// zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx > 0.0 && syy > 0.0 {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Field means binned by reward gap `mu` over equal-width bins spanning the
/// observed range, plus the correlation matrix of the three fields.
pub fn report(records: &[AnnotatedRecord], n_bins: usize) -> Result<Report, CurationError> {
    if records.is_empty() {
        return Err(CurationError::EmptyDataset);
    }
    let n_bins = n_bins.max(1);
    let mus: Vec<f64> = records.iter().map(|r| r.posterior.mu).collect();
    let lo = mus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    let mut sums = vec![[0.0f64; 3]; n_bins];
    for (r, &mu) in records.iter().zip(&mus) {
        let b = if width > 0.0 {
            (((mu - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[b] += 1;
        for (s, v) in sums[b].iter_mut().zip(fields_of(r)) {
            *s += v;
        }
    }
    let bins = (0..n_bins)
        .map(|b| GapBin {
            lo: lo + width * b as f64,
            hi: if b + 1 == n_bins { hi } else { lo + width * (b + 1) as f64 },
            count: counts[b],
            means: sums[b].map(|s| if counts[b] > 0 { s / counts[b] as f64 } else { f64::NAN }),
        })
        .collect();

    let cols: Vec<Vec<f64>> = (0..3)
        .map(|k| records.iter().map(|r| fields_of(r)[k]).collect())
        .collect();
    let zero_variance = [0, 1, 2].map(|k| cols[k].iter().all(|&v| v == cols[k][0]));
    let mut correlation = [[f64::NAN; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            correlation[i][j] = pearson(&cols[i], &cols[j]).unwrap_or(f64::NAN);
        }
    }
    Ok(Report {
        n_records: records.len(),
        bins,
        correlation,
        zero_variance,
    })
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

impl Report {
    /// Two CSV tables separated by a blank line: the gap histogram, then the
    /// correlation matrix with a zero-variance flag per field.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "bin,mu_lo,mu_hi,count,mean_u,mean_aleatoric,mean_epistemic")?;
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(
                sink,
                "{i},{},{},{},{},{},{}",
                fmt_num(b.lo),
                fmt_num(b.hi),
                b.count,
                fmt_num(b.means[0]),
                fmt_num(b.means[1]),
                fmt_num(b.means[2])
            )?;
        }
        writeln!(sink)?;
        writeln!(sink, "field,corr_u,corr_aleatoric,corr_epistemic,zero_variance")?;
        for (i, name) in REPORT_FIELDS.iter().enumerate() {
            let row = &self.correlation[i];
            writeln!(
                sink,
                "{name},{},{},{},{}",
                fmt_num(row[0]),
                fmt_num(row[1]),
                fmt_num(row[2]),
                self.zero_variance[i]
            )?;
        }
        sink.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GapPosterior, PreferencePair};
    use crate::uncertainty::UncertaintyRecord;

    fn rec(id: &str, mu: f64, aleatoric: f64, balent: f64, u: f64) -> AnnotatedRecord {
        AnnotatedRecord {
            pair: PreferencePair::new(id, vec![], None),
            posterior: GapPosterior::new(mu, 1.0).unwrap(),
            uncertainty: UncertaintyRecord {
                mean_prob: 0.5,
                shannon: 0.6,
                epistemic: 0.1 * aleatoric,
                aleatoric,
                balent,
                u,
            },
        }
    }

    fn with_u(us: &[f64]) -> Vec<AnnotatedRecord> {
        us.iter()
            .enumerate()
            .map(|(i, &u)| rec(&format!("r{i}"), 1.0, 0.3, 0.0, u))
            .collect()
    }

    #[test]
    fn order_by_metric() {
        let recs = vec![
            rec("a", 1.0, 0.1, 0.0, 1.0),
            rec("b", 1.0, 0.3, 0.0, 1.0),
            rec("c", 1.0, 0.2, 0.0, 1.0),
        ];
        let asc = order_by(&recs, Strategy::Aleatoric, Direction::Ascending, 0).unwrap();
        assert_eq!(asc.ranking, ["a", "c", "b"]);
        let desc = order_by(&recs, Strategy::Aleatoric, Direction::Descending, 0).unwrap();
        assert_eq!(desc.ranking, ["b", "c", "a"]);
        let r1 = order_by(&recs, Strategy::Random, Direction::NotApplicable, 9).unwrap();
        let r2 = order_by(&recs, Strategy::Random, Direction::NotApplicable, 9).unwrap();
        assert_eq!(r1, r2);
        assert!(matches!(
            order_by(&[], Strategy::Balent, Direction::Ascending, 0),
            Err(CurationError::EmptyDataset)
        ));
    }

    #[test]
    fn ties_break_by_id_in_both_directions() {
        let recs = vec![rec("z", 1.0, 0.2, 0.0, 1.0), rec("m", 1.0, 0.2, 0.0, 1.0)];
        for d in [Direction::Ascending, Direction::Descending] {
            assert_eq!(order_by(&recs, Strategy::Aleatoric, d, 0).unwrap().ranking, ["m", "z"]);
        }
    }

    #[test]
    fn bad_curriculum_construction() {
        let recs = vec![
            rec("a", 1.0, 0.1, 0.3, 1.0),
            rec("b", 2.0, 0.1, 0.7, 1.0),
            rec("c", -1.0, 0.1, 0.9, 1.0),
        ];
        let plan = bad_curriculum(&recs, 5).unwrap();
        assert_eq!(plan.ranking, ["b", "a", "c"]);
        let neg: Vec<_> = (0..6).map(|i| rec(&format!("n{i}"), -0.5, 0.1, 0.1, 1.0)).collect();
        assert_eq!(bad_curriculum(&neg, 3).unwrap(), bad_curriculum(&neg, 3).unwrap());
    }

    #[test]
    fn gap_filters() {
        let recs = vec![
            rec("a", 1.0, 0.1, 0.0, 1.0),
            rec("b", -1.0, 0.1, 0.0, 1.0),
            rec("c", 2.0, 0.1, 0.0, 1.0),
        ];
        assert_eq!(filter_by_gap(&recs, GapFilter::PositiveGapOnly).len(), 2);
        assert_eq!(filter_by_gap(&recs, GapFilter::MinGap(1.5)).len(), 1);
        assert_eq!(filter_by_gap(&recs, GapFilter::MinGap(f64::NEG_INFINITY)), recs);
    }

    #[test]
    fn udpo_examples() {
        let c = |us: &[f64]| -> Vec<f64> {
            udpo_weights(&with_u(us)).unwrap().iter().map(|w| w.c_u.unwrap()).collect()
        };
        assert_eq!(c(&[0.0, E]), [2.0, 0.0]);
        assert_eq!(c(&[0.7, 0.7, 0.7]), [1.0, 1.0, 1.0]);
        let v = c(&[0.0, E, E]);
        assert!((v[0] - 3.0).abs() < 1e-15 && v[1] == 0.0 && v[2] == 0.0);
        assert!(matches!(
            udpo_weights(&with_u(&[E, E])),
            Err(CurationError::DegenerateWeights)
        ));
    }

    #[test]
    fn ucpo_examples() {
        let mut recs = with_u(&[0.2, 1.5, 2.0]);
        recs[0].pair.source_class = SourceClass::Expert;
        recs[1].pair.source_class = SourceClass::Expert;
        recs[2].pair.source_class = SourceClass::Suboptimal;
        let w = ucpo_weights(&recs, &UcpoConfig::default()).unwrap();
        assert!((w[0].ucpo_weight.unwrap() - 1.1).abs() < 1e-15);
        assert!((w[2].ucpo_weight.unwrap() - 0.1).abs() < 1e-15);

        let mut flat = with_u(&[1.0, 1.0]);
        flat[0].pair.source_class = SourceClass::Expert;
        flat[1].pair.source_class = SourceClass::Suboptimal;
        let w = ucpo_weights(&flat, &UcpoConfig::default()).unwrap();
        assert_eq!(w[0].ucpo_weight.unwrap(), 1.0 + 0.1 * 0.5);
        assert_eq!(w[1].ucpo_weight.unwrap(), 0.1 + 0.1 * 0.5);

        recs[1].pair.source_class = SourceClass::Unlabeled;
        assert!(matches!(
            ucpo_weights(&recs, &UcpoConfig::default()),
            Err(CurationError::MissingClass(id)) if id == "r1"
        ));
    }

    #[test]
    fn pair_scores() {
        assert_eq!(pair_score(58, 12, 10).unwrap(), 160.0);
        assert_eq!(pair_score(0, 160, 0).unwrap(), 100.0);
        assert_eq!(pair_score(76, 69, 15).unwrap(), 138.125);
        assert_eq!(PairScore::new(76, 69, 15).unwrap().to_string(), "138.1");
        assert_eq!(PairScore::new(65, 69, 26).unwrap().to_string(), "124.4");
        assert_eq!(PairScore::new(58, 12, 10).unwrap().to_string(), "160.0");
        assert!(pair_score(0, 0, 0).is_err());
        for w in 0..20 {
            assert_eq!(pair_score(w, 7, w).unwrap(), 100.0);
        }
    }

    #[test]
    fn report_edge_cases() {
        let one = report(&[rec("a", 0.5, 0.2, 0.1, 1.0)], 10).unwrap();
        assert_eq!(one.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert!(one.correlation[0][1].is_nan());
        let mut buf = Vec::new();
        one.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("nan"));

        let same_u: Vec<_> = (0..5)
            .map(|i| rec(&format!("r{i}"), i as f64, 0.1 * i as f64, 0.0, 1.2))
            .collect();
        let rep = report(&same_u, 4).unwrap();
        assert_eq!(rep.zero_variance, [true, false, false]);
        assert_eq!(rep.bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert!((rep.correlation[1][2] - 1.0).abs() < 1e-12);
    }
}
