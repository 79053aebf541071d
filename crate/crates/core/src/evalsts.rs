//! Similarity evaluation: cosine scores of sentence pairs ranked against gold
//! labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::ScoredPair;
use crate::error::{Error, Result};
use crate::objectives::cosine_sim;

/// Fractional ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Input("rank correlation needs at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in correlation input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("one side is constant".into()))
}

/// Rank correlation between pair cosines and gold scores.
pub fn eval_sts<F>(embed: F, pairs: &[ScoredPair]) -> Result<f64>
where
    F: Fn(&str) -> Result<Vec<f64>> + Sync,
{
    if pairs.len() < 2 {
        return Err(Error::Input(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let sims = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let a = embed(&p.sent1)?;
            let b = embed(&p.sent2)?;
            cosine_sim(&a, &b)
        }.map_err(|e: Error| e.context(format!("pair {i}"))))
        .collect::<Result<Vec<f64>>>()?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    spearman(&sims, &gold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsReport {
    pub per_dataset: BTreeMap<String, f64>,
    pub average: f64,
}

impl StsReport {
    pub fn from_scores(per_dataset: BTreeMap<String, f64>) -> Result<Self> {
        if per_dataset.is_empty() {
            return Err(Error::Input("report needs at least one dataset".into()));
        }
        let average = per_dataset.values().sum::<f64>() / per_dataset.len() as f64;
        Ok(Self { per_dataset, average })
    }

    /// `dataset,spearman_x100` rows followed by `avg`. Values are written
    /// by shifting the decimal point of the shortest exact representation,
    /// so parsing recovers the stored correlations bit for bit.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,spearman_x100\n");
        for (name, rho) in &self.per_dataset {
            writeln!(s, "{name},{}", times_100(*rho)).unwrap();
        }
        writeln!(s, "avg,{}", times_100(self.average)).unwrap();
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "dataset,spearman_x100" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing dataset,spearman_x100 header".into(),
                })
            }
        }
        let mut per_dataset = BTreeMap::new();
        let mut average = None;
        for (i, l) in lines {
            let parsed = l.rsplit_once(',').and_then(|(n, v)| Some((n, div_100(v.trim())?)));
            let Some((name, rho)) = parsed else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("bad report row {l:?}"),
                });
            };
            if name == "avg" {
                average = Some(rho);
            } else {
                per_dataset.insert(name.to_string(), rho);
            }
        }
        let average = average.ok_or_else(|| Error::Input("report has no avg row".into()))?;
        if per_dataset.is_empty() {
            return Err(Error::Input("report lists no datasets".into()));
        }
        Ok(Self { per_dataset, average })
    }

    pub fn to_table(&self) -> String {
        let width = self.per_dataset.keys().map(|k| k.len()).max().unwrap_or(0).max(7);
        let mut s = format!("{:<width$}  rho x 100\n", "dataset");
        for (name, rho) in &self.per_dataset {
            writeln!(s, "{name:<width$}  {:>9.2}", rho * 100.0).unwrap();
        }
        writeln!(s, "{:<width$}  {:>9.2}", "avg", self.average * 100.0).unwrap();
        s
    }
}

/// Sign, significant digits, and the count of digits before the point.
fn decompose(v: f64) -> (bool, String, i64) {
    let e = format!("{:e}", v.abs());
    let (mant, exp) = e.split_once('e').expect("scientific format has an exponent");
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    (v.is_sign_negative() && v != 0.0, digits, exp.parse::<i64>().unwrap() + 1)
}

fn render(neg: bool, digits: &str, point: i64) -> String {
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    let body = if body.chars().all(|c| c == '0' || c == '.') { "0".to_string() } else { body };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn times_100(v: f64) -> String {
    let (neg, digits, point) = decompose(v);
    render(neg, &digits, point + 2)
}

fn div_100(s: &str) -> Option<f64> {
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let (int, frac) = rest.split_once('.').unwrap_or((rest, ""));
    if int.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    let lead = digits.len() - digits.trim_start_matches('0').len();
    let point = int.len() as i64 - lead as i64 - 2;
    let trimmed = digits.trim_start_matches('0');
    render(neg && !trimmed.is_empty(), trimmed, point).parse().ok()
}

/// Evaluate each named dataset and average the correlations.
pub fn eval_suite<F>(embed: F, datasets: &BTreeMap<String, Vec<ScoredPair>>) -> Result<StsReport>
where
    F: Fn(&str) -> Result<Vec<f64>> + Sync,
{
    if datasets.is_empty() {
        return Err(Error::Input("no evaluation datasets".into()));
    }
    let mut per_dataset = BTreeMap::new();
    for (name, pairs) in datasets {
        if pairs.is_empty() {
            return Err(Error::Input(format!("dataset {name} is empty")));
        }
        let rho = eval_sts(&embed, pairs).map_err(|e| e.context(format!("dataset {name}")))?;
        per_dataset.insert(name.clone(), rho);
    }
    StsReport::from_scores(per_dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monotone_and_reversed() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn tie_example() {
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / 22.5f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.94868).abs() < 1e-5);
    }

    #[test]
    fn ranks_share_means() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::Input(_))));
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
    }

    fn pair(a: &str, b: &str, s: f64) -> ScoredPair {
        ScoredPair::new(a, b, s).unwrap()
    }

    #[test]
    fn cosine_equal_to_gold_fraction() {
        // sentence "k" maps to angle acos(k/5) from the x axis; its partner
        // "ref" is the x axis itself
        let embed = |s: &str| -> Result<Vec<f64>> {
            if s == "ref" {
                return Ok(vec![1.0, 0.0]);
            }
            let c: f64 = s.parse::<f64>().unwrap() / 5.0;
            Ok(vec![c, (1.0 - c * c).sqrt()])
        };
        let pairs: Vec<ScoredPair> = [0.5, 1.0, 2.0, 3.5, 5.0].iter().map(|g| pair(&g.to_string(), "ref", *g)).collect();
        assert!((eval_sts(embed, &pairs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_embeddings_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<ScoredPair> = (0..1000)
            .map(|i| pair(&format!("a{i}"), &format!("b{i}"), rng.random_range(0.0..5.0)))
            .collect();
        let embed = |s: &str| -> Result<Vec<f64>> {
            let h = s.bytes().fold(1469598103934665603u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211));
            let mut r = ChaCha8Rng::seed_from_u64(h);
            Ok((0..16).map(|_| r.random_range(-1.0..1.0)).collect())
        };
        let rho = eval_sts(embed, &pairs).unwrap();
        assert!(rho.abs() < 0.15, "{rho}");
        assert_eq!(eval_sts(embed, &pairs).unwrap(), rho);
    }

    #[test]
    fn embedding_errors_name_the_pair() {
        let pairs = vec![pair("a", "b", 1.0), pair("c", "zero", 2.0)];
        let embed = |s: &str| -> Result<Vec<f64>> {
            Ok(if s == "zero" { vec![0.0, 0.0] } else { vec![1.0, s.len() as f64] })
        };
        let e = eval_sts(embed, &pairs).unwrap_err();
        assert!(e.to_string().contains("pair 1"));
        assert!(matches!(e.root(), Error::Domain(_)));
    }

    #[test]
    fn suite_average_and_errors() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), 0.4);
        m.insert("b".to_string(), 0.6);
        assert!((StsReport::from_scores(m).unwrap().average - 0.5).abs() < 1e-12);

        let embed = |s: &str| -> Result<Vec<f64>> { Ok(vec![1.0, s.len() as f64]) };
        let mut ds = BTreeMap::new();
        ds.insert("one".to_string(), vec![pair("x", "xx", 1.0), pair("x", "xxxxx", 0.0)]);
        let r = eval_suite(embed, &ds).unwrap();
        assert_eq!(r.average, r.per_dataset["one"]);
        ds.insert("empty".to_string(), vec![]);
        let e = eval_suite(embed, &ds).unwrap_err();
        assert!(e.to_string().contains("empty"));
    }

    #[test]
    fn csv_layout() {
        let mut m = BTreeMap::new();
        m.insert("sts-a".to_string(), 0.5);
        m.insert("sts-b".to_string(), -0.0123);
        let r = StsReport::from_scores(m).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv, "dataset,spearman_x100\nsts-a,50\nsts-b,-1.23\navg,24.385\n");
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(StsReport::from_csv(&csv).unwrap(), r);
        assert!(r.to_table().contains("avg"));
    }

    #[test]
    fn decimal_shift_cases() {
        for v in [0.0, 1.0, -1.0, 0.948_683_298_050_513_8, 1e-7, -3.14159e-3, 0.123, 0.1 + 0.2] {
            assert_eq!(div_100(&times_100(v)), Some(v), "{v} -> {}", times_100(v));
        }
        assert_eq!(times_100(0.001), "0.1");
        assert_eq!(div_100("abc"), None);
    }

    fn naive_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let below = x.iter().filter(|o| *o < v).count() as f64;
                let equal = x.iter().filter(|o| *o == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn matches_quadratic_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.random_range(3..40);
            // a small value range forces ties
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.5).collect();
            let Ok(r) = spearman(&x, &y) else { continue };
            let oracle = naive_pearson(&naive_ranks(&x), &naive_ranks(&y));
            assert!((r - oracle).abs() <= 1e-10);
        }
    }

    fn non_constant() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..30).prop_filter("non-constant", |v| v.iter().any(|x| *x != v[0]))
    }

    proptest! {
        #[test]
        fn self_correlation_is_one(x in non_constant()) {
            prop_assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn symmetric(x in non_constant(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|_| rng.random_range(0..4) as f64).collect();
            prop_assume!(y.iter().any(|v| *v != y[0]));
            let a = spearman(&x, &y).unwrap();
            let b = spearman(&y, &x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_maps((x, y) in (2usize..30).prop_flat_map(|n| {
            (prop::collection::vec(-50.0f64..50.0, n), prop::collection::vec(-50.0f64..50.0, n))
        })) {
            let base = spearman(&x, &y).unwrap();
            let ex: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            let aff: Vec<f64> = y.iter().map(|v| 3.0 * v + 7.0).collect();
            prop_assert!((spearman(&ex, &aff).unwrap() - base).abs() < 1e-12);
        }
    }
}
