//! Exact aggregation of record streams. Tallies are integers and pooled
//! observations are kept as sorted multisets, so merging is associative and
//! commutative bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use levelspacing_core::spacing_stats::{
    histogram, poisson_tests, DosRow, Frequency, IdsRow, LevelStatistics, PoissonReport, ProbeRow,
};
use serde::{Deserialize, Serialize};

use crate::probes::EnsembleRecord;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub probe: String,
    pub model_hash: String,
    pub records: u64,
    pub failures: u64,
    pub axes: BTreeMap<String, Vec<f64>>,
    pub counters: BTreeMap<String, Vec<u64>>,
    pub values: BTreeMap<String, Vec<f64>>,
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].total_cmp(&b[j]).is_le() {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl Aggregate {
    pub fn from_record(rec: &EnsembleRecord) -> Self {
        let values = rec
            .values
            .iter()
            .map(|(k, v)| {
                let mut v = v.clone();
                v.sort_by(f64::total_cmp);
                (k.clone(), v)
            })
            .collect();
        Self {
            probe: rec.probe.clone(),
            model_hash: rec.model_hash.clone(),
            records: 1,
            failures: u64::from(!rec.ok),
            axes: rec.axes.clone(),
            counters: rec.counters.clone(),
            values,
        }
    }

    /// Folds a nonempty record stream.
    pub fn from_records(records: &[EnsembleRecord]) -> Result<Self, HarnessError> {
        let (first, rest) = records
            .split_first()
            .ok_or_else(|| HarnessError::InsufficientData("no records to aggregate".into()))?;
        rest.iter()
            .try_fold(Self::from_record(first), |acc, r| acc.merge(&Self::from_record(r)))
    }

    pub fn merge(&self, other: &Aggregate) -> Result<Aggregate, HarnessError> {
        if self.probe != other.probe {
            return Err(HarnessError::MixedProbes(format!("probe {} vs {}", self.probe, other.probe)));
        }
        if self.model_hash != other.model_hash {
            return Err(HarnessError::MixedProbes("model hashes differ".into()));
        }
        if self.axes != other.axes {
            return Err(HarnessError::MixedProbes("probe grids differ".into()));
        }
        let mut counters = self.counters.clone();
        for (k, v) in &other.counters {
            match counters.get_mut(k) {
                Some(acc) if acc.len() == v.len() => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
                Some(acc) => {
                    return Err(HarnessError::Schema(format!(
                        "counter {k} has lengths {} and {}",
                        acc.len(),
                        v.len()
                    )))
                }
                None => {
                    counters.insert(k.clone(), v.clone());
                }
            }
        }
        let mut values = self.values.clone();
        for (k, v) in &other.values {
            let merged = merge_sorted(values.get(k).map_or(&[][..], Vec::as_slice), v);
            values.insert(k.clone(), merged);
        }
        Ok(Aggregate {
            probe: self.probe.clone(),
            model_hash: self.model_hash.clone(),
            records: self.records + other.records,
            failures: self.failures + other.failures,
            axes: self.axes.clone(),
            counters,
            values,
        })
    }

    /// Samples that produced measurements.
    pub fn ok(&self) -> u64 {
        self.records - self.failures
    }

    pub fn volume(&self) -> f64 {
        self.axes.get("volume").map_or(f64::NAN, |v| v[0])
    }

    pub fn counter(&self, key: &str) -> Result<&[u64], HarnessError> {
        self.counters
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| HarnessError::Schema(format!("{} records carry no '{key}' tally", self.probe)))
    }

    pub fn frequency(&self, key: &str, i: usize) -> Result<Frequency, HarnessError> {
        let c = self.counter(key)?;
        let s = *c
            .get(i)
            .ok_or_else(|| HarnessError::Schema(format!("'{key}' has no entry {i}")))?;
        Ok(Frequency::new(s, self.ok()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }
}

/// Frequencies of one event across the probe grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityReport {
    pub probe: String,
    pub event: String,
    pub rows: Vec<ProbeRow>,
    pub frequencies: Vec<Frequency>,
    /// Wegner: `p / (L^d |I|)`. Minami (`ge2`): `p / (L^{4d} δ)`.
    pub normalized: Option<Vec<f64>>,
}

fn axis_at(axis: Option<&Vec<f64>>, k: usize, i: usize) -> f64 {
    match axis {
        Some(a) if a.len() == k => a[i],
        Some(a) if !a.is_empty() => a[0],
        _ => f64::NAN,
    }
}

/// Monte Carlo frequencies with Wilson 95% intervals for the event tally `event`.
pub fn probability_probe(agg: &Aggregate, event: &str) -> Result<ProbabilityReport, HarnessError> {
    let tally = agg.counter(event)?;
    if agg.ok() == 0 {
        return Err(HarnessError::InsufficientData("no successful samples".into()));
    }
    let k = tally.len();
    let width_key = if agg.probe == "wegner" { "width" } else { "delta" };
    let frequencies: Vec<Frequency> = (0..k).map(|i| agg.frequency(event, i)).collect::<Result<_, _>>()?;
    let rows: Vec<ProbeRow> = frequencies
        .iter()
        .enumerate()
        .map(|(i, f)| {
            ProbeRow::new(
                axis_at(agg.axes.get("energy"), k, i),
                axis_at(agg.axes.get(width_key), k, i),
                f,
            )
        })
        .collect();
    let v = agg.volume();
    let normalized = match (agg.probe.as_str(), event) {
        ("wegner", "ge1") => Some(rows.iter().map(|r| r.frequency / (v * r.delta)).collect()),
        ("minami", "ge2") => Some(rows.iter().map(|r| r.frequency / (v.powi(4) * r.delta)).collect()),
        _ => None,
    };
    Ok(ProbabilityReport {
        probe: agg.probe.clone(),
        event: event.to_string(),
        rows,
        frequencies,
        normalized,
    })
}

/// The headline event of each probability probe.
pub fn primary_event(probe: &str) -> Option<&'static str> {
    match probe {
        "wegner" | "cloning" => Some("ge1"),
        "minami" => Some("ge2"),
        "spacing_tail" => Some("below"),
        "localization" => Some("all_good"),
        "cluster_flatness" => Some("violation"),
        "good_config" => Some("improved10"),
        _ => None,
    }
}

/// IDS `N(E) = E[#{λ ≤ E}] / L^d` and its central-difference derivative,
/// from the tallies of a `dos` run.
pub fn ids_dos_rows(agg: &Aggregate) -> Result<(Vec<IdsRow>, Vec<DosRow>), HarnessError> {
    let n = agg.ok();
    if n == 0 {
        return Err(HarnessError::InsufficientData("no successful samples".into()));
    }
    let grid = agg
        .axes
        .get("energy")
        .ok_or_else(|| HarnessError::Schema("dos records carry no energy grid".into()))?;
    let v = agg.volume();
    let nf = n as f64;
    let moments = |s: u64, s2: u64| {
        let mean = s as f64 / nf;
        let var = if n > 1 {
            ((s2 as f64 - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        (mean, (var / nf).sqrt())
    };
    let (below, below_sq) = (agg.counter("below")?, agg.counter("below_sq")?);
    let ids = grid
        .iter()
        .enumerate()
        .map(|(g, &energy)| {
            let (m, se) = moments(below[g], below_sq[g]);
            IdsRow {
                energy,
                ids: m / v,
                ids_stderr: se / v,
            }
        })
        .collect();
    let (diff, diff_sq) = (agg.counter("diff")?, agg.counter("diff_sq")?);
    let dos = (0..diff.len())
        .map(|j| {
            let g = j + 1;
            let width = grid[g + 1] - grid[g - 1];
            let (m, se) = moments(diff[j], diff_sq[j]);
            DosRow {
                energy: grid[g],
                dos: m / (v * width),
                dos_stderr: se / (v * width),
            }
        })
        .collect();
    Ok((ids, dos))
}

/// Poisson tests together with the intensity estimate they rest on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSummary {
    #[serde(flatten)]
    pub tests: PoissonReport,
    /// Standard error of `n̂(E)` across samples.
    pub intensity_stderr: f64,
    pub n_samples: u64,
}

/// Unfolded-spacing and window-count tests of a `poisson` run, with the
/// intensity `n(E)` estimated from the DOS window around `E`.
pub fn poisson_report(agg: &Aggregate) -> Result<PoissonSummary, HarnessError> {
    let n = agg.ok();
    let halfwidth = agg.axes.get("dos_halfwidth").map(|v| v[0]);
    let window = agg.axes.get("window").map(|v| v[0]);
    let (Some(halfwidth), Some(window)) = (halfwidth, window) else {
        return Err(HarnessError::Schema("poisson records carry no window data".into()));
    };
    let dos_count = agg.counter("dos_count")?[0];
    let dos_count_sq = agg.counter("dos_count_sq")?[0];
    if n == 0 || dos_count == 0 {
        return Err(HarnessError::InsufficientData("no levels in the density window".into()));
    }
    let nf = n as f64;
    let scale = agg.volume() * 2.0 * halfwidth;
    let mean = dos_count as f64 / nf;
    let var = if n > 1 {
        ((dos_count_sq as f64 - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let intensity = mean / scale;
    let counts: Vec<u64> = agg
        .values
        .get("window_count")
        .map(|v| v.iter().map(|&c| c as u64).collect())
        .unwrap_or_default();
    let spacings = agg.values.get("spacings").cloned().unwrap_or_default();
    let tests = poisson_tests(&counts, &spacings, intensity, window)
        .map_err(|e| HarnessError::InsufficientData(e.to_string()))?;
    Ok(PoissonSummary {
        tests,
        intensity_stderr: (var / nf).sqrt() / scale,
        n_samples: n,
    })
}

/// Collects whatever level statistics the aggregate supports.
pub fn aggregate_statistics(agg: &Aggregate) -> LevelStatistics {
    let mut stats = LevelStatistics::default();
    if let Some(s) = agg.values.get("spacings").or_else(|| agg.values.get("spacing")) {
        stats.spacings = s.clone();
    }
    if let Some(c) = agg.values.get("window_count") {
        stats.window_counts = c.iter().map(|&x| x as u64).collect();
    }
    if let Some(ev) = primary_event(&agg.probe) {
        if let Ok(r) = probability_probe(agg, ev) {
            stats.frequencies = r.rows;
        }
    }
    if agg.probe == "dos" {
        if let Ok((ids, dos)) = ids_dos_rows(agg) {
            stats.ids = ids;
            stats.dos = dos;
        }
    }
    stats
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct NormalizedRow {
    energy: f64,
    delta: f64,
    ratio: f64,
}

/// Writes the CSV (and JSON) summaries that apply to this probe into `dir`.
/// Missing statistics are skipped, not errors.
pub fn write_summaries(agg: &Aggregate, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    let mut emit = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    if let Some(ev) = primary_event(&agg.probe) {
        if let Ok(report) = probability_probe(agg, ev) {
            write_csv(&emit("summary.csv"), &report.rows)?;
            if let Some(norm) = &report.normalized {
                let rows: Vec<NormalizedRow> = report
                    .rows
                    .iter()
                    .zip(norm)
                    .map(|(r, &ratio)| NormalizedRow {
                        energy: r.energy,
                        delta: r.delta,
                        ratio,
                    })
                    .collect();
                write_csv(&emit("normalized.csv"), &rows)?;
            }
        }
    }
    let spacings = agg.values.get("spacings").or_else(|| agg.values.get("spacing"));
    if let Some(s) = spacings.filter(|s| !s.is_empty()) {
        let hi = s.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
        let bins = ((s.len() as f64).sqrt().ceil() as usize).clamp(1, 100);
        write_csv(&emit("spacing_histogram.csv"), &histogram(s, 0.0, hi * (1.0 + 1e-12), bins))?;
    }
    if agg.probe == "dos" {
        if let Ok((ids, dos)) = ids_dos_rows(agg) {
            write_csv(&emit("ids.csv"), &ids)?;
            if !dos.is_empty() {
                write_csv(&emit("dos.csv"), &dos)?;
            }
        }
    }
    if agg.probe == "poisson" {
        match poisson_report(agg) {
            Ok(r) => std::fs::write(emit("poisson.json"), serde_json::to_string_pretty(&r).expect("serializes"))?,
            Err(e) => log::warn!("poisson tests skipped: {e}"),
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64, ge1: u64, spacing: Option<f64>) -> EnsembleRecord {
        let mut counters = BTreeMap::new();
        counters.insert("ge1".to_string(), vec![ge1, 0]);
        let mut values = BTreeMap::new();
        if let Some(s) = spacing {
            values.insert("spacing".to_string(), vec![s]);
        }
        let mut axes = BTreeMap::new();
        axes.insert("volume".to_string(), vec![16.0]);
        axes.insert("energy".to_string(), vec![1.0]);
        axes.insert("width".to_string(), vec![0.1, 0.05]);
        EnsembleRecord {
            probe: "wegner".into(),
            model_hash: "abc".into(),
            sample: i,
            seed: i,
            ok: true,
            error: None,
            solver: None,
            axes,
            counters,
            values,
        }
    }

    fn agg(rs: &[EnsembleRecord]) -> Aggregate {
        Aggregate::from_records(rs).unwrap()
    }

    #[test]
    fn merge_is_commutative_and_associative() {
        let rs: Vec<_> = (0..9).map(|i| record(i, i % 2, Some(0.1 * (9 - i) as f64 + 1e-3))).collect();
        let (a, b, c) = (agg(&rs[..3]), agg(&rs[3..5]), agg(&rs[5..]));
        assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        assert_eq!(
            a.merge(&b).unwrap().merge(&c).unwrap(),
            a.merge(&b.merge(&c).unwrap()).unwrap()
        );
        let singles = rs[1..]
            .iter()
            .fold(Aggregate::from_record(&rs[0]), |acc, r| acc.merge(&Aggregate::from_record(r)).unwrap());
        assert_eq!(singles.to_json(), agg(&rs).to_json());
    }

    #[test]
    fn refuses_mixed_and_empty_input() {
        let mut other = record(1, 0, None);
        other.probe = "minami".into();
        let a = Aggregate::from_record(&record(0, 1, None));
        assert!(matches!(
            a.merge(&Aggregate::from_record(&other)),
            Err(HarnessError::MixedProbes(_))
        ));
        assert!(matches!(Aggregate::from_records(&[]), Err(HarnessError::InsufficientData(_))));
    }

    #[test]
    fn wilson_three_of_ten() {
        let rs: Vec<_> = (0..10).map(|i| record(i, u64::from(i < 3), None)).collect();
        let r = probability_probe(&agg(&rs), "ge1").unwrap();
        let f = r.frequencies[0];
        assert!((f.p_hat - 0.3).abs() < 1e-15);
        assert!((f.ci_low - 0.108).abs() < 1e-3 && (f.ci_high - 0.603).abs() < 1e-3);
        let norm = r.normalized.unwrap();
        assert!((norm[0] - 0.3 / (16.0 * 0.1)).abs() < 1e-12);
        assert!(matches!(probability_probe(&agg(&rs), "ge2"), Err(HarnessError::Schema(_))));
    }

    #[test]
    fn wilson_interval_is_calibrated() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(30);
        let covered = (0..1000)
            .filter(|_| {
                let s = (0..200).filter(|_| rng.random_bool(0.3)).count() as u64;
                let f = Frequency::new(s, 200);
                assert!(f.ci_low <= f.p_hat && f.p_hat <= f.ci_high);
                f.ci_low <= 0.3 && 0.3 <= f.ci_high
            })
            .count();
        assert!(covered >= 900, "{covered}");
    }

    #[test]
    fn failed_records_do_not_count_as_trials() {
        let mut bad = record(5, 0, None);
        bad.ok = false;
        bad.counters.clear();
        let a = agg(&[record(0, 1, None), bad]);
        assert_eq!((a.records, a.failures, a.ok()), (2, 1, 1));
        assert_eq!(a.frequency("ge1", 0).unwrap().p_hat, 1.0);
    }
}
