//! Challenge metrics: APCER, BPCER and ACER from fake-probability scores,
//! plus threshold sweeps and text/CSV reporting.
//!
//! Fake/attack is the positive class: TP counts correctly flagged fakes,
//! FN fakes classified real, TN correctly passed reals, FP reals flagged
//! fake. `score >= threshold` predicts fake (ties break toward fake).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataio::Label;
use crate::error::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_neg: usize,
    pub false_pos: usize,
    pub true_neg: usize,
}

impl ConfusionCounts {
    pub fn fakes(&self) -> usize {
        self.true_pos + self.false_neg
    }

    pub fn reals(&self) -> usize {
        self.false_pos + self.true_neg
    }
}

/// Error rates in percent at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

/// Count prediction outcomes at a threshold. Score and label maps must hold
/// identical key sets; every sample is counted exactly once.
pub fn confusion(
    scores: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, Label>,
    threshold: f64,
) -> Result<ConfusionCounts, MetricsError> {
    let missing_in_scores: Vec<String> = labels
        .keys()
        .filter(|k| !scores.contains_key(*k))
        .cloned()
        .collect();
    let missing_in_labels: Vec<String> = scores
        .keys()
        .filter(|k| !labels.contains_key(*k))
        .cloned()
        .collect();
    if !missing_in_scores.is_empty() || !missing_in_labels.is_empty() {
        return Err(MetricsError::KeyMismatch {
            missing_in_scores,
            missing_in_labels,
        });
    }
    let mut c = ConfusionCounts {
        true_pos: 0,
        false_neg: 0,
        false_pos: 0,
        true_neg: 0,
    };
    for (id, score) in scores {
        let predicted_fake = *score >= threshold;
        match (labels[id], predicted_fake) {
            (Label::Fake, true) => c.true_pos += 1,
            (Label::Fake, false) => c.false_neg += 1,
            (Label::Real, true) => c.false_pos += 1,
            (Label::Real, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// APCER = FN/(TP+FN), BPCER = FP/(FP+TN), ACER their mean; all in percent.
pub fn acer_report(counts: ConfusionCounts, threshold: f64) -> Result<MetricsReport, MetricsError> {
    if counts.fakes() == 0 {
        return Err(MetricsError::EmptyClass { class: "fake" });
    }
    if counts.reals() == 0 {
        return Err(MetricsError::EmptyClass { class: "real" });
    }
    let apcer = counts.false_neg as f64 / counts.fakes() as f64 * 100.0;
    let bpcer = counts.false_pos as f64 / counts.reals() as f64 * 100.0;
    Ok(MetricsReport {
        threshold,
        counts,
        apcer,
        bpcer,
        acer: (apcer + bpcer) / 2.0,
    })
}

/// One report per threshold of a sorted grid. As the threshold decreases,
/// more samples are predicted fake, so APCER cannot increase and BPCER
/// cannot decrease.
pub fn threshold_sweep(
    scores: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, Label>,
    grid: &[f64],
) -> Result<Vec<MetricsReport>, MetricsError> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(MetricsError::UnsortedGrid);
    }
    grid.iter()
        .map(|&t| confusion(scores, labels, t).and_then(|c| acer_report(c, t)))
        .collect()
}

// ── reporting ─────────────────────────────────────────────────────────────

/// Aligned text table; percentages to 4 decimals, leaderboard style.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:>9}  {:>6} {:>6} {:>6} {:>6}  {:>9} {:>9} {:>9}",
        "threshold", "tp", "fn", "fp", "tn", "apcer(%)", "bpcer(%)", "acer(%)"
    )
    .unwrap();
    for r in reports {
        writeln!(
            out,
            "{:>9.4}  {:>6} {:>6} {:>6} {:>6}  {:>9.4} {:>9.4} {:>9.4}",
            r.threshold,
            r.counts.true_pos,
            r.counts.false_neg,
            r.counts.false_pos,
            r.counts.true_neg,
            r.apcer,
            r.bpcer,
            r.acer
        )
        .unwrap();
    }
    out
}

/// Machine-readable CSV with full-precision percentages.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("threshold,tp,fn,fp,tn,apcer,bpcer,acer\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.threshold,
            r.counts.true_pos,
            r.counts.false_neg,
            r.counts.false_pos,
            r.counts.true_neg,
            r.apcer,
            r.bpcer,
            r.acer
        )
        .unwrap();
    }
    out
}

// ── score file I/O ────────────────────────────────────────────────────────

/// Write scores as `id,score` CSV with a header line.
pub fn write_scores(path: &Path, scores: &BTreeMap<String, f64>) -> Result<(), MetricsError> {
    let mut out = String::from("id,score\n");
    for (id, s) in scores {
        writeln!(out, "{id},{s}").unwrap();
    }
    fs::write(path, out).map_err(|e| MetricsError::Io(path.to_path_buf(), e))
}

/// Read an `id,score` CSV (header optional); scores must lie in [0, 1].
pub fn read_scores(path: &Path) -> Result<BTreeMap<String, f64>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| MetricsError::Io(path.to_path_buf(), e))?;
    let mut scores = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line == "id,score") {
            continue;
        }
        let (id, raw) = line.split_once(',').ok_or_else(|| MetricsError::ScoreParse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected id,score".into(),
        })?;
        let score: f64 = raw.trim().parse().map_err(|e| MetricsError::ScoreParse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("{e}"),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(MetricsError::ScoreOutOfRange {
                id: id.to_string(),
                score,
            });
        }
        scores.insert(id.to_string(), score);
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn fixture(
        fakes: &[(usize, f64)],
        reals: &[(usize, f64)],
    ) -> (BTreeMap<String, f64>, BTreeMap<String, Label>) {
        let mut scores = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut idx = 0;
        for (count, score) in fakes {
            for _ in 0..*count {
                scores.insert(format!("f{idx:05}"), *score);
                labels.insert(format!("f{idx:05}"), Label::Fake);
                idx += 1;
            }
        }
        for (count, score) in reals {
            for _ in 0..*count {
                scores.insert(format!("r{idx:05}"), *score);
                labels.insert(format!("r{idx:05}"), Label::Real);
                idx += 1;
            }
        }
        (scores, labels)
    }

    #[test]
    fn perfect_split_counts() {
        let (scores, labels) = fixture(&[(100, 1.0)], &[(100, 0.0)]);
        let c = confusion(&scores, &labels, 0.5).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                true_pos: 100,
                false_neg: 0,
                false_pos: 0,
                true_neg: 100
            }
        );
    }

    #[test]
    fn mixed_counts_match_hand_tally() {
        let (scores, labels) = fixture(&[(99, 0.9), (1, 0.1)], &[(198, 0.1), (2, 0.9)]);
        let c = confusion(&scores, &labels, 0.5).unwrap();
        assert_eq!(c.true_pos, 99);
        assert_eq!(c.false_neg, 1);
        assert_eq!(c.false_pos, 2);
        assert_eq!(c.true_neg, 198);
        let r = acer_report(c, 0.5).unwrap();
        assert!((r.apcer - 1.0).abs() < 1e-12);
        assert!((r.bpcer - 1.0).abs() < 1e-12);
        assert!((r.acer - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_zero_flags_everything_fake() {
        let (scores, labels) = fixture(&[(10, 0.4)], &[(10, 0.2)]);
        let c = confusion(&scores, &labels, 0.0).unwrap();
        assert_eq!(c.false_neg, 0);
        assert_eq!(c.true_neg, 0);
    }

    #[test]
    fn tie_breaks_toward_fake() {
        let (scores, labels) = fixture(&[(1, 0.5)], &[(1, 0.5)]);
        let c = confusion(&scores, &labels, 0.5).unwrap();
        assert_eq!(c.true_pos, 1);
        assert_eq!(c.false_pos, 1);
    }

    #[test]
    fn key_mismatch_lists_offenders() {
        let (mut scores, labels) = fixture(&[(2, 0.8)], &[(1, 0.1)]);
        scores.remove("f00000");
        scores.insert("ghost".into(), 0.3);
        match confusion(&scores, &labels, 0.5).unwrap_err() {
            MetricsError::KeyMismatch {
                missing_in_scores,
                missing_in_labels,
            } => {
                assert_eq!(missing_in_scores, vec!["f00000".to_string()]);
                assert_eq!(missing_in_labels, vec!["ghost".to_string()]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_class_is_an_error_not_nan() {
        let counts = ConfusionCounts {
            true_pos: 0,
            false_neg: 0,
            false_pos: 1,
            true_neg: 1,
        };
        assert!(matches!(
            acer_report(counts, 0.5).unwrap_err(),
            MetricsError::EmptyClass { class: "fake" }
        ));
    }

    #[test]
    fn leaderboard_rows_recompute() {
        // published (acer, apcer, bpcer) rows; recomputed ACER must match
        // the displayed value within half a display unit
        let rows: [(f64, f64, f64); 10] = [
            (0.7237, 0.8065, 0.6410),
            (0.6927, 0.7444, 0.6410),
            (0.6359, 0.3102, 0.9615),
            (0.6359, 0.3102, 0.9615),
            (0.4756, 0.3102, 0.6410),
            (0.2223, 0.1241, 0.3205),
            (0.1861, 0.3722, 0.0000),
            (0.0310, 0.0620, 0.0000),
            (0.0000, 0.0000, 0.0000),
            (0.0000, 0.0000, 0.0000),
        ];
        for (acer, apcer, bpcer) in rows {
            let recomputed = (apcer + bpcer) / 2.0;
            assert!(
                (recomputed - acer).abs() <= 5e-5 + 1e-12,
                "{apcer} {bpcer} -> {recomputed} vs printed {acer}"
            );
        }
    }

    #[test]
    fn sweep_monotonic_on_random_scores() {
        let mut rng = Stream::seed_from(77);
        for _ in 0..1000 {
            let mut scores = BTreeMap::new();
            let mut labels = BTreeMap::new();
            for i in 0..20 {
                let label = if rng.f64() < 0.5 { Label::Fake } else { Label::Real };
                scores.insert(format!("s{i}"), rng.f64());
                labels.insert(format!("s{i}"), label);
            }
            if !labels.values().any(|l| *l == Label::Fake)
                || !labels.values().any(|l| *l == Label::Real)
            {
                continue;
            }
            let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
            let reports = threshold_sweep(&scores, &labels, &grid).unwrap();
            for w in reports.windows(2) {
                // grid ascends; walking it backwards is decreasing threshold
                assert!(w[0].apcer <= w[1].apcer + 1e-12);
                assert!(w[0].bpcer + 1e-12 >= w[1].bpcer);
            }
        }
    }

    #[test]
    fn sweep_validates_grid() {
        let (scores, labels) = fixture(&[(1, 0.6)], &[(1, 0.4)]);
        assert!(matches!(
            threshold_sweep(&scores, &labels, &[]).unwrap_err(),
            MetricsError::EmptyGrid
        ));
        assert!(matches!(
            threshold_sweep(&scores, &labels, &[0.9, 0.1]).unwrap_err(),
            MetricsError::UnsortedGrid
        ));
        let single = threshold_sweep(&scores, &labels, &[0.5]).unwrap();
        assert_eq!(single.len(), 1);
        let direct = acer_report(confusion(&scores, &labels, 0.5).unwrap(), 0.5).unwrap();
        assert_eq!(single[0], direct);
    }

    #[test]
    fn report_agrees_with_naive_loop_on_random_fixtures() {
        let mut rng = Stream::seed_from(99);
        for _ in 0..200 {
            let mut scores = BTreeMap::new();
            let mut labels = BTreeMap::new();
            let n = 5 + rng.below(40);
            for i in 0..n {
                let label = if rng.f64() < 0.6 { Label::Fake } else { Label::Real };
                scores.insert(format!("s{i}"), (rng.f64() * 10.0).round() / 10.0);
                labels.insert(format!("s{i}"), label);
            }
            let n_fake = labels.values().filter(|l| **l == Label::Fake).count();
            if n_fake == 0 || n_fake == labels.len() {
                continue;
            }
            let thr = rng.f64();
            // naive per-sample tally
            let (mut tp, mut fn_, mut fp, mut tn) = (0usize, 0usize, 0usize, 0usize);
            for (id, s) in &scores {
                match (labels[id], *s >= thr) {
                    (Label::Fake, true) => tp += 1,
                    (Label::Fake, false) => fn_ += 1,
                    (Label::Real, true) => fp += 1,
                    (Label::Real, false) => tn += 1,
                }
            }
            let r = acer_report(confusion(&scores, &labels, thr).unwrap(), thr).unwrap();
            assert_eq!(
                (tp, fn_, fp, tn),
                (
                    r.counts.true_pos,
                    r.counts.false_neg,
                    r.counts.false_pos,
                    r.counts.true_neg
                )
            );
            let apcer = fn_ as f64 / (tp + fn_) as f64 * 100.0;
            let bpcer = fp as f64 / (fp + tn) as f64 * 100.0;
            assert!((r.apcer - apcer).abs() < 1e-12);
            assert!((r.bpcer - bpcer).abs() < 1e-12);
            assert!((r.acer - (apcer + bpcer) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn score_file_roundtrip_and_validation() {
        let dir = std::env::temp_dir().join(format!("spfas_scores_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scores.csv");
        let mut scores = BTreeMap::new();
        scores.insert("a".to_string(), 0.25);
        scores.insert("b".to_string(), 1.0);
        write_scores(&path, &scores).unwrap();
        assert_eq!(read_scores(&path).unwrap(), scores);

        fs::write(&path, "id,score\na,1.5\n").unwrap();
        assert!(matches!(
            read_scores(&path).unwrap_err(),
            MetricsError::ScoreOutOfRange { .. }
        ));
        fs::write(&path, "a,notanumber\n").unwrap();
        assert!(matches!(
            read_scores(&path).unwrap_err(),
            MetricsError::ScoreParse { .. }
        ));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn table_formats_four_decimals() {
        let r = acer_report(
            ConfusionCounts {
                true_pos: 1610,
                false_neg: 2,
                false_pos: 1,
                true_neg: 311,
            },
            0.5,
        )
        .unwrap();
        let table = format_table(&[r]);
        assert!(table.contains("0.1241"), "table:\n{table}");
        assert!(table.contains("0.3205"), "table:\n{table}");
        assert!(table.contains("0.2223"), "table:\n{table}");
    }
}
