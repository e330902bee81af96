//! Scoring predicted labels against ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::render_columns;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("cannot compute metrics on an empty confusion matrix")]
    Empty,
}

/// `counts[i][j]`: samples with gold class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

/// Counts (gold, predicted) pairs. Classes are the observed ones, listed in
/// `class_order` order; classes missing from `class_order` follow, sorted.
pub fn confusion<S: AsRef<str>>(pairs: &[(S, S)], class_order: &[&str]) -> ConfusionMatrix {
    let observed: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|(g, p)| [g.as_ref(), p.as_ref()])
        .collect();
    let mut classes: Vec<String> = class_order
        .iter()
        .filter(|c| observed.contains(**c))
        .map(|c| c.to_string())
        .collect();
    let known: BTreeSet<&str> = class_order.iter().copied().collect();
    classes.extend(observed.iter().filter(|c| !known.contains(**c)).map(|c| c.to_string()));
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (g, p) in pairs {
        counts[index[g.as_ref()]][index[p.as_ref()]] += 1;
    }
    ConfusionMatrix { classes, counts }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("gold\\predicted");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<(String, ClassMetrics)>,
    pub weighted: Averages,
    /// Mean over classes with non-zero support.
    pub macro_avg: Averages,
    pub samples: u64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let k = cm.classes.len();
    let mut per_class = Vec::with_capacity(k);
    for i in 0..k {
        let tp = cm.counts[i][i] as f64;
        let support: u64 = cm.counts[i].iter().sum();
        let predicted: u64 = (0..k).map(|j| cm.counts[j][i]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        per_class.push((
            cm.classes[i].clone(),
            ClassMetrics {
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            },
        ));
    }
    let supported: Vec<&ClassMetrics> = per_class.iter().map(|(_, m)| m).filter(|m| m.support > 0).collect();
    let weighted_mean = |f: fn(&ClassMetrics) -> f64| {
        supported.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    let macro_mean = |f: fn(&ClassMetrics) -> f64| {
        supported.iter().map(|m| f(m)).sum::<f64>() / supported.len() as f64
    };
    Ok(MetricsReport {
        weighted: Averages {
            precision: weighted_mean(|m| m.precision),
            recall: weighted_mean(|m| m.recall),
            f1: weighted_mean(|m| m.f1),
        },
        macro_avg: Averages {
            precision: macro_mean(|m| m.precision),
            recall: macro_mean(|m| m.recall),
            f1: macro_mean(|m| m.f1),
        },
        per_class,
        samples: total,
    })
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|(c, _)| c == name).map(|(_, m)| m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for (c, m) in &self.per_class {
            let _ = writeln!(s, "{c},{:.4},{:.4},{:.4},{}", m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(
            s,
            "weighted,{:.4},{:.4},{:.4},{}",
            self.weighted.precision, self.weighted.recall, self.weighted.f1, self.samples
        );
        let _ = writeln!(
            s,
            "macro,{:.4},{:.4},{:.4},{}",
            self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1, self.samples
        );
        s
    }

    /// Weighted and macro P/R/F1 side by side, then the per-class rows.
    /// Zero-support classes show `-`.
    pub fn render_table(&self, label: &str) -> String {
        let f = |x: f64| format!("{x:.2}");
        let rows = vec![
            ["".to_string(), "Weighted P".into(), "R".into(), "F1".into(), "Macro P".into(), "R".into(), "F1".into()],
            [
                label.to_string(),
                f(self.weighted.precision),
                f(self.weighted.recall),
                f(self.weighted.f1),
                f(self.macro_avg.precision),
                f(self.macro_avg.recall),
                f(self.macro_avg.f1),
            ],
        ];
        let mut out = render_columns(&rows, &[false, true, true, true, true, true, true]);
        let mut per = vec![["Class".to_string(), "P".into(), "R".into(), "F1".into(), "Support".into()]];
        for (c, m) in &self.per_class {
            if m.support == 0 {
                per.push([c.clone(), "-".into(), "-".into(), "-".into(), "0".into()]);
            } else {
                per.push([c.clone(), f(m.precision), f(m.recall), f(m.f1), m.support.to_string()]);
            }
        }
        out.push('\n');
        out.push_str(&render_columns(&per, &[false, true, true, true, true]));
        out
    }
}

/// Row-normalized fractions of gold labels per user-selected type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosstab {
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
}

pub fn crosstab_user_types<S: AsRef<str>>(reports: &[(S, S)]) -> Crosstab {
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (ba, gold) in reports {
        *counts
            .entry(ba.as_ref().to_string())
            .or_default()
            .entry(gold.as_ref().to_string())
            .or_insert(0) += 1;
    }
    let rows = counts
        .iter()
        .map(|(ba, row)| {
            let total: u64 = row.values().sum();
            let fractions = row
                .iter()
                .map(|(g, &c)| (g.clone(), c as f64 / total as f64))
                .collect();
            (ba.clone(), fractions)
        })
        .collect();
    Crosstab { rows, counts }
}

impl Crosstab {
    /// One row per user type; columns in `label_order` (unlisted labels follow, sorted).
    pub fn to_csv(&self, label_order: &[&str]) -> String {
        let present: BTreeSet<&str> = self.rows.values().flat_map(|r| r.keys().map(String::as_str)).collect();
        let mut cols: Vec<&str> = label_order.iter().copied().filter(|l| present.contains(l)).collect();
        cols.extend(present.iter().copied().filter(|l| !label_order.contains(l)));
        let mut s = String::from("ba_type");
        for c in &cols {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (ba, row) in &self.rows {
            s.push_str(ba);
            for c in &cols {
                let _ = write!(s, ",{:.4}", row.get(*c).copied().unwrap_or(0.0));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairs(spec: &[(&'static str, &'static str, usize)]) -> Vec<(&'static str, &'static str)> {
        spec.iter().flat_map(|&(g, p, n)| std::iter::repeat_n((g, p), n)).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion(&pairs(&[("a", "a", 8), ("a", "b", 2), ("b", "a", 3), ("b", "b", 7)]), &["a", "b"]);
        assert_eq!(cm.counts, vec![vec![8, 2], vec![3, 7]]);
        let m = metrics(&cm).unwrap();
        let a = m.class("a").unwrap();
        let b = m.class("b").unwrap();
        assert!(close(a.precision, 8.0 / 11.0) && close(a.recall, 0.8));
        assert!(close(a.f1, 2.0 * (8.0 / 11.0) * 0.8 / (8.0 / 11.0 + 0.8)));
        assert!(close(b.precision, 7.0 / 9.0) && close(b.recall, 0.7));
        assert!(close(m.macro_avg.f1, (a.f1 + b.f1) / 2.0));
        assert!(close(m.weighted.f1, m.macro_avg.f1));
        assert!((a.f1 - 0.762).abs() < 5e-4 && (b.f1 - 0.737).abs() < 5e-4);
        assert!((m.macro_avg.f1 - 0.749).abs() < 5e-4);
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = confusion(&pairs(&[("x", "x", 3), ("y", "y", 4)]), &[]);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.weighted.f1, 1.0);
        assert_eq!(m.macro_avg.precision, 1.0);
    }

    #[test]
    fn empty() {
        let cm = confusion::<&str>(&[], &["a"]);
        assert!(cm.classes.is_empty());
        assert_eq!(metrics(&cm), Err(EvalError::Empty));
    }

    #[test]
    fn class_order_and_unknown_classes() {
        let cm = confusion(&[("z", "b"), ("b", "a")], &["a", "b"]);
        assert_eq!(cm.classes, ["a", "b", "z"]);
        assert_eq!(cm.to_csv(), "gold\\predicted,a,b,z\na,0,0,0\nb,1,0,0\nz,0,1,0\n");
    }

    #[test]
    fn zero_support_excluded_from_macro() {
        let cm = confusion(&[("a", "a"), ("a", "c")], &["a", "c"]);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.class("c").unwrap().support, 0);
        assert_eq!(m.class("c").unwrap().precision, 0.0);
        assert!(close(m.macro_avg.recall, 0.5));
        assert!(m.render_table("x").contains(" - "));
    }

    #[test]
    fn weighted_vs_macro_example() {
        let report = MetricsReport {
            per_class: vec![],
            weighted: Averages { precision: 0.0, recall: 0.0, f1: (30.0 * 0.9 + 10.0 * 0.5) / 40.0 },
            macro_avg: Averages { precision: 0.0, recall: 0.0, f1: (0.9 + 0.5) / 2.0 },
            samples: 40,
        };
        assert!(close(report.weighted.f1, 0.8));
        assert!(close(report.macro_avg.f1, 0.7));
    }

    fn random_matrix(rng: &mut ChaCha8Rng, k: usize, equal_support: Option<u64>) -> ConfusionMatrix {
        let classes: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let counts = (0..k)
            .map(|_| match equal_support {
                None => (0..k).map(|_| rng.gen_range(0..20)).collect(),
                Some(s) => {
                    let mut row = vec![0u64; k];
                    for _ in 0..s {
                        row[rng.gen_range(0..k)] += 1;
                    }
                    row
                }
            })
            .collect();
        ConfusionMatrix { classes, counts }
    }

    #[test]
    fn weighted_recall_is_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let k = rng.gen_range(2..8);
            let cm = random_matrix(&mut rng, k, None);
            if cm.is_empty() {
                continue;
            }
            let m = metrics(&cm).unwrap();
            assert!(close(m.weighted.recall, cm.accuracy()));
        }
    }

    #[test]
    fn equal_support_macro_equals_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let k = rng.gen_range(2..8);
            let support = rng.gen_range(1..30);
            let cm = random_matrix(&mut rng, k, Some(support));
            let m = metrics(&cm).unwrap();
            assert!(close(m.macro_avg.f1, m.weighted.f1));
            assert!(close(m.macro_avg.precision, m.weighted.precision));
        }
    }

    #[test]
    fn class_permutation_keeps_per_class_values() {
        let data = pairs(&[("a", "a", 5), ("a", "b", 1), ("b", "c", 2), ("c", "c", 4), ("c", "a", 1)]);
        let m1 = metrics(&confusion(&data, &["a", "b", "c"])).unwrap();
        let m2 = metrics(&confusion(&data, &["c", "a", "b"])).unwrap();
        for (name, v) in &m1.per_class {
            assert_eq!(m2.class(name), Some(v));
        }
        assert!(close(m1.weighted.f1, m2.weighted.f1));
    }

    #[test]
    fn crosstab_rows_normalized() {
        let ct = crosstab_user_types(&[("X", "a"), ("X", "a"), ("X", "b"), ("X", "b"), ("Sextortion", "sextortion")]);
        assert_eq!(ct.rows["X"]["a"], 0.5);
        assert_eq!(ct.rows["Sextortion"]["sextortion"], 1.0);
        for row in ct.rows.values() {
            assert!((row.values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(ct.to_csv(&["b"]), "ba_type,b,a,sextortion\nSextortion,0.0000,0.0000,1.0000\nX,0.5000,0.5000,0.0000\n");
    }
}
