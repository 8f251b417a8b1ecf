//! Transfer analysis: relative improvement, least-squares fits with R², and
//! Pearson correlation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("relative improvement undefined for a zero per-language recall")]
    ZeroBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `(combined - per_language) / per_language`.
pub fn relative_improvement(combined: f64, per_language: f64) -> Result<f64, FitError> {
    if per_language == 0.0 {
        return Err(FitError::ZeroBaseline);
    }
    Ok((combined - per_language) / per_language)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn r_squared(ys: &[f64], fitted: impl Iterator<Item = f64>) -> f64 {
    let my = mean(ys);
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(fitted).map(|(y, f)| (y - f).powi(2)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// Simple regression with intercept from centered sums.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<FitResult, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(FitError::TooFewPoints { needed: 2, got: xs.len() });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = r_squared(ys, xs.iter().map(|x| intercept + slope * x));
    Ok(FitResult { coefficients: vec![slope], intercept, r_squared: r2 })
}

/// Least squares `min ||A b - y||` by Householder QR. `a` is row-major
/// `n × m` with `n >= m`.
fn qr_solve(mut a: Vec<Vec<f64>>, mut y: Vec<f64>) -> Result<Vec<f64>, FitError> {
    let n = a.len();
    let m = a[0].len();
    let col_norms: Vec<f64> = (0..m).map(|j| a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt()).collect();
    for j in 0..m {
        let norm = (j..n).map(|i| a[i][j] * a[i][j]).sum::<f64>().sqrt();
        if norm <= 1e-12 * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(FitError::RankDeficient);
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| a[i][j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for c in j..m {
            let s: f64 = (j..n).map(|i| v[i - j] * a[i][c]).sum::<f64>() * 2.0 / vnorm2;
            for i in j..n {
                a[i][c] -= s * v[i - j];
            }
        }
        let s: f64 = (j..n).map(|i| v[i - j] * y[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in j..n {
            y[i] -= s * v[i - j];
        }
    }
    let mut b = vec![0.0; m];
    for j in (0..m).rev() {
        let s: f64 = (j + 1..m).map(|c| a[j][c] * b[c]).sum();
        b[j] = (y[j] - s) / a[j][j];
    }
    Ok(b)
}

/// Multivariate regression with intercept; `features` is row-major `n × p`.
pub fn multi_fit(features: &[Vec<f64>], ys: &[f64]) -> Result<FitResult, FitError> {
    if features.len() != ys.len() {
        return Err(FitError::LengthMismatch(features.len(), ys.len()));
    }
    let p = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != p) {
        return Err(FitError::Degenerate("ragged feature matrix".into()));
    }
    if ys.len() <= p {
        return Err(FitError::TooFewPoints { needed: p + 1, got: ys.len() });
    }
    let design: Vec<Vec<f64>> = features
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let b = qr_solve(design, ys.to_vec())?;
    let fitted = features.iter().map(|r| b[0] + r.iter().zip(&b[1..]).map(|(x, c)| x * c).sum::<f64>());
    let r2 = r_squared(ys, fitted);
    Ok(FitResult { coefficients: b[1..].to_vec(), intercept: b[0], r_squared: r2 })
}

/// Product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(FitError::TooFewPoints { needed: 2, got: xs.len() });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(FitError::Degenerate("zero variance".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One language's recalls and explanatory factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPoint {
    pub lang: String,
    pub per_language_recall: f64,
    pub combined_recall: f64,
    /// Share of the pooled training data.
    pub train_share: f64,
    /// Pre-transfer recall@1.
    pub difficulty: f64,
    pub overlap_with_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTransfer {
    pub lang: String,
    pub per_language_recall: f64,
    pub combined_recall: f64,
    pub relative_improvement: f64,
    pub absolute_improvement: f64,
}

/// R² of one explanatory factor against relative and absolute improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub factor: String,
    pub relative: FitResult,
    pub absolute: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub k: usize,
    pub excluded: Vec<String>,
    pub languages: Vec<LanguageTransfer>,
    pub factors: Vec<FactorRow>,
    /// All three factors in one regression.
    pub combined: FactorRow,
    /// Languages whose combined model did worse than their per-language one.
    pub negative_transfer: Vec<String>,
}

pub const FACTOR_NAMES: [&str; 3] = ["sample size", "task difficulty", "vocabulary overlap"];

/// Builds the per-factor and combined variance table. Languages in
/// `exclude` are left out of the fits but still listed with their improvements.
pub fn transfer_table(points: &[TransferPoint], k: usize, exclude: &[String]) -> Result<TransferTable, FitError> {
    let languages = points
        .iter()
        .map(|p| {
            Ok(LanguageTransfer {
                lang: p.lang.clone(),
                per_language_recall: p.per_language_recall,
                combined_recall: p.combined_recall,
                relative_improvement: relative_improvement(p.combined_recall, p.per_language_recall)?,
                absolute_improvement: p.combined_recall - p.per_language_recall,
            })
        })
        .collect::<Result<Vec<_>, FitError>>()?;
    let negative_transfer = languages.iter().filter(|l| l.relative_improvement < 0.0).map(|l| l.lang.clone()).collect();

    let kept: Vec<(&TransferPoint, &LanguageTransfer)> =
        points.iter().zip(&languages).filter(|(p, _)| !exclude.contains(&p.lang)).collect();
    if kept.len() < 3 {
        return Err(FitError::TooFewPoints { needed: 3, got: kept.len() });
    }
    let rel: Vec<f64> = kept.iter().map(|(_, l)| l.relative_improvement).collect();
    let abs: Vec<f64> = kept.iter().map(|(_, l)| l.absolute_improvement).collect();
    let columns: [Vec<f64>; 3] = [
        kept.iter().map(|(p, _)| p.train_share).collect(),
        kept.iter().map(|(p, _)| p.difficulty).collect(),
        kept.iter().map(|(p, _)| p.overlap_with_reference).collect(),
    ];
    let factors = FACTOR_NAMES
        .iter()
        .zip(&columns)
        .map(|(name, xs)| {
            Ok(FactorRow { factor: name.to_string(), relative: linear_fit(xs, &rel)?, absolute: linear_fit(xs, &abs)? })
        })
        .collect::<Result<Vec<_>, FitError>>()?;
    let matrix: Vec<Vec<f64>> = (0..kept.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let combined = FactorRow {
        factor: "combined".into(),
        relative: multi_fit(&matrix, &rel)?,
        absolute: multi_fit(&matrix, &abs)?,
    };
    Ok(TransferTable { k, excluded: exclude.to_vec(), languages, factors, combined, negative_transfer })
}

impl TransferTable {
    /// Variance-explained table: one row per factor plus the combined row.
    pub fn variance_tsv(&self) -> String {
        let mut out = String::from("factor\trelative_r2\tabsolute_r2\n");
        for row in self.factors.iter().chain(std::iter::once(&self.combined)) {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", row.factor, row.relative.r_squared, row.absolute.r_squared);
        }
        out
    }

    pub fn languages_tsv(&self) -> String {
        let mut out = String::from("lang\tper_language\tcombined\trelative_improvement\tabsolute_improvement\n");
        for l in &self.languages {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                l.lang, l.per_language_recall, l.combined_recall, l.relative_improvement, l.absolute_improvement
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relative_improvement_examples() {
        let r = relative_improvement(17.6, 17.0).unwrap();
        assert!((r - 0.6 / 17.0).abs() < 1e-12);
        assert_eq!(format!("{:.1}", r * 100.0), "3.5");
        assert_eq!(relative_improvement(0.3, 0.3).unwrap(), 0.0);
        assert!((relative_improvement(0.5, 0.4).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(relative_improvement(0.5, 0.0), Err(FitError::ZeroBaseline));
    }

    #[test]
    fn linear_fit_examples() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert_eq!(linear_fit(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap().r_squared, 0.0);
        assert!(matches!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]), Err(FitError::Degenerate(_))));
        assert!(matches!(linear_fit(&[1.0], &[1.0]), Err(FitError::TooFewPoints { .. })));
    }

    #[test]
    fn multi_fit_examples() {
        let xs = [0.3, 1.2, 2.0, 2.9, 4.4];
        let ys = [1.0, 0.2, 3.1, 2.2, 5.0];
        let single = linear_fit(&xs, &ys).unwrap();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let multi = multi_fit(&rows, &ys).unwrap();
        assert!((single.r_squared - multi.r_squared).abs() < 1e-12);
        assert!((single.coefficients[0] - multi.coefficients[0]).abs() < 1e-12);

        let exact: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - 1.0).collect();
        assert!((multi_fit(&rows, &exact).unwrap().r_squared - 1.0).abs() < 1e-12);

        let dup: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 2.0 * x]).collect();
        assert_eq!(multi_fit(&dup, &ys), Err(FitError::RankDeficient));
        let constant: Vec<Vec<f64>> = xs.iter().map(|_| vec![1.0]).collect();
        assert_eq!(multi_fit(&constant, &ys), Err(FitError::RankDeficient));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_r(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_r(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson_r(&xs, &[1.0; 4]).is_err());
    }

    fn point(lang: &str, per: f64, comb: f64, share: f64, overlap: f64) -> TransferPoint {
        TransferPoint {
            lang: lang.into(),
            per_language_recall: per,
            combined_recall: comb,
            train_share: share,
            difficulty: per,
            overlap_with_reference: overlap,
        }
    }

    #[test]
    fn table_flags_negative_transfer() {
        let pts = vec![
            point("a", 0.2, 0.3, 0.1, 0.4),
            point("b", 0.3, 0.35, 0.2, 0.1),
            point("c", 0.5, 0.52, 0.3, 0.3),
            point("d", 0.6, 0.61, 0.4, 0.2),
            point("e", 0.4, 0.45, 0.05, 0.5),
        ];
        let t = transfer_table(&pts, 1, &[]).unwrap();
        assert!(t.negative_transfer.is_empty());
        assert_eq!(t.factors.len(), 3);
        assert_eq!(t.variance_tsv().lines().count(), 5);

        let mut bad = pts.clone();
        bad[2].combined_recall = 0.4;
        assert_eq!(transfer_table(&bad, 1, &[]).unwrap().negative_transfer, vec!["c".to_string()]);

        // Excluding down to two points cannot be fitted.
        let ex: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(transfer_table(&pts, 1, &ex), Err(FitError::TooFewPoints { .. })));
    }

    #[test]
    fn affine_factor_gets_full_r2() {
        let mut pts: Vec<TransferPoint> = (0..6)
            .map(|i| {
                let per = 0.2 + 0.05 * i as f64;
                let comb = per * (1.0 + 0.1 * ((i * 7) % 5) as f64);
                point(&format!("l{i}"), per, comb, 0.1 * ((i * 3) % 4) as f64 + 0.01 * i as f64, 0.0)
            })
            .collect();
        for p in pts.iter_mut() {
            p.overlap_with_reference = 3.0 * relative_improvement(p.combined_recall, p.per_language_recall).unwrap() + 0.5;
        }
        let t = transfer_table(&pts, 1, &[]).unwrap();
        assert!((t.factors[2].relative.r_squared - 1.0).abs() < 1e-12);
        assert!((t.combined.relative.r_squared - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scale_invariance(comb in 0.0f64..1.0, per in 0.01f64..1.0, c in 0.1f64..100.0) {
            let a = relative_improvement(comb, per).unwrap();
            let b = relative_improvement(comb * c, per * c).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn residuals_orthogonal(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30)) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
            let f = linear_fit(&xs, &ys).unwrap();
            let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - f.intercept - f.coefficients[0] * x).collect();
            prop_assert!(res.iter().sum::<f64>().abs() < 1e-8);
            prop_assert!(res.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>().abs() < 1e-8);
        }

        #[test]
        fn extra_feature_never_lowers_r2(rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 5..25)) {
            let one: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0]).collect();
            let two: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
            if let (Ok(a), Ok(b)) = (multi_fit(&one, &ys), multi_fit(&two, &ys)) {
                prop_assert!(b.r_squared + 1e-9 >= a.r_squared);
            }
        }
    }
}
