//! Scalar statistics shared by the table-level metrics.

use crate::error::{Error, Result};

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical CDFs, evaluated after each distinct value.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("ks statistic needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Pearson correlation; 0 when either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Contingency table over the observed levels of two coded columns.
pub fn contingency(a: &[usize], b: &[usize]) -> Vec<Vec<f64>> {
    assert_eq!(a.len(), b.len(), "contingency needs equal lengths");
    let ra = a.iter().max().map_or(0, |m| m + 1);
    let rb = b.iter().max().map_or(0, |m| m + 1);
    let mut t = vec![vec![0.0; rb]; ra];
    for (&i, &j) in a.iter().zip(b) {
        t[i][j] += 1.0;
    }
    // Drop levels that never occur.
    t.retain(|row| row.iter().any(|&v| v > 0.0));
    let keep: Vec<usize> = (0..rb).filter(|&j| t.iter().any(|row| row[j] > 0.0)).collect();
    t.into_iter()
        .map(|row| keep.iter().map(|&j| row[j]).collect())
        .collect()
}

/// Cramér's V from a contingency table; 0 when either side has a single level.
pub fn cramers_v_table(t: &[Vec<f64>]) -> f64 {
    let r = t.len();
    let c = t.first().map_or(0, Vec::len);
    if r < 2 || c < 2 {
        return 0.0;
    }
    let n: f64 = t.iter().flatten().sum();
    let rows: Vec<f64> = t.iter().map(|row| row.iter().sum()).collect();
    let cols: Vec<f64> = (0..c).map(|j| t.iter().map(|row| row[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..r {
        for j in 0..c {
            let e = rows[i] * cols[j] / n;
            chi2 += (t[i][j] - e).powi(2) / e;
        }
    }
    let k = (r.min(c) - 1) as f64;
    (chi2 / (n * k)).sqrt().clamp(0.0, 1.0)
}

pub fn cramers_v(a: &[usize], b: &[usize]) -> f64 {
    cramers_v_table(&contingency(a, b))
}

/// Average precision by step integration over all score thresholds, with
/// tied scores entering the ranking together. `labels` are 0/1.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidArgument("pr_auc needs equal, non-empty inputs".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::InvalidArgument("pr_auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += labels[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / seen as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || targets.is_empty() {
        return Err(Error::InvalidArgument("r2 needs equal, non-empty inputs".into()));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument("r2 is undefined for a constant target".into()));
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rmse needs equal lengths");
    if a.is_empty() {
        return 0.0;
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}
