//! Fleiss' kappa over a samples x categories count matrix.

use crate::error::{Error, Result};

pub fn fleiss_kappa(counts: &[Vec<usize>], n_raters: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("empty rating matrix".into()));
    }
    if n_raters < 2 {
        return Err(Error::InvalidArgument("kappa needs at least two raters".into()));
    }
    let k = counts[0].len();
    let n = n_raters as f64;
    let mut totals = vec![0usize; k];
    let mut p_bar = 0.0;
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidArgument(format!("row {i} has {} categories, expected {k}", row.len())));
        }
        if row.iter().sum::<usize>() != n_raters {
            return Err(Error::InvalidArgument(format!("row {i} does not sum to {n_raters}")));
        }
        let sq: usize = row.iter().map(|c| c * c).sum();
        p_bar += (sq - n_raters) as f64 / (n * (n - 1.0));
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    let n_total = (counts.len() * n_raters) as f64;
    p_bar /= counts.len() as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / n_total).powi(2)).sum();
    if totals.iter().filter(|&&t| t > 0).count() == 1 {
        // Every rating fell in one category, so chance agreement is 1.
        return if p_bar == 1.0 {
            Ok(1.0)
        } else {
            Err(Error::InvalidArgument("kappa undefined: chance agreement is 1".into()))
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Count matrix from per-sample label lists.
pub fn category_counts(labels: &[Vec<u8>], n_categories: usize) -> Result<Vec<Vec<usize>>> {
    labels
        .iter()
        .map(|row| {
            let mut c = vec![0; n_categories];
            for &l in row {
                *c.get_mut(l as usize)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {l} outside 0..{n_categories}")))? += 1;
            }
            Ok(c)
        })
        .collect()
}
