//! Dataset file IO and the applied-analysis entry points: export, ingest
//! with validation, single-dataset estimation, and CLI truth evaluation.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;

use crate::dgp::{
    average_derivative_exp_illustration, ols_slope_exp_illustration, true_shift_effect,
    Dataset, EffectMethod, Scenario, ScenarioSpec, TrueEffect,
};
use crate::error::{Error, Result};
use crate::spatial::{LocationSet, Point, DOMAIN_MAX, DOMAIN_MIN};

/// Write a dataset as delimited text: header row, then y, x, s1, s2,
/// optional u, optional covariates. Values use shortest round-trip
/// formatting, so ingest reproduces them bit-for-bit.
pub fn export_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("y,x,s1,s2");
    if ds.u.is_some() {
        out.push_str(",u");
    }
    let p_cov = ds.covariates.as_ref().map_or(0, |c| c.ncols());
    for j in 0..p_cov {
        out.push_str(&format!(",c{}", j + 1));
    }
    out.push('\n');
    for i in 0..ds.len() {
        let p = ds.locations.point(i);
        out.push_str(&format!("{},{},{},{}", ds.y[i], ds.x[i], p.x, p.y));
        if let Some(u) = &ds.u {
            out.push_str(&format!(",{}", u[i]));
        }
        if let Some(c) = &ds.covariates {
            for j in 0..p_cov {
                out.push_str(&format!(",{}", c[[i, j]]));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Ingestion(format!(
            "missing value at data row {row}, column {column}"
        )));
    }
    let v: f64 = trimmed.parse().map_err(|_| {
        Error::Ingestion(format!(
            "non-numeric value {trimmed:?} at data row {row}, column {column}"
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Ingestion(format!(
            "non-finite value at data row {row}, column {column}"
        )));
    }
    Ok(v)
}

/// Read a delimited dataset. Columns y, x, s1, s2 are matched by header
/// name; a `u` column is ignored; every other column becomes a linear
/// covariate in file order. Locations outside the unit square are min-max
/// rescaled into it; `normalize` additionally standardizes y, x, and the
/// covariates.
pub fn ingest_dataset(path: &Path, normalize: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Ingestion("empty file".into()))?;
    let names: Vec<&str> = header.split(',').map(|h| h.trim()).collect();
    let find = |want: &str| -> Result<usize> {
        names
            .iter()
            .position(|h| *h == want)
            .ok_or_else(|| Error::Ingestion(format!("missing column {want}")))
    };
    let iy = find("y")?;
    let ix = find("x")?;
    let is1 = find("s1")?;
    let is2 = find("s2")?;
    let cov_cols: Vec<usize> = (0..names.len())
        .filter(|&j| j != iy && j != ix && j != is1 && j != is2 && names[j] != "u")
        .collect();

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut s = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    for (li, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = li + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Ingestion(format!(
                "data row {row} has {} cells, expected {}",
                cells.len(),
                names.len()
            )));
        }
        y.push(parse_cell(cells[iy], row, "y")?);
        x.push(parse_cell(cells[ix], row, "x")?);
        let sx = parse_cell(cells[is1], row, "s1")?;
        let sy = parse_cell(cells[is2], row, "s2")?;
        s.push((sx, sy));
        for (k, &j) in cov_cols.iter().enumerate() {
            covs[k].push(parse_cell(cells[j], row, names[j])?);
        }
    }
    if y.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }

    let out_of_domain = s.iter().any(|(a, b)| {
        *a < DOMAIN_MIN || *a > DOMAIN_MAX || *b < DOMAIN_MIN || *b > DOMAIN_MAX
    });
    if out_of_domain {
        for dim in 0..2 {
            let vals: Vec<f64> = s.iter().map(|p| if dim == 0 { p.0 } else { p.1 }).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-300);
            for (i, p) in s.iter_mut().enumerate() {
                let v = (vals[i] - lo) / span * 2.0 - 1.0;
                if dim == 0 {
                    p.0 = v;
                } else {
                    p.1 = v;
                }
            }
        }
    }
    if normalize {
        standardize(&mut y);
        standardize(&mut x);
        for c in covs.iter_mut() {
            standardize(c);
        }
    }

    let locations = LocationSet::new(s.iter().map(|&(a, b)| Point::new(a, b)).collect())?;
    let covariates = if covs.is_empty() {
        None
    } else {
        let n = y.len();
        let mut m = Array2::zeros((n, covs.len()));
        for (j, c) in covs.iter().enumerate() {
            for i in 0..n {
                m[[i, j]] = c[i];
            }
        }
        Some(m)
    };
    Ok(Dataset {
        locations,
        x,
        y,
        u: None,
        covariates,
        noise: None,
        scenario: None,
    })
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if sd > 0.0 {
        for x in v.iter_mut() {
            *x = (*x - mean) / sd;
        }
    }
}

/// How the CLI reports a scenario's "truth".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectMode {
    /// The shift effect Delta (default).
    Shift,
    /// Average derivative of the outcome in the exposure
    /// (exponential illustration only).
    AverageDerivative,
    /// Population least-squares slope of Y on X
    /// (exponential illustration only).
    OlsSlope,
}

pub fn run_true_effect(
    scenario: Scenario,
    delta: f64,
    oracle_n: usize,
    mode: EffectMode,
    seed: u64,
) -> Result<TrueEffect> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    match mode {
        EffectMode::Shift => {
            true_shift_effect(&ScenarioSpec::new(scenario), delta, oracle_n, &mut rng)
        }
        EffectMode::AverageDerivative => {
            if scenario != Scenario::ExpIllustration {
                return Err(Error::InvalidArgument(
                    "derivative mode applies to exp_illustration only".into(),
                ));
            }
            Ok(TrueEffect {
                delta,
                value: average_derivative_exp_illustration(),
                method: EffectMethod::Analytic,
                mc_se: None,
            })
        }
        EffectMode::OlsSlope => {
            if scenario != Scenario::ExpIllustration {
                return Err(Error::InvalidArgument(
                    "OLS-slope mode applies to exp_illustration only".into(),
                ));
            }
            Ok(TrueEffect {
                delta,
                value: ols_slope_exp_illustration(oracle_n, &mut rng)?,
                method: EffectMethod::MonteCarlo,
                mc_se: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::generate;
    use crate::harness::config::{CrossfitSettings, MethodSpec};
    use crate::harness::methods::run_method;

    #[test]
    fn round_trip_preserves_estimates() {
        let spec = ScenarioSpec::new(Scenario::Linear);
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let ds = generate(&spec, 400, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        export_dataset(&ds, &path).unwrap();
        let back = ingest_dataset(&path, false).unwrap();
        let m = MethodSpec::named("plm_rbf");
        let cf = CrossfitSettings::default();
        let a = run_method(&ds, &m, 1.0, &cf, 3).unwrap();
        let b = run_method(&back, &m, 1.0, &cf, 3).unwrap();
        assert!((a.point - b.point).abs() < 1e-10, "{} vs {}", a.point, b.point);
    }

    #[test]
    fn non_numeric_cell_cites_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y,x,s1,s2\n1.0,oops,0.1,0.2\n").unwrap();
        let err = ingest_dataset(&path, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("column x"), "{msg}");
    }

    #[test]
    fn out_of_domain_locations_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.csv");
        std::fs::write(
            &path,
            "y,x,s1,s2\n1.0,0.5,100.0,40.0\n2.0,0.7,200.0,80.0\n3.0,0.9,150.0,60.0\n",
        )
        .unwrap();
        let ds = ingest_dataset(&path, false).unwrap();
        for p in ds.locations.points() {
            assert!(p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0);
        }
    }

    #[test]
    fn extra_columns_become_covariates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        std::fs::write(
            &path,
            "y,x,s1,s2,age,u\n1.0,0.5,0.1,0.2,30,9\n2.0,0.7,0.3,0.4,40,9\n",
        )
        .unwrap();
        let ds = ingest_dataset(&path, false).unwrap();
        let c = ds.covariates.unwrap();
        assert_eq!(c.ncols(), 1); // u skipped
        assert_eq!(c[[1, 0]], 40.0);
    }

    #[test]
    fn true_effect_modes() {
        let t = run_true_effect(Scenario::Linear, 1.0, 0, EffectMode::Shift, 1).unwrap();
        assert_eq!(t.value, 1.0);
        let d = run_true_effect(
            Scenario::ExpIllustration,
            1.0,
            0,
            EffectMode::AverageDerivative,
            1,
        )
        .unwrap();
        assert!((d.value - 29.48).abs() < 0.2);
        assert!(run_true_effect(Scenario::Linear, 1.0, 0, EffectMode::OlsSlope, 1).is_err());
    }
}
