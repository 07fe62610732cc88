use std::path::Path;

use super::PosteriorDraws;
use crate::error::{Error, Result};

/// Writes the draw matrix: a header of table cell ids, then one row per
/// retained draw. Values use the shortest round-trip representation.
pub fn write_draws_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(draws.cells.iter().map(|c| c.to_string()))?;
    for h in 0..draws.num_draws {
        w.write_record(draws.draw(h).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws> {
    let mut r = csv::Reader::from_path(path)?;
    let cells = r
        .headers()?
        .iter()
        .map(|h| {
            h.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("draw header {h:?} is not a cell id")))
        })
        .collect::<Result<Vec<usize>>>()?;
    if cells.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("draw columns must be in increasing cell order"));
    }
    let mut lambda = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != cells.len() {
            return Err(Error::invalid(format!("draw row {} has {} values", i + 1, rec.len())));
        }
        for v in rec.iter() {
            lambda.push(v.trim().parse::<f64>().map_err(|_| {
                Error::invalid(format!("draw row {}: {v:?} is not a number", i + 1))
            })?);
        }
        rows += 1;
    }
    PosteriorDraws::from_matrix(cells, lambda, rows)
}
