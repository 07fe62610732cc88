//! Delimited-text readers and writers for microdata, tables and masks.
//!
//! A table is written as a columnar file with one index column per variable
//! (0-based level indices), an `f` column, an optional `F` column and an
//! optional `structural_zero` column. Only cells with a nonzero count or a
//! structural-zero flag are listed; all other cells are zero. Variable levels
//! and the sampling fraction live in a JSON sidecar next to the table file.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ContingencyTable, KeyVariable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub variables: Vec<KeyVariable>,
    pub pi: f64,
    pub cells: usize,
    pub active_cells: usize,
    pub sample_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_size: Option<u64>,
}

/// `table.csv` -> `table.meta.json`.
pub fn metadata_path(table_path: &Path) -> PathBuf {
    table_path.with_extension("meta.json")
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

fn reader_for(path: &Path) -> Result<csv::Reader<File>> {
    let delim = sniff_delimiter(path)?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delim)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

/// Reads microdata with a header row and tabulates it. Columns are matched
/// to variables by name; extra columns are ignored. When `variables` is
/// `None`, every column becomes a variable whose levels are the sorted
/// distinct labels found in the file.
pub fn read_microdata(path: &Path, variables: Option<Vec<KeyVariable>>) -> Result<ContingencyTable> {
    let mut rdr = reader_for(path)?;
    let headers = rdr.headers()?.clone();
    let variables = match variables {
        Some(v) => v,
        None => {
            let mut seen: Vec<BTreeSet<String>> = vec![BTreeSet::new(); headers.len()];
            for rec in reader_for(path)?.records() {
                let rec = rec?;
                for (s, field) in seen.iter_mut().zip(rec.iter()) {
                    s.insert(field.to_string());
                }
            }
            headers
                .iter()
                .zip(seen)
                .map(|(h, levels)| KeyVariable::new(h, levels.into_iter().collect()))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let columns: Vec<usize> = variables
        .iter()
        .map(|v| {
            headers
                .iter()
                .position(|h| h == v.name())
                .ok_or_else(|| Error::invalid(format!("microdata lacks column {}", v.name())))
        })
        .collect::<Result<_>>()?;
    let records = rdr.into_records().map(|rec| {
        let rec = rec?;
        columns
            .iter()
            .map(|&c| {
                rec.get(c)
                    .map(str::to_string)
                    .ok_or_else(|| Error::invalid("short record"))
            })
            .collect::<Result<Vec<String>>>()
    });
    ContingencyTable::tabulate(records, variables)
}

/// Reads a structural-zero declaration: one row per pattern, one column per
/// variable holding a level label or `*` for every level.
pub fn read_mask(path: &Path, variables: &[KeyVariable]) -> Result<Vec<bool>> {
    let table = ContingencyTable::empty(variables.to_vec())?;
    let mut rdr = reader_for(path)?;
    let headers = rdr.headers()?.clone();
    let columns: Vec<usize> = variables
        .iter()
        .map(|v| {
            headers
                .iter()
                .position(|h| h == v.name())
                .ok_or_else(|| Error::invalid(format!("mask file lacks column {}", v.name())))
        })
        .collect::<Result<_>>()?;
    let mut mask = vec![false; table.num_cells()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut choices: Vec<Vec<usize>> = Vec::with_capacity(variables.len());
        for (v, &c) in variables.iter().zip(&columns) {
            let label = rec.get(c).unwrap_or("");
            if label == "*" {
                choices.push((0..v.num_levels()).collect());
            } else {
                let level = v.level_index(label).ok_or_else(|| Error::UnknownLevel {
                    record: row + 1,
                    variable: v.name().to_string(),
                    label: label.to_string(),
                })?;
                choices.push(vec![level]);
            }
        }
        let mut idx = vec![0; variables.len()];
        mark_product(&table, &choices, 0, &mut idx, &mut mask);
    }
    Ok(mask)
}

fn mark_product(
    table: &ContingencyTable,
    choices: &[Vec<usize>],
    depth: usize,
    idx: &mut Vec<usize>,
    mask: &mut [bool],
) {
    if depth == choices.len() {
        let k = table.cell_index(idx).expect("levels validated");
        mask[k] = true;
        return;
    }
    for &l in &choices[depth] {
        idx[depth] = l;
        mark_product(table, choices, depth + 1, idx, mask);
    }
}

impl ContingencyTable {
    pub fn metadata(&self) -> TableMetadata {
        TableMetadata {
            variables: self.variables.clone(),
            pi: self.pi,
            cells: self.num_cells(),
            active_cells: self.num_active_cells(),
            sample_size: self.sample_size(),
            population_size: self.population_size(),
        }
    }

    /// Writes the table file and its JSON sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let delim = if path.extension().is_some_and(|e| e == "tsv") {
            b'\t'
        } else {
            b','
        };
        let mut w = csv::WriterBuilder::new().delimiter(delim).from_path(path)?;
        let has_zero = self.structural_zero.iter().any(|z| *z);
        let mut header: Vec<String> = self.variables.iter().map(|v| v.name().to_string()).collect();
        header.push("f".into());
        if self.population.is_some() {
            header.push("F".into());
        }
        if has_zero {
            header.push("structural_zero".into());
        }
        w.write_record(&header)?;
        let mut idx = vec![0; self.variables.len()];
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for k in 0..self.num_cells() {
            let big_f = self.population.as_ref().map_or(0, |p| p[k]);
            if self.sample[k] == 0 && big_f == 0 && !self.structural_zero[k] {
                continue;
            }
            self.multi_index_into(k, &mut idx);
            row.clear();
            row.extend(idx.iter().map(|i| i.to_string()));
            row.push(self.sample[k].to_string());
            if self.population.is_some() {
                row.push(big_f.to_string());
            }
            if has_zero {
                row.push(u8::from(self.structural_zero[k]).to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        let mut meta = File::create(metadata_path(path))?;
        serde_json::to_writer_pretty(&mut meta, &self.metadata())?;
        meta.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a table written by [`ContingencyTable::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let meta: TableMetadata =
            serde_json::from_reader(BufReader::new(File::open(metadata_path(path))?))?;
        let mut table = Self::empty(meta.variables.clone())?;
        table.set_sampling_fraction(meta.pi)?;
        let mut rdr = reader_for(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let var_cols: Vec<usize> = meta
            .variables
            .iter()
            .map(|v| col(v.name()).ok_or_else(|| Error::invalid(format!("table lacks column {}", v.name()))))
            .collect::<Result<_>>()?;
        let f_col = col("f").ok_or_else(|| Error::invalid("table lacks column f"))?;
        let big_f_col = col("F");
        let zero_col = col("structural_zero");
        let mut sample = vec![0u64; table.num_cells()];
        let mut pop = big_f_col.map(|_| vec![0u64; table.num_cells()]);
        let mut mask = vec![false; table.num_cells()];
        let mut idx = vec![0; var_cols.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<u64> {
                rec.get(c)
                    .unwrap_or("")
                    .parse::<u64>()
                    .map_err(|e| Error::invalid(format!("table row {}: {e}", row + 1)))
            };
            for (slot, &c) in idx.iter_mut().zip(&var_cols) {
                *slot = parse(c)? as usize;
            }
            let k = table.cell_index(&idx)?;
            sample[k] = parse(f_col)?;
            if let (Some(p), Some(c)) = (pop.as_mut(), big_f_col) {
                p[k] = parse(c)?;
            }
            if let Some(c) = zero_col {
                mask[k] = parse(c)? != 0;
            }
        }
        Self::from_counts(meta.variables, sample, pop, Some(mask), meta.pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vars() -> Vec<KeyVariable> {
        vec![
            KeyVariable::new("SEX", vec!["M".into(), "F".into()]).unwrap(),
            KeyVariable::with_level_count("AGE", 3).unwrap(),
        ]
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = ContingencyTable::from_counts(
            vars(),
            vec![1, 0, 2, 0, 0, 5],
            Some(vec![3, 0, 2, 0, 1, 9]),
            Some(vec![false, true, false, false, false, false]),
            0.25,
        )
        .unwrap();
        t.write(&path).unwrap();
        let back = ContingencyTable::read(&path).unwrap();
        assert_eq!(back, t);
        assert!(metadata_path(&path).exists());
    }

    #[test]
    fn microdata_by_header_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "ID\tAGE\tSEX").unwrap();
        writeln!(f, "1\t0\tM").unwrap();
        writeln!(f, "2\t2\tF").unwrap();
        writeln!(f, "3\t2\tF").unwrap();
        drop(f);
        let t = read_microdata(&path, Some(vars())).unwrap();
        assert_eq!(t.sample_counts(), &[1, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn microdata_bad_label_reports_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "SEX,AGE\nM,0\nX,1\n").unwrap();
        match read_microdata(&path, Some(vars())).unwrap_err() {
            Error::UnknownLevel { record, .. } => assert_eq!(record, 2),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn mask_with_wildcards() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.csv");
        std::fs::write(&path, "SEX,AGE\nF,*\nM,1\n").unwrap();
        let mask = read_mask(&path, &vars()).unwrap();
        assert_eq!(mask, vec![false, true, false, true, true, true]);
    }
}
