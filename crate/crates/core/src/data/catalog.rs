use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

/// Number of single-base-substitution classes by trinucleotide context.
pub const SBS96: usize = 96;

/// The 96 substitution categories in the usual order: substitution type, then
/// 5' base, then 3' base, e.g. `A[C>A]A`.
pub fn sbs96_labels() -> Vec<String> {
    const SUBS: [&str; 6] = ["C>A", "C>G", "C>T", "T>A", "T>C", "T>G"];
    const BASES: [char; 4] = ['A', 'C', 'G', 'T'];
    let mut labels = Vec::with_capacity(SBS96);
    for sub in SUBS {
        for five in BASES {
            for three in BASES {
                labels.push(format!("{five}[{sub}]{three}"));
            }
        }
    }
    labels
}

/// A matrix with labelled rows and columns, as stored in CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    /// Header of the label column.
    pub corner: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: NonNegMatrix,
}

/// Counts matrix plus optional ground-truth factors.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationCatalog {
    pub labels: Vec<String>,
    pub counts: NonNegMatrix,
    pub sample_ids: Vec<String>,
    pub truth_w: Option<NonNegMatrix>,
    pub truth_h: Option<NonNegMatrix>,
    pub signature_ids: Vec<String>,
    /// Free-form provenance, e.g. generator parameters.
    pub metadata: BTreeMap<String, String>,
}

impl MutationCatalog {
    pub fn samples(&self) -> usize {
        self.counts.cols()
    }

    pub fn categories(&self) -> usize {
        self.counts.rows()
    }

    /// Attaches ground-truth factors after checking them against the counts.
    pub fn with_truth(mut self, w: Option<NonNegMatrix>, h: Option<NonNegMatrix>) -> Result<Self> {
        if let Some(w) = &w {
            if w.rows() != self.categories() {
                return Err(Error::dim("ground-truth W rows", self.categories(), w.rows()));
            }
        }
        if let Some(h) = &h {
            if h.cols() != self.samples() {
                return Err(Error::dim("ground-truth H columns", self.samples(), h.cols()));
            }
        }
        if let (Some(w), Some(h)) = (&w, &h) {
            if w.cols() != h.rows() {
                return Err(Error::dim("ground-truth W/H rank", w.cols(), h.rows()));
            }
        }
        let k = w.as_ref().map(NonNegMatrix::cols).or(h.as_ref().map(NonNegMatrix::rows));
        if let Some(k) = k {
            if self.signature_ids.len() != k {
                self.signature_ids = (0..k).map(|i| format!("sig{}", i + 1)).collect();
            }
        }
        self.truth_w = w;
        self.truth_h = h;
        Ok(self)
    }

    pub fn write_counts<W: io::Write>(&self, out: W) -> Result<()> {
        write_labeled(out, "category", &self.labels, &self.sample_ids, &self.counts)
    }

    pub fn write_truth_w<W: io::Write>(&self, out: W) -> Result<()> {
        let w = self.truth_w.as_ref().ok_or_else(|| Error::Config("catalog has no ground-truth W".into()))?;
        write_labeled(out, "category", &self.labels, &self.signature_ids, w)
    }

    pub fn write_truth_h<W: io::Write>(&self, out: W) -> Result<()> {
        let h = self.truth_h.as_ref().ok_or_else(|| Error::Config("catalog has no ground-truth H".into()))?;
        write_labeled(out, "signature", &self.signature_ids, &self.sample_ids, h)
    }
}

/// Writes a matrix as CSV: a header of column labels, then one row per
/// row label.
pub fn write_labeled<W: io::Write>(out: W, corner: &str, rows: &[String], cols: &[String], m: &NonNegMatrix) -> Result<()> {
    if rows.len() != m.rows() || cols.len() != m.cols() {
        return Err(Error::dim(
            "write_labeled",
            format!("{}x{}", m.rows(), m.cols()),
            format!("{}x{} labels", rows.len(), cols.len()),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once(corner).chain(cols.iter().map(String::as_str)))?;
    for (label, row) in rows.iter().zip(m.as_array().rows()) {
        let mut record = Vec::with_capacity(cols.len() + 1);
        record.push(label.clone());
        record.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn from_csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(err),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            parse_err(path, line, *len as usize, format!("expected {expected_len} fields, found {len}"))
        }
        _ => parse_err(path, line, 0, err.to_string()),
    }
}

/// Reads a labelled non-negative matrix from a CSV file: header row of
/// column ids, first column of row labels, numeric cells elsewhere.
pub fn read_labeled(path: &Path) -> Result<LabeledMatrix> {
    let file = File::open(path)?;
    read_labeled_from(file, path)
}

pub fn read_labeled_from<R: io::Read>(input: R, path: &Path) -> Result<LabeledMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| from_csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(parse_err(path, 1, header.len(), "header needs a label column and at least one sample"));
    }
    let corner = header[0].trim().to_string();
    let col_labels: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    check_unique(path, 1, &col_labels)?;

    let mut row_labels = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| from_csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let label = record[0].trim().to_string();
        for (j, cell) in record.iter().enumerate().skip(1) {
            let value: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, j + 1, format!("`{cell}` is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(path, line, j + 1, format!("`{cell}` is not finite")));
            }
            if value < 0.0 {
                return Err(Error::NegativeCount {
                    path: path.to_path_buf(),
                    line,
                    category: label,
                    sample: col_labels[j - 1].clone(),
                    value,
                });
            }
            data.push(value);
        }
        row_labels.push(label);
    }
    if row_labels.is_empty() {
        return Err(parse_err(path, 2, 0, "no data rows"));
    }
    check_unique(path, 0, &row_labels)?;
    let values = NonNegMatrix::new(
        Array2::from_shape_vec((row_labels.len(), col_labels.len()), data).expect("csv enforces equal record lengths"),
    )?;
    Ok(LabeledMatrix {
        corner,
        row_labels,
        col_labels,
        values,
    })
}

fn check_unique(path: &Path, line: u64, labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for label in labels {
        if !seen.insert(label) {
            return Err(parse_err(path, line, 0, format!("duplicate label `{label}`")));
        }
    }
    Ok(())
}

/// Input options for [`load_catalog`].
#[derive(Debug, Clone, Default)]
pub struct CatalogFormat {
    /// Require exactly the 96 substitution-category rows.
    pub mutation_catalog: bool,
    pub truth_w: Option<PathBuf>,
    pub truth_h: Option<PathBuf>,
}

pub fn load_catalog(path: &Path, format: &CatalogFormat) -> Result<MutationCatalog> {
    let counts = read_labeled(path)?;
    if format.mutation_catalog && counts.row_labels.len() != SBS96 {
        return Err(Error::RowCount {
            path: path.to_path_buf(),
            expected: SBS96,
            found: counts.row_labels.len(),
        });
    }
    let mut catalog = MutationCatalog {
        labels: counts.row_labels,
        counts: counts.values,
        sample_ids: counts.col_labels,
        truth_w: None,
        truth_h: None,
        signature_ids: Vec::new(),
        metadata: BTreeMap::new(),
    };
    let w = format.truth_w.as_deref().map(read_labeled).transpose()?;
    let h = format.truth_h.as_deref().map(read_labeled).transpose()?;
    if let Some(h) = &h {
        catalog.signature_ids = h.row_labels.clone();
    } else if let Some(w) = &w {
        catalog.signature_ids = w.col_labels.clone();
    }
    catalog.with_truth(w.map(|m| m.values), h.map(|m| m.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &Path, name: &str, rows: usize, cols: usize, poison: Option<(usize, usize, &str)>) -> PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        let header: Vec<String> = (0..cols).map(|j| format!("s{j}")).collect();
        writeln!(f, "category,{}", header.join(",")).unwrap();
        let labels = sbs96_labels();
        for i in 0..rows {
            let cells: Vec<String> = (0..cols)
                .map(|j| match poison {
                    Some((pi, pj, text)) if pi == i && pj == j => text.to_string(),
                    _ => ((i * cols + j) % 7).to_string(),
                })
                .collect();
            writeln!(f, "{},{}", labels[i % 96], cells.join(",")).unwrap();
        }
        path
    }

    fn catalog_flag() -> CatalogFormat {
        CatalogFormat {
            mutation_catalog: true,
            ..Default::default()
        }
    }

    #[test]
    fn labels_are_unique_and_ordered() {
        let labels = sbs96_labels();
        assert_eq!(labels.len(), 96);
        assert_eq!(labels[0], "A[C>A]A");
        assert_eq!(labels[95], "T[T>G]T");
        assert_eq!(labels.iter().collect::<HashSet<_>>().len(), 96);
    }

    #[test]
    fn loads_well_formed_catalog() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "v.csv", 96, 3, None);
        let cat = load_catalog(&path, &catalog_flag()).unwrap();
        assert_eq!(cat.samples(), 3);
        assert_eq!(cat.categories(), 96);
        assert_eq!(cat.sample_ids, vec!["s0", "s1", "s2"]);
    }

    #[test]
    fn rejects_negative_count_naming_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "v.csv", 96, 3, Some((4, 2, "-1")));
        match load_catalog(&path, &catalog_flag()) {
            Err(Error::NegativeCount { category, sample, line, .. }) => {
                assert_eq!(category, sbs96_labels()[4]);
                assert_eq!(sample, "s2");
                assert_eq!(line, 6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_row_count_only_under_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "v.csv", 95, 2, None);
        assert!(matches!(
            load_catalog(&path, &catalog_flag()),
            Err(Error::RowCount { expected: 96, found: 95, .. })
        ));
        assert_eq!(load_catalog(&path, &CatalogFormat::default()).unwrap().categories(), 95);
    }

    #[test]
    fn parse_error_carries_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "v.csv", 10, 3, Some((2, 1, "abc")));
        match load_catalog(&path, &CatalogFormat::default()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (4, 3)),
            other => panic!("{other:?}"),
        }
        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "category,a,b\nx,1,2\ny,1\n").unwrap();
        assert!(matches!(
            load_catalog(&ragged, &CatalogFormat::default()),
            Err(Error::Parse { line: 3, .. })
        ));
        let dup = dir.path().join("d.csv");
        std::fs::write(&dup, "category,a\nx,1\nx,2\n").unwrap();
        assert!(matches!(load_catalog(&dup, &CatalogFormat::default()), Err(Error::Parse { .. })));
    }

    #[test]
    fn truth_sidecars_round_trip() {
        let labels: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let w = NonNegMatrix::from_shape_vec(4, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let h = NonNegMatrix::from_shape_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let cat = MutationCatalog {
            labels,
            counts: w.matmul(&h).unwrap(),
            sample_ids: vec!["a".into(), "b".into(), "c".into()],
            truth_w: None,
            truth_h: None,
            signature_ids: vec![],
            metadata: BTreeMap::new(),
        }
        .with_truth(Some(w), Some(h))
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let paths = ["v.csv", "w.csv", "h.csv"].map(|n| dir.path().join(n));
        cat.write_counts(File::create(&paths[0]).unwrap()).unwrap();
        cat.write_truth_w(File::create(&paths[1]).unwrap()).unwrap();
        cat.write_truth_h(File::create(&paths[2]).unwrap()).unwrap();
        let format = CatalogFormat {
            mutation_catalog: false,
            truth_w: Some(paths[1].clone()),
            truth_h: Some(paths[2].clone()),
        };
        let back = load_catalog(&paths[0], &format).unwrap();
        assert_eq!(back, cat);
    }

    #[test]
    fn truth_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let v = write_csv(dir.path(), "v.csv", 4, 3, None);
        let h = write_csv(dir.path(), "h.csv", 2, 5, None);
        let format = CatalogFormat {
            truth_h: Some(h),
            ..Default::default()
        };
        assert!(matches!(load_catalog(&v, &format), Err(Error::Dimension { .. })));
    }
}
