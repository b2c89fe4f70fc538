//! Speed matrices, standardization, instance packing and the online window stream.

use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds between PeMS observations.
pub const PEMS_INTERVAL_S: u32 = 300;

/// `time × node` matrix of speeds in mile/h.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSeries {
    node_ids: Vec<String>,
    values: DMatrix<f64>,
    interval_s: u32,
}

impl SpeedSeries {
    pub fn new(node_ids: Vec<String>, values: DMatrix<f64>, interval_s: u32) -> Result<Self> {
        if values.ncols() != node_ids.len() {
            return Err(Error::Shape(format!(
                "{} columns for {} sensors",
                values.ncols(),
                node_ids.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (i % values.nrows(), i / values.nrows());
            return Err(Error::Shape(format!(
                "non-finite value at row {row}, sensor {}",
                node_ids[col]
            )));
        }
        Ok(Self {
            node_ids,
            values,
            interval_s,
        })
    }

    /// Build from row-major data, one row per timestep.
    pub fn from_rows(node_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = node_ids.len();
        if let Some(r) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Shape(format!("row {r} has {} values, expected {n}", rows[r].len())));
        }
        let values = DMatrix::from_fn(rows.len(), n, |t, j| rows[t][j]);
        Self::new(node_ids, values, PEMS_INTERVAL_S)
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn interval_s(&self) -> u32 {
        self.interval_s
    }

    pub fn get(&self, t: usize, node: usize) -> f64 {
        self.values[(t, node)]
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> DMatrixView<'_, f64> {
        self.values.rows(start, end - start)
    }

    fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self {
            node_ids: self.node_ids.clone(),
            values,
            interval_s: self.interval_s,
        }
    }

    /// Keep only the given columns, in the given order.
    pub fn select_nodes(&self, nodes: &[usize]) -> Self {
        let values = DMatrix::from_fn(self.steps(), nodes.len(), |t, j| self.values[(t, nodes[j])]);
        Self {
            node_ids: nodes.iter().map(|&j| self.node_ids[j].clone()).collect(),
            values,
            interval_s: self.interval_s,
        }
    }

    pub fn truncate(&self, steps: usize) -> Self {
        let steps = steps.min(self.steps());
        self.with_values(self.values.rows(0, steps).into_owned())
    }
}

/// Read a CSV with a header of sensor ids and one row per timestep.
pub fn load_speed_matrix(path: &Path) -> Result<SpeedSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "empty header".into(),
        });
    }
    let n = header.len();
    let mut data = Vec::new();
    let mut steps = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: format!("#{}", record.len()),
                reason: format!("ragged row with {} fields, expected {n}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let parse_err = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: header[col].clone(),
                reason,
            };
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
        steps += 1;
    }
    let values = DMatrix::from_row_slice(steps, n, &data);
    log::info!("loaded {} x {} speed matrix from {}", steps, n, path.display());
    SpeedSeries::new(header, values, PEMS_INTERVAL_S)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Write a speed matrix in the same layout [`load_speed_matrix`] reads.
pub fn write_speed_matrix(series: &SpeedSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(series.node_ids())?;
    for t in 0..series.steps() {
        w.write_record((0..series.num_nodes()).map(|j| format!("{}", series.get(t, j))))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Chronological split at `floor(ratio * steps)`.
pub fn split_train_val(series: &SpeedSeries, ratio: f64) -> (SpeedSeries, SpeedSeries) {
    let cut = ((ratio * series.steps() as f64).floor() as usize).min(series.steps());
    let train = series.with_values(series.values.rows(0, cut).into_owned());
    let val = series.with_values(series.values.rows(cut, series.steps() - cut).into_owned());
    (train, val)
}

/// z-score parameters fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Standardizer {
    Global { mean: f64, std: f64 },
    PerSensor { mean: Vec<f64>, std: Vec<f64> },
}

fn mean_std<I: Iterator<Item = f64> + Clone>(values: I) -> (f64, f64) {
    let (mut count, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        count += 1;
        sum += v;
    }
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var.sqrt())
}

/// Fit on `train`; population standard deviation.
pub fn fit_standardizer(train: &SpeedSeries, per_sensor: bool) -> Result<Standardizer> {
    if train.steps() == 0 || train.num_nodes() == 0 {
        return Err(Error::Shape("cannot fit a standardizer on an empty series".into()));
    }
    let scale_ok = |mean: f64, std: f64| std > 1e-12 * mean.abs().max(1.0);
    if per_sensor {
        let mut means = Vec::with_capacity(train.num_nodes());
        let mut stds = Vec::with_capacity(train.num_nodes());
        for j in 0..train.num_nodes() {
            let (m, s) = mean_std(train.values.column(j).iter().copied());
            if !scale_ok(m, s) {
                return Err(Error::ZeroVariance);
            }
            means.push(m);
            stds.push(s);
        }
        Ok(Standardizer::PerSensor {
            mean: means,
            std: stds,
        })
    } else {
        let (mean, std) = mean_std(train.values.iter().copied());
        if !scale_ok(mean, std) {
            return Err(Error::ZeroVariance);
        }
        Ok(Standardizer::Global { mean, std })
    }
}

impl Standardizer {
    pub fn mean(&self, node: usize) -> f64 {
        match self {
            Standardizer::Global { mean, .. } => *mean,
            Standardizer::PerSensor { mean, .. } => mean[node],
        }
    }

    pub fn std(&self, node: usize) -> f64 {
        match self {
            Standardizer::Global { std, .. } => *std,
            Standardizer::PerSensor { std, .. } => std[node],
        }
    }

    pub fn standardize_value(&self, node: usize, x: f64) -> f64 {
        (x - self.mean(node)) / self.std(node)
    }

    pub fn destandardize_value(&self, node: usize, z: f64) -> f64 {
        z * self.std(node) + self.mean(node)
    }

    pub fn standardize(&self, series: &SpeedSeries) -> SpeedSeries {
        let v = &series.values;
        series.with_values(DMatrix::from_fn(v.nrows(), v.ncols(), |t, j| {
            self.standardize_value(j, v[(t, j)])
        }))
    }

    pub fn destandardize(&self, series: &SpeedSeries) -> SpeedSeries {
        let v = &series.values;
        series.with_values(DMatrix::from_fn(v.nrows(), v.ncols(), |t, j| {
            self.destandardize_value(j, v[(t, j)])
        }))
    }
}

/// One packed `(lookback, horizon)` sample. The matrices themselves live in
/// the series; an instance only records where it starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub t0: usize,
    pub lookback: usize,
    pub horizon: usize,
}

impl Instance {
    /// `lookback × node` input rows.
    pub fn input<'a>(&self, series: &'a SpeedSeries) -> DMatrixView<'a, f64> {
        series.values.rows(self.t0, self.lookback)
    }

    /// `horizon × node` target rows.
    pub fn target<'a>(&self, series: &'a SpeedSeries) -> DMatrixView<'a, f64> {
        series.values.rows(self.t0 + self.lookback, self.horizon)
    }

    pub fn last_input_step(&self) -> usize {
        self.t0 + self.lookback - 1
    }

    /// Absolute step predicted at horizon `h` (1-based).
    pub fn target_step(&self, h: usize) -> usize {
        self.last_input_step() + h
    }

    /// One past the last step touched.
    pub fn end(&self) -> usize {
        self.t0 + self.lookback + self.horizon
    }
}

/// Every stride-1 instance of the series.
pub fn make_instances(steps: usize, lookback: usize, horizon: usize) -> Vec<Instance> {
    let span = lookback + horizon;
    if steps < span {
        log::warn!("series of {steps} steps is shorter than lookback + horizon = {span}");
        return Vec::new();
    }
    (0..=steps - span)
        .map(|t0| Instance {
            t0,
            lookback,
            horizon,
        })
        .collect()
}

/// One online-training window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub window_index: usize,
    pub instances: Vec<Instance>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// `(first, end)` absolute steps covered by inputs and targets.
    pub fn span(&self) -> (usize, usize) {
        match (self.instances.first(), self.instances.last()) {
            (Some(a), Some(b)) => (a.t0, b.end()),
            _ => (0, 0),
        }
    }

    /// Number of unique timesteps the window touches.
    pub fn timesteps(&self) -> usize {
        let (a, b) = self.span();
        b - a
    }

    /// Unstandardized speeds over the window span.
    pub fn raw_truth<'a>(&self, raw: &'a SpeedSeries) -> DMatrixView<'a, f64> {
        let (a, b) = self.span();
        raw.slice(a, b)
    }

    /// `(first, end)` of the steps predicted at horizon `h`.
    pub fn target_range(&self, h: usize) -> (usize, usize) {
        match (self.instances.first(), self.instances.last()) {
            (Some(a), Some(b)) => (a.target_step(h), b.target_step(h) + 1),
            _ => (0, 0),
        }
    }
}

/// Consecutive non-overlapping chunks; the final partial chunk is kept.
pub fn window_stream(instances: &[Instance], window_size: usize) -> Vec<WindowBatch> {
    assert!(window_size > 0, "window size must be positive");
    instances
        .chunks(window_size)
        .enumerate()
        .map(|(window_index, chunk)| WindowBatch {
            window_index,
            instances: chunk.to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_csv() {
        let f = write_tmp("a,b\n1,2\n3,4\n5,6\n");
        let s = load_speed_matrix(f.path()).unwrap();
        assert_eq!((s.steps(), s.num_nodes()), (3, 2));
        assert_eq!(s.get(2, 1), 6.0);
        assert_eq!(s.node_ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn nan_cell_reports_location() {
        let f = write_tmp("a,b\n1,2\n3,NaN\n");
        match load_speed_matrix(f.path()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (1, "b")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_non_numeric_rejected() {
        let f = write_tmp("a,b\n1,2\n3\n");
        assert!(matches!(load_speed_matrix(f.path()), Err(Error::Parse { row: 1, .. })));
        let f = write_tmp("a,b\n1,x\n");
        assert!(matches!(load_speed_matrix(f.path()), Err(Error::Parse { row: 0, .. })));
    }

    #[test]
    fn split_counts() {
        let mk = |n: usize| {
            SpeedSeries::from_rows(vec!["a".into()], &(0..n).map(|i| vec![i as f64]).collect::<Vec<_>>())
                .unwrap()
        };
        let (tr, va) = split_train_val(&mk(100), 0.8);
        assert_eq!((tr.steps(), va.steps()), (80, 20));
        assert_eq!(va.get(0, 0), 80.0);
        let (tr, va) = split_train_val(&mk(2), 0.5);
        assert_eq!((tr.steps(), va.steps()), (1, 1));
        let (tr, va) = split_train_val(&mk(12_672), 0.8);
        assert_eq!((tr.steps(), va.steps()), (10_137, 2_535));
    }

    #[test]
    fn zero_variance_rejected() {
        let s = SpeedSeries::from_rows(vec!["a".into(), "b".into()], &[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        assert!(matches!(fit_standardizer(&s, false), Err(Error::ZeroVariance)));
        let s = SpeedSeries::from_rows(vec!["a".into(), "b".into()], &[vec![5.0, 1.0], vec![5.0, 2.0]]).unwrap();
        assert!(fit_standardizer(&s, false).is_ok());
        assert!(matches!(fit_standardizer(&s, true), Err(Error::ZeroVariance)));
    }

    #[test]
    fn mean_maps_to_zero() {
        let s = SpeedSeries::from_rows(vec!["a".into()], &[vec![10.0], vec![20.0], vec![30.0]]).unwrap();
        let st = fit_standardizer(&s, false).unwrap();
        assert_eq!(st.standardize_value(0, 20.0), 0.0);
    }

    #[test]
    fn instance_counts() {
        assert_eq!(make_instances(24, 12, 12).len(), 1);
        assert_eq!(make_instances(25, 12, 12).len(), 2);
        assert!(make_instances(23, 12, 12).is_empty());
        let i = make_instances(30, 12, 3)[0];
        assert_eq!(i.target_step(3), 14);
    }

    #[test]
    fn window_chunks() {
        let inst = make_instances(140 + 23, 12, 12);
        assert_eq!(window_stream(&inst, 70).len(), 2);
        let inst = make_instances(150 + 23, 12, 12);
        let w = window_stream(&inst, 70);
        assert_eq!(w.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![70, 70, 10]);
        assert_eq!(w[1].span(), (70, 70 + 69 + 24));
        assert_eq!(w[1].timesteps(), 93);
    }
}
