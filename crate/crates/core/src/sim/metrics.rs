//! Per-step metrics rows and the post-run summary.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 12] = [
    "frame",
    "step",
    "active_gaussians",
    "active_chunks",
    "active_keyframes",
    "loads",
    "evictions",
    "io_ns",
    "step_ns",
    "selected_kf",
    "overlap",
    "loss",
];

/// One optimization step. Counter deltas (`loads`, `evictions`, `io_ns`,
/// `step_ns`) cover all work since the previous row, so frame ingestion is
/// charged to the first step after it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: u64,
    pub step: u64,
    pub active_gaussians: u64,
    pub active_chunks: u64,
    pub active_keyframes: u64,
    pub chunk_loads: u64,
    pub chunk_evictions: u64,
    pub io_nanos: u64,
    pub step_nanos: u64,
    pub selected_kf: u64,
    pub overlap: Option<f64>,
    pub loss: f64,
    /// Not part of the CSV.
    pub total_gaussians_ever: u64,
}

impl FrameMetrics {
    fn record(&self) -> [String; 12] {
        [
            self.frame.to_string(),
            self.step.to_string(),
            self.active_gaussians.to_string(),
            self.active_chunks.to_string(),
            self.active_keyframes.to_string(),
            self.chunk_loads.to_string(),
            self.chunk_evictions.to_string(),
            self.io_nanos.to_string(),
            self.step_nanos.to_string(),
            self.selected_kf.to_string(),
            self.overlap.map(|o| format!("{o:.6}")).unwrap_or_default(),
            format!("{:.9}", self.loss),
        ]
    }
}

/// Streams rows to a CSV sink. The header is written on creation.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        inner.write_record(METRICS_HEADER).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &FrameMetrics) -> Result<()> {
        self.inner.write_record(row.record()).map_err(csv_err)
    }

    pub fn finish(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("flushing metrics: {}", e.error())))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("writing metrics: {e}"))
}

/// Parses a metrics CSV. `total_gaussians_ever` is left at zero.
pub fn read_metrics(src: impl Read) -> Result<Vec<FrameMetrics>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(src);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedMetrics(e.to_string()))?
        .clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::MalformedMetrics(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedMetrics(e.to_string()))?;
        let bad = |col: &str| Error::MalformedMetrics(format!("row {}: bad {col}", n + 1));
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(METRICS_HEADER[i]));
        let overlap = match &rec[10] {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| bad("overlap"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad("overlap"));
                }
                Some(v)
            }
        };
        let loss: f64 = rec[11].parse().map_err(|_| bad("loss"))?;
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(bad("loss"));
        }
        rows.push(FrameMetrics {
            frame: int(0)?,
            step: int(1)?,
            active_gaussians: int(2)?,
            active_chunks: int(3)?,
            active_keyframes: int(4)?,
            chunk_loads: int(5)?,
            chunk_evictions: int(6)?,
            io_nanos: int(7)?,
            step_nanos: int(8)?,
            selected_kf: int(9)?,
            overlap,
            loss,
            total_gaussians_ever: 0,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: usize,
    pub io_fraction: f64,
    /// Largest active Gaussian count over the second half of the run.
    pub plateau: u64,
    pub max_active_gaussians: u64,
    pub max_active_keyframes: u64,
    pub mean_overlap: Option<f64>,
    pub total_loads: u64,
    pub total_evictions: u64,
    pub loss_first: Option<f64>,
    pub loss_last: Option<f64>,
    pub loss_mean: Option<f64>,
    pub loss_min: Option<f64>,
}

pub fn report(rows: &[FrameMetrics]) -> Report {
    let io: u64 = rows.iter().map(|r| r.io_nanos).sum();
    let step: u64 = rows.iter().map(|r| r.step_nanos).sum();
    let steady = &rows[rows.len() / 2..];
    let overlaps: Vec<f64> = rows.iter().filter_map(|r| r.overlap).collect();
    let losses: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Report {
        rows: rows.len(),
        io_fraction: if step == 0 { 0.0 } else { io as f64 / step as f64 },
        plateau: steady.iter().map(|r| r.active_gaussians).max().unwrap_or(0),
        max_active_gaussians: rows.iter().map(|r| r.active_gaussians).max().unwrap_or(0),
        max_active_keyframes: rows.iter().map(|r| r.active_keyframes).max().unwrap_or(0),
        mean_overlap: mean(&overlaps),
        total_loads: rows.iter().map(|r| r.chunk_loads).sum(),
        total_evictions: rows.iter().map(|r| r.chunk_evictions).sum(),
        loss_first: losses.first().copied(),
        loss_last: losses.last().copied(),
        loss_mean: mean(&losses),
        loss_min: losses.iter().copied().reduce(f64::min),
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
        writeln!(f, "rows               {}", self.rows)?;
        writeln!(f, "plateau            {}", self.plateau)?;
        writeln!(f, "max active         {}", self.max_active_gaussians)?;
        writeln!(f, "max keyframes      {}", self.max_active_keyframes)?;
        writeln!(f, "io fraction        {:.4}", self.io_fraction)?;
        writeln!(f, "mean overlap       {}", opt(self.mean_overlap))?;
        writeln!(f, "chunk loads        {}", self.total_loads)?;
        writeln!(f, "chunk evictions    {}", self.total_evictions)?;
        write!(
            f,
            "loss first/last/mean/min  {} / {} / {} / {}",
            opt(self.loss_first),
            opt(self.loss_last),
            opt(self.loss_mean),
            opt(self.loss_min)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u64, active: u64, io: u64, step: u64, overlap: Option<f64>) -> FrameMetrics {
        FrameMetrics {
            frame,
            step: 0,
            active_gaussians: active,
            active_chunks: 1,
            active_keyframes: 1,
            chunk_loads: 0,
            chunk_evictions: 0,
            io_nanos: io,
            step_nanos: step,
            selected_kf: frame,
            overlap,
            loss: 0.25,
            total_gaussians_ever: 0,
        }
    }

    #[test]
    fn roundtrip() {
        let rows = vec![row(0, 10, 1, 4, None), row(1, 20, 0, 3, Some(0.5))];
        let mut w = MetricsWriter::new(Vec::new()).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(&METRICS_HEADER.join(",")));
        assert_eq!(read_metrics(&bytes[..]).unwrap(), rows);
    }

    #[test]
    fn empty_body() {
        let bytes = MetricsWriter::new(Vec::new()).unwrap().finish().unwrap();
        assert_eq!(bytes, format!("{}\n", METRICS_HEADER.join(",")).into_bytes());
        let r = report(&read_metrics(&bytes[..]).unwrap());
        assert_eq!((r.rows, r.plateau, r.io_fraction), (0, 0, 0.0));
    }

    #[test]
    fn io_fraction_examples() {
        let zero: Vec<_> = (0..4).map(|i| row(i, 5, 0, 7, None)).collect();
        assert_eq!(report(&zero).io_fraction, 0.0);
        let quarter: Vec<_> = (0..4).map(|i| row(i, 5, 1, 4, None)).collect();
        assert_eq!(report(&quarter).io_fraction, 0.25);
    }

    #[test]
    fn plateau_uses_second_half() {
        let rows: Vec<_> = [90, 10, 20, 30, 25, 28]
            .iter()
            .enumerate()
            .map(|(i, &a)| row(i as u64, a, 0, 1, Some(1.0)))
            .collect();
        let r = report(&rows);
        assert_eq!((r.plateau, r.max_active_gaussians), (30, 90));
        assert_eq!(r.mean_overlap, Some(1.0));
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(read_metrics(&b"a,b\n1,2\n"[..]), Err(Error::MalformedMetrics(_))));
        let mut text = METRICS_HEADER.join(",");
        text.push_str("\n0,0,1,1,1,0,0,x,4,0,,0.1\n");
        assert!(matches!(read_metrics(text.as_bytes()), Err(Error::MalformedMetrics(_))));
        let mut text = METRICS_HEADER.join(",");
        text.push_str("\n0,0,1,1,1,0,0,1,4,0,1.5,0.1\n");
        assert!(read_metrics(text.as_bytes()).is_err());
    }
}
