//! Dataset ingestion, max-abs normalization, chronological 4:1 splitting,
//! and sliding-window extraction for training and evaluation.
//!
//! Speeds live in a time×n matrix (row = timestamp, column = road). The
//! normalization constant is taken from the training split only, so nothing
//! from the evaluation rows can leak into it.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};
use crate::graphcore::Adjacency;
use crate::util::csvnum;

/// A loaded speed series with its normalization constant and split point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedDataset {
    /// Dataset name (defaults to the file stem).
    pub name: String,
    /// Minutes between consecutive rows.
    pub interval_minutes: usize,
    /// Raw speeds, time×n.
    speeds: DenseMatrix,
    /// Maximum raw speed over the training rows; the normalization constant.
    max_speed: f64,
    /// First row index of the evaluation split: ⌊0.8 × time⌋.
    split_index: usize,
}

/// Which side of the chronological split windows are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// One training/evaluation example: `history` immediately precedes `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// t×n normalized speeds fed to the model.
    pub history: DenseMatrix,
    /// T×n normalized speeds the model should predict.
    pub target: DenseMatrix,
    /// Absolute row index of the first history step.
    pub start_index: usize,
}

impl SpeedDataset {
    /// Builds a dataset from a raw time×n speed matrix, computing the split
    /// point and the training-split normalization constant.
    pub fn new(name: &str, interval_minutes: usize, speeds: DenseMatrix) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::config("interval_minutes must be positive".to_string()));
        }
        let (time, n) = speeds.shape();
        if n == 0 || time == 0 {
            return Err(Error::data(format!(
                "speed series is empty ({time} rows, {n} columns)"
            )));
        }
        speeds.check_finite("speed series")?;
        for i in 0..time {
            for (j, &v) in speeds.row(i).iter().enumerate() {
                if v < 0.0 {
                    return Err(Error::data(format!(
                        "negative speed {v} at row {}, column {}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let split_index = (0.8 * time as f64).floor() as usize;
        if split_index == 0 || split_index >= time {
            return Err(Error::data(format!(
                "series of {time} rows is too short for a 4:1 chronological split"
            )));
        }
        let mut max_speed = 0.0f64;
        for i in 0..split_index {
            for &v in speeds.row(i) {
                max_speed = max_speed.max(v);
            }
        }
        if max_speed <= 0.0 {
            return Err(Error::data(
                "training split is all zeros; cannot derive a normalization constant".to_string(),
            ));
        }
        Ok(SpeedDataset {
            name: name.to_string(),
            interval_minutes,
            speeds,
            max_speed,
            split_index,
        })
    }

    /// Number of timestamps.
    pub fn time(&self) -> usize {
        self.speeds.shape().0
    }

    /// Number of roads.
    pub fn n(&self) -> usize {
        self.speeds.shape().1
    }

    /// Raw (unnormalized) speeds.
    pub fn speeds(&self) -> &DenseMatrix {
        &self.speeds
    }

    /// The normalization constant (maximum raw training-split speed).
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// First row of the evaluation split.
    pub fn split_index(&self) -> usize {
        self.split_index
    }

    /// History steps covering one hour at this dataset's sampling interval.
    pub fn steps_per_hour(&self) -> usize {
        (60 / self.interval_minutes).max(1)
    }

    /// Speeds divided by the training-split maximum. Evaluation rows may
    /// exceed 1; they are deliberately not clipped.
    pub fn normalized(&self) -> DenseMatrix {
        self.speeds.map(|v| v / self.max_speed)
    }

    /// Exact inverse of [`normalized`](Self::normalized) applied to any
    /// matrix of normalized values (e.g. model predictions).
    pub fn denormalize(&self, values: &DenseMatrix) -> DenseMatrix {
        values.map(|v| v * self.max_speed)
    }

    /// Writes the raw speeds back out; `load_speeds` of the result is
    /// bit-identical in the numeric payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (time, _) = self.speeds.shape();
        csvnum::write_rows(path, None, (0..time).map(|i| self.speeds.row(i)))
    }
}

/// Loads a time×n speed CSV. A single non-numeric first row is treated as a
/// header and skipped; every data row must have the same number of columns.
pub fn load_speeds(path: &Path, interval_minutes: usize) -> Result<SpeedDataset> {
    let lines = csvnum::read_lines(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && csvnum::looks_like_header(line) {
            continue;
        }
        let row = csvnum::parse_row(line, idx + 1, path)?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::data(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    idx + 1,
                    row.len(),
                    w
                )));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let speeds = DenseMatrix::from_rows(&rows)?;
    SpeedDataset::new(&name, interval_minutes, speeds)
}

/// Stride-1 sliding windows lying entirely inside the chosen split:
/// one window per start index, `split length − t − T + 1` in total.
pub fn make_windows(
    ds: &SpeedDataset,
    t: usize,
    horizon: usize,
    split: Split,
) -> Result<Vec<Window>> {
    if t == 0 || horizon == 0 {
        return Err(Error::config(
            "history and horizon lengths must be at least 1".to_string(),
        ));
    }
    let (lo, hi) = match split {
        Split::Train => (0, ds.split_index),
        Split::Eval => (ds.split_index, ds.time()),
    };
    let len = hi - lo;
    if len < t + horizon {
        return Err(Error::data(format!(
            "{:?} split has {len} rows; need at least t + T = {} for windowing",
            split,
            t + horizon
        )));
    }
    let normalized = ds.normalized();
    let n = ds.n();
    let slice_rows = |from: usize, count: usize| -> Result<DenseMatrix> {
        let rows: Vec<Vec<f64>> = (from..from + count)
            .map(|i| normalized.row(i).to_vec())
            .collect();
        DenseMatrix::from_rows(&rows)
    };
    let mut windows = Vec::with_capacity(len - t - horizon + 1);
    for start in lo..=hi - t - horizon {
        windows.push(Window {
            history: slice_rows(start, t)?,
            target: slice_rows(start + t, horizon)?,
            start_index: start,
        });
    }
    debug_assert!(windows.iter().all(|w| w.history.shape() == (t, n)));
    Ok(windows)
}

/// Dataset manifest: where the speed and adjacency files live, plus the
/// sampling interval. Stored as TOML; relative paths are resolved against
/// the manifest's own directory on load.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub name: String,
    pub interval_minutes: usize,
    pub speed_csv: PathBuf,
    pub adjacency_csv: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = toml::from_str(&raw).map_err(|e| {
            Error::config(format!("{}: invalid manifest: {e}", path.display()))
        })?;
        if manifest.interval_minutes == 0 {
            return Err(Error::config(format!(
                "{}: interval_minutes must be positive",
                path.display()
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut manifest.speed_csv, &mut manifest.adjacency_csv] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("cannot encode manifest: {e}")))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Loads the speed series this manifest points to.
    pub fn load_dataset(&self) -> Result<SpeedDataset> {
        let mut ds = load_speeds(&self.speed_csv, self.interval_minutes)?;
        ds.name = self.name.clone();
        Ok(ds)
    }

    /// Loads the observed road-network adjacency this manifest points to.
    pub fn load_adjacency(&self) -> Result<Adjacency> {
        Adjacency::from_csv(&self.adjacency_csv)
    }
}

/// Deterministic synthetic dataset for tests and smoke runs: a ring road
/// network and smooth daily-profile speeds with phase shifts propagating
/// along the ring, plus mild noise. All speeds stay positive.
pub fn synthesize<R: Rng + ?Sized>(
    n: usize,
    time: usize,
    interval_minutes: usize,
    rng: &mut R,
) -> Result<(SpeedDataset, Adjacency)> {
    if n < 3 {
        return Err(Error::config(format!(
            "synthetic network needs at least 3 roads, got {n}"
        )));
    }
    let mut adj = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        adj.set(i, j, 1.0);
        adj.set(j, i, 1.0);
    }
    let period = (24 * 60 / interval_minutes).max(4) as f64;
    let mut speeds = DenseMatrix::zeros(time, n);
    for step in 0..time {
        for road in 0..n {
            let phase = 2.0 * std::f64::consts::PI
                * (step as f64 / period + road as f64 / n as f64);
            let noise = rng.gen_range(-1.0..1.0);
            speeds.set(step, road, 40.0 + 15.0 * phase.sin() + noise);
        }
    }
    let ds = SpeedDataset::new("synthetic", interval_minutes, speeds)?;
    let adjacency = Adjacency::new(adj)?;
    Ok((ds, adjacency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;

    fn toy_speeds(time: usize, n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(time, n);
        for i in 0..time {
            for j in 0..n {
                m.set(i, j, 10.0 + (i * n + j) as f64);
            }
        }
        m
    }

    #[test]
    fn ten_rows_split_at_eight() {
        let ds = SpeedDataset::new("toy", 15, toy_speeds(10, 3)).unwrap();
        assert_eq!(ds.split_index(), 8);
        assert_eq!(ds.time(), 10);
        assert_eq!(ds.n(), 3);
        // Max over the first 8 rows only: entry (7, 2) = 10 + 23 = 33.
        assert_eq!(ds.max_speed(), 33.0);
    }

    #[test]
    fn split_of_length_ten_gives_five_windows() {
        // time = 13 → split_index = ⌊10.4⌋ = 10; train split length 10,
        // t = 4, T = 2 → 10 − 4 − 2 + 1 = 5 windows.
        let ds = SpeedDataset::new("toy", 15, toy_speeds(13, 2)).unwrap();
        assert_eq!(ds.split_index(), 10);
        let windows = make_windows(&ds, 4, 2, Split::Train).unwrap();
        assert_eq!(windows.len(), 5);
        let starts: Vec<usize> = windows.iter().map(|w| w.start_index).collect();
        assert_eq!(starts, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn eval_windows_start_at_the_split_and_never_cross_it() {
        let ds = SpeedDataset::new("toy", 15, toy_speeds(20, 2)).unwrap();
        assert_eq!(ds.split_index(), 16);
        let train = make_windows(&ds, 2, 1, Split::Train).unwrap();
        let eval = make_windows(&ds, 2, 1, Split::Eval).unwrap();
        assert_eq!(train[0].start_index, 0);
        assert_eq!(eval[0].start_index, 16);
        // No train window touches a row ≥ split; eval windows all start ≥ split.
        assert!(train.iter().all(|w| w.start_index + 2 + 1 <= 16));
        assert!(eval.iter().all(|w| w.start_index >= 16));
        // Contiguous, exhaustive starts.
        let starts: Vec<usize> = eval.iter().map(|w| w.start_index).collect();
        assert_eq!(starts, (16..=17).collect::<Vec<_>>());
    }

    #[test]
    fn windows_pair_history_with_the_immediately_following_target() {
        let ds = SpeedDataset::new("toy", 15, toy_speeds(10, 2)).unwrap();
        let w = &make_windows(&ds, 3, 2, Split::Train).unwrap()[1];
        let norm = ds.normalized();
        for k in 0..3 {
            assert_eq!(w.history.row(k), norm.row(1 + k));
        }
        for k in 0..2 {
            assert_eq!(w.target.row(k), norm.row(4 + k));
        }
    }

    #[test]
    fn normalization_pins_and_round_trip() {
        let ds = SpeedDataset::new("toy", 15, toy_speeds(10, 3)).unwrap();
        let norm = ds.normalized();
        // The training max itself normalizes to exactly 1.
        assert_eq!(norm.get(7, 2), 1.0);
        // Evaluation rows exceed the training max and are not clipped.
        assert!(norm.get(9, 2) > 1.0);
        let back = ds.denormalize(&norm);
        for (a, b) in back.data().iter().zip(ds.speeds().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_rows_cannot_leak_into_the_normalization_constant() {
        let base = SpeedDataset::new("toy", 15, toy_speeds(10, 3)).unwrap();
        let mut bumped = toy_speeds(10, 3);
        for i in 8..10 {
            for j in 0..3 {
                bumped.set(i, j, 9999.0);
            }
        }
        let perturbed = SpeedDataset::new("toy", 15, bumped).unwrap();
        assert_eq!(base.max_speed(), perturbed.max_speed());
    }

    #[test]
    fn loader_handles_headers_ragged_rows_and_negatives() {
        let dir = tempfile::tempdir().unwrap();

        let with_header = dir.path().join("h.csv");
        std::fs::write(&with_header, "r1,r2\n1,2\n3,4\n5,6\n7,8\n9,10\n").unwrap();
        let ds = load_speeds(&with_header, 15).unwrap();
        assert_eq!((ds.time(), ds.n()), (5, 2));
        assert_eq!(ds.name, "h");

        let bare = dir.path().join("b.csv");
        std::fs::write(&bare, "1,2\n3,4\n5,6\n7,8\n9,10\n").unwrap();
        let ds2 = load_speeds(&bare, 15).unwrap();
        assert_eq!(ds.speeds(), ds2.speeds());

        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "1,2\n3,4,5\n6,7\n8,9\n10,11\n").unwrap();
        let err = load_speeds(&ragged, 15).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("row 2"), "{err}");

        let negative = dir.path().join("n.csv");
        std::fs::write(&negative, "1,2\n3,-4\n5,6\n7,8\n9,10\n").unwrap();
        let err = load_speeds(&negative, 15).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("negative"), "{err}");

        let missing = dir.path().join("missing.csv");
        assert_eq!(load_speeds(&missing, 15).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let mut rng = stream_rng(50, "data-roundtrip");
        let mut m = DenseMatrix::zeros(10, 4);
        for i in 0..10 {
            for j in 0..4 {
                m.set(i, j, rng.gen_range(0.0..80.0));
            }
        }
        let ds = SpeedDataset::new("toy", 5, m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speeds.csv");
        ds.save(&path).unwrap();
        let back = load_speeds(&path, 5).unwrap();
        assert_eq!(ds.speeds(), back.speeds());
        assert_eq!(ds.max_speed(), back.max_speed());
    }

    #[test]
    fn too_short_for_windowing_is_a_data_error() {
        let ds = SpeedDataset::new("toy", 15, toy_speeds(10, 2)).unwrap();
        // Eval split has 2 rows; t=4, T=2 cannot fit.
        let err = make_windows(&ds, 4, 2, Split::Eval).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("Eval"), "{err}");
    }

    #[test]
    fn manifest_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let speeds = dir.path().join("speeds.csv");
        std::fs::write(&speeds, "1,2\n3,4\n5,6\n7,8\n9,10\n").unwrap();
        let adj = dir.path().join("adj.csv");
        std::fs::write(&adj, "0,1\n1,0\n").unwrap();

        let manifest = Manifest {
            name: "toy".to_string(),
            interval_minutes: 15,
            speed_csv: PathBuf::from("speeds.csv"),
            adjacency_csv: PathBuf::from("adj.csv"),
        };
        let mpath = dir.path().join("toy.toml");
        manifest.save(&mpath).unwrap();

        let loaded = Manifest::load(&mpath).unwrap();
        assert_eq!(loaded.speed_csv, speeds);
        assert_eq!(loaded.adjacency_csv, adj);
        let ds = loaded.load_dataset().unwrap();
        assert_eq!(ds.name, "toy");
        assert_eq!((ds.time(), ds.n()), (5, 2));
        let a = loaded.load_adjacency().unwrap();
        assert_eq!(a.n(), 2);

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "name = \"x\"\n").unwrap();
        assert_eq!(Manifest::load(&bad).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn synthetic_data_is_valid_and_seed_deterministic() {
        let mut rng = stream_rng(7, crate::util::streams::SYNTH);
        let (ds, adj) = synthesize(8, 120, 15, &mut rng).unwrap();
        assert_eq!((ds.time(), ds.n()), (120, 8));
        adj.validate_topology().unwrap();
        assert!(ds.speeds().data().iter().all(|&v| v > 0.0));

        let mut rng2 = stream_rng(7, crate::util::streams::SYNTH);
        let (ds2, _) = synthesize(8, 120, 15, &mut rng2).unwrap();
        assert_eq!(ds.speeds(), ds2.speeds());
    }
}
