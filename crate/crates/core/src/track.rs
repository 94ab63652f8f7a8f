//! Reference path geometry sampled on the spatial discretization grid.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Track file header.
pub const TRACK_HEADER: [&str; 4] = ["s", "kappa_ref", "d_min", "d_max"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    name: String,
    s: Vec<f64>,
    kappa_ref: Vec<f64>,
    d_min: Vec<f64>,
    d_max: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct TrackRow {
    s: f64,
    kappa_ref: f64,
    d_min: f64,
    d_max: f64,
}

impl Track {
    pub fn new(
        name: impl Into<String>,
        s: Vec<f64>,
        kappa_ref: Vec<f64>,
        d_min: Vec<f64>,
        d_max: Vec<f64>,
    ) -> Result<Self> {
        let n = s.len();
        if n < 2 {
            return Err(Error::InvalidTrack("need at least two grid points".into()));
        }
        for (what, len) in [
            ("kappa_ref", kappa_ref.len()),
            ("d_min", d_min.len()),
            ("d_max", d_max.len()),
        ] {
            if len != n {
                return Err(Error::InvalidTrack(format!(
                    "{what} has {len} entries, s_grid has {n}"
                )));
            }
        }
        for k in 0..n {
            if !s[k].is_finite() || !kappa_ref[k].is_finite() {
                return Err(Error::InvalidTrack(format!("non-finite value at row {k}")));
            }
            if !(d_min[k] < d_max[k]) {
                return Err(Error::InvalidTrack(format!(
                    "d_min >= d_max at s = {}",
                    s[k]
                )));
            }
            if k + 1 < n && !(s[k + 1] > s[k]) {
                return Err(Error::InvalidTrack(format!(
                    "s_grid not strictly increasing at row {}",
                    k + 1
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            s,
            kappa_ref,
            d_min,
            d_max,
        })
    }

    /// Straight road of the given length with constant half width.
    pub fn straight(length: f64, step: f64, half_width: f64) -> Result<Self> {
        Self::from_curvature_knots("straight", &[(0.0, 0.0), (length, 0.0)], step, half_width)
    }

    /// Builds a track whose curvature is piecewise linear between `knots`
    /// `(s, kappa)`; grid spacing is `step` (the last step may be shorter).
    pub fn from_curvature_knots(
        name: &str,
        knots: &[(f64, f64)],
        step: f64,
        half_width: f64,
    ) -> Result<Self> {
        if knots.len() < 2 || step <= 0.0 || half_width <= 0.0 {
            return Err(Error::InvalidTrack("bad curvature profile".into()));
        }
        let start = knots[0].0;
        let end = knots[knots.len() - 1].0;
        let mut s = Vec::new();
        let mut k = 0usize;
        loop {
            let si = start + k as f64 * step;
            if si >= end - 1e-9 {
                break;
            }
            s.push(si);
            k += 1;
        }
        s.push(end);
        let ks: Vec<f64> = knots.iter().map(|p| p.0).collect();
        let kv: Vec<f64> = knots.iter().map(|p| p.1).collect();
        let kappa_ref = s.iter().map(|&x| interp(&ks, &kv, x)).collect();
        let n = s.len();
        Self::new(name, s, kappa_ref, vec![-half_width; n], vec![half_width; n])
    }

    /// The short two-curve test track (~400 m) used for desk-scale experiments.
    pub fn desk_scale() -> Self {
        let knots = [
            (0.0, 0.0),
            (60.0, 0.0),
            (80.0, 1.0 / 40.0),
            (140.0, 1.0 / 40.0),
            (160.0, 0.0),
            (230.0, 0.0),
            (250.0, -1.0 / 30.0),
            (300.0, -1.0 / 30.0),
            (320.0, 0.0),
            (400.0, 0.0),
        ];
        Self::from_curvature_knots("desk-two-curves", &knots, 5.0, 3.0)
            .expect("static track definition is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Number of grid steps (`len() - 1`).
    pub fn steps(&self) -> usize {
        self.s.len() - 1
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s
    }

    pub fn kappa_ref(&self) -> &[f64] {
        &self.kappa_ref
    }

    pub fn d_min(&self) -> &[f64] {
        &self.d_min
    }

    pub fn d_max(&self) -> &[f64] {
        &self.d_max
    }

    pub fn length(&self) -> f64 {
        self.s[self.s.len() - 1] - self.s[0]
    }

    /// `h_k = s_{k+1} - s_k`.
    pub fn step_length(&self, k: usize) -> Result<f64> {
        if k + 1 >= self.s.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.steps(),
            });
        }
        Ok(self.s[k + 1] - self.s[k])
    }

    /// Curvature at arbitrary arclength by linear interpolation (clamped at the ends).
    pub fn kappa_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.kappa_ref, s)
    }

    pub fn bounds_at(&self, s: f64) -> (f64, f64) {
        (interp(&self.s, &self.d_min, s), interp(&self.s, &self.d_max, s))
    }

    /// Resamples the track onto a uniform grid with the given spacing.
    pub fn resample(&self, step: f64) -> Result<Self> {
        if step <= 0.0 {
            return Err(Error::InvalidArgument("resample step must be positive".into()));
        }
        let (start, end) = (self.s[0], self.s[self.s.len() - 1]);
        let mut s = Vec::new();
        let mut k = 0usize;
        while start + k as f64 * step < end - 1e-9 {
            s.push(start + k as f64 * step);
            k += 1;
        }
        s.push(end);
        let kappa = s.iter().map(|&x| self.kappa_at(x)).collect();
        let (lo, hi): (Vec<f64>, Vec<f64>) = s.iter().map(|&x| self.bounds_at(x)).unzip();
        Self::new(self.name.clone(), s, kappa, lo, hi)
    }

    pub fn from_reader<R: Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACK_HEADER {
            return Err(Error::Parse(format!(
                "track header must be `{}`, found `{}`",
                TRACK_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut s, mut kr, mut lo, mut hi) = (vec![], vec![], vec![], vec![]);
        for row in rdr.deserialize::<TrackRow>() {
            let row = row?;
            s.push(row.s);
            kr.push(row.kappa_ref);
            lo.push(row.d_min);
            hi.push(row.d_max);
        }
        Self::new(name, s, kr, lo, hi)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "track".into());
        Self::from_reader(name, std::fs::File::open(path)?)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACK_HEADER)?;
        for k in 0..self.len() {
            w.write_record([
                self.s[k].to_string(),
                self.kappa_ref[k].to_string(),
                self.d_min[k].to_string(),
                self.d_max[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(std::fs::File::create(path)?)
    }

    /// Content hash of the grid data (name excluded), hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for col in [&self.s, &self.kappa_ref, &self.d_min, &self.d_max] {
            for x in col.iter() {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Piecewise-linear interpolation on increasing `xs`, clamped outside.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}
