//! Daily renewable availability series, synthesis and windowing.

use std::fmt::Write as _;
use std::path::Path;

use gridpatch_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MONTH_LENGTHS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Daily maximum available output of each renewable unit, in MW.
#[derive(Clone, Debug, PartialEq)]
pub struct RenewableSeries {
    num_units: usize,
    num_days: usize,
    values: Vec<f64>,
}

impl RenewableSeries {
    /// Builds a series from day-major values.
    pub fn new(num_units: usize, values: Vec<f64>) -> Result<Self> {
        if num_units == 0 {
            return Err(Error::invalid("series needs at least one unit"));
        }
        if values.is_empty() || !values.len().is_multiple_of(num_units) {
            return Err(Error::invalid(format!(
                "{} values do not form whole days of {num_units} units",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "value {} on day {} is not a finite non-negative number",
                values[pos],
                pos / num_units
            )));
        }
        Ok(Self {
            num_units,
            num_days: values.len() / num_units,
            values,
        })
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn num_days(&self) -> usize {
        self.num_days
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn day(&self, d: usize) -> &[f64] {
        &self.values[d * self.num_units..(d + 1) * self.num_units]
    }

    pub fn get(&self, d: usize, unit: usize) -> f64 {
        self.values[d * self.num_units + unit]
    }

    /// Rows `start..start + len` as a `len × num_units` tensor.
    pub fn slice_days(&self, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > self.num_days {
            return Err(Error::invalid(format!(
                "days {start}..{} outside a {}-day series",
                start + len,
                self.num_days
            )));
        }
        let data = self.values[start * self.num_units..(start + len) * self.num_units].to_vec();
        Ok(Tensor::matrix(len, self.num_units, data)?)
    }

    /// Largest value ever observed for each unit.
    pub fn unit_max(&self) -> Vec<f64> {
        let mut out = vec![0.0_f64; self.num_units];
        for d in 0..self.num_days {
            for (o, v) in out.iter_mut().zip(self.day(d)) {
                *o = o.max(*v);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("day");
        for u in 1..=self.num_units {
            let _ = write!(s, ",unit_{u}");
        }
        s.push('\n');
        for d in 0..self.num_days {
            let _ = write!(s, "{d}");
            for v in self.day(d) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a `day,unit_1,...,unit_n` CSV. Rows in errors count from 1 for the header.
pub fn load_series(path: &Path) -> Result<RenewableSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, path)
}

pub fn parse_series(text: &str, path: &Path) -> Result<RenewableSeries> {
    let parse_err = |row: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.get(0) != Some("day") || header.len() < 2 {
        return Err(parse_err(
            1,
            "header must be `day,unit_1,...,unit_n`".into(),
        ));
    }
    let num_units = header.len() - 1;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                row,
                format!("expected {} cells, found {}", header.len(), record.len()),
            ));
        }
        for cell in record.iter().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("non-finite cell {cell:?}")));
            }
            if v < 0.0 {
                return Err(parse_err(row, format!("negative value {v}")));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    RenewableSeries::new(num_units, values)
}

/// Shape of the synthetic availability generator. Fractions are relative to a
/// unit's capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfile {
    pub capacity_min: f64,
    pub capacity_max: f64,
    pub base_level: f64,
    pub seasonal_amplitude: f64,
    pub weekly_amplitude: f64,
    pub noise_std: f64,
    pub noise_ar: f64,
    /// Daily probability that a system-wide lull begins.
    pub lull_rate: f64,
    pub lull_min_days: usize,
    pub lull_max_days: usize,
    pub lull_depth: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            capacity_min: 20.0,
            capacity_max: 60.0,
            base_level: 0.55,
            seasonal_amplitude: 0.3,
            weekly_amplitude: 0.05,
            noise_std: 0.12,
            noise_ar: 0.6,
            lull_rate: 0.01,
            lull_min_days: 3,
            lull_max_days: 7,
            lull_depth: 0.6,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.capacity_min > 0.0
            && self.capacity_max >= self.capacity_min
            && self.noise_std >= 0.0
            && (0.0..1.0).contains(&self.noise_ar.abs())
            && (0.0..=1.0).contains(&self.lull_rate)
            && (0.0..=1.0).contains(&self.lull_depth)
            && self.lull_min_days >= 1
            && self.lull_max_days >= self.lull_min_days
            && [
                self.base_level,
                self.seasonal_amplitude,
                self.weekly_amplitude,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "inconsistent synthetic profile {self:?}"
            )))
        }
    }
}

/// Stationary AR(1) noise with lag-1 correlation `phi` and marginal std `std`.
pub fn ar1_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, phi: f64, std: f64) -> Vec<f64> {
    let innovation = std * (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut x: f64 = std * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..len {
        out.push(x);
        x = phi * x + innovation * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Seeded synthetic availability: capacity × (level + seasonal + weekly + noise),
/// damped during shared lulls and clipped to `[0, capacity]`.
pub fn synth_series(
    seed: u64,
    num_units: usize,
    num_days: usize,
    profile: &SynthProfile,
) -> Result<RenewableSeries> {
    if num_days < 200 {
        return Err(Error::invalid(format!(
            "synthetic series needs at least 200 days, got {num_days}"
        )));
    }
    if num_units == 0 {
        return Err(Error::invalid("series needs at least one unit"));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut lull = vec![0.0_f64; num_days];
    let mut d = 0;
    while d < num_days {
        if rng.random::<f64>() < profile.lull_rate {
            let len = rng.random_range(profile.lull_min_days..=profile.lull_max_days);
            for slot in lull.iter_mut().skip(d).take(len) {
                *slot = 1.0;
            }
            d += len;
        } else {
            d += 1;
        }
    }

    let mut values = vec![0.0; num_days * num_units];
    for u in 0..num_units {
        let capacity = rng.random_range(profile.capacity_min..=profile.capacity_max);
        let season_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let week_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let depth = profile.lull_depth * rng.random_range(0.8..=1.0);
        let noise = ar1_noise(&mut rng, num_days, profile.noise_ar, profile.noise_std);
        for d in 0..num_days {
            let t = d as f64;
            let season = profile.seasonal_amplitude
                * (std::f64::consts::TAU * t / 365.25 + season_phase).sin();
            let week =
                profile.weekly_amplitude * (std::f64::consts::TAU * t / 7.0 + week_phase).sin();
            let level = (profile.base_level + season + week + noise[d]) * (1.0 - depth * lull[d]);
            values[d * num_units + u] = capacity * level.clamp(0.0, 1.0);
        }
    }
    RenewableSeries::new(num_units, values)
}

/// Four-dimensional calendar code of a day: annual phase as sin and cos,
/// day-of-month and weekday each scaled to `[-0.5, 0.5]`. Day 0 is 1 January
/// of a 365-day calendar.
pub fn time_code(day: usize) -> [f64; 4] {
    let doy = day % 365;
    let phase = std::f64::consts::TAU * doy as f64 / 365.0;
    let mut rest = doy;
    let mut dom = 0;
    for len in MONTH_LENGTHS {
        if rest < len {
            dom = rest;
            break;
        }
        rest -= len;
    }
    [
        phase.sin(),
        phase.cos(),
        dom as f64 / 30.0 - 0.5,
        (day % 7) as f64 / 6.0 - 0.5,
    ]
}

/// Time codes for `len` consecutive days from `start`, as a `len × 4` tensor.
pub fn time_codes(start: usize, len: usize) -> Tensor {
    let data = (start..start + len).flat_map(time_code).collect();
    Tensor::matrix(len, 4, data).expect("len > 0")
}

/// One supervised forecasting example.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// First day of the encoder history.
    pub start_day: usize,
    pub encoder_input: Tensor,
    /// Suffix of `encoder_input` fed to the decoder.
    pub decoder_known: Tensor,
    pub target: Tensor,
    /// Codes for the encoder days followed by the horizon days.
    pub time_codes: Tensor,
}

impl WindowSample {
    pub fn input_len(&self) -> usize {
        self.encoder_input.rows()
    }

    pub fn horizon(&self) -> usize {
        self.target.rows()
    }

    /// First forecast day.
    pub fn target_day(&self) -> usize {
        self.start_day + self.input_len()
    }

    pub fn build(
        series: &RenewableSeries,
        start_day: usize,
        input_len: usize,
        decoder_len: usize,
        horizon: usize,
    ) -> Result<Self> {
        if decoder_len > input_len || decoder_len == 0 || horizon == 0 {
            return Err(Error::invalid(format!(
                "window lengths input {input_len}, decoder {decoder_len}, horizon {horizon}"
            )));
        }
        Ok(Self {
            start_day,
            encoder_input: series.slice_days(start_day, input_len)?,
            decoder_known: series.slice_days(start_day + input_len - decoder_len, decoder_len)?,
            target: series.slice_days(start_day + input_len, horizon)?,
            time_codes: time_codes(start_day, input_len + horizon),
        })
    }
}

/// Chronological split of all windows of a series.
#[derive(Clone, Debug)]
pub struct WindowSplit {
    /// First day of the test period.
    pub boundary_day: usize,
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Day at which the test period starts: the last 10% of the series.
pub fn split_boundary(num_days: usize) -> usize {
    num_days * 9 / 10
}

/// Start days of every window, split by target span. Train targets end on or
/// before the boundary, test targets start on or after it, windows whose
/// target straddles it are dropped.
pub fn window_starts(
    num_days: usize,
    input_len: usize,
    horizon: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if input_len + horizon > num_days || input_len == 0 || horizon == 0 {
        return Err(Error::invalid(format!(
            "a {num_days}-day series cannot hold a {input_len}+{horizon} day window"
        )));
    }
    let boundary = split_boundary(num_days);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..=num_days - input_len - horizon {
        let target_start = k + input_len;
        if target_start + horizon <= boundary {
            train.push(k);
        } else if target_start >= boundary {
            test.push(k);
        }
    }
    Ok((train, test))
}

/// All windows of the series with the chronological 90/10 split.
pub fn make_windows(
    series: &RenewableSeries,
    input_len: usize,
    decoder_len: usize,
    horizon: usize,
) -> Result<WindowSplit> {
    let (train, test) = window_starts(series.num_days(), input_len, horizon)?;
    let build = |starts: Vec<usize>| -> Result<Vec<WindowSample>> {
        starts
            .into_iter()
            .map(|k| WindowSample::build(series, k, input_len, decoder_len, horizon))
            .collect()
    };
    Ok(WindowSplit {
        boundary_day: split_boundary(series.num_days()),
        train: build(train)?,
        test: build(test)?,
    })
}

/// Every window of the series in time order, ignoring the split.
pub fn all_window_count(num_days: usize, input_len: usize, horizon: usize) -> usize {
    (num_days + 1).saturating_sub(input_len + horizon)
}

/// Per-unit mean and standard deviation over the given days.
pub fn unit_moments(
    series: &RenewableSeries,
    days: std::ops::Range<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let n = series.num_units();
    let count = days.len().max(1) as f64;
    let mut mean = vec![0.0; n];
    for d in days.clone() {
        for (m, v) in mean.iter_mut().zip(series.day(d)) {
            *m += v / count;
        }
    }
    let mut var = vec![0.0; n];
    for d in days {
        for ((s, v), m) in var.iter_mut().zip(series.day(d)).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    let std = var.into_iter().map(|v| v.sqrt().max(1e-6)).collect();
    (mean, std)
}
