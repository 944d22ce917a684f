//! Synthetic data generation: generic robust-regression instances and the
//! GNSS ionosphere world (stations on a triangular mesh, parametric
//! satellite tracks, pierce points on the thin-shell model, per-second
//! double-difference frames with a scheduled corruption ratio).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dataspace::{HeavyTail, NoiseSpec};
use crate::error::{FrrError, Result};
use crate::estimators::DesignMatrix;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const SHELL_HEIGHT_KM: f64 = 350.0;
/// Satellites below this elevation do not form pierce points.
pub const ELEVATION_CUTOFF_RAD: f64 = 15.0 * std::f64::consts::PI / 180.0;
/// Wall-clock budget for fitting and predicting one frame.
pub const FRAME_BUDGET_MILLIS: u64 = 300;

const KM_PER_DEG_LAT: f64 = 111.19;
const REGION_LAT_DEG: f64 = 38.0;
const REGION_LON_DEG: f64 = 14.0;

// ---------------------------------------------------------------------
// Quadruplets

/// One double-difference row: sign pattern (+1, -1, +1, -1) over four
/// distinct pierce-point columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrupletRow {
    pub indices: [usize; 4],
}

impl QuadrupletRow {
    pub const SIGNS: [f64; 4] = [1.0, -1.0, 1.0, -1.0];
}

/// Sparse double-difference design: every row has exactly two +1 and two
/// -1 entries, so constant vectors are annihilated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadrupletMatrix {
    rows: Vec<QuadrupletRow>,
    num_columns: usize,
}

impl QuadrupletMatrix {
    pub fn new(rows: Vec<QuadrupletRow>, num_columns: usize) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            for (k, &i) in row.indices.iter().enumerate() {
                if i >= num_columns {
                    return Err(FrrError::Shape(format!(
                        "quadruplet row {r} references column {i}, matrix has {num_columns}"
                    )));
                }
                if row.indices[..k].contains(&i) {
                    return Err(FrrError::Invalid(format!(
                        "quadruplet row {r} repeats column {i}"
                    )));
                }
            }
        }
        Ok(QuadrupletMatrix { rows, num_columns })
    }

    pub fn rows(&self) -> &[QuadrupletRow] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.num_columns
    }

    /// The equivalent generic design matrix.
    pub fn design(&self) -> DesignMatrix {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.indices
                    .iter()
                    .zip(QuadrupletRow::SIGNS.iter())
                    .map(|(&c, &s)| (c, s))
                    .collect()
            })
            .collect();
        DesignMatrix::new(rows, self.num_columns).expect("validated at construction")
    }

    /// A f for a full field vector f.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.num_columns {
            return Err(FrrError::Shape(format!(
                "field length {} vs {} columns",
                f.len(),
                self.num_columns
            )));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                row.indices
                    .iter()
                    .zip(QuadrupletRow::SIGNS.iter())
                    .map(|(&c, &s)| s * f[c])
                    .sum()
            })
            .collect())
    }
}

// ---------------------------------------------------------------------
// Pierce points and satellite tracks

/// Where a station-satellite ray crosses the thin-shell ionosphere.
/// Featurized as [lat deg, lon deg, zenith rad, azimuth rad].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiercePoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub zenith_rad: f64,
    pub azimuth_rad: f64,
}

impl PiercePoint {
    pub fn new(lat_deg: f64, lon_deg: f64, zenith_rad: f64, azimuth_rad: f64) -> Result<Self> {
        let max_zenith = std::f64::consts::FRAC_PI_2 - ELEVATION_CUTOFF_RAD;
        if !(0.0..=max_zenith).contains(&zenith_rad) {
            return Err(FrrError::Invalid(format!(
                "zenith {zenith_rad} outside [0, {max_zenith}] (elevation cutoff)"
            )));
        }
        if !(0.0..std::f64::consts::TAU).contains(&azimuth_rad) {
            return Err(FrrError::Invalid(format!(
                "azimuth {azimuth_rad} outside [0, 2pi)"
            )));
        }
        Ok(PiercePoint {
            lat_deg,
            lon_deg,
            zenith_rad,
            azimuth_rad,
        })
    }

    pub fn features(&self) -> [f64; 4] {
        [
            self.lat_deg,
            self.lon_deg,
            self.zenith_rad,
            self.azimuth_rad,
        ]
    }
}

/// Thin-shell pierce point for a station looking at (azimuth, elevation).
pub fn pierce_point(
    station_lat_deg: f64,
    station_lon_deg: f64,
    azimuth_rad: f64,
    elevation_rad: f64,
) -> Result<PiercePoint> {
    if elevation_rad <= ELEVATION_CUTOFF_RAD {
        return Err(FrrError::Invalid(format!(
            "elevation {elevation_rad} at or below the cutoff {ELEVATION_CUTOFF_RAD}"
        )));
    }
    let shell_ratio = EARTH_RADIUS_KM / (EARTH_RADIUS_KM + SHELL_HEIGHT_KM);
    let zenith = (shell_ratio * elevation_rad.cos()).asin();
    let psi = std::f64::consts::FRAC_PI_2 - elevation_rad - zenith;
    let lat1 = station_lat_deg.to_radians();
    let lat2 = (lat1.sin() * psi.cos() + lat1.cos() * psi.sin() * azimuth_rad.cos()).asin();
    let dlon =
        (azimuth_rad.sin() * psi.sin() * lat1.cos()).atan2(psi.cos() - lat1.sin() * lat2.sin());
    PiercePoint::new(
        lat2.to_degrees(),
        station_lon_deg + dlon.to_degrees(),
        zenith,
        azimuth_rad.rem_euclid(std::f64::consts::TAU),
    )
}

/// Smooth parametric satellite path in (azimuth, elevation), held above
/// the elevation cutoff by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatTrack {
    pub az0_rad: f64,
    pub az_rate_rad_per_s: f64,
    pub el_mid_rad: f64,
    pub el_amp_rad: f64,
    pub el_period_s: f64,
    pub el_phase_rad: f64,
}

impl SatTrack {
    pub fn azel(&self, t: f64) -> (f64, f64) {
        let az = (self.az0_rad + self.az_rate_rad_per_s * t).rem_euclid(std::f64::consts::TAU);
        let el = self.el_mid_rad
            + self.el_amp_rad
                * (std::f64::consts::TAU * t / self.el_period_s + self.el_phase_rad).sin();
        (az, el)
    }

    /// Conservative bound on the angular speed of the track in rad/s.
    pub fn max_angular_rate(&self) -> f64 {
        self.az_rate_rad_per_s.abs() + self.el_amp_rad * std::f64::consts::TAU / self.el_period_s
    }
}

// ---------------------------------------------------------------------
// Ground-truth field

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub amplitude: f64,
    pub sigma_lat_deg: f64,
    pub sigma_lon_deg: f64,
    pub rotation_rad: f64,
}

/// Ground-truth vTEC field. The bump variant is a smooth sum of
/// anisotropic Gaussian bumps over (lat, lon) scaled by the obliquity
/// factor 1 / cos(zenith); the constant variant ignores geometry and is
/// handy for annihilation checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthField {
    Constant { level: f64 },
    Bumps { base: f64, bumps: Vec<Bump> },
}

impl TruthField {
    pub fn vtec(&self, point: &PiercePoint) -> f64 {
        match self {
            TruthField::Constant { level } => *level,
            TruthField::Bumps { base, bumps } => {
                let mut v = *base;
                for b in bumps {
                    let dlat = point.lat_deg - b.lat_deg;
                    let dlon = point.lon_deg - b.lon_deg;
                    let (s, c) = b.rotation_rad.sin_cos();
                    let u = c * dlat + s * dlon;
                    let w = -s * dlat + c * dlon;
                    v += b.amplitude
                        * (-(u * u / (2.0 * b.sigma_lat_deg * b.sigma_lat_deg)
                            + w * w / (2.0 * b.sigma_lon_deg * b.sigma_lon_deg)))
                            .exp();
                }
                v / point.zenith_rad.cos()
            }
        }
    }
}

fn random_truth_field(rng: &mut ChaCha8Rng) -> TruthField {
    let count = rng.random_range(3..=8);
    let bumps = (0..count)
        .map(|_| Bump {
            lat_deg: REGION_LAT_DEG + rng.random_range(-3.0..5.0),
            lon_deg: REGION_LON_DEG + rng.random_range(-3.0..5.0),
            amplitude: rng.random_range(2.0..10.0),
            sigma_lat_deg: rng.random_range(1.0..4.0),
            sigma_lon_deg: rng.random_range(1.0..4.0),
            rotation_rad: rng.random_range(0.0..std::f64::consts::PI),
        })
        .collect();
    TruthField::Bumps { base: 10.0, bumps }
}

// ---------------------------------------------------------------------
// Scene configuration

/// Per-frame corruption ratio schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSchedule {
    Constant {
        ratio: f64,
    },
    /// Frame t uses ratios[t mod len].
    Cycle {
        ratios: Vec<f64>,
    },
    /// Smooth intra-day curve between min and max.
    Sinusoidal {
        min: f64,
        max: f64,
        period_seconds: f64,
    },
}

/// Daily corruption ratios observed on the ten production days,
/// 19.5% through 38.1%.
pub fn observed_daily_ratios() -> Vec<f64> {
    vec![
        0.195, 0.209, 0.265, 0.228, 0.285, 0.256, 0.317, 0.334, 0.311, 0.381,
    ]
}

impl Default for CorruptionSchedule {
    fn default() -> Self {
        CorruptionSchedule::Cycle {
            ratios: observed_daily_ratios(),
        }
    }
}

impl CorruptionSchedule {
    pub fn ratio_at(&self, t: usize) -> f64 {
        match self {
            CorruptionSchedule::Constant { ratio } => *ratio,
            CorruptionSchedule::Cycle { ratios } => {
                if ratios.is_empty() {
                    0.0
                } else {
                    ratios[t % ratios.len()]
                }
            }
            CorruptionSchedule::Sinusoidal {
                min,
                max,
                period_seconds,
            } => {
                let phase = std::f64::consts::TAU * t as f64 / period_seconds;
                min + (max - min) * 0.5 * (1.0 - phase.cos())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |r: f64| -> Result<()> {
            if (0.0..=1.0).contains(&r) {
                Ok(())
            } else {
                Err(FrrError::Invalid(format!(
                    "corruption ratio {r} outside [0, 1]"
                )))
            }
        };
        match self {
            CorruptionSchedule::Constant { ratio } => check(*ratio),
            CorruptionSchedule::Cycle { ratios } => ratios.iter().try_for_each(|&r| check(r)),
            CorruptionSchedule::Sinusoidal {
                min,
                max,
                period_seconds,
            } => {
                check(*min)?;
                check(*max)?;
                if *period_seconds > 0.0 {
                    Ok(())
                } else {
                    Err(FrrError::Invalid("sinusoidal period must be > 0".into()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub num_stations: usize,
    pub num_satellites: usize,
    pub duration_seconds: usize,
    pub corruption_schedule: CorruptionSchedule,
    pub noise: NoiseSpec,
    /// Ground-truth field; `None` draws a random bump field from the seed.
    pub truth_field: Option<TruthField>,
    pub station_spacing_km: f64,
    pub max_rows_per_frame: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_stations: 17,
            num_satellites: 8,
            duration_seconds: 30,
            corruption_schedule: CorruptionSchedule::default(),
            noise: default_scene_noise(),
            truth_field: None,
            station_spacing_km: 75.0,
            max_rows_per_frame: 2000,
        }
    }
}

/// Clean noise sigma 0.05 TECU bounded at 0.2; corruption is a standard
/// Cauchy scaled to 20x the clean sigma.
pub fn default_scene_noise() -> NoiseSpec {
    NoiseSpec::new(0.05, 0.2, HeavyTail::Cauchy { scale: 1.0 }).expect("valid defaults")
}

// ---------------------------------------------------------------------
// Scene

/// One second of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: usize,
    pub points: Vec<PiercePoint>,
    pub point_station: Vec<usize>,
    pub point_satellite: Vec<usize>,
    pub quadruplets: QuadrupletMatrix,
    /// Noise-free double differences.
    pub truth: Vec<f64>,
    /// Truth plus bounded clean noise, every row.
    pub y_clean: Vec<f64>,
    /// y_clean with flagged rows replaced by truth plus heavy-tailed noise.
    pub y_observed: Vec<f64>,
    pub flags: Vec<bool>,
    /// The heavy-tailed draw per flagged row (0 elsewhere); ground truth
    /// for test oracles, never read by estimators.
    pub corruption_noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub seed: u64,
    pub stations: Vec<(f64, f64)>,
    pub satellites: Vec<SatTrack>,
    pub truth_field: TruthField,
    pub frames: Vec<Frame>,
}

/// Frames in time order. Each frame must be processed within
/// [`FRAME_BUDGET_MILLIS`] by a real-time consumer.
pub fn frame_stream(scene: &Scene) -> impl Iterator<Item = &Frame> {
    scene.frames.iter()
}

fn station_lattice(n: usize, spacing_km: f64) -> Vec<(f64, f64)> {
    let dlat = spacing_km / KM_PER_DEG_LAT;
    let width = (n as f64).sqrt().ceil() as usize;
    let mut out = Vec::with_capacity(n);
    let mut row = 0usize;
    while out.len() < n {
        let lat = REGION_LAT_DEG + row as f64 * dlat * 3f64.sqrt() / 2.0;
        let dlon = spacing_km / (KM_PER_DEG_LAT * lat.to_radians().cos());
        let offset = if row % 2 == 1 { 0.5 } else { 0.0 };
        for i in 0..width {
            if out.len() < n {
                out.push((lat, REGION_LON_DEG + (i as f64 + offset) * dlon));
            }
        }
        row += 1;
    }
    out
}

fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

pub(crate) fn sample_heavy_tail(tail: &HeavyTail, rng: &mut ChaCha8Rng) -> f64 {
    match *tail {
        HeavyTail::Cauchy { scale } => {
            if scale == 0.0 {
                0.0
            } else {
                // inverse-CDF draw keeps the zero-scale case trivial
                let u: f64 = rng.random::<f64>() - 0.5;
                scale * (std::f64::consts::PI * u).tan()
            }
        }
        HeavyTail::StudentT { dof, scale } => {
            if scale == 0.0 {
                0.0
            } else {
                scale * StudentT::new(dof).expect("validated dof").sample(rng)
            }
        }
        HeavyTail::GaussMixture { p, scale1, scale2 } => {
            let scale = if rng.random::<f64>() < p {
                scale1
            } else {
                scale2
            };
            if scale == 0.0 {
                0.0
            } else {
                Normal::new(0.0, scale)
                    .expect("validated scale")
                    .sample(rng)
            }
        }
    }
}

fn sample_clean_noise(sigma: f64, bound: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    loop {
        let v = normal.sample(rng);
        if v.abs() <= bound {
            return v;
        }
    }
}

/// Builds the full synthetic world deterministically from (config, seed).
pub fn gen_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    if config.num_stations < 5 {
        return Err(FrrError::Scene(format!(
            "need at least 5 stations (quadruplets plus a held-out one), got {}",
            config.num_stations
        )));
    }
    if config.num_satellites < 2 {
        return Err(FrrError::Scene(
            "need at least 2 satellites to form double differences".into(),
        ));
    }
    if config.duration_seconds == 0 {
        return Err(FrrError::Scene(
            "duration must be at least one second".into(),
        ));
    }
    config.corruption_schedule.validate()?;
    if config.noise.clean_sigma > 0.0 && config.noise.clean_bound < config.noise.clean_sigma / 10.0
    {
        return Err(FrrError::Invalid(
            "pathological truncation: clean bound far below sigma".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = station_lattice(config.num_stations, config.station_spacing_km);
    let truth_field = match &config.truth_field {
        Some(f) => f.clone(),
        None => random_truth_field(&mut rng),
    };

    let satellites: Vec<SatTrack> = (0..config.num_satellites)
        .map(|k| {
            let el_mid: f64 = rng.random_range(0.61..1.13); // 35..65 degrees
            let amp_cap = (el_mid - 0.35).min(1.40 - el_mid);
            SatTrack {
                az0_rad: std::f64::consts::TAU * k as f64 / config.num_satellites as f64
                    + rng.random_range(-0.2..0.2),
                az_rate_rad_per_s: rng.random_range(5e-4..2e-3)
                    * if rng.random::<bool>() { 1.0 } else { -1.0 },
                el_mid_rad: el_mid,
                el_amp_rad: rng.random_range(0.08..amp_cap),
                el_period_s: rng.random_range(600.0..1800.0),
                el_phase_rad: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    // mesh edges: station pairs within 1.3x the lattice spacing
    let mut edges = Vec::new();
    for a in 0..stations.len() {
        for b in (a + 1)..stations.len() {
            if haversine_km(stations[a], stations[b]) <= 1.3 * config.station_spacing_km {
                edges.push((a, b));
            }
        }
    }
    if edges.is_empty() {
        return Err(FrrError::Scene("no station pairs within mesh range".into()));
    }
    let mut sat_pairs = Vec::new();
    for p in 0..satellites.len() {
        for q in (p + 1)..satellites.len() {
            sat_pairs.push((p, q));
        }
    }

    let mut frames = Vec::with_capacity(config.duration_seconds);
    for t in 0..config.duration_seconds {
        let mut points = Vec::new();
        let mut point_station = Vec::new();
        let mut point_satellite = Vec::new();
        let mut index = vec![vec![None; satellites.len()]; stations.len()];
        for (s, &(lat, lon)) in stations.iter().enumerate() {
            for (k, track) in satellites.iter().enumerate() {
                let (az, el) = track.azel(t as f64);
                if el <= ELEVATION_CUTOFF_RAD {
                    continue;
                }
                let pp = pierce_point(lat, lon, az, el)?;
                index[s][k] = Some(points.len());
                points.push(pp);
                point_station.push(s);
                point_satellite.push(k);
            }
        }

        let mut rows = Vec::new();
        'outer: for &(a, b) in &edges {
            for &(p, q) in &sat_pairs {
                if rows.len() >= config.max_rows_per_frame {
                    break 'outer;
                }
                if let (Some(ap), Some(aq), Some(bq), Some(bp)) =
                    (index[a][p], index[a][q], index[b][q], index[b][p])
                {
                    // (f_ap - f_aq) - (f_bp - f_bq) with signs (+,-,+,-)
                    rows.push(QuadrupletRow {
                        indices: [ap, aq, bq, bp],
                    });
                }
            }
        }
        if rows.is_empty() {
            return Err(FrrError::Scene(format!(
                "frame {t} has no visible satellite pairs"
            )));
        }
        let quadruplets = QuadrupletMatrix::new(rows, points.len())?;

        let field: Vec<f64> = points.iter().map(|p| truth_field.vtec(p)).collect();
        let truth = quadruplets.apply(&field)?;
        let y_clean: Vec<f64> = truth
            .iter()
            .map(|v| {
                v + sample_clean_noise(config.noise.clean_sigma, config.noise.clean_bound, &mut rng)
            })
            .collect();

        let ratio = config.corruption_schedule.ratio_at(t);
        let n_rows = quadruplets.num_rows();
        let corrupt_count = (ratio * n_rows as f64).round() as usize;
        let mut order: Vec<usize> = (0..n_rows).collect();
        for i in 0..corrupt_count.min(n_rows) {
            let j = rng.random_range(i..n_rows);
            order.swap(i, j);
        }
        let mut flags = vec![false; n_rows];
        for &i in order.iter().take(corrupt_count) {
            flags[i] = true;
        }
        let mut y_observed = y_clean.clone();
        let mut corruption_noise = vec![0.0; n_rows];
        for i in 0..n_rows {
            if flags[i] {
                let xi = sample_heavy_tail(&config.noise.heavy_tail, &mut rng);
                corruption_noise[i] = xi;
                y_observed[i] = truth[i] + xi;
            }
        }

        frames.push(Frame {
            t,
            points,
            point_station,
            point_satellite,
            quadruplets,
            truth,
            y_clean,
            y_observed,
            flags,
            corruption_noise,
        });
    }

    Ok(Scene {
        config: config.clone(),
        seed,
        stations,
        satellites,
        truth_field,
        frames,
    })
}

// ---------------------------------------------------------------------
// Holdout split

/// Re-indexed per-frame view over a subset of rows and the pierce points
/// they reference.
#[derive(Debug, Clone)]
pub struct FrameView {
    pub t: usize,
    pub point_features: Vec<[f64; 4]>,
    pub design: DesignMatrix,
    pub y: Vec<f64>,
    pub truth: Vec<f64>,
    pub flags: Vec<bool>,
    /// Row indices into the original frame, for coverage checks.
    pub source_rows: Vec<usize>,
}

/// A sequence of frame views with an access counter, so train/test
/// separation can be audited: reading the frames bumps the counter.
#[derive(Debug)]
pub struct SceneView {
    frames: Vec<FrameView>,
    reads: AtomicUsize,
}

impl SceneView {
    pub fn frames(&self) -> &[FrameView] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

pub struct HoldoutSplit {
    pub train: SceneView,
    pub test: SceneView,
}

fn build_view(
    frame: &Frame,
    keep_rows: Vec<usize>,
    allowed_points: impl Fn(usize) -> bool,
) -> Result<FrameView> {
    let mut point_map = vec![usize::MAX; frame.points.len()];
    let mut point_features = Vec::new();
    let mut rows = Vec::new();
    for &r in &keep_rows {
        let quad = &frame.quadruplets.rows()[r];
        let mut mapped = [0usize; 4];
        for (k, &c) in quad.indices.iter().enumerate() {
            if !allowed_points(c) {
                return Err(FrrError::Invalid(format!(
                    "row {r} references a pierce point excluded from this view"
                )));
            }
            if point_map[c] == usize::MAX {
                point_map[c] = point_features.len();
                point_features.push(frame.points[c].features());
            }
            mapped[k] = point_map[c];
        }
        rows.push(QuadrupletRow { indices: mapped });
    }
    let design = QuadrupletMatrix::new(rows, point_features.len())?.design();
    Ok(FrameView {
        t: frame.t,
        point_features,
        design,
        y: keep_rows.iter().map(|&r| frame.y_observed[r]).collect(),
        truth: keep_rows.iter().map(|&r| frame.truth[r]).collect(),
        flags: keep_rows.iter().map(|&r| frame.flags[r]).collect(),
        source_rows: keep_rows,
    })
}

/// Splits every frame into a training view (no quadruplet touches the
/// test station) and a test view (exactly the quadruplets that do).
pub fn holdout_split(scene: &Scene, test_station: usize) -> Result<HoldoutSplit> {
    if test_station >= scene.stations.len() {
        return Err(FrrError::Invalid(format!(
            "test station {test_station} out of range for {} stations",
            scene.stations.len()
        )));
    }
    let mut train_frames = Vec::with_capacity(scene.frames.len());
    let mut test_frames = Vec::with_capacity(scene.frames.len());
    for frame in &scene.frames {
        let touches_test = |row: &QuadrupletRow| {
            row.indices
                .iter()
                .any(|&c| frame.point_station[c] == test_station)
        };
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        for (r, row) in frame.quadruplets.rows().iter().enumerate() {
            if touches_test(row) {
                test_rows.push(r);
            } else {
                train_rows.push(r);
            }
        }
        train_frames.push(build_view(frame, train_rows, |c| {
            frame.point_station[c] != test_station
        })?);
        test_frames.push(build_view(frame, test_rows, |_| true)?);
    }
    Ok(HoldoutSplit {
        train: SceneView {
            frames: train_frames,
            reads: AtomicUsize::new(0),
        },
        test: SceneView {
            frames: test_frames,
            reads: AtomicUsize::new(0),
        },
    })
}

// ---------------------------------------------------------------------
// Scene file format (JSON lines)

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    config: SceneConfig,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    points: Vec<[f64; 4]>,
    rows: Vec<[usize; 4]>,
    y: Vec<f64>,
    flags: Vec<u8>,
}

impl FrameRecord {
    fn of(frame: &Frame) -> Self {
        FrameRecord {
            t: frame.t,
            points: frame.points.iter().map(|p| p.features()).collect(),
            rows: frame.quadruplets.rows().iter().map(|r| r.indices).collect(),
            y: frame.y_observed.clone(),
            flags: frame.flags.iter().map(|&f| u8::from(f)).collect(),
        }
    }
}

/// Writes the scene as JSON lines: one header record with (config, seed),
/// then one record per frame.
pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = SceneHeader {
        config: scene.config.clone(),
        seed: scene.seed,
    };
    writeln!(out, "{}", serde_json::to_string(&header).map_err(io_err)?)?;
    for frame in &scene.frames {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&FrameRecord::of(frame)).map_err(io_err)?
        )?;
    }
    out.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> FrrError {
    FrrError::Invalid(format!("json: {e}"))
}

/// Loads a scene file by regenerating from its header (config, seed) and
/// cross-checking every stored frame record against the regeneration, so
/// edited or corrupted files are rejected.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let reader = BufReader::new(File::open(&path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(FrrError::Parse {
        line: 1,
        message: "empty scene file".into(),
    })??;
    let header: SceneHeader = serde_json::from_str(&header_line).map_err(|e| FrrError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    let scene = gen_scene(&header.config, header.seed)?;

    let mut count = 0usize;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| FrrError::Parse {
            line: line_no,
            message: format!("bad frame: {e}"),
        })?;
        let frame = scene.frames.get(count).ok_or_else(|| FrrError::Parse {
            line: line_no,
            message: "more frames than the header's duration".into(),
        })?;
        let expected = FrameRecord::of(frame);
        let matches = record.t == expected.t
            && record.points == expected.points
            && record.rows == expected.rows
            && record.y == expected.y
            && record.flags == expected.flags;
        if !matches {
            return Err(FrrError::Parse {
                line: line_no,
                message: "frame does not match regeneration from header config/seed".into(),
            });
        }
        count += 1;
    }
    if count != scene.frames.len() {
        return Err(FrrError::Parse {
            line: count + 2,
            message: format!("expected {} frames, found {count}", scene.frames.len()),
        });
    }
    Ok(scene)
}

// ---------------------------------------------------------------------
// Generic synthetic regression instances

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// i.i.d. +-1 coordinates: E x x' = I exactly, ||x|| = sqrt(d).
    Rademacher,
    /// Standard normal coordinates, resampled until ||x|| <= 3 sqrt(d).
    TruncatedGaussian,
}

/// Draws an n-by-d design matrix with standardized rows.
pub fn sample_design(n: usize, d: usize, kind: DesignKind, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm_cap = 3.0 * (d as f64).sqrt();
    (0..n)
        .map(|_| match kind {
            DesignKind::Rademacher => (0..d)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
            DesignKind::TruncatedGaussian => loop {
                let row: Vec<f64> = (0..d)
                    .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                    .collect();
                let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= norm_cap {
                    break row;
                }
            },
        })
        .collect()
}

/// Labels y = <w*, x> + xi with bounded sub-gaussian noise.
pub fn gen_clean_labels(
    design: &[Vec<f64>],
    w_star: &[f64],
    spec: &NoiseSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    if spec.clean_sigma > 0.0 && spec.clean_bound < spec.clean_sigma / 10.0 {
        return Err(FrrError::Invalid(format!(
            "pathological truncation: bound {} below sigma/10 = {}",
            spec.clean_bound,
            spec.clean_sigma / 10.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(design
        .iter()
        .map(|x| {
            let base: f64 = x.iter().zip(w_star).map(|(a, b)| a * b).sum();
            base + sample_clean_noise(spec.clean_sigma, spec.clean_bound, &mut rng)
        })
        .collect())
}

/// Labels corrupted by symmetric heavy-tailed noise, plus the true noise
/// vector for test oracles (never fed to estimators).
pub struct NoisyLabels {
    pub labels: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn gen_noisy_labels(
    design: &[Vec<f64>],
    w_star: &[f64],
    spec: &NoiseSpec,
    seed: u64,
) -> NoisyLabels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = design
        .iter()
        .map(|_| sample_heavy_tail(&spec.heavy_tail, &mut rng))
        .collect();
    let labels = design
        .iter()
        .zip(&noise)
        .map(|(x, xi)| x.iter().zip(w_star).map(|(a, b)| a * b).sum::<f64>() + xi)
        .collect();
    NoisyLabels { labels, noise }
}
