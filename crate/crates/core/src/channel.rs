//! Network scenarios and the received-power map.
//!
//! Received power follows `Q = P * H * A`: per-PRB transmit power `P`, a
//! Rayleigh power gain `H` (the squared envelope of a unit-variance circular
//! complex Gaussian, hence exponential with unit mean), and the urban macro
//! path loss `128 + 37.6 log10(d / 1 km)` dB. Noise integrates a power
//! spectral density over one PRB. Everything downstream works in watts.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::medrecords::CurrentState;
use crate::risk::{self, RiskConfig, RiskProfile};
use crate::seed;

pub const POWERMAP_HEADER: &str = "user,prb,bs,power_watts";

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("bandwidth must be positive, got {0} Hz")]
    NonPositiveBandwidth(f64),
    #[error("infeasible scenario: {users} users but only {slots} PRB slots")]
    Infeasible { users: usize, slots: usize },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("power map: {0}")]
    PowerMap(String),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Risk(#[from] risk::RiskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_bs: usize,
    pub prbs_per_bs: usize,
    pub num_users: usize,
    pub num_normal: usize,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub tx_power_per_prb_dbm: f64,
    pub max_power_per_connection_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub prb_bandwidth_hz: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// The 1.4 MHz baseline: 2 BSs, 5 PRBs each, 7 normal users and 3 OPs.
    fn default() -> Self {
        Self {
            num_bs: 2,
            prbs_per_bs: 5,
            num_users: 10,
            num_normal: 7,
            distance_min_m: 300.0,
            distance_max_m: 600.0,
            tx_power_per_prb_dbm: 17.0,
            max_power_per_connection_dbm: 23.0,
            noise_density_dbm_hz: -162.0,
            prb_bandwidth_hz: 180_000.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn num_slots(&self) -> usize {
        self.num_bs * self.prbs_per_bs
    }

    pub fn num_outpatients(&self) -> usize {
        self.num_users - self.num_normal
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.num_bs == 0 || self.prbs_per_bs == 0 || self.num_users == 0 {
            return Err(ChannelError::Invalid(
                "base stations, PRBs and users must all be non-zero".into(),
            ));
        }
        if self.num_users > self.num_slots() {
            return Err(ChannelError::Infeasible {
                users: self.num_users,
                slots: self.num_slots(),
            });
        }
        if self.num_normal > self.num_users {
            return Err(ChannelError::Invalid(format!(
                "num_normal ({}) exceeds num_users ({})",
                self.num_normal, self.num_users
            )));
        }
        if !(self.distance_min_m > 0.0 && self.distance_min_m <= self.distance_max_m) {
            return Err(ChannelError::Invalid(format!(
                "distance range [{}, {}] m is empty or non-positive",
                self.distance_min_m, self.distance_max_m
            )));
        }
        if self.prb_bandwidth_hz <= 0.0 {
            return Err(ChannelError::NonPositiveBandwidth(self.prb_bandwidth_hz));
        }
        Ok(())
    }

    pub fn noise_w(&self) -> Result<f64, ChannelError> {
        noise_power_w(self.noise_density_dbm_hz, self.prb_bandwidth_hz)
    }

    /// Number of PRBs the per-connection power cap admits.
    pub fn max_prbs_per_connection(&self) -> usize {
        let ratio = dbm_to_mw(self.max_power_per_connection_dbm) / dbm_to_mw(self.tx_power_per_prb_dbm);
        // Tolerate 23 - 17 dBm style round-off just below an integer.
        (ratio + 1e-9).floor() as usize
    }
}

pub fn path_loss_db(distance_m: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    Ok(128.0 + 37.6 * (distance_m / 1000.0).log10())
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn noise_power_w(density_dbm_hz: f64, bandwidth_hz: f64) -> Result<f64, ChannelError> {
    if !(bandwidth_hz > 0.0) {
        return Err(ChannelError::NonPositiveBandwidth(bandwidth_hz));
    }
    Ok(dbm_to_mw(density_dbm_hz + 10.0 * bandwidth_hz.log10()) / 1000.0)
}

/// Rayleigh power gain: `|h|^2` with `h` circular complex Gaussian, `E|h|^2 = 1`.
pub fn draw_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    0.5 * (re * re + im * im)
}

pub fn received_power_w(tx_power_dbm: f64, fading_gain: f64, path_loss_db: f64) -> f64 {
    dbm_to_mw(tx_power_dbm) * fading_gain * 10f64.powf(-path_loss_db / 10.0) / 1000.0
}

/// Received power for every (user, PRB, base station) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    num_users: usize,
    prbs_per_bs: usize,
    num_bs: usize,
    q: Vec<f64>,
    pub noise_w: f64,
}

impl PowerMap {
    /// `q` is laid out user-major, then PRB, then base station.
    pub fn new(
        num_users: usize,
        prbs_per_bs: usize,
        num_bs: usize,
        q: Vec<f64>,
        noise_w: f64,
    ) -> Result<Self, ChannelError> {
        if q.len() != num_users * prbs_per_bs * num_bs {
            return Err(ChannelError::PowerMap(format!(
                "expected {} entries, got {}",
                num_users * prbs_per_bs * num_bs,
                q.len()
            )));
        }
        if !(noise_w > 0.0) {
            return Err(ChannelError::PowerMap(format!("noise must be positive, got {noise_w}")));
        }
        if let Some(bad) = q.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(ChannelError::PowerMap(format!("invalid received power {bad}")));
        }
        Ok(Self {
            num_users,
            prbs_per_bs,
            num_bs,
            q,
            noise_w,
        })
    }

    /// Builds a map from a closure over `(user, prb, bs)`.
    pub fn from_fn(
        num_users: usize,
        prbs_per_bs: usize,
        num_bs: usize,
        noise_w: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, ChannelError> {
        let mut q = Vec::with_capacity(num_users * prbs_per_bs * num_bs);
        for k in 0..num_users {
            for n in 0..prbs_per_bs {
                for b in 0..num_bs {
                    q.push(f(k, n, b));
                }
            }
        }
        Self::new(num_users, prbs_per_bs, num_bs, q, noise_w)
    }

    #[inline]
    pub fn q(&self, user: usize, prb: usize, bs: usize) -> f64 {
        self.q[(user * self.prbs_per_bs + prb) * self.num_bs + bs]
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn prbs_per_bs(&self) -> usize {
        self.prbs_per_bs
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    /// Copy with every power and the noise multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: self.q.iter().map(|v| v * factor).collect(),
            noise_w: self.noise_w * factor,
            ..self.clone()
        }
    }

    /// CSV with 1-based indices and 17 significant digits, which round-trips
    /// every `f64` exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.q.len() * 40);
        out.push_str(POWERMAP_HEADER);
        out.push('\n');
        for k in 0..self.num_users {
            for n in 0..self.prbs_per_bs {
                for b in 0..self.num_bs {
                    let _ = writeln!(out, "{},{},{},{:.16e}", k + 1, n + 1, b + 1, self.q(k, n, b));
                }
            }
        }
        out
    }

    /// Reads a power-map CSV. Dimensions come from the largest indices seen
    /// and every triple must appear exactly once.
    pub fn read_csv<R: Read>(reader: R, noise_w: f64) -> Result<Self, ChannelError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header_ok = rdr
            .headers()
            .map(|h| h.iter().map(str::trim).collect::<Vec<_>>() == ["user", "prb", "bs", "power_watts"])
            .unwrap_or(false);
        if !header_ok {
            return Err(ChannelError::PowerMap(format!("expected header `{POWERMAP_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| ChannelError::PowerMap(format!("line {line}: {e}")))?;
            let idx = |j: usize| -> Result<usize, ChannelError> {
                rec.get(j)
                    .and_then(|s| s.trim().parse::<usize>().ok())
                    .filter(|v| *v >= 1)
                    .ok_or_else(|| ChannelError::PowerMap(format!("line {line}: bad index")))
            };
            let p: f64 = rec
                .get(3)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ChannelError::PowerMap(format!("line {line}: bad power")))?;
            rows.push((idx(0)? - 1, idx(1)? - 1, idx(2)? - 1, p));
        }
        let k = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let b = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
        if rows.len() != k * n * b || k == 0 {
            return Err(ChannelError::PowerMap(format!(
                "expected {} rows for {k} users x {n} PRBs x {b} BSs, got {}",
                k * n * b,
                rows.len()
            )));
        }
        let mut q = vec![f64::NAN; k * n * b];
        for (u, prb, bs, p) in rows {
            let slot = &mut q[(u * n + prb) * b + bs];
            if !slot.is_nan() {
                return Err(ChannelError::PowerMap(format!(
                    "duplicate entry for user {} prb {} bs {}",
                    u + 1,
                    prb + 1,
                    bs + 1
                )));
            }
            *slot = p;
        }
        Self::new(k, n, b, q, noise_w)
    }

    pub fn load_csv(path: &Path, noise_w: f64) -> Result<Self, ChannelError> {
        let f = std::fs::File::open(path).map_err(|e| ChannelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::read_csv(std::io::BufReader::new(f), noise_w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Metres, indexed `[user][bs]`.
    pub distances: Vec<Vec<f64>>,
    pub risk_profiles: Vec<RiskProfile>,
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.config.num_users
    }

    pub fn is_outpatient(&self, user: usize) -> bool {
        self.risk_profiles
            .get(user)
            .map(|p| p.is_outpatient)
            .unwrap_or(user >= self.config.num_normal)
    }

    pub fn outpatients(&self) -> Vec<usize> {
        (0..self.num_users()).filter(|&k| self.is_outpatient(k)).collect()
    }

    pub fn normal_users(&self) -> Vec<usize> {
        (0..self.num_users()).filter(|&k| !self.is_outpatient(k)).collect()
    }

    /// Recomputes the risk profiles for the given outpatient stroke
    /// probabilities (one per OP, in user order).
    pub fn with_risk(mut self, op_ps: &[f64], config: &RiskConfig) -> Result<Self, ChannelError> {
        if op_ps.len() != self.config.num_outpatients() {
            return Err(ChannelError::Invalid(format!(
                "{} outpatients but {} stroke probabilities",
                self.config.num_outpatients(),
                op_ps.len()
            )));
        }
        self.risk_profiles = risk::build_profiles(self.config.num_users, op_ps, config)?;
        Ok(self)
    }
}

/// Per-triple fading draws, same layout as [`PowerMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct FadingMap {
    pub gains: Vec<f64>,
}

/// One channel realization: distances, fading and the resulting powers.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub scenario: Scenario,
    pub fading: FadingMap,
    pub power: PowerMap,
}

fn default_profiles(config: &ScenarioConfig) -> Vec<RiskProfile> {
    (0..config.num_users)
        .map(|k| RiskProfile {
            user_id: k,
            is_outpatient: k >= config.num_normal,
            ps: 0.0,
            up: 1.0,
        })
        .collect()
}

pub fn generate_scenario(config: &ScenarioConfig) -> Result<Realization, ChannelError> {
    generate_with_distances(config, None)
}

/// Draws a realization from `config.seed`. Distances are drawn first (user
/// major, one per base station), then fading (user, PRB, BS). Explicit
/// distances replace the distance draws but leave the fading stream unchanged.
pub fn generate_with_distances(
    config: &ScenarioConfig,
    distances: Option<&[Vec<f64>]>,
) -> Result<Realization, ChannelError> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let (k_n, n_n, b_n) = (config.num_users, config.prbs_per_bs, config.num_bs);

    let mut drawn: Vec<Vec<f64>> = (0..k_n)
        .map(|_| {
            (0..b_n)
                .map(|_| rng.random_range(config.distance_min_m..=config.distance_max_m))
                .collect()
        })
        .collect();
    if let Some(explicit) = distances {
        if explicit.len() != k_n || explicit.iter().any(|row| row.len() != b_n) {
            return Err(ChannelError::Invalid(format!(
                "explicit distances must be {k_n} rows of {b_n}"
            )));
        }
        if let Some(bad) = explicit
            .iter()
            .flatten()
            .find(|d| !(config.distance_min_m..=config.distance_max_m).contains(*d))
        {
            return Err(ChannelError::Invalid(format!(
                "distance {bad} m outside [{}, {}]",
                config.distance_min_m, config.distance_max_m
            )));
        }
        drawn = explicit.to_vec();
    }

    let mut loss = vec![0.0; k_n * b_n];
    for k in 0..k_n {
        for b in 0..b_n {
            loss[k * b_n + b] = path_loss_db(drawn[k][b])?;
        }
    }
    let gains: Vec<f64> = (0..k_n * n_n * b_n).map(|_| draw_fading(&mut rng)).collect();
    let power = PowerMap::from_fn(k_n, n_n, b_n, config.noise_w()?, |k, n, b| {
        received_power_w(
            config.tx_power_per_prb_dbm,
            gains[(k * n_n + n) * b_n + b],
            loss[k * b_n + b],
        )
    })?;

    Ok(Realization {
        scenario: Scenario {
            config: config.clone(),
            distances: drawn,
            risk_profiles: default_profiles(config),
        },
        fading: FadingMap { gains },
        power,
    })
}

/// Current-state entry for one outpatient in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpStateEntry {
    pub patient_id: String,
    pub levels: Vec<String>,
}

impl OpStateEntry {
    pub fn state(&self) -> Result<CurrentState, crate::medrecords::RecordsError> {
        CurrentState::from_tokens(&self.levels)
    }
}

/// JSON scenario file: the config fields at top level plus optional
/// outpatient data and explicit distances.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub config: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub current_states: Vec<OpStateEntry>,
    /// Stroke probabilities injected directly, one per outpatient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op_ps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<Vec<f64>>>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ChannelError> {
        let file: Self = serde_json::from_str(text)?;
        file.config.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ChannelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ChannelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn generate(&self) -> Result<Realization, ChannelError> {
        generate_with_distances(&self.config, self.distances.as_deref())
    }
}
