//! Client availability: per-round active probabilities and the active set
//! drawn from them.
//!
//! | mode | active rate of client `k` at round `t` |
//! |------|-----------------------------------------|
//! | IDL  | `1` |
//! | MDF  | `n_k^b / max_i n_i^b` |
//! | LDF  | `n_k^-b / max_i n_i^-b` |
//! | YMF  | `b * min(labels_k) / max label over all clients + (1 - b)` |
//! | YC   | `b * 1[phase(t) falls in the bin of some label of k] + (1 - b)` |
//! | LN   | `c_k / max_i c_i`, `c_k ~ lognormal(0, ln(1 / (1 - b)))` |
//! | SLN  | LN rate times `0.4 sin(2 pi phase(t)) + 0.5` |
//!
//! with `phase(t) = (1 + t mod T_p) / T_p` and label bins
//! `[y / num_Y, (y + 1) / num_Y)`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{seeded_rng, ClientProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AvailabilityMode {
    Idl,
    Mdf,
    Ldf,
    Ymf,
    Yc,
    Ln,
    Sln,
}

impl AvailabilityMode {
    pub const ALL: [AvailabilityMode; 7] = [
        AvailabilityMode::Idl,
        AvailabilityMode::Mdf,
        AvailabilityMode::Ldf,
        AvailabilityMode::Ymf,
        AvailabilityMode::Yc,
        AvailabilityMode::Ln,
        AvailabilityMode::Sln,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AvailabilityMode::Idl => "IDL",
            AvailabilityMode::Mdf => "MDF",
            AvailabilityMode::Ldf => "LDF",
            AvailabilityMode::Ymf => "YMF",
            AvailabilityMode::Yc => "YC",
            AvailabilityMode::Ln => "LN",
            AvailabilityMode::Sln => "SLN",
        }
    }

    fn needs_labels(self) -> bool {
        matches!(self, AvailabilityMode::Ymf | AvailabilityMode::Yc)
    }

    fn is_lognormal(self) -> bool {
        matches!(self, AvailabilityMode::Ln | AvailabilityMode::Sln)
    }
}

impl fmt::Display for AvailabilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AvailabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AvailabilityMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown availability mode `{s}`")))
    }
}

/// How `ln(1 / (1 - b))` parameterises the lognormal draws of LN and SLN.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LognormalScale {
    /// The value is the standard deviation of the underlying normal.
    #[default]
    StdDev,
    /// The value is the variance of the underlying normal.
    Variance,
}

pub const DEFAULT_PERIOD: usize = 40;

/// Configuration of an availability model, independent of the clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilitySpec {
    pub mode: AvailabilityMode,
    pub beta: f64,
    pub period: usize,
    /// Number of label values for YC; defaults to the class count.
    pub num_labels: Option<usize>,
    pub lognormal_scale: LognormalScale,
}

impl AvailabilitySpec {
    pub fn new(mode: AvailabilityMode, beta: f64) -> Self {
        AvailabilitySpec {
            mode,
            beta,
            period: DEFAULT_PERIOD,
            num_labels: None,
            lognormal_scale: LognormalScale::StdDev,
        }
    }

    pub fn ideal() -> Self {
        Self::new(AvailabilityMode::Idl, 0.0)
    }

    pub fn with_period(mut self, period: usize) -> Self {
        self.period = period;
        self
    }

    pub fn with_num_labels(mut self, num_labels: usize) -> Self {
        self.num_labels = Some(num_labels);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(
                "availability.beta",
                format!("must lie in [0, 1], got {}", self.beta),
            ));
        }
        if self.mode.is_lognormal() && self.beta >= 1.0 {
            return Err(Error::config(
                "availability.beta",
                format!("{} needs beta < 1", self.mode),
            ));
        }
        if self.period == 0 {
            return Err(Error::config("availability.period", "must be at least 1"));
        }
        if self.num_labels == Some(0) {
            return Err(Error::config("availability.num_labels", "must be at least 1"));
        }
        Ok(())
    }
}

/// An availability model bound to a client population.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityModel {
    spec: AvailabilitySpec,
    seed: u64,
    /// Time-independent factor of each client's rate.
    base: Vec<f64>,
    labels: Vec<Vec<usize>>,
    num_labels: usize,
}

impl AvailabilityModel {
    /// `num_classes` is the default label count for YC.
    pub fn new(
        spec: AvailabilitySpec,
        profiles: &[ClientProfile],
        num_classes: usize,
        availability_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if profiles.is_empty() {
            return Err(Error::invalid("no clients"));
        }
        if spec.mode.needs_labels() {
            if let Some(p) = profiles.iter().find(|p| p.labels.is_empty()) {
                return Err(Error::invalid(format!(
                    "{} needs labels but client {} has none",
                    spec.mode, p.id
                )));
            }
        }
        let beta = spec.beta;
        let relative = |v: Vec<f64>| -> Vec<f64> {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.into_iter().map(|x| x / max).collect()
        };
        let base = match spec.mode {
            AvailabilityMode::Idl | AvailabilityMode::Yc => vec![1.0; profiles.len()],
            AvailabilityMode::Mdf => {
                relative(profiles.iter().map(|p| (p.num_examples as f64).powf(beta)).collect())
            }
            AvailabilityMode::Ldf => {
                relative(profiles.iter().map(|p| (p.num_examples as f64).powf(-beta)).collect())
            }
            AvailabilityMode::Ymf => {
                let max_label = profiles
                    .iter()
                    .filter_map(|p| p.labels.iter().next_back())
                    .copied()
                    .max()
                    .unwrap_or(0);
                profiles
                    .iter()
                    .map(|p| {
                        let min_label = *p.labels.iter().next().expect("labels checked");
                        // every client owns only label 0: treat the ratio as 1
                        let ratio = if max_label == 0 {
                            1.0
                        } else {
                            min_label as f64 / max_label as f64
                        };
                        beta * ratio + (1.0 - beta)
                    })
                    .collect()
            }
            AvailabilityMode::Ln | AvailabilityMode::Sln => {
                let param = (1.0 / (1.0 - beta)).ln();
                let sigma = match spec.lognormal_scale {
                    LognormalScale::StdDev => param,
                    LognormalScale::Variance => param.sqrt(),
                };
                let dist = LogNormal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
                relative(
                    (0..profiles.len())
                        .map(|k| dist.sample(&mut seeded_rng(availability_seed, "lognormal", &[k as u64])))
                        .collect(),
                )
            }
        };
        Ok(AvailabilityModel {
            spec,
            seed: availability_seed,
            base,
            labels: profiles.iter().map(|p| p.labels.iter().copied().collect()).collect(),
            num_labels: spec.num_labels.unwrap_or(num_classes).max(1),
        })
    }

    pub fn spec(&self) -> &AvailabilitySpec {
        &self.spec
    }

    pub fn num_clients(&self) -> usize {
        self.base.len()
    }

    fn phase(&self, t: usize) -> f64 {
        (1 + t % self.spec.period) as f64 / self.spec.period as f64
    }

    /// Probability that `client` is reachable at round `t`.
    pub fn active_rate(&self, client: usize, t: usize) -> f64 {
        let beta = self.spec.beta;
        let rate = match self.spec.mode {
            AvailabilityMode::Idl => 1.0,
            AvailabilityMode::Mdf
            | AvailabilityMode::Ldf
            | AvailabilityMode::Ymf
            | AvailabilityMode::Ln => self.base[client],
            AvailabilityMode::Yc => {
                let phase = self.phase(t);
                let q = self.num_labels as f64;
                let hit = self.labels[client]
                    .iter()
                    .any(|&y| phase >= y as f64 / q && phase < (y + 1) as f64 / q);
                beta * if hit { 1.0 } else { 0.0 } + (1.0 - beta)
            }
            AvailabilityMode::Sln => {
                let wave = 0.4 * (2.0 * std::f64::consts::PI * self.phase(t)).sin() + 0.5;
                self.base[client] * wave
            }
        };
        rate.clamp(0.0, 1.0)
    }

    /// Whether `client` is active at round `t`; a pure function of the seed,
    /// the round and the client.
    pub fn is_active(&self, client: usize, t: usize) -> bool {
        let p = self.active_rate(client, t);
        let u: f64 = seeded_rng(self.seed, "availability", &[t as u64, client as u64]).random();
        u < p
    }

    /// The active set `A_t`, in ascending id order.
    pub fn sample_active_set(&self, t: usize) -> Vec<usize> {
        (0..self.num_clients()).filter(|&k| self.is_active(k, t)).collect()
    }

    /// Writes `round,client_id,active` rows for rounds `0..rounds`.
    pub fn write_trace_csv<W: Write>(&self, w: W, rounds: usize) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Parse(format!("writing availability trace: {e}"));
        csv.write_record(["round", "client_id", "active"]).map_err(err)?;
        for t in 0..rounds {
            for k in 0..self.num_clients() {
                let active = if self.is_active(k, t) { "1" } else { "0" };
                csv.write_record([t.to_string().as_str(), k.to_string().as_str(), active])
                    .map_err(err)?;
            }
        }
        csv.flush().map_err(|e| Error::io("<availability trace>", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sized(sizes: &[usize]) -> Vec<ClientProfile> {
        sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| ClientProfile::new(k, n).with_labels([k % 10]))
            .collect()
    }

    fn model(spec: AvailabilitySpec, profiles: &[ClientProfile]) -> AvailabilityModel {
        AvailabilityModel::new(spec, profiles, 10, 1).unwrap()
    }

    #[test]
    fn ideal_is_always_on() {
        let p = sized(&[3, 4, 5]);
        let m = model(AvailabilitySpec::ideal(), &p);
        for t in 0..50 {
            assert_eq!(m.active_rate(1, t), 1.0);
            assert_eq!(m.sample_active_set(t), vec![0, 1, 2]);
        }
    }

    #[test]
    fn data_size_modes() {
        let p = sized(&[10, 20, 40]);
        let mdf = model(AvailabilitySpec::new(AvailabilityMode::Mdf, 1.0), &p);
        let ldf = model(AvailabilitySpec::new(AvailabilityMode::Ldf, 1.0), &p);
        let r: Vec<f64> = (0..3).map(|k| mdf.active_rate(k, 0)).collect();
        assert_eq!(r, vec![0.25, 0.5, 1.0]);
        let r: Vec<f64> = (0..3).map(|k| ldf.active_rate(k, 0)).collect();
        assert_eq!(r, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn label_max_first() {
        let p = vec![
            ClientProfile::new(0, 5).with_labels([2, 5]),
            ClientProfile::new(1, 5).with_labels([9]),
        ];
        let m = model(AvailabilitySpec::new(AvailabilityMode::Ymf, 0.9), &p);
        assert!((m.active_rate(0, 0) - 0.3).abs() < 1e-12);
        assert!((m.active_rate(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_cycle_zero_rate_client_never_active() {
        // label 9 of 10 with period 4: phases 0.25, 0.5, 0.75, 1.0 never hit [0.9, 1.0)
        let p = vec![ClientProfile::new(0, 5).with_labels([9]), ClientProfile::new(1, 5).with_labels([2])];
        let m = model(AvailabilitySpec::new(AvailabilityMode::Yc, 1.0).with_period(4), &p);
        for t in 0..400 {
            assert_eq!(m.active_rate(0, t), 0.0);
            assert!(!m.sample_active_set(t).contains(&0));
        }
        // client 1 (bin [0.2, 0.3)) is on exactly at phase 0.25
        assert_eq!(m.active_rate(1, 0), 1.0);
        assert_eq!(m.active_rate(1, 1), 0.0);
        assert_eq!(m.active_rate(1, 4), 1.0);
    }

    #[test]
    fn sine_lognormal_peak() {
        let p = sized(&[1, 1, 1]);
        let spec = AvailabilitySpec::new(AvailabilityMode::Sln, 0.5).with_period(4);
        let sln = model(spec, &p);
        let ln = model(AvailabilitySpec::new(AvailabilityMode::Ln, 0.5), &p);
        // t = 0: phase 1/4, sin(pi/2) = 1
        for k in 0..3 {
            assert!((sln.active_rate(k, 0) - 0.9 * ln.active_rate(k, 0)).abs() < 1e-12);
        }
        let max = (0..3).map(|k| ln.active_rate(k, 0)).fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn lognormal_rejects_beta_one() {
        let p = sized(&[1, 2]);
        let err = AvailabilityModel::new(AvailabilitySpec::new(AvailabilityMode::Ln, 1.0), &p, 10, 0);
        assert!(matches!(err, Err(Error::Config { .. })));
        let err = AvailabilityModel::new(AvailabilitySpec::new(AvailabilityMode::Mdf, 1.5), &p, 10, 0);
        assert!(err.is_err());
    }

    #[test]
    fn label_modes_require_labels() {
        let p = vec![ClientProfile::new(0, 5), ClientProfile::new(1, 5).with_labels([1])];
        assert!(AvailabilityModel::new(AvailabilitySpec::new(AvailabilityMode::Yc, 0.5), &p, 10, 0).is_err());
        assert!(AvailabilityModel::new(AvailabilitySpec::new(AvailabilityMode::Mdf, 0.5), &p, 10, 0).is_ok());
    }

    #[test]
    fn rates_in_unit_interval_and_periodic() {
        let p: Vec<ClientProfile> = (0..12)
            .map(|k| ClientProfile::new(k, 1 + 7 * k).with_labels([k % 10, (3 * k + 1) % 10]))
            .collect();
        for mode in AvailabilityMode::ALL {
            let spec = AvailabilitySpec::new(mode, 0.7).with_period(9);
            let m = model(spec, &p);
            for k in 0..12 {
                for t in 0..30 {
                    let r = m.active_rate(k, t);
                    assert!((0.0..=1.0).contains(&r), "{mode} rate {r}");
                    assert_eq!(r, m.active_rate(k, t + 9));
                    if mode == AvailabilityMode::Sln {
                        assert!(r <= 0.9 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn trace_is_replayable() {
        let p = sized(&[5, 50, 500]);
        let spec = AvailabilitySpec::new(AvailabilityMode::Mdf, 0.7);
        let a = AvailabilityModel::new(spec, &p, 10, 99).unwrap();
        let b = AvailabilityModel::new(spec, &p, 10, 99).unwrap();
        for t in 0..100 {
            assert_eq!(a.sample_active_set(t), b.sample_active_set(t));
        }
        let mut buf = Vec::new();
        a.write_trace_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "round,client_id,active");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[3], format!("0,2,{}", a.is_active(2, 0) as u8));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AvailabilityMode::ALL {
            assert_eq!(m.name().parse::<AvailabilityMode>().unwrap(), m);
        }
        assert!("XYZ".parse::<AvailabilityMode>().is_err());
    }
}
