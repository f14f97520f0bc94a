//! Network scenario and the closed-form delay expressions.
//!
//! Internal units are canonical: bits, cycles/bit, Hz, cycles/s and seconds.
//! Users `0..K` have a good uplink; users `K..M` are shadowed and their
//! spectral efficiency depends on whether the RIS is active.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BITS_PER_BYTE: f64 = 8.0;
pub const BYTES_PER_MB: f64 = 1.0e6;

/// Converts a task size in megabytes (10^6 bytes) to bits.
pub fn mb_to_bits(mb: f64) -> f64 {
    mb * BYTES_PER_MB * BITS_PER_BYTE
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserParams {
    /// Task input size `D_m` in bits.
    pub data_size_bits: f64,
    /// Local CPU speed `f_m^l` in cycles/s.
    pub local_cpu: f64,
    /// Edge CPU share `f_m^e` in cycles/s.
    pub edge_cpu_share: f64,
    /// Uplink spectral efficiency `eta_m` in bps/Hz.
    pub spectral_eff: f64,
    pub good_link: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    users: Vec<UserParams>,
    processing_density: f64,
    total_bandwidth: f64,
    ris_enabled: bool,
    edge_total_cpu: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Scenario {
    /// Validates and assembles a scenario. Each user's edge CPU share must
    /// equal `edge_total_cpu / M`.
    pub fn new(
        users: Vec<UserParams>,
        processing_density: f64,
        total_bandwidth: f64,
        ris_enabled: bool,
        edge_total_cpu: f64,
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Config("scenario needs at least one user".into()));
        }
        positive("processing_density", processing_density)?;
        positive("total_bandwidth", total_bandwidth)?;
        positive("edge_total_cpu", edge_total_cpu)?;
        let share = edge_total_cpu / users.len() as f64;
        let k = users.iter().take_while(|u| u.good_link).count();
        if k == 0 {
            return Err(Error::Config("at least one good-link user is required".into()));
        }
        if users[k..].iter().any(|u| u.good_link) {
            return Err(Error::Config("good-link users must precede shadowed users".into()));
        }
        for (m, u) in users.iter().enumerate() {
            positive(&format!("user {m} data_size_bits"), u.data_size_bits)?;
            positive(&format!("user {m} local_cpu"), u.local_cpu)?;
            positive(&format!("user {m} spectral_eff"), u.spectral_eff)?;
            if (u.edge_cpu_share - share).abs() > 1e-9 * share {
                return Err(Error::Config(format!(
                    "user {m} edge share {} differs from equal split {share}",
                    u.edge_cpu_share
                )));
            }
        }
        Ok(Self { users, processing_density, total_bandwidth, ris_enabled, edge_total_cpu })
    }

    pub fn users(&self) -> &[UserParams] {
        &self.users
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_good(&self) -> usize {
        self.users.iter().take_while(|u| u.good_link).count()
    }

    /// Processing density `L` in cycles/bit.
    pub fn processing_density(&self) -> f64 {
        self.processing_density
    }

    /// Total uplink bandwidth `C` in Hz.
    pub fn total_bandwidth(&self) -> f64 {
        self.total_bandwidth
    }

    pub fn ris_enabled(&self) -> bool {
        self.ris_enabled
    }

    pub fn edge_total_cpu(&self) -> f64 {
        self.edge_total_cpu
    }

    /// `D_m L / f_m^l`, the delay of computing user `m`'s task locally.
    pub fn local_delay(&self, m: usize) -> f64 {
        let u = &self.users[m];
        u.data_size_bits * self.processing_density / u.local_cpu
    }

    /// `D_m L / f_m^e`, the edge computation term.
    pub fn edge_compute_delay(&self, m: usize) -> f64 {
        let u = &self.users[m];
        u.data_size_bits * self.processing_density / u.edge_cpu_share
    }

    /// `D_m / (eta_m C)`: upload time if user `m` had the whole band.
    pub fn full_band_upload_delay(&self, m: usize) -> f64 {
        let u = &self.users[m];
        u.data_size_bits / (u.spectral_eff * self.total_bandwidth)
    }

    /// Upload plus edge compute delay of user `m` holding bandwidth fraction `beta_m`.
    pub fn offload_delay(&self, m: usize, beta_m: f64) -> Result<f64> {
        if beta_m.is_nan() || beta_m <= 0.0 {
            return Err(Error::InfeasibleAllocation { user: m });
        }
        Ok(self.full_band_upload_delay(m) / beta_m + self.edge_compute_delay(m))
    }

    /// Delay of user `m` under the given decision and allocation; exactly one
    /// of the local and offload terms is active.
    pub fn total_delay(
        &self,
        decisions: &DecisionVector,
        allocation: &Allocation,
        m: usize,
    ) -> Result<f64> {
        if decisions.offloads(m) {
            self.offload_delay(m, allocation.beta[m])
        } else {
            Ok(self.local_delay(m))
        }
    }

    /// Largest per-user delay.
    pub fn worst_delay(&self, decisions: &DecisionVector, beta: &[f64]) -> Result<f64> {
        if beta.len() != self.num_users() {
            return Err(Error::DimensionMismatch { expected: self.num_users(), got: beta.len() });
        }
        let mut worst: f64 = 0.0;
        for (m, &b) in beta.iter().enumerate() {
            let d = if decisions.offloads(m) {
                self.offload_delay(m, b)?
            } else {
                self.local_delay(m)
            };
            worst = worst.max(d);
        }
        Ok(worst)
    }

    /// Same users and parameters with a different total bandwidth.
    pub fn with_bandwidth(&self, total_bandwidth: f64) -> Result<Self> {
        let mut s = self.clone();
        positive("total_bandwidth", total_bandwidth)?;
        s.total_bandwidth = total_bandwidth;
        Ok(s)
    }

    /// Same users with a different edge CPU budget, re-split equally.
    pub fn with_edge_cpu(&self, edge_total_cpu: f64) -> Result<Self> {
        positive("edge_total_cpu", edge_total_cpu)?;
        let mut s = self.clone();
        let share = edge_total_cpu / s.users.len() as f64;
        s.users.iter_mut().for_each(|u| u.edge_cpu_share = share);
        s.edge_total_cpu = edge_total_cpu;
        Ok(s)
    }

    /// Same draw with the shadowed users' spectral efficiency replaced.
    pub fn with_shadow_eta(&self, eta: f64, ris_enabled: bool) -> Result<Self> {
        positive("shadowed spectral efficiency", eta)?;
        let mut s = self.clone();
        s.users.iter_mut().filter(|u| !u.good_link).for_each(|u| u.spectral_eff = eta);
        s.ris_enabled = ris_enabled;
        Ok(s)
    }
}

/// Binary offloading assignment. User `m` computes locally (`x_m = 1`) or
/// offloads (`y_m = 1`); the pair always sums to one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecisionVector {
    offload: Vec<bool>,
}

impl DecisionVector {
    pub fn from_offload(offload: Vec<bool>) -> Self {
        Self { offload }
    }

    pub fn all_local(m: usize) -> Self {
        Self { offload: vec![false; m] }
    }

    pub fn all_offload(m: usize) -> Self {
        Self { offload: vec![true; m] }
    }

    /// Builds from explicit `x` and `y` bit lists, checking `x_m + y_m = 1`.
    pub fn from_bits(local: &[u8], offload: &[u8]) -> Result<Self> {
        if local.len() != offload.len() {
            return Err(Error::DimensionMismatch { expected: local.len(), got: offload.len() });
        }
        local
            .iter()
            .zip(offload)
            .enumerate()
            .map(|(m, (&x, &y))| match (x, y) {
                (1, 0) => Ok(false),
                (0, 1) => Ok(true),
                _ => Err(Error::Config(format!("user {m}: x={x}, y={y} violates x + y = 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_offload)
    }

    /// Decision whose bit `m` (least significant first) marks user `m` as offloading.
    pub fn from_mask(mask: u64, m: usize) -> Self {
        Self { offload: (0..m).map(|i| mask >> i & 1 == 1).collect() }
    }

    pub fn len(&self) -> usize {
        self.offload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offload.is_empty()
    }

    pub fn offloads(&self, m: usize) -> bool {
        self.offload[m]
    }

    pub fn x(&self, m: usize) -> f64 {
        if self.offload[m] { 0.0 } else { 1.0 }
    }

    pub fn y(&self, m: usize) -> f64 {
        if self.offload[m] { 1.0 } else { 0.0 }
    }

    pub fn local_bits(&self) -> Vec<u8> {
        self.offload.iter().map(|&o| u8::from(!o)).collect()
    }

    pub fn offload_bits(&self) -> Vec<u8> {
        self.offload.iter().map(|&o| u8::from(o)).collect()
    }

    pub fn num_offloading(&self) -> usize {
        self.offload.iter().filter(|&&o| o).count()
    }
}

/// Bandwidth fractions and the resulting worst-case delay in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub beta: Vec<f64>,
    pub worst_delay: f64,
}

/// Parameters for drawing random scenarios, in the units people usually
/// quote them in (MB, cycles/byte).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub users: usize,
    pub good_users: usize,
    pub local_cpu_hz: f64,
    pub edge_total_cpu_hz: f64,
    pub cycles_per_byte: f64,
    pub bandwidth_hz: f64,
    pub eta_good: f64,
    pub eta_shadow_no_ris: f64,
    pub eta_shadow_ris: f64,
    pub ris: bool,
    pub task_min_mb: f64,
    pub task_max_mb: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            users: 8,
            good_users: 5,
            local_cpu_hz: 500e6,
            edge_total_cpu_hz: 5e9,
            cycles_per_byte: 1900.0,
            bandwidth_hz: 15e6,
            eta_good: 3.5,
            eta_shadow_no_ris: 0.1,
            eta_shadow_ris: 3.0,
            ris: true,
            task_min_mb: 0.1,
            task_max_mb: 0.9,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::Config("users must be at least 1".into()));
        }
        if self.good_users == 0 || self.good_users > self.users {
            return Err(Error::Config(format!(
                "good_users must satisfy 1 <= K <= M, got K={} M={}",
                self.good_users, self.users
            )));
        }
        positive("local_cpu_hz", self.local_cpu_hz)?;
        positive("edge_total_cpu_hz", self.edge_total_cpu_hz)?;
        positive("cycles_per_byte", self.cycles_per_byte)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("eta_good", self.eta_good)?;
        positive("eta_shadow_no_ris", self.eta_shadow_no_ris)?;
        positive("eta_shadow_ris", self.eta_shadow_ris)?;
        positive("task_min_mb", self.task_min_mb)?;
        positive("task_max_mb", self.task_max_mb)?;
        if self.task_min_mb > self.task_max_mb {
            return Err(Error::Config(format!(
                "task size range is empty: [{}, {}]",
                self.task_min_mb, self.task_max_mb
            )));
        }
        Ok(())
    }

    /// Processing density in cycles/bit.
    pub fn processing_density(&self) -> f64 {
        self.cycles_per_byte / BITS_PER_BYTE
    }

    pub fn shadow_eta(&self, ris: bool) -> f64 {
        if ris { self.eta_shadow_ris } else { self.eta_shadow_no_ris }
    }

    /// Builds a scenario from explicit task sizes in bits.
    pub fn scenario_from_sizes(&self, sizes_bits: &[f64]) -> Result<Scenario> {
        self.validate()?;
        if sizes_bits.len() != self.users {
            return Err(Error::DimensionMismatch { expected: self.users, got: sizes_bits.len() });
        }
        let share = self.edge_total_cpu_hz / self.users as f64;
        let users = sizes_bits
            .iter()
            .enumerate()
            .map(|(m, &d)| {
                let good_link = m < self.good_users;
                UserParams {
                    data_size_bits: d,
                    local_cpu: self.local_cpu_hz,
                    edge_cpu_share: share,
                    spectral_eff: if good_link { self.eta_good } else { self.shadow_eta(self.ris) },
                    good_link,
                }
            })
            .collect();
        Scenario::new(
            users,
            self.processing_density(),
            self.bandwidth_hz,
            self.ris,
            self.edge_total_cpu_hz,
        )
    }
}

/// Draws task sizes i.i.d. uniform over the configured MB range.
pub fn sample_task_sizes<R: Rng + ?Sized>(rng: &mut R, config: &ScenarioConfig) -> Vec<f64> {
    (0..config.users)
        .map(|_| {
            let mb = if config.task_min_mb == config.task_max_mb {
                config.task_min_mb
            } else {
                rng.gen_range(config.task_min_mb..=config.task_max_mb)
            };
            mb_to_bits(mb)
        })
        .collect()
}

pub fn sample_scenario<R: Rng + ?Sized>(rng: &mut R, config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let sizes = sample_task_sizes(rng, config);
    config.scenario_from_sizes(&sizes)
}
