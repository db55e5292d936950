//! System configuration, geometry, propagation and random channel generation.
//!
//! Access links follow a clustered narrowband mmWave model with `C` paths per
//! BS-user link and a half-wavelength uniform linear array. Fronthaul links are
//! i.i.d. Rayleigh on top of the microwave path loss. Every generator draws
//! from per-entity random streams derived from one base seed, so that adding a
//! user or an eavesdropper never perturbs the channels of the others.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cvec_norm_sqr, serde_cvecs, CVector, C64, ZERO};

/// Half-wavelength element spacing used throughout.
pub const HALF_WAVELENGTH: f64 = 0.5;

/// mmWave close-in path loss at the 1 m reference distance (73 GHz).
pub const MMWAVE_PL_D0_DB: f64 = 69.7;
pub const MMWAVE_PL_EXPONENT: f64 = 2.4;

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// N: CP transmit antennas.
    pub n_cp_antennas: usize,
    /// M: transmit antennas per BS.
    pub n_bs_antennas: usize,
    /// L: cooperating base stations.
    pub n_bs: usize,
    /// K: single-antenna users.
    pub n_users: usize,
    /// Z: single-antenna eavesdroppers (0 disables the secrecy terms).
    pub n_eves: usize,
    /// C: propagation paths per mmWave link.
    pub n_paths: usize,
    /// B: phase-shifter resolution in bits.
    pub phase_bits: u32,
    /// mmWave access bandwidth in Hz.
    pub bw_mmwave: f64,
    /// Microwave fronthaul bandwidth in Hz.
    pub bw_microwave: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    /// Total BS transmit power budget in W.
    pub p_bs_total: f64,
    /// Per-BS budgets in W; `None` splits `p_bs_total` equally.
    #[serde(default)]
    pub p_bs_per: Option<Vec<f64>>,
    /// CP transmit power budget in W.
    pub p_cp: f64,
    /// Distance between the CP and the centre of the BS cluster in m.
    pub cp_distance: f64,
    /// Radius of the disk holding BSs, users and eavesdroppers in m.
    pub cluster_radius: f64,
    /// Log-normal shadowing standard deviation of the mmWave links in dB.
    pub shadowing_sigma: f64,
    /// Relative CSI error bound per eavesdropper. A single entry applies to all.
    #[serde(default)]
    pub csi_error_ratio: Vec<f64>,
    pub rng_seed: u64,
}

impl SystemConfig {
    /// Reduced-size default used by tests and the experiment harness.
    pub fn desk_scale() -> Self {
        SystemConfig {
            n_cp_antennas: 8,
            n_bs_antennas: 4,
            n_bs: 3,
            n_users: 2,
            n_eves: 1,
            n_paths: 4,
            phase_bits: 3,
            bw_mmwave: 50e6,
            bw_microwave: 20e6,
            noise_psd: dbm_to_watt(-174.0),
            p_bs_total: dbm_to_watt(15.0),
            p_bs_per: None,
            p_cp: dbm_to_watt(46.0),
            cp_distance: 500.0,
            cluster_radius: 30.0,
            shadowing_sigma: 4.6,
            csi_error_ratio: vec![0.0],
            rng_seed: 1,
        }
    }

    /// Full-size simulation defaults.
    pub fn table_one() -> Self {
        SystemConfig {
            n_cp_antennas: 32,
            n_bs: 6,
            n_users: 4,
            n_eves: 2,
            ..Self::desk_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_cp_antennas", self.n_cp_antennas),
            ("n_bs_antennas", self.n_bs_antennas),
            ("n_bs", self.n_bs),
            ("n_users", self.n_users),
            ("n_paths", self.n_paths),
            ("phase_bits", self.phase_bits as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.phase_bits > 30 {
            return Err(Error::Config("phase_bits must be at most 30".into()));
        }
        let positive = [
            ("bw_mmwave", self.bw_mmwave),
            ("bw_microwave", self.bw_microwave),
            ("noise_psd", self.noise_psd),
            ("p_bs_total", self.p_bs_total),
            ("p_cp", self.p_cp),
            ("cp_distance", self.cp_distance),
            ("cluster_radius", self.cluster_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.shadowing_sigma.is_finite() && self.shadowing_sigma >= 0.0) {
            return Err(Error::Config("shadowing_sigma must be >= 0".into()));
        }
        if let Some(per) = &self.p_bs_per {
            if per.len() != self.n_bs {
                return Err(Error::Config(format!(
                    "p_bs_per has {} entries for {} BSs",
                    per.len(),
                    self.n_bs
                )));
            }
            if per.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::Config("p_bs_per entries must be > 0".into()));
            }
        }
        if self.csi_error_ratio.len() > 1 && self.csi_error_ratio.len() != self.n_eves {
            return Err(Error::Config(format!(
                "csi_error_ratio has {} entries for {} eavesdroppers",
                self.csi_error_ratio.len(),
                self.n_eves
            )));
        }
        if self
            .csi_error_ratio
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::Config("csi_error_ratio must be >= 0".into()));
        }
        let eta = self.eta();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Config("bandwidth ratio must be finite".into()));
        }
        Ok(())
    }

    /// η = W_mc / W_mm.
    pub fn eta(&self) -> f64 {
        self.bw_microwave / self.bw_mmwave
    }

    pub fn noise_mmwave(&self) -> f64 {
        self.bw_mmwave * self.noise_psd
    }

    pub fn noise_microwave(&self) -> f64 {
        self.bw_microwave * self.noise_psd
    }

    pub fn per_bs_budgets(&self) -> Vec<f64> {
        match &self.p_bs_per {
            Some(v) => v.clone(),
            None => vec![self.p_bs_total / self.n_bs as f64; self.n_bs],
        }
    }

    pub fn sigma(&self, z: usize) -> f64 {
        match self.csi_error_ratio.len() {
            0 => 0.0,
            1 => self.csi_error_ratio[0],
            _ => self.csi_error_ratio[z],
        }
    }

    pub fn access_len(&self) -> usize {
        self.n_bs * self.n_bs_antennas
    }
}

/// Close-in mmWave path loss `69.7 + 24·log10(d) + X` in dB, `d ≥ 1 m`.
pub fn path_loss_mmwave(d: f64, shadow_db: f64) -> Result<f64> {
    if !(d >= 1.0) {
        return Err(Error::Domain(format!(
            "mmWave path loss needs d >= 1 m, got {d}"
        )));
    }
    Ok(MMWAVE_PL_D0_DB + 10.0 * MMWAVE_PL_EXPONENT * d.log10() + shadow_db)
}

/// Microwave path loss `38 + 30·log10(d)` in dB, `d > 0`.
pub fn path_loss_microwave(d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!(
            "microwave path loss needs d > 0, got {d}"
        )));
    }
    Ok(38.0 + 30.0 * d.log10())
}

/// Unit-norm ULA response `(1/√M)·exp(j·2π·(d/λ)·m·sin θ)`.
pub fn steering_vector(theta: f64, m: usize, spacing: f64) -> CVector {
    let norm = 1.0 / (m as f64).sqrt();
    let k = 2.0 * PI * spacing * theta.sin();
    CVector::from_fn(m, |i, _| C64::from_polar(norm, k * i as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub gain: C64,
    pub angle: f64,
}

#[derive(Debug, Clone)]
pub struct MmWaveLink {
    pub h: CVector,
    pub paths: Vec<PathComponent>,
}

/// `√(M/C)·Σ α_c·a(θ_c)` for explicitly given paths.
pub fn mmwave_channel_from_paths(paths: &[PathComponent], m: usize) -> CVector {
    let c = paths.len().max(1) as f64;
    let scale = (m as f64 / c).sqrt();
    let mut h = CVector::from_element(m, ZERO);
    for p in paths {
        h += steering_vector(p.angle, m, HALF_WAVELENGTH) * p.gain;
    }
    h * C64::new(scale, 0.0)
}

/// One draw from `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Draws one clustered mmWave link. Path gains are `CN(0, 1)` scaled by the
/// link path loss (`path_loss_db`), angles are uniform on `[0, π]`.
pub fn sample_mmwave_channel<R: Rng + ?Sized>(
    rng: &mut R,
    n_paths: usize,
    m: usize,
    path_loss_db: f64,
) -> Result<MmWaveLink> {
    if n_paths == 0 {
        return Err(Error::Domain("at least one path is required".into()));
    }
    let amp = 10f64.powf(-path_loss_db / 20.0);
    let paths: Vec<PathComponent> = (0..n_paths)
        .map(|_| {
            let gain = complex_gaussian(rng, 1.0) * amp;
            let angle = rng.gen_range(0.0..=PI);
            PathComponent { gain, angle }
        })
        .collect();
    let h = mmwave_channel_from_paths(&paths, m);
    Ok(MmWaveLink { h, paths })
}

/// i.i.d. Rayleigh fronthaul vector with per-entry power `10^(−PL(d)/10)`.
pub fn sample_fronthaul_channel<R: Rng + ?Sized>(rng: &mut R, n: usize, d: f64) -> Result<CVector> {
    if n == 0 {
        return Err(Error::Domain("fronthaul needs at least one antenna".into()));
    }
    let var = 10f64.powf(-path_loss_microwave(d)? / 10.0);
    Ok(CVector::from_fn(n, |_, _| complex_gaussian(rng, var)))
}

/// `ĥ + Δh` with `Δh` uniform in the ball `‖Δh‖² ≤ σ‖ĥ‖²`.
///
/// The same number of random draws is consumed for every `σ`, so sweeping the
/// error ratio with a fixed stream only rescales the error vector.
pub fn apply_csi_error<R: Rng + ?Sized>(h_est: &CVector, sigma: f64, rng: &mut R) -> CVector {
    let n = h_est.len();
    let mut dir = CVector::from_fn(n, |_, _| complex_gaussian(rng, 1.0));
    let u: f64 = rng.gen();
    let dn = cvec_norm_sqr(&dir).sqrt();
    if n == 0 || sigma <= 0.0 || dn == 0.0 {
        return h_est.clone();
    }
    let radius = (sigma * cvec_norm_sqr(h_est)).sqrt();
    let r = radius * u.powf(1.0 / (2 * n) as f64);
    dir *= C64::new(r / dn, 0.0);
    let bound = sigma * cvec_norm_sqr(h_est);
    let got = cvec_norm_sqr(&dir);
    if got > bound {
        dir *= C64::new((bound / got).sqrt() * (1.0 - 1e-15), 0.0);
    }
    h_est + dir
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub bs_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub eve_positions: Vec<[f64; 2]>,
    /// The CP sits at `(cp_distance_to_cluster, 0)`; the cluster centre is the origin.
    pub cp_distance_to_cluster: f64,
}

impl Topology {
    pub fn cp_position(&self) -> [f64; 2] {
        [self.cp_distance_to_cluster, 0.0]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

const STREAM_BS: u64 = 1 << 20;
const STREAM_USER: u64 = 2 << 20;
const STREAM_EVE: u64 = 3 << 20;
const STREAM_FRONTHAUL: u64 = 4 << 20;
const STREAM_USER_CH: u64 = 5 << 20;
const STREAM_EVE_CH: u64 = 6 << 20;
const STREAM_CSI: u64 = 7 << 20;

fn substream(base: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(id);
    rng
}

fn uniform_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let phi = 2.0 * PI * rng.gen::<f64>();
    [r * phi.cos(), r * phi.sin()]
}

/// Uniform placement of BSs, users and eavesdroppers in the cluster disk.
pub fn generate_topology<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Topology> {
    cfg.validate()?;
    let base: u64 = rng.gen();
    let place = |kind: u64, count: usize| -> Vec<[f64; 2]> {
        (0..count)
            .map(|i| uniform_disk(&mut substream(base, kind + i as u64), cfg.cluster_radius))
            .collect()
    };
    Ok(Topology {
        bs_positions: place(STREAM_BS, cfg.n_bs),
        user_positions: place(STREAM_USER, cfg.n_users),
        eve_positions: place(STREAM_EVE, cfg.n_eves),
        cp_distance_to_cluster: cfg.cp_distance,
    })
}

/// All channel realisations of one network instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSet {
    /// CP → BS fronthaul vectors, `L × N`.
    #[serde(with = "serde_cvecs")]
    pub g: Vec<CVector>,
    /// BS cluster → user vectors `[h¹,…,hᴸ]`, `K × ML`.
    #[serde(with = "serde_cvecs")]
    pub h: Vec<CVector>,
    /// True BS cluster → eavesdropper vectors, `Z × ML`.
    #[serde(with = "serde_cvecs")]
    pub he_true: Vec<CVector>,
    /// Estimated eavesdropper vectors available to the robust design, `Z × ML`.
    #[serde(with = "serde_cvecs")]
    pub he_est: Vec<CVector>,
    /// Path parameters indexed `[user][bs][path]`.
    pub user_paths: Vec<Vec<Vec<PathComponent>>>,
    /// Path parameters (of the estimate) indexed `[eve][bs][path]`.
    pub eve_paths: Vec<Vec<Vec<PathComponent>>>,
}

impl ChannelSet {
    /// Checks vector lengths against `cfg` and the CSI error bound for every eavesdropper.
    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        let ml = cfg.access_len();
        let dims = |name: &str, vs: &[CVector], count: usize, len: usize| -> Result<()> {
            if vs.len() != count {
                return Err(Error::Dimension(format!("{name}: {} vectors, expected {count}", vs.len())));
            }
            if let Some(v) = vs.iter().find(|v| v.len() != len) {
                return Err(Error::Dimension(format!("{name}: length {}, expected {len}", v.len())));
            }
            Ok(())
        };
        dims("g", &self.g, cfg.n_bs, cfg.n_cp_antennas)?;
        dims("h", &self.h, cfg.n_users, ml)?;
        dims("he_true", &self.he_true, cfg.n_eves, ml)?;
        dims("he_est", &self.he_est, cfg.n_eves, ml)?;
        for z in 0..cfg.n_eves {
            let err = cvec_norm_sqr(&(&self.he_true[z] - &self.he_est[z]));
            let bound = cfg.sigma(z) * cvec_norm_sqr(&self.he_est[z]);
            if err > bound * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::Domain(format!(
                    "eavesdropper {z}: CSI error {err:.3e} exceeds bound {bound:.3e}"
                )));
            }
        }
        Ok(())
    }

    /// Per-BS slice `h^l` of a stacked access vector.
    pub fn block(v: &CVector, l: usize, m: usize) -> CVector {
        v.rows(l * m, m).into_owned()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn access_vector(
    rng: &mut ChaCha8Rng,
    cfg: &SystemConfig,
    topo: &Topology,
    rx: [f64; 2],
) -> Result<(CVector, Vec<Vec<PathComponent>>)> {
    let m = cfg.n_bs_antennas;
    let shadow = Normal::new(0.0, cfg.shadowing_sigma.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut h = CVector::from_element(cfg.access_len(), ZERO);
    let mut paths = Vec::with_capacity(cfg.n_bs);
    for (l, &bs) in topo.bs_positions.iter().enumerate() {
        let x: f64 = if cfg.shadowing_sigma > 0.0 { shadow.sample(rng) } else { 0.0 };
        // Receivers closer than the reference distance are treated as at d₀.
        let d = dist(bs, rx).max(1.0);
        let link = sample_mmwave_channel(rng, cfg.n_paths, m, path_loss_mmwave(d, x)?)?;
        h.rows_mut(l * m, m).copy_from(&link.h);
        paths.push(link.paths);
    }
    Ok((h, paths))
}

/// Draws fronthaul, user and eavesdropper channels for a topology.
pub fn generate_channels<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    topo: &Topology,
    rng: &mut R,
) -> Result<ChannelSet> {
    cfg.validate()?;
    if topo.bs_positions.len() != cfg.n_bs
        || topo.user_positions.len() != cfg.n_users
        || topo.eve_positions.len() != cfg.n_eves
    {
        return Err(Error::Dimension("topology does not match configuration".into()));
    }
    let base: u64 = rng.gen();
    let cp = topo.cp_position();
    let g = topo
        .bs_positions
        .iter()
        .enumerate()
        .map(|(l, &bs)| {
            let mut r = substream(base, STREAM_FRONTHAUL + l as u64);
            sample_fronthaul_channel(&mut r, cfg.n_cp_antennas, dist(cp, bs).max(1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut h = Vec::with_capacity(cfg.n_users);
    let mut user_paths = Vec::with_capacity(cfg.n_users);
    for (k, &pos) in topo.user_positions.iter().enumerate() {
        let mut r = substream(base, STREAM_USER_CH + k as u64);
        let (v, p) = access_vector(&mut r, cfg, topo, pos)?;
        h.push(v);
        user_paths.push(p);
    }
    let mut he_est = Vec::with_capacity(cfg.n_eves);
    let mut he_true = Vec::with_capacity(cfg.n_eves);
    let mut eve_paths = Vec::with_capacity(cfg.n_eves);
    for (z, &pos) in topo.eve_positions.iter().enumerate() {
        let mut r = substream(base, STREAM_EVE_CH + z as u64);
        let (est, p) = access_vector(&mut r, cfg, topo, pos)?;
        let mut re = substream(base, STREAM_CSI + z as u64);
        he_true.push(apply_csi_error(&est, cfg.sigma(z), &mut re));
        he_est.push(est);
        eve_paths.push(p);
    }
    let set = ChannelSet {
        g,
        h,
        he_true,
        he_est,
        user_paths,
        eve_paths,
    };
    set.check(cfg)?;
    Ok(set)
}

/// Topology and channels of one instance drawn from a single seed.
pub fn generate_instance(cfg: &SystemConfig, seed: u64) -> Result<(Topology, ChannelSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = generate_topology(cfg, &mut rng)?;
    let ch = generate_channels(cfg, &topo, &mut rng)?;
    Ok((topo, ch))
}
