//! Quantized analog beamforming.
//!
//! Each BS owns one RF chain and an `M`-element phase-shifter network with
//! `B`-bit resolution. BS `l` (0-based) serves user `l mod K` and co-phases its
//! elements with that user's channel, which makes the stacked beamformer
//! `F = blkdiag(f₁,…,f_L)` semi-unitary (`FᴴF = I`).

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_dot, serde_cvecs, CMatrix, CVector, C64, ZERO};
use crate::model::{ChannelSet, SystemConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogBeamformer {
    /// Per-BS unit-modulus vectors, entries of magnitude `1/√M`.
    #[serde(with = "serde_cvecs")]
    pub f: Vec<CVector>,
    /// Codebook index of every entry, `[bs][antenna]`.
    pub phase_index: Vec<Vec<u32>>,
    /// User served by the analog beam of each BS.
    pub assignment: Vec<usize>,
    pub phase_bits: u32,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Codebook phase of index `phi` at resolution `bits`.
pub fn codebook_phase(phi: u32, bits: u32) -> f64 {
    2.0 * PI * phi as f64 / (1u64 << bits) as f64
}

/// Nearest codebook index to `target` under angular wrap-around; ties go to
/// the smaller index.
pub fn quantize_phase(target: f64, bits: u32) -> u32 {
    assert!((1..=30).contains(&bits), "phase resolution must be 1..=30 bits");
    let levels = 1u32 << bits;
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for phi in 0..levels {
        let err = wrap_angle(target - codebook_phase(phi, bits)).abs();
        // A relative guard keeps exact ties (up to rounding) on the smaller index.
        if err < best_err - 1e-12 {
            best = phi;
            best_err = err;
        }
    }
    best
}

/// Unit-modulus vector co-phased with `h`: entry `m` carries the codebook
/// phase closest to `−∠h(m)`, so every product `h(m)·f(m)` is nearly real.
pub fn cophase_vector(h: &CVector, bits: u32) -> (CVector, Vec<u32>) {
    let m = h.len();
    let amp = 1.0 / (m as f64).sqrt();
    let idx: Vec<u32> = h.iter().map(|z| quantize_phase(-z.arg(), bits)).collect();
    let f = CVector::from_iterator(
        m,
        idx.iter().map(|&p| C64::from_polar(amp, codebook_phase(p, bits))),
    );
    (f, idx)
}

/// Round-robin BS-to-user assignment `l ↦ l mod K` (0-based).
pub fn assign_users(n_bs: usize, n_users: usize) -> Vec<usize> {
    (0..n_bs).map(|l| l % n_users).collect()
}

pub fn design_analog_bf(channels: &ChannelSet, cfg: &SystemConfig) -> Result<AnalogBeamformer> {
    if channels.h.is_empty() || cfg.n_users == 0 {
        return Err(Error::Domain("no user channels to beam towards".into()));
    }
    if channels.h.len() != cfg.n_users {
        return Err(Error::Dimension(format!(
            "{} user channels for {} users",
            channels.h.len(),
            cfg.n_users
        )));
    }
    let m = cfg.n_bs_antennas;
    if let Some(h) = channels.h.iter().find(|h| h.len() != cfg.access_len()) {
        return Err(Error::Dimension(format!(
            "user channel length {}, expected {}",
            h.len(),
            cfg.access_len()
        )));
    }
    if cfg.n_bs < cfg.n_users {
        warn!(
            "{} BSs for {} users: some users get no dedicated analog beam",
            cfg.n_bs, cfg.n_users
        );
    }
    let assignment = assign_users(cfg.n_bs, cfg.n_users);
    let mut f = Vec::with_capacity(cfg.n_bs);
    let mut phase_index = Vec::with_capacity(cfg.n_bs);
    for (l, &u) in assignment.iter().enumerate() {
        let block = ChannelSet::block(&channels.h[u], l, m);
        let (fl, idx) = cophase_vector(&block, cfg.phase_bits);
        f.push(fl);
        phase_index.push(idx);
    }
    Ok(AnalogBeamformer {
        f,
        phase_index,
        assignment,
        phase_bits: cfg.phase_bits,
    })
}

impl AnalogBeamformer {
    pub fn n_bs(&self) -> usize {
        self.f.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.f.first().map_or(0, |f| f.len())
    }

    /// Dense block-diagonal `(M·L) × L` matrix.
    pub fn dense(&self) -> CMatrix {
        let m = self.n_antennas();
        let l = self.n_bs();
        let mut out = CMatrix::from_element(m * l, l, ZERO);
        for (j, f) in self.f.iter().enumerate() {
            out.view_mut((j * m, j), (m, 1)).copy_from(f);
        }
        out
    }

    /// `|h^l·f_l|` for the user each BS is assigned to.
    pub fn assigned_gains(&self, channels: &ChannelSet) -> Vec<f64> {
        let m = self.n_antennas();
        self.assignment
            .iter()
            .enumerate()
            .map(|(l, &u)| row_dot(&ChannelSet::block(&channels.h[u], l, m), &self.f[l]).norm())
            .collect()
    }
}

/// `h·F = [h¹f₁, …, hᴸf_L]`.
pub fn effective_channel(h: &CVector, bf: &AnalogBeamformer) -> Result<CVector> {
    let m = bf.n_antennas();
    let l = bf.n_bs();
    if h.len() != m * l {
        return Err(Error::Dimension(format!(
            "channel length {} but beamformer is {}x{}",
            h.len(),
            m * l,
            l
        )));
    }
    Ok(CVector::from_iterator(
        l,
        (0..l).map(|j| row_dot(&ChannelSet::block(h, j, m), &bf.f[j])),
    ))
}

pub fn effective_channels(hs: &[CVector], bf: &AnalogBeamformer) -> Result<Vec<CVector>> {
    hs.iter().map(|h| effective_channel(h, bf)).collect()
}
