//! Seeded channel realizations.
//!
//! Direct and RIS-user links are uncorrelated Rayleigh with logarithmic path
//! loss; the BS-RIS link is a rank-one LOS channel `a b^H` between two
//! half-wavelength ULAs. Channels are scaled so the receiver noise power is 1.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{CMat, CVec, C64};
use crate::{Error, Result};

pub type Position = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_bs: usize,
    pub n_ris: usize,
    pub n_users: usize,
    pub bs_pos: Position,
    pub ris_pos: Position,
    pub user_center: Position,
    pub user_radius: f64,
    pub user_height: f64,
    pub alpha_d: f64,
    pub alpha_r: f64,
    pub alpha_s: f64,
    pub beta_d: f64,
    pub beta_r: f64,
    pub beta_s: f64,
    pub extra_loss_db: f64,
    pub penalized_fraction: f64,
    pub noise_dbm: f64,
    pub ptx_dbm: f64,
}

impl ScenarioConfig {
    /// Reference geometry: 8-antenna BS at (0,0,10), RIS at (100,0,10),
    /// users in a 5 m disc around (95,10,1.5), half of them with 20 dB extra
    /// direct-link loss, -100 dBm noise, 20 dBm transmit power.
    pub fn reference(n_users: usize, n_ris: usize) -> Self {
        Self {
            n_bs: 8,
            n_ris,
            n_users,
            bs_pos: [0.0, 0.0, 10.0],
            ris_pos: [100.0, 0.0, 10.0],
            user_center: [95.0, 10.0, 1.5],
            user_radius: 5.0,
            user_height: 1.5,
            alpha_d: 30.0,
            alpha_r: 30.0,
            alpha_s: 30.0,
            beta_d: 3.7,
            beta_r: 3.2,
            beta_s: 2.2,
            extra_loss_db: 20.0,
            penalized_fraction: 0.5,
            noise_dbm: -100.0,
            ptx_dbm: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_bs < 1 || self.n_users < 1 {
            return fail("n_bs and n_users must be at least 1".into());
        }
        if self.n_ris + 1 < self.n_users {
            return fail(format!(
                "n_ris + 1 >= n_users required, got n_ris = {}, n_users = {}",
                self.n_ris, self.n_users
            ));
        }
        if !(self.user_radius > 0.0) {
            return fail(format!("user_radius must be positive, got {}", self.user_radius));
        }
        if !(self.beta_d > 0.0 && self.beta_r > 0.0 && self.beta_s > 0.0) {
            return fail("path-loss exponents must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.penalized_fraction) {
            return fail(format!(
                "penalized_fraction must lie in [0, 1], got {}",
                self.penalized_fraction
            ));
        }
        let finite = [
            self.alpha_d,
            self.alpha_r,
            self.alpha_s,
            self.extra_loss_db,
            self.noise_dbm,
            self.ptx_dbm,
            self.user_height,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return fail("non-finite scalar in scenario".into());
        }
        Ok(())
    }

    /// Number of users with the extra direct-link loss (the first ones by index).
    pub fn penalized_users(&self) -> usize {
        (self.penalized_fraction * self.n_users as f64).ceil() as usize
    }

    /// Noise standard deviation in sqrt(W).
    pub fn noise_std(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 20.0)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `alpha + beta * 10 log10(d / 1 m)`.
pub fn path_loss_db(d: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(alpha + beta * 10.0 * d.log10())
}

/// Half-wavelength ULA response, entry `m = exp(j pi m sin(angle))`.
pub fn ula_steering(n: usize, angle: f64) -> CVec {
    let step = PI * angle.sin();
    CVec::from_fn(n, |m, _| C64::from_polar(1.0, step * m as f64))
}

pub fn distance(p: &Position, q: &Position) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// One Monte-Carlo draw, noise-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `K x N_B`, row `k` is `h_{d,k}^H`.
    pub h_direct: CMat,
    /// `K x N_R`, row `k` is `h_{r,k}^H`.
    pub h_ris_user: CMat,
    /// RIS side of the LOS channel, carries the BS-RIS path loss and array gain.
    pub a: CVec,
    /// BS side of the LOS channel, unit norm.
    pub b: CVec,
    pub user_positions: Vec<Position>,
}

impl ChannelRealization {
    pub fn n_users(&self) -> usize {
        self.h_direct.nrows()
    }

    pub fn n_bs(&self) -> usize {
        self.h_direct.ncols()
    }

    pub fn n_ris(&self) -> usize {
        self.h_ris_user.ncols()
    }

    /// Same realization with the RIS switched off (`a = 0`).
    pub fn with_dead_ris(mut self) -> Self {
        self.a.fill(C64::new(0.0, 0.0));
        self
    }

    /// BS-RIS channel `a b^H`.
    pub fn h_los(&self) -> CMat {
        &self.a * self.b.adjoint()
    }
}

/// Per-trial generator: the master seed picks the ChaCha key and the trial
/// index picks the stream, so trials are independent and order-free.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

pub fn draw_realization(cfg: &ScenarioConfig, seed: u64, trial: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    let mut rng = trial_rng(seed, trial);
    let (k, nb, nr) = (cfg.n_users, cfg.n_bs, cfg.n_ris);
    let sigma = cfg.noise_std();

    let user_positions: Vec<Position> = (0..k)
        .map(|_| {
            let r = cfg.user_radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            [
                cfg.user_center[0] + r * phi.cos(),
                cfg.user_center[1] + r * phi.sin(),
                cfg.user_height,
            ]
        })
        .collect();

    let penalized = cfg.penalized_users();
    let mut h_direct = CMat::zeros(k, nb);
    for (u, pos) in user_positions.iter().enumerate() {
        let mut loss = path_loss_db(distance(&cfg.bs_pos, pos), cfg.alpha_d, cfg.beta_d)?;
        if u < penalized {
            loss += cfg.extra_loss_db;
        }
        let var = db_to_linear(-loss) / (sigma * sigma);
        for n in 0..nb {
            h_direct[(u, n)] = complex_gaussian(&mut rng, var);
        }
    }

    // The cascade h_r^H diag(theta) a b^H is noise-scaled once, through `a`.
    let mut h_ris_user = CMat::zeros(k, nr);
    for (u, pos) in user_positions.iter().enumerate() {
        let loss = path_loss_db(distance(&cfg.ris_pos, pos), cfg.alpha_r, cfg.beta_r)?;
        let var = db_to_linear(-loss);
        for n in 0..nr {
            h_ris_user[(u, n)] = complex_gaussian(&mut rng, var);
        }
    }

    let los_loss = path_loss_db(distance(&cfg.bs_pos, &cfg.ris_pos), cfg.alpha_s, cfg.beta_s)?;
    let a_gain = (nb as f64 * db_to_linear(-los_loss)).sqrt() / sigma;
    let a = ula_steering(nr, 0.0).scale(a_gain);
    let b = ula_steering(nb, 0.0).unscale((nb as f64).sqrt());

    Ok(ChannelRealization {
        h_direct,
        h_ris_user,
        a,
        b,
        user_positions,
    })
}
