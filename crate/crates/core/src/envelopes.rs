//! Dynamic operating envelopes and the security verification function.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NetworkError, PowerProfile, KW_TOL};

/// Corner enumeration is skipped above this many customers.
pub const MAX_CORNER_CUSTOMERS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("no envelope for customer {0}")]
    IncompleteMatrix(String),
    #[error("envelope of {customer} is invalid: [{lower_kw}, {upper_kw}]")]
    InvalidEnvelope {
        customer: String,
        lower_kw: f64,
        upper_kw: f64,
    },
    #[error("oracle needs at least one sample")]
    NoSamples,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lower_kw: f64,
    pub upper_kw: f64,
}

impl Envelope {
    pub fn new(lower_kw: f64, upper_kw: f64) -> Self {
        Envelope { lower_kw, upper_kw }
    }

    pub fn width_kw(&self) -> f64 {
        self.upper_kw - self.lower_kw
    }

    pub fn is_valid(&self) -> bool {
        self.lower_kw.is_finite() && self.upper_kw.is_finite() && self.lower_kw <= self.upper_kw
    }

    pub fn contains(&self, kw: f64) -> bool {
        kw >= self.lower_kw - KW_TOL && kw <= self.upper_kw + KW_TOL
    }

    pub fn clamp(&self, kw: f64) -> f64 {
        kw.clamp(self.lower_kw, self.upper_kw)
    }
}

/// Per-customer envelopes, keyed by customer name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DoeMatrix(pub BTreeMap<String, Envelope>);

impl DoeMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, customer: impl Into<String>, lower_kw: f64, upper_kw: f64) -> Self {
        self.0
            .insert(customer.into(), Envelope::new(lower_kw, upper_kw));
        self
    }

    pub fn get(&self, customer: &str) -> Option<&Envelope> {
        self.0.get(customer)
    }

    pub fn insert(&mut self, customer: impl Into<String>, env: Envelope) {
        self.0.insert(customer.into(), env);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Envelope)> {
        self.0.iter()
    }

    /// Lower and upper corner vectors ordered as `network.customers()`.
    pub fn corners(&self, network: &Network) -> Result<(Vec<f64>, Vec<f64>), EnvelopeError> {
        let mut lower = Vec::with_capacity(network.customers().len());
        let mut upper = Vec::with_capacity(network.customers().len());
        for name in network.customer_names() {
            let env = self
                .0
                .get(name)
                .ok_or_else(|| EnvelopeError::IncompleteMatrix(name.to_string()))?;
            if !env.is_valid() {
                return Err(EnvelopeError::InvalidEnvelope {
                    customer: name.to_string(),
                    lower_kw: env.lower_kw,
                    upper_kw: env.upper_kw,
                });
            }
            lower.push(env.lower_kw);
            upper.push(env.upper_kw);
        }
        Ok((lower, upper))
    }
}

/// Security margin of the whole envelope box: the worst line margin over
/// the all-lower and all-upper corner profiles. Line flows are monotone
/// in every customer's consumption on a radial DC network, so the
/// extremes of each flow over the box sit on those two corners and a
/// value `<= 0` certifies every profile inside the box.
pub fn verify_limits(network: &Network, doe: &DoeMatrix) -> Result<f64, EnvelopeError> {
    let (lower, upper) = doe.corners(network)?;
    let (m_lower, _) = network.worst_margin(&network.flows_dense(&lower));
    let (m_upper, _) = network.worst_margin(&network.flows_dense(&upper));
    Ok(m_lower.max(m_upper))
}

pub fn is_secure_margin(margin: f64) -> bool {
    margin <= KW_TOL
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub secure: bool,
    /// False when there were too many customers to enumerate corners and
    /// only random samples were checked.
    pub corners_enumerated: bool,
    pub profiles_checked: usize,
    pub worst_margin_kw: f64,
}

/// Brute-force check of the envelope box: `samples` uniform profiles plus,
/// for up to [`MAX_CORNER_CUSTOMERS`] customers, every one of the
/// `2^|C|` corners. Deterministic for a given seed.
pub fn verify_limits_oracle(
    network: &Network,
    doe: &DoeMatrix,
    samples: usize,
    seed: u64,
) -> Result<OracleReport, EnvelopeError> {
    if samples == 0 {
        return Err(EnvelopeError::NoSamples);
    }
    let (lower, upper) = doe.corners(network)?;
    let n = lower.len();
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut check = |profile: &[f64]| {
        let (m, _) = network.worst_margin(&network.flows_dense(profile));
        worst = worst.max(m);
        checked += 1;
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profile = vec![0.0; n];
    for _ in 0..samples {
        for (i, p) in profile.iter_mut().enumerate() {
            *p = if lower[i] < upper[i] {
                rng.gen_range(lower[i]..=upper[i])
            } else {
                lower[i]
            };
        }
        check(&profile);
    }

    let corners_enumerated = n <= MAX_CORNER_CUSTOMERS;
    if corners_enumerated {
        for mask in 0u32..(1u32 << n) {
            for (i, p) in profile.iter_mut().enumerate() {
                *p = if mask & (1 << i) != 0 { upper[i] } else { lower[i] };
            }
            check(&profile);
        }
    }

    Ok(OracleReport {
        secure: is_secure_margin(worst),
        corners_enumerated,
        profiles_checked: checked,
        worst_margin_kw: worst,
    })
}

/// Clamps each customer's power into its envelope and reports the absolute
/// adjustment per customer.
pub fn clamp_to_envelope(
    doe: &DoeMatrix,
    profile: &PowerProfile,
) -> Result<(PowerProfile, BTreeMap<String, f64>), EnvelopeError> {
    let mut clamped = PowerProfile::new();
    let mut curtailed = BTreeMap::new();
    for (name, &kw) in &profile.0 {
        let env = doe
            .get(name)
            .ok_or_else(|| EnvelopeError::IncompleteMatrix(name.clone()))?;
        let c = env.clamp(kw);
        clamped.0.insert(name.clone(), c);
        curtailed.insert(name.clone(), (kw - c).abs());
    }
    Ok((clamped, curtailed))
}
