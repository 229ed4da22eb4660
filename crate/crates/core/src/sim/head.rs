//! Spherical-head binaural rendering: Woodworth ITD, fractional delays and a
//! first-order head-shadow filter.

use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const HEAD_RADIUS: f64 = 0.0875;
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Default source distance in metres.
pub const SOURCE_DISTANCE: f64 = 1.5;

/// Taps in the Hann-windowed sinc fractional-delay kernel.
pub const FRAC_DELAY_TAPS: usize = 64;
/// Extra samples so the shadow filter's IIR tail can decay below 1e-9.
const SHADOW_TAIL: usize = 96;
/// Per-ear impulse-response length produced by [`ear_kernel`].
pub const EAR_KERNEL_LEN: usize = FRAC_DELAY_TAPS + SHADOW_TAIL;

const ALPHA_MIN: f64 = 0.1;
const THETA_MIN_DEG: f64 = 150.0;

/// One binaural impulse response at a grid azimuth.
#[derive(Debug, Clone)]
pub struct Brir {
    pub left: Vec<f32>,
    pub right: Vec<f32>,
    pub azimuth_deg: i32,
    pub room_id: String,
    pub measured_t60: Option<f64>,
    pub measured_drr: Option<f64>,
}

impl Brir {
    pub fn new(left: Vec<f32>, right: Vec<f32>, azimuth_deg: i32, room_id: &str) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::InvalidInput(format!(
                "brir ear lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        check_grid_azimuth(azimuth_deg)?;
        Ok(Self {
            left,
            right,
            azimuth_deg,
            room_id: room_id.into(),
            measured_t60: None,
            measured_drr: None,
        })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

pub fn check_grid_azimuth(azimuth_deg: i32) -> Result<()> {
    if !(-90..=90).contains(&azimuth_deg) || azimuth_deg % 5 != 0 {
        return Err(Error::InvalidInput(format!(
            "azimuth {azimuth_deg} not on the -90..90 step-5 grid"
        )));
    }
    Ok(())
}

/// Woodworth interaural time difference in seconds.
///
/// Positive azimuth (source to the right) gives a positive ITD: the right
/// ear leads and the left ear's signal arrives ITD later.
pub fn woodworth_itd(azimuth_deg: f64) -> Result<f64> {
    if !(-90.0..=90.0).contains(&azimuth_deg) {
        return Err(Error::InvalidInput(format!(
            "azimuth {azimuth_deg} outside [-90, 90]"
        )));
    }
    let theta = azimuth_deg.to_radians();
    Ok(HEAD_RADIUS / SPEED_OF_SOUND * (theta + theta.sin()))
}

/// Hann-windowed sinc kernel realising a delay of `delay` samples
/// (may be fractional; 0 <= delay <= TAPS-8 for full support).
fn frac_delay_kernel(delay: f64) -> [f64; FRAC_DELAY_TAPS] {
    let mut h = [0.0; FRAC_DELAY_TAPS];
    let n = FRAC_DELAY_TAPS as f64;
    for (i, v) in h.iter_mut().enumerate() {
        let t = i as f64 - delay;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        };
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1.0)).cos();
        *v = sinc * w;
    }
    h
}

/// Brown-Duda style high-frequency gain for an incidence angle, in degrees,
/// between the source direction and the ear's axis (0 = facing the source).
fn shadow_alpha(theta_ear_deg: f64) -> f64 {
    (1.0 + ALPHA_MIN / 2.0)
        + (1.0 - ALPHA_MIN / 2.0) * (theta_ear_deg * 180.0 / THETA_MIN_DEG).to_radians().cos()
}

/// One-pole/one-zero head-shadow filter (bilinear transform of
/// H(s) = (2 w0 + alpha s) / (2 w0 + s), w0 = c/a), applied in place.
fn apply_shadow(x: &mut [f64], alpha: f64) {
    let w0 = SPEED_OF_SOUND / HEAD_RADIUS;
    let fs = SAMPLE_RATE as f64;
    let b0 = (w0 + alpha * fs) / (w0 + fs);
    let b1 = (w0 - alpha * fs) / (w0 + fs);
    let a1 = (w0 - fs) / (w0 + fs);
    let mut x1 = 0.0;
    let mut y1 = 0.0;
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 - a1 * y1;
        x1 = *v;
        y1 = y;
        *v = y;
    }
}

/// Impulse response of one ear for a source at `azimuth_deg`, `distance`
/// metres: fractional delay `base_delay + itd_part` samples, head shadow for
/// the ear at `ear_azimuth_deg` (+90 right, -90 left), 1/r gain.
fn ear_kernel(azimuth_deg: f64, ear_azimuth_deg: f64, delay_samples: f64, gain: f64) -> Vec<f64> {
    let mut out = vec![0.0; EAR_KERNEL_LEN];
    let h = frac_delay_kernel(delay_samples);
    for (o, v) in out.iter_mut().zip(h) {
        *o = v * gain;
    }
    let theta_ear = (azimuth_deg - ear_azimuth_deg).abs().min(360.0 - (azimuth_deg - ear_azimuth_deg).abs());
    apply_shadow(&mut out, shadow_alpha(theta_ear));
    out
}

/// In-kernel slack so the centre delay plus half the largest ITD stays well
/// inside the fractional-delay kernel's support.
const KERNEL_SLACK: f64 = 16.0;

/// One arrival rendered through the head model: a pair of per-ear kernels to
/// be added into an impulse-response buffer at `offset` samples.
pub(crate) struct ArrivalKernels {
    pub offset: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Binaural kernels for a single arrival from `azimuth_deg` whose total
/// propagation delay is `delay_samples` (may be fractional), with amplitude
/// `gain`. The inter-aural delay is split evenly across the two ears.
pub(crate) fn head_pair(azimuth_deg: f64, delay_samples: f64, gain: f64) -> ArrivalKernels {
    let itd_half = HEAD_RADIUS / SPEED_OF_SOUND
        * (azimuth_deg.to_radians() + azimuth_deg.to_radians().sin())
        * SAMPLE_RATE as f64
        / 2.0;
    let offset = (delay_samples - KERNEL_SLACK).floor().max(0.0);
    let local = delay_samples - offset;
    // Positive azimuth: right ear leads, left lags.
    ArrivalKernels {
        offset: offset as usize,
        left: ear_kernel(azimuth_deg, -90.0, local + itd_half, gain),
        right: ear_kernel(azimuth_deg, 90.0, local - itd_half, gain),
    }
}

/// Anechoic binaural impulse response on the 5-degree grid at the default
/// source distance (propagation delay included).
pub fn synth_anechoic_brir(azimuth_deg: i32) -> Result<Brir> {
    check_grid_azimuth(azimuth_deg)?;
    let delay = SOURCE_DISTANCE / SPEED_OF_SOUND * SAMPLE_RATE as f64;
    let arrival = head_pair(azimuth_deg as f64, delay, 1.0 / SOURCE_DISTANCE);
    let total = arrival.offset + EAR_KERNEL_LEN;
    let mut left = vec![0.0f32; total];
    let mut right = vec![0.0f32; total];
    for i in 0..EAR_KERNEL_LEN {
        left[arrival.offset + i] = arrival.left[i] as f32;
        right[arrival.offset + i] = arrival.right[i] as f32;
    }
    let mut brir = Brir::new(left, right, azimuth_deg, "anechoic")?;
    brir.measured_drr = Some(f64::INFINITY);
    Ok(brir)
}
