//! Link-level radio model: path loss and LOS probability for the urban
//! macro/micro profiles, planar-array gain, RSRP, SNR and Shannon capacity.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ArraySize, Config, Node, NodeKind};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Effective environment height for the breakpoint distance.
const ENV_HEIGHT: f64 = 1.0;
const MIN_DISTANCE: f64 = 10.0;
/// Peak gain of a single patch element, dBi.
pub const ELEMENT_GAIN_DBI: f64 = 8.0;
const ELEMENT_BEAMWIDTH_DEG: f64 = 65.0;
const ELEMENT_FLOOR_DB: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("unsupported propagation profile '{0}'")]
    UnsupportedProfile(String),
    #[error("invalid link geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    /// Urban macro: donor-side links.
    Uma,
    /// Urban micro street canyon: relay-side links.
    Umi,
}

impl Profile {
    /// Links touching the donor use the macro profile, all others micro.
    pub fn for_link(a: &Node, b: &Node) -> Profile {
        if a.kind == NodeKind::Dgnb || b.kind == NodeKind::Dgnb {
            Profile::Uma
        } else {
            Profile::Umi
        }
    }

    /// Log-normal shadow-fading standard deviation, dB.
    pub fn shadowing_sigma(self, los: bool) -> f64 {
        match (self, los) {
            (_, true) => 4.0,
            (Profile::Uma, false) => 6.0,
            (Profile::Umi, false) => 7.82,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Uma => "UMa",
            Profile::Umi => "UMi",
        })
    }
}

impl FromStr for Profile {
    type Err = RadioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uma" => Ok(Profile::Uma),
            "umi" => Ok(Profile::Umi),
            other => Err(RadioError::UnsupportedProfile(other.to_string())),
        }
    }
}

/// Geometry of a link. `h_bs` is the higher endpoint, `h_ut` the lower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub d2d: f64,
    pub d3d: f64,
    /// Offsets from the transmitter boresight; zero for aligned beams.
    pub azimuth: f64,
    pub elevation: f64,
    pub h_bs: f64,
    pub h_ut: f64,
}

impl LinkGeometry {
    pub fn between(a: &Node, b: &Node) -> Self {
        let d2d = a.position.distance(&b.position);
        let dh = a.height - b.height;
        Self {
            d2d,
            d3d: d2d.hypot(dh),
            azimuth: 0.0,
            elevation: 0.0,
            h_bs: a.height.max(b.height),
            h_ut: a.height.min(b.height),
        }
    }

    /// Ground-level geometry helper, mostly for tests.
    pub fn from_d2d(d2d: f64, h_bs: f64, h_ut: f64) -> Self {
        Self {
            d2d,
            d3d: d2d.hypot(h_bs - h_ut),
            azimuth: 0.0,
            elevation: 0.0,
            h_bs,
            h_ut,
        }
    }
}

/// Large-scale channel realization of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub los: bool,
    pub blocked: bool,
    pub path_loss: f64,
    /// Zero-mean log-normal term added to the path loss, dB.
    pub shadowing: f64,
}

impl ChannelState {
    pub fn total_loss(&self, blockage_extra_loss: f64) -> f64 {
        self.path_loss + self.shadowing + if self.blocked { blockage_extra_loss } else { 0.0 }
    }
}

fn free_space_loss(d3d: f64, fc: f64) -> f64 {
    20.0 * (4.0 * PI * d3d * fc / SPEED_OF_LIGHT).log10()
}

/// Deterministic path loss in dB. Distances below 10 m are evaluated at 10 m,
/// and the result never drops below free-space loss.
pub fn path_loss_db(
    geom: &LinkGeometry,
    profile: Profile,
    los: bool,
    fc: f64,
) -> Result<f64, RadioError> {
    if !(geom.d2d >= 0.0 && geom.d3d >= geom.d2d - 1e-9 && fc > 0.0) {
        return Err(RadioError::InvalidGeometry(format!("{geom:?} at {fc} Hz")));
    }
    let d3d = geom.d3d.max(MIN_DISTANCE);
    let d2d = geom.d2d.max(MIN_DISTANCE);
    let fc_ghz = fc / 1e9;
    let h_bs = geom.h_bs - ENV_HEIGHT;
    let h_ut = (geom.h_ut - ENV_HEIGHT).max(0.0);
    let breakpoint = 4.0 * h_bs * h_ut * fc / SPEED_OF_LIGHT;
    let dh2 = (geom.h_bs - geom.h_ut).powi(2);

    let pl_los = match profile {
        Profile::Uma => {
            if d2d <= breakpoint {
                28.0 + 22.0 * d3d.log10() + 20.0 * fc_ghz.log10()
            } else {
                28.0 + 40.0 * d3d.log10() + 20.0 * fc_ghz.log10()
                    - 9.0 * (breakpoint * breakpoint + dh2).log10()
            }
        }
        Profile::Umi => {
            if d2d <= breakpoint {
                32.4 + 21.0 * d3d.log10() + 20.0 * fc_ghz.log10()
            } else {
                32.4 + 40.0 * d3d.log10() + 20.0 * fc_ghz.log10()
                    - 9.5 * (breakpoint * breakpoint + dh2).log10()
            }
        }
    };
    let pl = if los {
        pl_los
    } else {
        let nlos = match profile {
            Profile::Uma => {
                13.54 + 39.08 * d3d.log10() + 20.0 * fc_ghz.log10() - 0.6 * (geom.h_ut - 1.5)
            }
            Profile::Umi => {
                22.4 + 35.3 * d3d.log10() + 21.3 * fc_ghz.log10() - 0.3 * (geom.h_ut - 1.5)
            }
        };
        pl_los.max(nlos)
    };
    Ok(pl.max(free_space_loss(d3d, fc)))
}

/// Probability that a link of this geometry is line-of-sight.
pub fn los_probability(geom: &LinkGeometry, profile: Profile) -> f64 {
    let d = geom.d2d;
    if d <= 18.0 {
        return 1.0;
    }
    let p = match profile {
        Profile::Umi => 18.0 / d + (-d / 36.0).exp() * (1.0 - 18.0 / d),
        Profile::Uma => {
            let c = if geom.h_ut <= 13.0 {
                0.0
            } else {
                ((geom.h_ut - 13.0) / 10.0).powf(1.5)
            };
            (18.0 / d + (-d / 63.0).exp() * (1.0 - 18.0 / d))
                * (1.0 + c * 1.25 * (d / 100.0).powi(3) * (-d / 150.0).exp())
        }
    };
    p.clamp(0.0, 1.0)
}

fn element_gain_db(offset: f64) -> f64 {
    let deg = offset.to_degrees();
    ELEMENT_GAIN_DBI - (12.0 * (deg / ELEMENT_BEAMWIDTH_DEG).powi(2)).min(ELEMENT_FLOOR_DB)
}

/// Normalized array-factor power of an N-element half-wavelength linear
/// array steered to boresight, `|AF|^2 / N`.
fn linear_array_power(n: u32, offset: f64) -> f64 {
    let n = n as f64;
    let psi = PI * offset.sin();
    let half = psi / 2.0;
    if half.sin().abs() < 1e-12 {
        return n;
    }
    let ratio = (n * half).sin() / half.sin();
    ratio * ratio / n
}

/// Gain of a planar array steered to boresight, observed `offset` radians
/// off boresight in azimuth.
pub fn antenna_gain_db(array: ArraySize, offset: f64) -> f64 {
    let offset = (offset + PI).rem_euclid(2.0 * PI) - PI;
    let af = linear_array_power(array.cols, offset).max(1e-6);
    element_gain_db(offset) + 10.0 * (array.rows as f64).log10() + 10.0 * af.log10()
}

/// Received power from the transmit power budget and the gain/loss chain.
pub fn received_power_dbm(
    tx_power: f64,
    beams_active: u32,
    tx_gain: f64,
    rx_gain: f64,
    total_loss: f64,
) -> f64 {
    assert!(beams_active >= 1, "at least one beam must be active");
    tx_power - 10.0 * (beams_active as f64).log10() + tx_gain + rx_gain - total_loss
}

/// RSRP over an aligned link, splitting the transmit power across
/// `beams_active` simultaneous beams.
pub fn rsrp_dbm(
    tx: &Node,
    rx: &Node,
    ch: &ChannelState,
    beams_active: u32,
    blockage_extra_loss: f64,
) -> f64 {
    received_power_dbm(
        tx.tx_power,
        beams_active,
        antenna_gain_db(tx.array, 0.0),
        antenna_gain_db(rx.array, 0.0),
        ch.total_loss(blockage_extra_loss),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub rsrp: f64,
    /// SNR after subtracting the interference margin, dB.
    pub snr_effective: f64,
    pub spectral_efficiency: f64,
}

impl LinkBudget {
    /// Budget at a receiver with the given noise figure. Noise is integrated
    /// over the whole carrier: TDM allocations occupy all subcarriers.
    pub fn new(rsrp: f64, rx_noise_figure: f64, cfg: &Config) -> Self {
        let noise = cfg.noise_psd + 10.0 * cfg.bandwidth.log10() + rx_noise_figure;
        Self::from_snr(rsrp, rsrp - noise - cfg.interference_margin, cfg.se_cap)
    }

    pub fn from_snr(rsrp: f64, snr_effective: f64, se_cap: f64) -> Self {
        let se = (1.0 + 10f64.powf(snr_effective / 10.0)).log2().min(se_cap);
        Self {
            rsrp,
            snr_effective,
            spectral_efficiency: se.max(0.0),
        }
    }
}

/// Shannon rate of the link over `bandwidth_fraction` of the carrier time.
pub fn link_capacity_bps(budget: &LinkBudget, bandwidth_fraction: f64, cfg: &Config) -> f64 {
    assert!(
        (0.0..=1.0).contains(&bandwidth_fraction),
        "bandwidth fraction {bandwidth_fraction} outside [0, 1]"
    );
    cfg.bandwidth * bandwidth_fraction * budget.spectral_efficiency
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geom(d3d: f64) -> LinkGeometry {
        LinkGeometry {
            d2d: d3d,
            d3d,
            azimuth: 0.0,
            elevation: 0.0,
            h_bs: 10.0,
            h_ut: 1.5,
        }
    }

    #[test]
    fn umi_los_at_100m() {
        // Independent evaluation: 32.4 + 21*2 + 20*log10(30) = 103.9424
        let pl = path_loss_db(&geom(100.0), Profile::Umi, true, 30e9).unwrap();
        assert_abs_diff_eq!(pl, 103.9424, epsilon = 1e-3);
    }

    #[test]
    fn short_distances_clamp_to_ten_metres() {
        let near = path_loss_db(&geom(1.0), Profile::Umi, true, 30e9).unwrap();
        let ten = path_loss_db(&geom(10.0), Profile::Umi, true, 30e9).unwrap();
        assert_eq!(near, ten);
    }

    #[test]
    fn nlos_never_below_los() {
        for profile in [Profile::Uma, Profile::Umi] {
            let g = LinkGeometry::from_d2d(200.0, 25.0, 1.5);
            let los = path_loss_db(&g, profile, true, 30e9).unwrap();
            let nlos = path_loss_db(&g, profile, false, 30e9).unwrap();
            assert!(nlos >= los);
        }
    }

    #[test]
    fn uma_beyond_breakpoint_uses_steeper_slope() {
        // 25 m / 1.5 m at 30 GHz: d'BP = 4 * 24 * 0.5 * 30e9 / c ~ 4803 m
        let g = LinkGeometry::from_d2d(6000.0, 25.0, 1.5);
        let pl = path_loss_db(&g, Profile::Uma, true, 30e9).unwrap();
        let bp = 4.0 * 24.0 * 0.5 * 30e9 / SPEED_OF_LIGHT;
        let expected = 28.0 + 40.0 * g.d3d.log10() + 20.0 * 30f64.log10()
            - 9.0 * (bp * bp + 23.5f64.powi(2)).log10();
        assert_abs_diff_eq!(pl, expected, epsilon = 1e-9);
    }

    #[test]
    fn unknown_profile_is_an_error() {
        assert!(matches!(
            "rural".parse::<Profile>(),
            Err(RadioError::UnsupportedProfile(_))
        ));
        assert_eq!("UMi".parse::<Profile>().unwrap(), Profile::Umi);
    }

    #[test]
    fn los_probability_limits() {
        for p in [Profile::Uma, Profile::Umi] {
            assert_eq!(los_probability(&LinkGeometry::from_d2d(0.0, 10.0, 1.5), p), 1.0);
            assert!(los_probability(&LinkGeometry::from_d2d(1e6, 10.0, 1.5), p) < 1e-4);
        }
    }

    #[test]
    fn los_probability_intermediate() {
        // Independent evaluation of 18/d + exp(-d/36)(1 - 18/d) at 50 m
        // and 18/d + exp(-d/63)(1 - 18/d) at 100 m.
        let umi = los_probability(&LinkGeometry::from_d2d(50.0, 10.0, 1.5), Profile::Umi);
        assert_abs_diff_eq!(umi, 0.360 + 0.2493522087 * 0.64, epsilon = 1e-6);
        let uma = los_probability(&LinkGeometry::from_d2d(100.0, 25.0, 1.5), Profile::Uma);
        assert_abs_diff_eq!(uma, 0.18 + 0.2044766303 * 0.82, epsilon = 1e-6);
    }

    /// Direct complex sum over the elements, independent of the closed form.
    fn brute_force_gain(array: ArraySize, offset: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for n in 0..array.cols {
            let phase = PI * n as f64 * offset.sin();
            re += phase.cos();
            im += phase.sin();
        }
        let af = ((re * re + im * im) / array.cols as f64).max(1e-6);
        let deg = offset.to_degrees();
        let element = 8.0 - (12.0 * (deg / 65.0).powi(2)).min(30.0);
        element + 10.0 * (array.rows as f64).log10() + 10.0 * af.log10()
    }

    #[test]
    fn boresight_gain_of_bs_array() {
        let g = antenna_gain_db(ArraySize::new(16, 16), 0.0);
        assert_abs_diff_eq!(g, 8.0 + 10.0 * 256f64.log10(), epsilon = 1e-9);
        assert_abs_diff_eq!(g, 32.08, epsilon = 0.01);
        assert_abs_diff_eq!(g, brute_force_gain(ArraySize::new(16, 16), 0.0), epsilon = 1e-9);
    }

    #[test]
    fn single_element_is_element_gain() {
        assert_abs_diff_eq!(antenna_gain_db(ArraySize::new(1, 1), 0.0), ELEMENT_GAIN_DBI);
    }

    #[test]
    fn gain_matches_direct_summation() {
        for &off in &[0.01, 0.05, 0.1, 0.3, 0.7, 1.2] {
            for arr in [ArraySize::new(4, 4), ArraySize::new(16, 16), ArraySize::new(2, 8)] {
                let a = antenna_gain_db(arr, off);
                let b = brute_force_gain(arr, off);
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rsrp_chain_by_hand() {
        // 40 dBm, one beam, 32.1 + 12 dBi, 103.9 dB -> -19.8 dBm
        let r = received_power_dbm(40.0, 1, 32.1, 12.0, 103.9);
        assert_abs_diff_eq!(r, -19.8, epsilon = 1e-9);
        let two = received_power_dbm(40.0, 2, 32.1, 12.0, 103.9);
        assert_abs_diff_eq!(r - two, 3.0103, epsilon = 1e-4);
    }

    #[test]
    fn blockage_adds_extra_loss() {
        let cfg = Config::default();
        let sc = crate::scenario::generate_deployment(&cfg, 1);
        let (tx, rx) = (&sc.nodes[0], &sc.nodes[5]);
        let mut ch = ChannelState {
            los: true,
            blocked: false,
            path_loss: 110.0,
            shadowing: 0.0,
        };
        let open = rsrp_dbm(tx, rx, &ch, 1, 20.0);
        ch.blocked = true;
        assert_abs_diff_eq!(open - rsrp_dbm(tx, rx, &ch, 1, 20.0), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn capacity_examples() {
        let cfg = Config::default();
        let unit = LinkBudget::from_snr(-50.0, 0.0, cfg.se_cap);
        assert_abs_diff_eq!(link_capacity_bps(&unit, 1.0, &cfg), 400e6, epsilon = 1e-3);
        assert_eq!(link_capacity_bps(&unit, 0.0, &cfg), 0.0);
        // log2(1 + 1e4) = 13.29 > 7.4, so the cap binds
        assert!((1.0 + 1e4f64).log2() > 7.4);
        let capped = LinkBudget::from_snr(-20.0, 40.0, cfg.se_cap);
        assert_abs_diff_eq!(link_capacity_bps(&capped, 1.0, &cfg), 2.96e9, epsilon = 1.0);
    }

    #[test]
    fn noise_floor_uses_full_carrier() {
        let cfg = Config::default();
        // -173.93 + 86.0206 + 13 = -74.9094 dBm at a UE; 3 dB margin
        let b = LinkBudget::new(-74.9094, 13.0, &cfg);
        assert_abs_diff_eq!(b.snr_effective, -3.0, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn gain_peaks_at_boresight(off in -3.14f64..3.14, r in 1u32..20, c in 1u32..20) {
            let arr = ArraySize::new(r, c);
            prop_assert!(antenna_gain_db(arr, off) <= antenna_gain_db(arr, 0.0) + 1e-9);
        }

        #[test]
        fn rsrp_strictly_decreasing(loss in 50.0f64..200.0, dl in 0.01f64..30.0, beams in 1u32..8) {
            let a = received_power_dbm(33.0, beams, 32.0, 20.0, loss);
            prop_assert!(received_power_dbm(33.0, beams, 32.0, 20.0, loss + dl) < a);
            prop_assert!(received_power_dbm(33.0, beams + 1, 32.0, 20.0, loss) < a);
        }

        #[test]
        fn capacity_monotone_linear_and_capped(
            rsrp in -120.0f64..0.0, d in 0.0f64..20.0, frac in 0.0f64..1.0
        ) {
            let cfg = Config::default();
            let lo = LinkBudget::new(rsrp, 7.0, &cfg);
            let hi = LinkBudget::new(rsrp + d, 7.0, &cfg);
            let c_lo = link_capacity_bps(&lo, frac, &cfg);
            prop_assert!(link_capacity_bps(&hi, frac, &cfg) >= c_lo);
            prop_assert!((c_lo - frac * link_capacity_bps(&lo, 1.0, &cfg)).abs() <= 1e-6 * (1.0 + c_lo));
            prop_assert!(c_lo <= cfg.bandwidth * cfg.se_cap + 1e-6);
        }

        #[test]
        fn path_loss_orderings(d2d in 0.0f64..3000.0, uma in any::<bool>()) {
            let profile = if uma { Profile::Uma } else { Profile::Umi };
            let g = LinkGeometry::from_d2d(d2d, if uma { 25.0 } else { 10.0 }, 1.5);
            let los = path_loss_db(&g, profile, true, 30e9).unwrap();
            let nlos = path_loss_db(&g, profile, false, 30e9).unwrap();
            prop_assert!(los <= nlos);
            prop_assert!(los >= free_space_loss(g.d3d.max(10.0), 30e9) - 1e-9);
        }

        #[test]
        fn los_probability_non_increasing(a in 0.0f64..2000.0, b in 0.0f64..2000.0, uma in any::<bool>()) {
            let profile = if uma { Profile::Uma } else { Profile::Umi };
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            let pn = los_probability(&LinkGeometry::from_d2d(near, 10.0, 1.5), profile);
            let pf = los_probability(&LinkGeometry::from_d2d(far, 10.0, 1.5), profile);
            prop_assert!((0.0..=1.0).contains(&pn));
            prop_assert!(pf <= pn + 1e-12);
        }
    }
}
