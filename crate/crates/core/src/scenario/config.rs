//! Simulation configuration.
//!
//! A [`Config`] can be built from defaults, loaded from a `key = value` text
//! file, and patched with individual overrides via [`Config::set`]. Every
//! field is addressable by its name, which is also what sweeps use to vary
//! parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How UEs and IAB nodes pick their route to the donor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssociationScheme {
    /// Fewest hops to the donor.
    MinHops,
    /// Largest worst-link RSRP along the route.
    MaxRsrp,
}

/// DL/UL symbol split policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotFormatPolicy {
    Static5050,
    Pf,
    Wpf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectivityMode {
    /// Single connectivity, no reaction to blockage.
    Sc,
    /// Multi-connectivity, all active links used simultaneously.
    Mc,
    /// Single connectivity with fast switching on blockage.
    ScFs,
    /// Fast switching plus periodic re-selection of the best link.
    ScFsScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeamConfig {
    AllSingle,
    DgnbMulti,
    AllMulti,
}

/// Planar antenna array dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySize {
    pub rows: u32,
    pub cols: u32,
}

impl ArraySize {
    pub const fn new(rows: u32, cols: u32) -> Self {
        Self { rows, cols }
    }

    pub fn elements(&self) -> u32 {
        self.rows * self.cols
    }
}

macro_rules! named_enum {
    ($ty:ty { $($variant:ident => [$($name:literal),+]),+ $(,)? }) => {
        impl $ty {
            pub fn name(&self) -> &'static str {
                match self {
                    $(Self::$variant => named_enum!(@first $($name),+),)+
                }
            }

            pub fn all() -> &'static [$ty] {
                &[$(Self::$variant),+]
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let lower = s.trim().to_ascii_lowercase();
                $(
                    if [$($name),+].iter().any(|n| n.to_ascii_lowercase() == lower) {
                        return Ok(Self::$variant);
                    }
                )+
                Err(format!("unknown {} '{}'", stringify!($ty), s.trim()))
            }
        }
    };
    (@first $first:literal $(, $rest:literal)*) => { $first };
}

named_enum!(AssociationScheme {
    MinHops => ["MinHops", "min_hops"],
    MaxRsrp => ["MaxRsrp", "max_rsrp"],
});
named_enum!(SlotFormatPolicy {
    Static5050 => ["Static5050", "static", "50/50"],
    Pf => ["PF"],
    Wpf => ["WPF"],
});
named_enum!(ConnectivityMode {
    Sc => ["SC"],
    Mc => ["MC"],
    ScFs => ["SC_FS", "ScFs"],
    ScFsScan => ["SC_FS_Scan", "ScFsScan"],
});
named_enum!(BeamConfig {
    AllSingle => ["AllSingle"],
    DgnbMulti => ["DgnbMulti"],
    AllMulti => ["AllMulti"],
});

impl fmt::Display for ArraySize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for ArraySize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .trim()
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| format!("array size '{s}' must look like ROWSxCOLS"))?;
        let rows = r.trim().parse().map_err(|_| format!("bad row count in '{s}'"))?;
        let cols = c.trim().parse().map_err(|_| format!("bad column count in '{s}'"))?;
        Ok(Self { rows, cols })
    }
}

/// All simulation parameters. Units are SI unless noted (powers in dBm,
/// figures and margins in dB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub num_ues: usize,
    pub cell_radius: f64,
    pub tx_power_dgnb: f64,
    pub tx_power_iab: f64,
    pub tx_power_ue: f64,
    pub num_iab: usize,
    pub num_dgnb: usize,
    pub noise_figure_bs: f64,
    pub noise_figure_ue: f64,
    /// Thermal noise power spectral density, dBm/Hz.
    pub noise_psd: f64,
    pub array_ue: ArraySize,
    pub array_bs: ArraySize,
    /// m/s; blockers move at the same speed.
    pub ue_speed: f64,
    pub height_dgnb: f64,
    pub height_iab: f64,
    pub height_ue: f64,
    pub height_blocker: f64,
    pub blocker_radius: f64,
    /// Blockers per square meter.
    pub blocker_density: f64,
    pub mc_degree: usize,
    /// Bytes per FTP session.
    pub file_size: u64,
    /// Sessions per second per UE.
    pub session_rate_ul: f64,
    pub session_rate_dl: f64,
    pub association_scheme: AssociationScheme,
    pub slot_format_policy: SlotFormatPolicy,
    pub connectivity_mode: ConnectivityMode,
    pub beam_config: BeamConfig,
    pub sim_duration: f64,
    pub warmup: f64,
    pub seed: u64,
    pub interference_margin: f64,
    pub blockage_extra_loss: f64,
    /// Minimum downstream RSRP for a link to be usable, dBm.
    pub rsrp_threshold: f64,
    pub scan_period: f64,
    /// Spectral-efficiency ceiling, bit/s/Hz.
    pub se_cap: f64,
    pub topology_period: f64,
    pub mobility_tick: f64,
    /// UEs redraw their heading this often.
    pub direction_period: f64,
    /// Time a UE is unschedulable after switching serving node.
    pub switch_delay: f64,
    pub guard_symbols: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            carrier_frequency: 30e9,
            bandwidth: 400e6,
            num_ues: 60,
            cell_radius: 500.0,
            tx_power_dgnb: 40.0,
            tx_power_iab: 33.0,
            tx_power_ue: 23.0,
            num_iab: 3,
            num_dgnb: 1,
            noise_figure_bs: 7.0,
            noise_figure_ue: 13.0,
            noise_psd: -173.93,
            array_ue: ArraySize::new(4, 4),
            array_bs: ArraySize::new(16, 16),
            ue_speed: 3.0 / 3.6,
            height_dgnb: 25.0,
            height_iab: 10.0,
            height_ue: 1.5,
            height_blocker: 1.5,
            blocker_radius: 0.2,
            blocker_density: 0.1,
            mc_degree: 2,
            file_size: 2_000_000,
            session_rate_ul: 0.2,
            session_rate_dl: 0.5,
            association_scheme: AssociationScheme::MaxRsrp,
            slot_format_policy: SlotFormatPolicy::Static5050,
            connectivity_mode: ConnectivityMode::Sc,
            beam_config: BeamConfig::AllSingle,
            sim_duration: 100.0,
            warmup: 10.0,
            seed: 1,
            interference_margin: 3.0,
            blockage_extra_loss: 20.0,
            rsrp_threshold: -80.0,
            scan_period: 0.1,
            se_cap: 7.4,
            topology_period: 1.0,
            mobility_tick: 0.0125,
            direction_period: 10.0,
            switch_delay: 0.0,
            guard_symbols: 1,
        }
    }
}

/// One violated constraint, tagged with the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Names of every settable field, in declaration order.
pub const FIELD_NAMES: &[&str] = &[
    "carrier_frequency",
    "bandwidth",
    "num_ues",
    "cell_radius",
    "tx_power_dgnb",
    "tx_power_iab",
    "tx_power_ue",
    "num_iab",
    "num_dgnb",
    "noise_figure_bs",
    "noise_figure_ue",
    "noise_psd",
    "array_ue",
    "array_bs",
    "ue_speed",
    "height_dgnb",
    "height_iab",
    "height_ue",
    "height_blocker",
    "blocker_radius",
    "blocker_density",
    "mc_degree",
    "file_size",
    "session_rate_ul",
    "session_rate_dl",
    "association_scheme",
    "slot_format_policy",
    "connectivity_mode",
    "beam_config",
    "sim_duration",
    "warmup",
    "seed",
    "interference_margin",
    "blockage_extra_loss",
    "rsrp_threshold",
    "scan_period",
    "se_cap",
    "topology_period",
    "mobility_tick",
    "direction_period",
    "switch_delay",
    "guard_symbols",
];

fn parse_field<T: FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| ConfigError::new(field, format!("cannot parse '{}': {e}", value.trim())))
}

impl Config {
    /// Set a single field from its textual value. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        macro_rules! assign {
            ($($name:ident),+ $(,)?) => {
                match key {
                    $(stringify!($name) => self.$name = parse_field(key, value)?,)+
                    _ => return Err(ConfigError::new(key, "unknown configuration key")),
                }
            };
        }
        assign!(
            carrier_frequency,
            bandwidth,
            num_ues,
            cell_radius,
            tx_power_dgnb,
            tx_power_iab,
            tx_power_ue,
            num_iab,
            num_dgnb,
            noise_figure_bs,
            noise_figure_ue,
            noise_psd,
            array_ue,
            array_bs,
            ue_speed,
            height_dgnb,
            height_iab,
            height_ue,
            height_blocker,
            blocker_radius,
            blocker_density,
            mc_degree,
            file_size,
            session_rate_ul,
            session_rate_dl,
            association_scheme,
            slot_format_policy,
            connectivity_mode,
            beam_config,
            sim_duration,
            warmup,
            seed,
            interference_margin,
            blockage_extra_loss,
            rsrp_threshold,
            scan_period,
            se_cap,
            topology_period,
            mobility_tick,
            direction_period,
            switch_delay,
            guard_symbols,
        );
        Ok(())
    }

    /// Textual value of a field, in a form [`Config::set`] accepts back.
    pub fn get(&self, key: &str) -> Option<String> {
        macro_rules! read {
            ($($name:ident),+ $(,)?) => {
                match key {
                    $(stringify!($name) => Some(self.$name.to_string()),)+
                    _ => None,
                }
            };
        }
        read!(
            carrier_frequency,
            bandwidth,
            num_ues,
            cell_radius,
            tx_power_dgnb,
            tx_power_iab,
            tx_power_ue,
            num_iab,
            num_dgnb,
            noise_figure_bs,
            noise_figure_ue,
            noise_psd,
            array_ue,
            array_bs,
            ue_speed,
            height_dgnb,
            height_iab,
            height_ue,
            height_blocker,
            blocker_radius,
            blocker_density,
            mc_degree,
            file_size,
            session_rate_ul,
            session_rate_dl,
            association_scheme,
            slot_format_policy,
            connectivity_mode,
            beam_config,
            sim_duration,
            warmup,
            seed,
            interference_margin,
            blockage_extra_loss,
            rsrp_threshold,
            scan_period,
            se_cap,
            topology_period,
            mobility_tick,
            direction_period,
            switch_delay,
            guard_symbols,
        )
    }

    /// All fields as `(name, value)` pairs.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        FIELD_NAMES
            .iter()
            .map(|&k| (k, self.get(k).expect("every listed field is readable")))
            .collect()
    }

    /// Parse a `key = value` document on top of the defaults.
    ///
    /// Blank lines and `#` comments are ignored. Every malformed line and
    /// unknown key is reported, not just the first.
    pub fn from_kv_str(text: &str) -> Result<Self, Vec<ConfigError>> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_str(&mut self, text: &str) -> Result<(), Vec<ConfigError>> {
        let mut errors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k, v) {
                        errors.push(e);
                    }
                }
                None => errors.push(ConfigError::new(
                    &format!("line {}", lineno + 1),
                    format!("expected 'key = value', got '{line}'"),
                )),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn to_kv_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Compact single-line `key=value;...` form, used as a provenance column.
    pub fn to_provenance(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Check every invariant on `raw`, returning it unchanged if all hold.
pub fn validate_config(raw: Config) -> Result<Config, Vec<ConfigError>> {
    let mut errs = Vec::new();
    let c = &raw;

    let finite = [
        ("carrier_frequency", c.carrier_frequency),
        ("bandwidth", c.bandwidth),
        ("cell_radius", c.cell_radius),
        ("tx_power_dgnb", c.tx_power_dgnb),
        ("tx_power_iab", c.tx_power_iab),
        ("tx_power_ue", c.tx_power_ue),
        ("noise_figure_bs", c.noise_figure_bs),
        ("noise_figure_ue", c.noise_figure_ue),
        ("noise_psd", c.noise_psd),
        ("ue_speed", c.ue_speed),
        ("height_dgnb", c.height_dgnb),
        ("height_iab", c.height_iab),
        ("height_ue", c.height_ue),
        ("height_blocker", c.height_blocker),
        ("blocker_radius", c.blocker_radius),
        ("blocker_density", c.blocker_density),
        ("session_rate_ul", c.session_rate_ul),
        ("session_rate_dl", c.session_rate_dl),
        ("sim_duration", c.sim_duration),
        ("warmup", c.warmup),
        ("interference_margin", c.interference_margin),
        ("blockage_extra_loss", c.blockage_extra_loss),
        ("scan_period", c.scan_period),
        ("se_cap", c.se_cap),
        ("topology_period", c.topology_period),
        ("mobility_tick", c.mobility_tick),
        ("direction_period", c.direction_period),
        ("switch_delay", c.switch_delay),
    ];
    for (name, v) in finite {
        if !v.is_finite() {
            errs.push(ConfigError::new(name, "must be finite"));
        }
    }
    // The threshold may legitimately be +/- infinity (everything / nothing feasible).
    if c.rsrp_threshold.is_nan() {
        errs.push(ConfigError::new("rsrp_threshold", "must not be NaN"));
    }

    let positive = [
        ("carrier_frequency", c.carrier_frequency),
        ("bandwidth", c.bandwidth),
        ("cell_radius", c.cell_radius),
        ("sim_duration", c.sim_duration),
        ("scan_period", c.scan_period),
        ("se_cap", c.se_cap),
        ("topology_period", c.topology_period),
        ("mobility_tick", c.mobility_tick),
        ("direction_period", c.direction_period),
        ("blocker_radius", c.blocker_radius),
    ];
    for (name, v) in positive {
        if v.is_finite() && v <= 0.0 {
            errs.push(ConfigError::new(name, format!("{name} > 0 required")));
        }
    }
    let non_negative = [
        ("ue_speed", c.ue_speed),
        ("blocker_density", c.blocker_density),
        ("session_rate_ul", c.session_rate_ul),
        ("session_rate_dl", c.session_rate_dl),
        ("warmup", c.warmup),
        ("height_dgnb", c.height_dgnb),
        ("height_iab", c.height_iab),
        ("height_ue", c.height_ue),
        ("height_blocker", c.height_blocker),
        ("switch_delay", c.switch_delay),
        ("interference_margin", c.interference_margin),
        ("blockage_extra_loss", c.blockage_extra_loss),
    ];
    for (name, v) in non_negative {
        if v.is_finite() && v < 0.0 {
            errs.push(ConfigError::new(name, format!("{name} >= 0 required")));
        }
    }

    if c.num_ues < 1 {
        errs.push(ConfigError::new("num_ues", "num_ues >= 1 required"));
    }
    if c.num_dgnb != 1 {
        errs.push(ConfigError::new("num_dgnb", "exactly one donor is supported"));
    }
    if !(1..=2).contains(&c.mc_degree) {
        errs.push(ConfigError::new("mc_degree", "mc_degree must be 1 or 2"));
    }
    if c.file_size == 0 {
        errs.push(ConfigError::new("file_size", "file_size > 0 required"));
    }
    if c.warmup.is_finite() && c.sim_duration.is_finite() && c.warmup >= c.sim_duration {
        errs.push(ConfigError::new("warmup", "warmup < sim_duration required"));
    }
    if c.array_ue.elements() == 0 {
        errs.push(ConfigError::new("array_ue", "rows and cols must be >= 1"));
    }
    if c.array_bs.elements() == 0 {
        errs.push(ConfigError::new("array_bs", "rows and cols must be >= 1"));
    }
    if c.guard_symbols * 2 >= crate::mac::SYMBOLS_PER_SLOT {
        errs.push(ConfigError::new(
            "guard_symbols",
            "guard symbols must be fewer than half a slot",
        ));
    }
    if c.height_iab <= c.height_ue || c.height_dgnb <= c.height_ue {
        errs.push(ConfigError::new(
            "height_ue",
            "base stations must be mounted above UEs",
        ));
    }

    if errs.is_empty() {
        Ok(raw)
    } else {
        Err(errs)
    }
}
