//! Dyadic timestep grids and the joint `(s, t)` sampling distribution.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Self-distillation characterization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Setting {
    Lsd,
    Esd,
    Ssd,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Lsd, Setting::Esd, Setting::Ssd];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Lsd => "lsd",
            Setting::Esd => "esd",
            Setting::Ssd => "ssd",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsd" => Ok(Setting::Lsd),
            "esd" => Ok(Setting::Esd),
            "ssd" => Ok(Setting::Ssd),
            other => Err(Error::InvalidArgument(format!("unknown setting '{other}'"))),
        }
    }
}

/// The exact time `num / 2^level`.
#[derive(Clone, Copy, Debug)]
pub struct GridTime {
    num: u64,
    level: u32,
}

impl GridTime {
    pub fn new(num: u64, level: u32) -> Result<Self> {
        if level > 60 || num > (1u64 << level) {
            return Err(Error::InvalidArgument(format!(
                "{num}/2^{level} is not a grid time in [0, 1]"
            )));
        }
        Ok(Self { num, level })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn level(self) -> u32 {
        self.level
    }

    /// Exact for every level up to 52.
    pub fn value(self) -> f64 {
        self.num as f64 / (1u64 << self.level) as f64
    }

    /// Numerator when expressed on `level`, if representable there.
    pub fn on_level(self, level: u32) -> Option<u64> {
        if level >= self.level {
            Some(self.num << (level - self.level))
        } else {
            let shift = self.level - level;
            (self.num % (1u64 << shift) == 0).then(|| self.num >> shift)
        }
    }

    /// `(a + b) / 2`, exact one level finer.
    pub fn midpoint(a: GridTime, b: GridTime) -> GridTime {
        let level = a.level.max(b.level) + 1;
        let sum = a.on_level(level - 1).unwrap() + b.on_level(level - 1).unwrap();
        GridTime { num: sum, level }
    }
}

impl PartialEq for GridTime {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for GridTime {}

impl PartialOrd for GridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GridTime {
    fn cmp(&self, other: &Self) -> Ordering {
        let level = self.level.max(other.level);
        self.on_level(level).cmp(&other.on_level(level))
    }
}

/// A sampled pair `s <= t`; `s == t` marks a flow-matching sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimestepPair {
    pub s: GridTime,
    pub t: GridTime,
    /// Discretization level the pair was drawn on.
    pub level: u32,
    /// Shortcut midpoint, present for SSD pairs only.
    pub r: Option<GridTime>,
}

impl TimestepPair {
    pub fn fm(t: GridTime) -> Self {
        Self {
            s: t,
            t,
            level: t.level,
            r: None,
        }
    }

    pub fn is_fm(&self) -> bool {
        self.s == self.t
    }

    pub fn s(&self) -> f64 {
        self.s.value()
    }

    pub fn t(&self) -> f64 {
        self.t.value()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig {
    pub d_max: u32,
    pub p_fm: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { d_max: 7, p_fm: 0.75 }
    }
}

impl GridConfig {
    pub fn new(d_max: u32, p_fm: f64) -> Result<Self> {
        if d_max < 1 || d_max > 30 {
            return Err(Error::InvalidArgument(format!("d_max {d_max} outside [1, 30]")));
        }
        if !(p_fm > 0.0 && p_fm < 1.0) {
            return Err(Error::InvalidArgument(format!("p_fm {p_fm} outside (0, 1)")));
        }
        Ok(Self { d_max, p_fm })
    }
}

/// `[0, 1/2^d, ..., 1]`.
pub fn make_grid(d: u32) -> Vec<f64> {
    let k = 1u64 << d;
    (0..=k).map(|i| GridTime { num: i, level: d }.value()).collect()
}

/// Draws a flow-matching pair on the finest grid.
pub fn sample_fm_pair<R: Rng + ?Sized>(cfg: &GridConfig, rng: &mut R) -> TimestepPair {
    let k = rng.random_range(0..=(1u64 << cfg.d_max));
    TimestepPair::fm(GridTime {
        num: k,
        level: cfg.d_max,
    })
}

/// Draws a self-distillation pair with `s < t` for `setting`.
pub fn sample_sd_pair<R: Rng + ?Sized>(setting: Setting, cfg: &GridConfig, rng: &mut R) -> TimestepPair {
    match setting {
        Setting::Lsd | Setting::Esd => {
            let d = rng.random_range(0..=cfg.d_max);
            let k = rng.random_range(1..=(1u64 << d));
            let kp = rng.random_range(0..k);
            TimestepPair {
                s: GridTime { num: kp, level: d },
                t: GridTime { num: k, level: d },
                level: d,
                r: None,
            }
        }
        Setting::Ssd => {
            let d = rng.random_range(0..cfg.d_max);
            let k = rng.random_range(1..=(1u64 << d));
            let s = GridTime { num: k - 1, level: d };
            let t = GridTime { num: k, level: d };
            TimestepPair {
                s,
                t,
                level: d,
                r: Some(GridTime::midpoint(s, t)),
            }
        }
    }
}

/// Draws from the joint distribution: an FM pair with probability `p_fm`,
/// otherwise an SD pair for `setting`.
pub fn sample_pair<R: Rng + ?Sized>(setting: Setting, cfg: &GridConfig, rng: &mut R) -> TimestepPair {
    if rng.random::<f64>() < cfg.p_fm {
        sample_fm_pair(cfg, rng)
    } else {
        sample_sd_pair(setting, cfg, rng)
    }
}
