//! Pipeline configuration and its `key = value` file format.

use serde::Serialize;

use crate::cms::{CMS_DEPTH, DEFAULT_CMS_WIDTH};
use crate::error::{ConfigError, LineError};
use crate::flow::DEFAULT_RETRANS_THRESHOLD_NS;
use crate::heavy::{DEFAULT_HEAVY_SIZE, DEFAULT_VOTE_THRESHOLD};
use crate::linear::DEFAULT_LC_SIZE;
use crate::priority::DEFAULT_PRIORITY_CAPACITY;

/// Switches that reproduce the literal kernel pseudocode instead of the
/// default, arithmetically consistent behavior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct CompatFlags {
    /// Always overwrite the expected sequence, even on a detected retransmission.
    pub alg1_literal_update: bool,
    /// Add evicted stats at the cells of the incoming key rather than the evicted one.
    pub alg1_literal_cms: bool,
    /// Feed every non-priority packet to the linear counter and sketch.
    pub alg1_literal_routing: bool,
    /// Clear an occupant's negative votes whenever it receives a matching packet.
    pub reset_votes_on_match: bool,
}

impl CompatFlags {
    /// All 16 flag combinations.
    pub fn all_combinations() -> impl Iterator<Item = CompatFlags> {
        (0u8..16).map(|bits| CompatFlags {
            alg1_literal_update: bits & 1 != 0,
            alg1_literal_cms: bits & 2 != 0,
            alg1_literal_routing: bits & 4 != 0,
            reset_votes_on_match: bits & 8 != 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineConfig {
    pub heavy_table_size: usize,
    pub vote_threshold: u64,
    pub retrans_threshold_ns: u64,
    pub lc_size: usize,
    pub cms_width: usize,
    pub cms_depth: usize,
    pub priority_capacity: usize,
    pub seed_heavy: u32,
    pub seed_lc: u32,
    pub seed_cms: [u32; CMS_DEPTH],
    pub flags: CompatFlags,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            heavy_table_size: DEFAULT_HEAVY_SIZE,
            vote_threshold: DEFAULT_VOTE_THRESHOLD,
            retrans_threshold_ns: DEFAULT_RETRANS_THRESHOLD_NS,
            lc_size: DEFAULT_LC_SIZE,
            cms_width: DEFAULT_CMS_WIDTH,
            cms_depth: CMS_DEPTH,
            priority_capacity: DEFAULT_PRIORITY_CAPACITY,
            seed_heavy: 0x9e37_79b9,
            seed_lc: 0x85eb_ca6b,
            seed_cms: [0xc2b2_ae35, 0x27d4_eb2f, 0x1656_67b1],
            flags: CompatFlags::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("heavy_table_size", self.heavy_table_size),
            ("lc_size", self.lc_size),
            ("cms_width", self.cms_width),
            ("priority_capacity", self.priority_capacity),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroSize(name));
            }
        }
        if self.vote_threshold == 0 {
            return Err(ConfigError::ZeroSize("vote_threshold"));
        }
        if self.cms_depth != CMS_DEPTH {
            return Err(ConfigError::Depth(self.cms_depth));
        }
        let seeds = [
            self.seed_heavy,
            self.seed_lc,
            self.seed_cms[0],
            self.seed_cms[1],
            self.seed_cms[2],
        ];
        for i in 0..seeds.len() {
            if seeds[i + 1..].contains(&seeds[i]) {
                return Err(ConfigError::DuplicateSeeds);
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; keys are the field names, with `-` and `_`
    /// interchangeable.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let Some((k, v)) = line.split_once('=') else {
                return Err(LineError::new(
                    lineno,
                    format!("expected `key = value`, got {line:?}"),
                )
                .into());
            };
            self.set(k.trim(), v.trim())
                .map_err(|msg| LineError::new(lineno, msg))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: TryFrom<u64>>(key: &str, v: &str) -> Result<T, String> {
            let cleaned = v.replace('_', "");
            let parsed = match cleaned.strip_prefix("0x") {
                Some(hex) => u64::from_str_radix(hex, 16),
                None => cleaned.parse(),
            };
            parsed
                .ok()
                .and_then(|n| T::try_from(n).ok())
                .ok_or_else(|| format!("invalid value {v:?} for {key}"))
        }
        fn boolean(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(format!("invalid boolean {v:?} for {key}")),
            }
        }
        let norm = key.trim().replace('-', "_");
        match norm.as_str() {
            "heavy_table_size" | "heavy_size" => self.heavy_table_size = num(key, value)?,
            "vote_threshold" => self.vote_threshold = num(key, value)?,
            "retrans_threshold_ns" => self.retrans_threshold_ns = num(key, value)?,
            "retrans_threshold_ms" => {
                let ms: f64 = value
                    .parse()
                    .map_err(|_| format!("invalid value {value:?} for {key}"))?;
                if !(ms >= 0.0 && ms.is_finite()) {
                    return Err(format!("{key} must be a non-negative number"));
                }
                self.retrans_threshold_ns = (ms * 1e6).round() as u64;
            }
            "lc_size" => self.lc_size = num(key, value)?,
            "cms_width" => self.cms_width = num(key, value)?,
            "cms_depth" => self.cms_depth = num(key, value)?,
            "priority_capacity" => self.priority_capacity = num(key, value)?,
            "seed_heavy" => self.seed_heavy = num(key, value)?,
            "seed_lc" => self.seed_lc = num(key, value)?,
            "seed_cms1" => self.seed_cms[0] = num(key, value)?,
            "seed_cms2" => self.seed_cms[1] = num(key, value)?,
            "seed_cms3" => self.seed_cms[2] = num(key, value)?,
            "alg1_literal_update" => self.flags.alg1_literal_update = boolean(key, value)?,
            "alg1_literal_cms" => self.flags.alg1_literal_cms = boolean(key, value)?,
            "alg1_literal_routing" => self.flags.alg1_literal_routing = boolean(key, value)?,
            "reset_votes_on_match" => self.flags.reset_votes_on_match = boolean(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Renders the config in the same format [`PipelineConfig::apply_text`] reads.
    pub fn to_text(&self) -> String {
        let f = &self.flags;
        format!(
            "heavy_table_size = {}\nvote_threshold = {}\nretrans_threshold_ns = {}\nlc_size = {}\n\
             cms_width = {}\ncms_depth = {}\npriority_capacity = {}\nseed_heavy = {}\nseed_lc = {}\n\
             seed_cms1 = {}\nseed_cms2 = {}\nseed_cms3 = {}\nalg1_literal_update = {}\n\
             alg1_literal_cms = {}\nalg1_literal_routing = {}\nreset_votes_on_match = {}\n",
            self.heavy_table_size,
            self.vote_threshold,
            self.retrans_threshold_ns,
            self.lc_size,
            self.cms_width,
            self.cms_depth,
            self.priority_capacity,
            self.seed_heavy,
            self.seed_lc,
            self.seed_cms[0],
            self.seed_cms[1],
            self.seed_cms[2],
            f.alg1_literal_update,
            f.alg1_literal_cms,
            f.alg1_literal_routing,
            f.reset_votes_on_match,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.heavy_table_size, 4096);
        assert_eq!(cfg.vote_threshold, 8);
        assert_eq!(cfg.retrans_threshold_ns, 3_000_000);
        assert_eq!(cfg.lc_size, 65536);
        assert_eq!(cfg.cms_width, 500);
        assert_eq!(cfg.cms_depth, 3);
    }

    #[test]
    fn parses_key_values() {
        let cfg = PipelineConfig::from_text(
            "# desk config\nheavy_table_size = 128\nvote-threshold=4\nretrans_threshold_ms = 2.5\n\
             seed_cms2 = 0x10\nalg1-literal-cms = true\n",
        )
        .unwrap();
        assert_eq!(cfg.heavy_table_size, 128);
        assert_eq!(cfg.vote_threshold, 4);
        assert_eq!(cfg.retrans_threshold_ns, 2_500_000);
        assert_eq!(cfg.seed_cms[1], 16);
        assert!(cfg.flags.alg1_literal_cms);
        assert!(!cfg.flags.alg1_literal_routing);
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = PipelineConfig {
            lc_size: 999,
            flags: CompatFlags {
                reset_votes_on_match: true,
                ..CompatFlags::default()
            },
            ..PipelineConfig::default()
        };
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn reports_bad_lines() {
        let err = PipelineConfig::from_text("lc_size = 5\nbogus = 1\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Parse(LineError::new(2, "unknown config key \"bogus\""))
        );
        assert!(matches!(
            PipelineConfig::from_text("cms_width\n"),
            Err(ConfigError::Parse(LineError { line: 1, .. }))
        ));
    }

    #[test]
    fn validation_failures() {
        assert_eq!(
            PipelineConfig::from_text("cms_depth = 4").unwrap_err(),
            ConfigError::Depth(4)
        );
        assert_eq!(
            PipelineConfig::from_text("lc_size = 0").unwrap_err(),
            ConfigError::ZeroSize("lc_size")
        );
        assert_eq!(
            PipelineConfig::from_text("seed_lc = 7\nseed_heavy = 7").unwrap_err(),
            ConfigError::DuplicateSeeds
        );
    }

    #[test]
    fn sixteen_flag_combinations() {
        let all: std::collections::HashSet<_> = CompatFlags::all_combinations().collect();
        assert_eq!(all.len(), 16);
    }
}
