use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::BnMode;

/// Material-perception variant applied to the polarization branch of a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpKind {
    /// Spatial bottleneck (MSP).
    #[serde(rename = "S")]
    Spatial,
    /// Channel perception (MCP).
    #[serde(rename = "C")]
    Channel,
}

impl fmt::Display for MpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MpKind::Spatial => "S",
            MpKind::Channel => "C",
        })
    }
}

/// Parses `"S-S-C"` or `"S,S,C"`.
pub fn parse_mp_assignment(s: &str) -> Result<Vec<MpKind>> {
    s.split(['-', ','])
        .map(|t| match t.trim() {
            "S" | "s" => Ok(MpKind::Spatial),
            "C" | "c" => Ok(MpKind::Channel),
            other => Err(Error::Config(format!(
                "unknown MP kind `{other}` (use S or C)"
            ))),
        })
        .collect()
}

/// Network hyper-parameters, read from a flat TOML key/value file.
///
/// ```toml
/// c_pi = 16
/// widths = [16, 32, 64]
/// mp_assignment = ["S", "S", "C"]
/// fusion_stages = [0, 1, 2]
/// anchors = [[[6, 6], [10, 8], [14, 10]], [[20, 16], [28, 20], [36, 26]], [[48, 34], [64, 44], [80, 56]]]
/// nms_iou = 0.45
/// score_thresh = 0.25
/// seed = 0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Output channels of the polarization-integration module.
    pub c_pi: usize,
    /// Channel width of every encoder stage.
    pub widths: Vec<usize>,
    pub mp_assignment: Vec<MpKind>,
    /// Stages whose pyramid level comes from cross-domain fusion; the others
    /// sum the two branches.
    pub fusion_stages: Vec<usize>,
    /// Anchor `(w, h)` pairs in pixels, one list per pyramid level.
    pub anchors: Vec<Vec<[f64; 2]>>,
    pub nms_iou: f64,
    pub score_thresh: f64,
    pub seed: u64,
    /// Channel reduction ratio of the perception matrices.
    pub mp_reduction: usize,
    /// Hidden width of the fusion-weight MLP; defaults to the branch width.
    pub fc_hidden: Option<usize>,
    pub use_mp: bool,
    pub use_sdmd: bool,
    pub use_cwda: bool,
    /// `"running"` (inference) or `"batch"`.
    pub bn_mode: BnMode,
    pub bn_eps: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            c_pi: 16,
            widths: vec![16, 32, 64],
            mp_assignment: vec![MpKind::Spatial, MpKind::Spatial, MpKind::Channel],
            fusion_stages: vec![0, 1, 2],
            anchors: vec![
                vec![[6.0, 6.0], [10.0, 8.0], [14.0, 10.0]],
                vec![[20.0, 16.0], [28.0, 20.0], [36.0, 26.0]],
                vec![[48.0, 34.0], [64.0, 44.0], [80.0, 56.0]],
            ],
            nms_iou: 0.45,
            score_thresh: 0.25,
            seed: 0,
            mp_reduction: 4,
            fc_hidden: None,
            use_mp: true,
            use_sdmd: true,
            use_cwda: true,
            bn_mode: BnMode::RunningStats,
            bn_eps: 1e-5,
        }
    }
}

impl NetworkConfig {
    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn is_fusion_stage(&self, stage: usize) -> bool {
        self.fusion_stages.contains(&stage)
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.stages() + 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() {
            return bad("at least one stage width is required".into());
        }
        if self.widths.iter().any(|&w| w == 0 || w % 2 != 0) {
            return bad(format!(
                "stage widths must be positive and even, got {:?}",
                self.widths
            ));
        }
        if self.c_pi == 0 || !self.c_pi.is_multiple_of(2) {
            return bad(format!("c_pi must be positive and even, got {}", self.c_pi));
        }
        if self.mp_assignment.len() != self.stages() {
            return bad(format!(
                "mp_assignment has {} entries for {} stages",
                self.mp_assignment.len(),
                self.stages()
            ));
        }
        if let Some(s) = self.fusion_stages.iter().find(|&&s| s >= self.stages()) {
            return bad(format!("fusion stage {s} does not exist"));
        }
        if self.anchors.len() != self.stages() {
            return bad(format!(
                "anchors list {} levels for {} stages",
                self.anchors.len(),
                self.stages()
            ));
        }
        if self
            .anchors
            .iter()
            .any(|l| l.is_empty() || l.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())))
        {
            return bad("every level needs at least one anchor with positive size".into());
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return bad(format!("nms_iou must be in (0, 1], got {}", self.nms_iou));
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return bad(format!(
                "score_thresh must be in [0, 1], got {}",
                self.score_thresh
            ));
        }
        if self.mp_reduction == 0 || self.widths.iter().any(|&w| w < self.mp_reduction) {
            return bad(format!(
                "mp_reduction {} must be >= 1 and not exceed any stage width",
                self.mp_reduction
            ));
        }
        if self.fc_hidden == Some(0) {
            return bad("fc_hidden must be positive".into());
        }
        if !(self.bn_eps > 0.0) {
            return bad("bn_eps must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        text.parse()
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.size_multiple(), 32);
        assert_eq!(c.bn_mode, BnMode::RunningStats);
    }

    #[test]
    fn toml_round_trip() {
        let c = NetworkConfig {
            mp_assignment: parse_mp_assignment("C-C-C").unwrap(),
            fc_hidden: Some(8),
            bn_mode: BnMode::BatchStats,
            ..NetworkConfig::default()
        };
        let back: NetworkConfig = c.to_toml().parse().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c: NetworkConfig = "c_pi = 8\nmp_assignment = [\"S\", \"C\", \"C\"]\n"
            .parse()
            .unwrap();
        assert_eq!(c.c_pi, 8);
        assert_eq!(c.mp_assignment[1], MpKind::Channel);
        assert_eq!(c.widths, vec![16, 32, 64]);
    }

    #[test]
    fn invalid_configs() {
        assert!("widths = [16, 31, 64]".parse::<NetworkConfig>().is_err());
        assert!("mp_assignment = [\"S\"]".parse::<NetworkConfig>().is_err());
        assert!("nms_iou = 0.0".parse::<NetworkConfig>().is_err());
        assert!("unknown_key = 1".parse::<NetworkConfig>().is_err());
        assert!("fusion_stages = [3]".parse::<NetworkConfig>().is_err());
        assert!(parse_mp_assignment("S-X").is_err());
    }
}
