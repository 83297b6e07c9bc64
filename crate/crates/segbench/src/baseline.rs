//! Model configurations for the ablation grids.

use std::fmt;
use std::str::FromStr;

use tsg_core::{DecoderFusion, EncoderFusion, HeadMerge, ModelConfig, ScaleSelection};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Gated encoder fusion and gated decoder memory.
    Tsg,
    /// Equal-gate top-down encoder fusion; decoder memory is the plain sum
    /// in block 1 and the equal-weight mean afterwards.
    FpnSum,
    /// Per-stage projections and plain-sum decoder memory in every block.
    PlainSum,
    /// Only stage `s` (1-based), projected, feeds the decoder.
    SingleScale(usize),
    /// Per-stage projections with a gated decoder.
    ProjTsgd,
    /// Gated encoder fusion with an equal-weight decoder.
    TsgeUniform,
    /// Equal-gate encoder fusion with a gated decoder.
    FpnTsgd,
    /// `Tsg` with head averaging instead of concatenation.
    TsgAverage,
    /// `Tsg` with one gate head shared per fusion site.
    TsgShared,
}

impl BaselineKind {
    pub fn has_gates(self) -> bool {
        !matches!(
            self,
            BaselineKind::FpnSum | BaselineKind::PlainSum | BaselineKind::SingleScale(_)
        )
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::Tsg => write!(f, "tsg"),
            BaselineKind::FpnSum => write!(f, "fpn_sum"),
            BaselineKind::PlainSum => write!(f, "plain_sum"),
            BaselineKind::SingleScale(s) => write!(f, "single_scale_{s}"),
            BaselineKind::ProjTsgd => write!(f, "proj_tsgd"),
            BaselineKind::TsgeUniform => write!(f, "tsge_uniform"),
            BaselineKind::FpnTsgd => write!(f, "fpn_tsgd"),
            BaselineKind::TsgAverage => write!(f, "tsg_average"),
            BaselineKind::TsgShared => write!(f, "tsg_shared"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kind = match s {
            "tsg" => BaselineKind::Tsg,
            "fpn_sum" => BaselineKind::FpnSum,
            "plain_sum" => BaselineKind::PlainSum,
            "proj_tsgd" => BaselineKind::ProjTsgd,
            "tsge_uniform" => BaselineKind::TsgeUniform,
            "fpn_tsgd" => BaselineKind::FpnTsgd,
            "tsg_average" => BaselineKind::TsgAverage,
            "tsg_shared" => BaselineKind::TsgShared,
            _ => {
                let digits = s
                    .strip_prefix("single_scale_")
                    .or_else(|| s.strip_prefix("single_scale(").and_then(|r| r.strip_suffix(')')));
                match digits.and_then(|d| d.parse().ok()) {
                    Some(n) if n >= 1 => BaselineKind::SingleScale(n),
                    _ => return Err(BenchError::UnknownBaseline(s.to_string())),
                }
            }
        };
        Ok(kind)
    }
}

/// `base` with the fusion choices of `kind`; everything else is kept.
pub fn make_baseline(kind: BaselineKind, base: &ModelConfig) -> Result<ModelConfig, BenchError> {
    let mut cfg = base.clone();
    cfg.scale_selection = ScaleSelection::All;
    cfg.shared_gates = false;
    cfg.tsg.head_merge = HeadMerge::Concat;
    let (e, d) = match kind {
        BaselineKind::Tsg => (EncoderFusion::Tsge, DecoderFusion::Tsgd),
        BaselineKind::FpnSum => (EncoderFusion::Fpn, DecoderFusion::Uniform),
        BaselineKind::PlainSum => (EncoderFusion::Projection, DecoderFusion::Sum),
        BaselineKind::SingleScale(s) => {
            cfg.scale_selection = ScaleSelection::Single(s);
            (EncoderFusion::Projection, DecoderFusion::Sum)
        }
        BaselineKind::ProjTsgd => (EncoderFusion::Projection, DecoderFusion::Tsgd),
        BaselineKind::TsgeUniform => (EncoderFusion::Tsge, DecoderFusion::Uniform),
        BaselineKind::FpnTsgd => (EncoderFusion::Fpn, DecoderFusion::Tsgd),
        BaselineKind::TsgAverage => {
            cfg.tsg.head_merge = HeadMerge::Average;
            (EncoderFusion::Tsge, DecoderFusion::Tsgd)
        }
        BaselineKind::TsgShared => {
            cfg.shared_gates = true;
            (EncoderFusion::Tsge, DecoderFusion::Tsgd)
        }
    };
    cfg.encoder_fusion = e;
    cfg.decoder_fusion = d;
    cfg.validate()?;
    Ok(cfg)
}
