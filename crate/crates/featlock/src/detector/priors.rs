use serde::{Deserialize, Serialize};

use crate::boxes::BBox;

use super::config::DetectorConfig;

/// Reference box in center form, normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PriorBox {
    pub fn to_corners(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Scale of head level `l` out of `n`, linear from `min` to `max`.
pub(crate) fn level_scale(cfg: &DetectorConfig, l: usize) -> f64 {
    let n = cfg.head_levels.len();
    if n == 1 {
        cfg.min_scale
    } else {
        cfg.min_scale + (cfg.max_scale - cfg.min_scale) * l as f64 / (n - 1) as f64
    }
}

/// Square priors tiled over every head level's grid.
///
/// Ordering is level, row, column, then prior within the cell. Prior `j` of a
/// cell has side `s·√2^j` clipped to 1, where `s` is the level scale.
pub fn generate_priors(cfg: &DetectorConfig) -> Vec<PriorBox> {
    let grids = cfg.stage_grids();
    let mut out = Vec::new();
    for (l, &stage) in cfg.head_levels.iter().enumerate() {
        let g = grids[stage - 1];
        let s = level_scale(cfg, l);
        for y in 0..g {
            for x in 0..g {
                let cx = (x as f64 + 0.5) / g as f64;
                let cy = (y as f64 + 0.5) / g as f64;
                for j in 0..cfg.priors_per_cell {
                    let side = (s * std::f64::consts::SQRT_2.powi(j as i32)).min(1.0);
                    out.push(PriorBox {
                        cx,
                        cy,
                        w: side,
                        h: side,
                    });
                }
            }
        }
    }
    out
}
