//! Map pruning around each target agent's conditional anchors, using a half
//! disc on the anchor-heavy side and a half ellipse on the other.

use crate::geom::{to_frame, Pose2D};

use super::{RoadPolyline, MAX_POLYLINE_POINTS};

const DISC_MARGIN: f64 = 30.0;
const ELLIPSE_MARGIN: f64 = 20.0;

/// The retained region in one agent's frame. The disc of radius `r` covers
/// the side where anchors reach further; the other side gets a half ellipse
/// with semi-major axis `r` along y and semi-minor axis `b` along x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneRegion {
    pub front_disc: bool,
    pub r: f64,
    pub b: f64,
}

impl PruneRegion {
    /// Membership test for a point in the agent frame. Front is x >= 0.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        let front = p.0 >= 0.0;
        if front == self.front_disc {
            p.0 * p.0 + p.1 * p.1 <= self.r * self.r
        } else {
            let bx = p.0 / self.b;
            let ay = p.1 / self.r;
            bx * bx + ay * ay <= 1.0
        }
    }
}

/// Build the retained region from anchor positions in the agent frame.
///
/// `d_f` is the maximum anchor distance on the front side (x >= 0, the
/// frontier counts as front), `d_r` on the rear; an empty side contributes 0.
/// The disc (`+30 m`) goes to the side with larger reach, the ellipse
/// (`+20 m` semi-minor) to the other; a tie places the disc at the rear.
pub fn local_region(anchors: &[(f64, f64)]) -> PruneRegion {
    let mut d_f = 0.0f64;
    let mut d_r = 0.0f64;
    for &(x, y) in anchors {
        let d = (x * x + y * y).sqrt();
        if x >= 0.0 {
            d_f = d_f.max(d);
        } else {
            d_r = d_r.max(d);
        }
    }
    if d_f > d_r {
        PruneRegion { front_disc: true, r: d_f + DISC_MARGIN, b: d_r + ELLIPSE_MARGIN }
    } else {
        PruneRegion { front_disc: false, r: d_r + DISC_MARGIN, b: d_f + ELLIPSE_MARGIN }
    }
}

/// Keep every road point inside the union of the per-agent regions; each
/// region is anchored to that agent's frame. Retained points are regrouped
/// into maximal consecutive runs so the 1 m spacing invariant survives.
pub fn prune_map(roads: &[RoadPolyline], regions: &[(Pose2D, PruneRegion)]) -> Vec<RoadPolyline> {
    let mut out = Vec::new();
    for road in roads {
        let mut run: Vec<_> = Vec::with_capacity(MAX_POLYLINE_POINTS);
        for pt in road.points() {
            let keep = regions.iter().any(|(frame, region)| region.contains(to_frame((pt.x, pt.y), frame)));
            if keep {
                run.push(*pt);
            } else if !run.is_empty() {
                out.push(RoadPolyline::new(std::mem::take(&mut run)).expect("run preserves source invariants"));
            }
        }
        if !run.is_empty() {
            out.push(RoadPolyline::new(run).expect("run preserves source invariants"));
        }
    }
    out
}
