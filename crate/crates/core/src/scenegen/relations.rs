use serde::{Deserialize, Serialize};

use super::geometry::{is_inside, norm, planar_angle, sub, surface_distance, SceneObject};
use super::{Scene, ScenegenError};
use crate::ensemble::MetaCategory;

/// Predicates that the generator can label from scene geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
    InFrontOf,
    Behind,
    Near,
    FarFrom,
    Touching,
    Inside,
    Contains,
    AtTheSideOf,
    Toward,
    AwayFrom,
    Facing,
    ParallelTo,
    NextTo,
    OppositeTo,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 18] = [
        SpatialRelation::LeftOf,
        SpatialRelation::RightOf,
        SpatialRelation::Above,
        SpatialRelation::Below,
        SpatialRelation::InFrontOf,
        SpatialRelation::Behind,
        SpatialRelation::Near,
        SpatialRelation::FarFrom,
        SpatialRelation::Touching,
        SpatialRelation::Inside,
        SpatialRelation::Contains,
        SpatialRelation::AtTheSideOf,
        SpatialRelation::Toward,
        SpatialRelation::AwayFrom,
        SpatialRelation::Facing,
        SpatialRelation::ParallelTo,
        SpatialRelation::NextTo,
        SpatialRelation::OppositeTo,
    ];

    pub fn phrase(self) -> &'static str {
        use SpatialRelation::*;
        match self {
            LeftOf => "left of",
            RightOf => "right of",
            Above => "above",
            Below => "below",
            InFrontOf => "in front of",
            Behind => "behind",
            Near => "near",
            FarFrom => "far from",
            Touching => "touching",
            Inside => "inside",
            Contains => "contains",
            AtTheSideOf => "at the side of",
            Toward => "toward",
            AwayFrom => "away from",
            Facing => "facing",
            ParallelTo => "parallel to",
            NextTo => "next to",
            OppositeTo => "opposite to",
        }
    }

    pub fn from_phrase(phrase: &str) -> Result<Self, ScenegenError> {
        Self::ALL
            .into_iter()
            .find(|r| r.phrase() == phrase)
            .ok_or_else(|| ScenegenError::UnsupportedRelation(phrase.to_string()))
    }

    pub fn meta_category(self) -> MetaCategory {
        use SpatialRelation::*;
        match self {
            LeftOf | RightOf | Above | Below | InFrontOf | Behind => MetaCategory::Projective,
            Near | FarFrom => MetaCategory::Proximity,
            Touching | Inside | Contains => MetaCategory::Topological,
            AtTheSideOf => MetaCategory::Adjacency,
            Toward | AwayFrom => MetaCategory::Directional,
            Facing | ParallelTo => MetaCategory::Orientation,
            NextTo | OppositeTo => MetaCategory::Unallocated,
        }
    }
}

/// Thresholds for the geometric predicates. Distances in metres, angles in
/// degrees. Each `*_false` bound marks where a predicate is clearly false;
/// values between the true and false bounds are too close to call and are
/// never used in captions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationThresholds {
    pub margin: f64,
    pub near_factor: f64,
    pub far_factor: f64,
    pub touch_eps: f64,
    pub touch_false: f64,
    pub side_factor: f64,
    pub next_factor: f64,
    pub toward_deg: f64,
    pub toward_false_deg: f64,
    pub facing_deg: f64,
    pub facing_false_deg: f64,
    pub parallel_deg: f64,
    pub parallel_false_deg: f64,
}

impl Default for RelationThresholds {
    fn default() -> Self {
        Self {
            margin: 0.2,
            near_factor: 1.5,
            far_factor: 3.0,
            touch_eps: 0.02,
            touch_false: 0.1,
            side_factor: 0.5,
            next_factor: 0.5,
            toward_deg: 45.0,
            toward_false_deg: 60.0,
            facing_deg: 30.0,
            facing_false_deg: 45.0,
            parallel_deg: 15.0,
            parallel_false_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    True,
    False,
    Ambiguous,
}

impl Truth {
    fn of(clearly_true: bool, clearly_false: bool) -> Self {
        if clearly_true {
            Truth::True
        } else if clearly_false {
            Truth::False
        } else {
            Truth::Ambiguous
        }
    }

    pub fn is_true(self) -> bool {
        self == Truth::True
    }
}

fn mean_diagonal(a: &SceneObject, b: &SceneObject) -> f64 {
    (a.diagonal() + b.diagonal()) / 2.0
}

/// Three-valued truth of `relation(subject, object)`.
pub fn relation_truth(
    scene: &Scene,
    subject: usize,
    object: usize,
    relation: SpatialRelation,
    th: &RelationThresholds,
) -> Result<Truth, ScenegenError> {
    use SpatialRelation::*;
    if subject == object {
        return Err(ScenegenError::SameObject(subject));
    }
    let n = scene.objects.len();
    let (s, o) = match (scene.objects.get(subject), scene.objects.get(object)) {
        (Some(s), Some(o)) => (s, o),
        _ => return Err(ScenegenError::Config(format!("object index out of range for {n} objects"))),
    };
    let d = sub(s.center, o.center);
    let m = th.margin;
    let diag = mean_diagonal(s, o);
    let dist = norm(d);
    let nested = is_inside(s, o) || is_inside(o, s);
    let toward_o = planar_angle(s.heading, sub(o.center, s.center));
    let toward_s = planar_angle(o.heading, sub(s.center, o.center));
    let truth = match relation {
        LeftOf => Truth::of(d[0] < -m, d[0] > m),
        RightOf => Truth::of(d[0] > m, d[0] < -m),
        Above => Truth::of(d[1] < -m, d[1] > m),
        Below => Truth::of(d[1] > m, d[1] < -m),
        InFrontOf => Truth::of(d[2] < -m, d[2] > m),
        Behind => Truth::of(d[2] > m, d[2] < -m),
        Near => Truth::of(dist < th.near_factor * diag, dist > th.far_factor * diag),
        FarFrom => Truth::of(dist > th.far_factor * diag, dist < th.near_factor * diag),
        Touching => {
            let sd = surface_distance(s, o);
            Truth::of(sd <= th.touch_eps, sd > th.touch_false)
        }
        Inside => Truth::of(is_inside(s, o), !is_inside(s, o)),
        Contains => Truth::of(is_inside(o, s), !is_inside(o, s)),
        AtTheSideOf => {
            let (a, b) = (s.aabb(), o.aabb());
            let level = a.overlaps_on(&b, 1) && a.overlaps_on(&b, 2) && !a.overlaps_on(&b, 0);
            let gap = a.gap_on(&b, 0);
            Truth::of(
                level && gap <= th.side_factor * diag,
                !level || gap > 2.0 * th.side_factor * diag,
            )
        }
        Toward => Truth::of(toward_o < th.toward_deg, toward_o > th.toward_false_deg),
        AwayFrom => Truth::of(toward_o > 180.0 - th.toward_deg, toward_o < 180.0 - th.toward_false_deg),
        Facing => Truth::of(toward_o < th.facing_deg, toward_o > th.facing_false_deg),
        ParallelTo => {
            let a = planar_angle(s.heading, o.heading);
            let line = a.min(180.0 - a);
            Truth::of(line < th.parallel_deg, line > th.parallel_false_deg)
        }
        NextTo => {
            let sd = surface_distance(s, o);
            Truth::of(!nested && sd <= th.next_factor * diag, nested || sd > 2.0 * th.next_factor * diag)
        }
        OppositeTo => Truth::of(
            toward_o < th.toward_deg && toward_s < th.toward_deg,
            toward_o > th.toward_false_deg || toward_s > th.toward_false_deg,
        ),
    };
    Ok(truth)
}

/// Geometric truth value; borderline configurations count as false.
pub fn compute_relation(
    scene: &Scene,
    subject: usize,
    object: usize,
    relation: SpatialRelation,
    th: &RelationThresholds,
) -> Result<bool, ScenegenError> {
    Ok(relation_truth(scene, subject, object, relation, th)?.is_true())
}
