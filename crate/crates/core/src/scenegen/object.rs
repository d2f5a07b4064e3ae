//! Graspable objects reduced to a rigid hanging ring plus one body capsule.
//!
//! Object frame: the ring is centred at [`HangObject::ring_center`] and lies
//! in the object's y-z plane, so its normal is the object x-axis. The
//! semantic keypoint sits on the ring's inner top edge, the point that rests
//! on a hook, with the same orientation as the object frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::rng;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Reference,
    Mug,
    CookingUtensil,
    Scissor,
    Tool,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Reference,
        Category::Mug,
        Category::CookingUtensil,
        Category::Scissor,
        Category::Tool,
        Category::Other,
    ];

    pub const NON_REFERENCE: [Category; 5] = [
        Category::Mug,
        Category::CookingUtensil,
        Category::Scissor,
        Category::Tool,
        Category::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Reference => "Reference Object",
            Category::Mug => "Mug",
            Category::CookingUtensil => "Cooking Utensil",
            Category::Scissor => "Scissor",
            Category::Tool => "Tool",
            Category::Other => "Others",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HangObject {
    pub category: Category,
    pub seed: u64,
    /// Keypoint frame expressed in the object frame.
    pub keypoint_pose: Pose,
    pub ring_center: Vec3,
    pub ring_radius: f64,
    pub tube_radius: f64,
    pub body_extent: Capsule,
}

/// Ring and body posed in the item frame for one keypoint pose.
#[derive(Debug, Clone)]
pub struct PlacedObject {
    pub ring_center: Vec3,
    pub ring_normal: Vec3,
    pub ring_u: Vec3,
    pub ring_v: Vec3,
    pub ring_radius: f64,
    pub tube_radius: f64,
    pub body: Capsule,
}

impl PlacedObject {
    pub fn ring_point(&self, angle: f64) -> Vec3 {
        self.ring_center + (self.ring_u * angle.cos() + self.ring_v * angle.sin()) * self.ring_radius
    }
}

impl HangObject {
    pub fn id(&self) -> String {
        format!("{:?}-{}", self.category, self.seed).to_lowercase()
    }

    /// Object frame pose in the item frame given the keypoint's item-frame pose.
    pub fn object_pose(&self, keypoint_world: &Pose) -> Pose {
        keypoint_world.compose(&self.keypoint_pose.inverse())
    }

    pub fn place(&self, keypoint_world: &Pose) -> PlacedObject {
        let obj = self.object_pose(keypoint_world);
        PlacedObject {
            ring_center: obj.transform_point(&self.ring_center),
            ring_normal: obj.axis(0),
            ring_u: obj.axis(1),
            ring_v: obj.axis(2),
            ring_radius: self.ring_radius,
            tube_radius: self.tube_radius,
            body: Capsule {
                a: obj.transform_point(&self.body_extent.a),
                b: obj.transform_point(&self.body_extent.b),
                radius: self.body_extent.radius,
            },
        }
    }
}

struct Ranges {
    ring: (f64, f64),
    tube: (f64, f64),
    body_radius: (f64, f64),
    body_len: (f64, f64),
}

fn ranges(c: Category) -> Ranges {
    match c {
        Category::Reference => unreachable!("reference object has fixed dimensions"),
        Category::Mug => Ranges {
            ring: (0.018, 0.03),
            tube: (0.003, 0.005),
            body_radius: (0.03, 0.04),
            body_len: (0.04, 0.06),
        },
        Category::CookingUtensil => Ranges {
            ring: (0.013, 0.02),
            tube: (0.0025, 0.0035),
            body_radius: (0.01, 0.015),
            body_len: (0.12, 0.2),
        },
        Category::Scissor => Ranges {
            ring: (0.014, 0.022),
            tube: (0.003, 0.004),
            body_radius: (0.008, 0.012),
            body_len: (0.06, 0.1),
        },
        Category::Tool => Ranges {
            ring: (0.012, 0.018),
            tube: (0.0025, 0.0035),
            body_radius: (0.012, 0.018),
            body_len: (0.08, 0.14),
        },
        Category::Other => Ranges {
            ring: (0.015, 0.035),
            tube: (0.003, 0.005),
            body_radius: (0.005, 0.02),
            body_len: (0.02, 0.1),
        },
    }
}

pub const REFERENCE_RING_RADIUS: f64 = 0.02;
pub const REFERENCE_TUBE_RADIUS: f64 = 0.004;

fn build(category: Category, seed: u64, ring: f64, tube: f64, body_r: f64, body_len: f64, gap: f64) -> HangObject {
    // object origin at the ring centre; keypoint on the inner top edge
    let ring_center = Vec3::zeros();
    let keypoint_pose = Pose::from_translation(Vec3::new(0.0, 0.0, ring - tube));
    let top = -(ring + tube + gap + body_r);
    HangObject {
        category,
        seed,
        keypoint_pose,
        ring_center,
        ring_radius: ring,
        tube_radius: tube,
        body_extent: Capsule {
            a: Vec3::new(0.0, 0.0, top),
            b: Vec3::new(0.0, 0.0, top - body_len),
            radius: body_r,
        },
    }
}

/// Deterministic object for `(seed, category)`.
pub fn generate_object(seed: u64, category: Category) -> HangObject {
    if category == Category::Reference {
        return build(
            category,
            seed,
            REFERENCE_RING_RADIUS,
            REFERENCE_TUBE_RADIUS,
            0.006,
            0.02,
            0.004,
        );
    }
    let r = ranges(category);
    let mut rng = rng::stream(seed, "hang-object", category as u64);
    let ring = rng.gen_range(r.ring.0..r.ring.1);
    let tube = rng.gen_range(r.tube.0..r.tube.1);
    let body_r = rng.gen_range(r.body_radius.0..r.body_radius.1);
    let body_len = rng.gen_range(r.body_len.0..r.body_len.1);
    build(category, seed, ring, tube, body_r, body_len, 0.004)
}
