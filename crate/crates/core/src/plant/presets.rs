//! Built-in model definitions: the default 8-body sagittal human model, the
//! reduced ankle "inverted pendulum" plant and small sub-models used by tests.
//!
//! Segment parameters are configuration, not measured data. They were chosen so
//! the upright posture puts the whole-body COM 0.988 m above the ground with the
//! pelvis origin at 0.965 m.

use std::collections::BTreeMap;

use crate::muscle::MuscleParams;

use super::contact::ContactParams;
use super::model::{
    BodyDef, ContactSphere, JointDef, JointKind, ModelDef, ModelRoles, MuscleDef, PointRef, Side, Vec2,
    MODEL_SCHEMA_VERSION,
};

pub const GRAVITY: f64 = 9.81;

/// Height of the ankle joint above the ground when the foot is flat.
pub const ANKLE_HEIGHT: f64 = 0.08;
/// Heel and toe sphere positions along the foot, relative to the ankle.
pub const HEEL_X: f64 = -0.049;
pub const TOE_X: f64 = 0.15;
pub const FOOT_COM_X: f64 = 0.051;
const SPHERE_RADIUS: f64 = 0.02;
const SPHERE_Y: f64 = -(ANKLE_HEIGHT - SPHERE_RADIUS);

const HIP_ANCHOR: Vec2 = [-0.0707, -0.0661];
const THIGH_LENGTH: f64 = 0.40;
const SHANK_LENGTH: f64 = 0.43;

fn deg(x: f64) -> f64 {
    x.to_radians()
}

fn revolute(name: &str, parent: &str, anchor: Vec2, limits: Option<[f64; 2]>) -> JointDef {
    JointDef {
        name: name.into(),
        kind: JointKind::Revolute { direction: 1.0, limits, locked: false },
        parent: Some(parent.into()),
        anchor,
        group: None,
        side: None,
    }
}

fn body(name: &str, mass: f64, inertia: f64, com: Vec2, length: f64, joint: JointDef) -> BodyDef {
    BodyDef { name: name.into(), mass, inertia, com, length, joint }
}

fn foot_spheres(foot: &str) -> Vec<ContactSphere> {
    // The medial and lateral toe spheres coincide in the sagittal plane; one toe
    // sphere keeps heel and toe springs equally stiff.
    [HEEL_X, TOE_X]
        .into_iter()
        .map(|x| ContactSphere { body: foot.into(), offset: [x, SPHERE_Y], radius: SPHERE_RADIUS })
        .collect()
}

fn muscle(name: &str, side: Side, f_max: f64, l_opt: f64, pennation: f64, arms: &[(&str, f64)]) -> MuscleDef {
    let suffix = side_suffix(side);
    MuscleDef {
        params: MuscleParams::new(format!("{name}_{suffix}"), f_max, l_opt, pennation),
        side: Some(side),
        rest_length: l_opt,
        moment_arms: arms.iter().map(|(c, r)| (format!("{c}_{suffix}"), *r)).collect::<BTreeMap<_, _>>(),
    }
}

fn side_suffix(side: Side) -> &'static str {
    match side {
        Side::Right => "r",
        Side::Left => "l",
    }
}

/// The default sagittal model: pelvis on a planar root, torso welded through a
/// locked lumbar hinge, two legs with hip, knee and ankle hinges and nine
/// muscles per leg.
///
/// Sign conventions: angles counter-clockwise positive with x forward and y up;
/// negative pelvis tilt leans forward, positive hip is flexion, negative knee is
/// flexion, positive ankle is dorsiflexion.
pub fn default_human() -> ModelDef {
    let mut bodies = vec![
        body(
            "pelvis",
            11.777,
            0.1028,
            [-0.0707, 0.0],
            0.0,
            JointDef {
                name: "pelvis".into(),
                kind: JointKind::Planar,
                parent: None,
                anchor: [0.0, 0.0],
                group: None,
                side: None,
            },
        ),
        body(
            "torso",
            34.2366,
            1.4745,
            [-0.0575, 0.2995],
            0.0,
            JointDef {
                name: "lumbar".into(),
                kind: JointKind::Revolute { direction: 1.0, limits: None, locked: true },
                parent: Some("pelvis".into()),
                anchor: [-0.1007, 0.0815],
                group: None,
                side: None,
            },
        ),
    ];
    let mut spheres = Vec::new();
    let mut feet = Vec::new();
    for side in [Side::Right, Side::Left] {
        let s = side_suffix(side);
        let (thigh, shank, foot) = (format!("femur_{s}"), format!("tibia_{s}"), format!("foot_{s}"));
        let mut hip = revolute(&format!("hip_{s}"), "pelvis", HIP_ANCHOR, Some([deg(-30.0), deg(120.0)]));
        let mut knee = revolute(&format!("knee_{s}"), &thigh, [0.0, -THIGH_LENGTH], Some([deg(-120.0), deg(10.0)]));
        let mut ankle = revolute(&format!("ankle_{s}"), &shank, [0.0, -SHANK_LENGTH], Some([deg(-40.0), deg(30.0)]));
        for (j, g) in [(&mut hip, "hip"), (&mut knee, "knee"), (&mut ankle, "ankle")] {
            j.group = Some(g.into());
            j.side = Some(side);
        }
        bodies.push(body(&thigh, 9.3014, 0.1339, [0.0, -0.17], THIGH_LENGTH, hip));
        bodies.push(body(&shank, 3.7075, 0.0504, [0.0, -0.1867], SHANK_LENGTH, knee));
        bodies.push(body(&foot, 1.5666, 0.0080, [FOOT_COM_X, -0.03], TOE_X - HEEL_X, ankle));
        spheres.extend(foot_spheres(&foot));
        feet.push(foot);
    }

    let mut muscles = Vec::new();
    for side in [Side::Right, Side::Left] {
        muscles.extend([
            muscle("glut_max", side, 1944.0, 0.1569, 0.3840, &[("hip", -0.06)]),
            muscle("iliopsoas", side, 2342.0, 0.1066, 0.2443, &[("hip", 0.045)]),
            muscle("hamstrings", side, 2594.0, 0.0976, 0.2967, &[("hip", -0.07), ("knee", -0.02)]),
            muscle("rect_fem", side, 1169.0, 0.0759, 0.2443, &[("hip", 0.025), ("knee", 0.045)]),
            muscle("vasti", side, 5000.0, 0.0993, 0.0524, &[("knee", 0.045)]),
            muscle("bifemsh", side, 960.0, 0.1103, 0.2094, &[("knee", -0.03)]),
            muscle("gastroc", side, 2500.0, 0.0588, 0.1745, &[("knee", -0.01), ("ankle", -0.04)]),
            muscle("soleus", side, 5137.0, 0.0441, 0.4363, &[("ankle", -0.05)]),
            muscle("tib_ant", side, 3000.0, 0.0683, 0.1745, &[("ankle", 0.04)]),
        ]);
    }

    ModelDef {
        schema_version: MODEL_SCHEMA_VERSION,
        name: "sagittal_8body_18muscle".into(),
        gravity: GRAVITY,
        bodies,
        contact_spheres: spheres,
        contact: ContactParams::default(),
        muscles,
        roles: ModelRoles {
            pelvis_body: "pelvis".into(),
            pelvis_point: PointRef { body: "pelvis".into(), offset: [0.0, 0.0] },
            // directly above the pelvis origin so the head x equals the pelvis x at zero tilt
            head_point: PointRef { body: "pelvis".into(), offset: [0.0, 0.6] },
            feet,
        },
    }
}

/// Reduced plant: a foot welded to the ground and one rigid body hinged at the
/// ankle, driven by one plantarflexor and one dorsiflexor. Positive ankle angle
/// leans the body forward (dorsiflexion).
pub fn ankle_pendulum() -> ModelDef {
    let foot = body(
        "foot",
        1.0,
        0.005,
        [0.0, -0.04],
        TOE_X - HEEL_X,
        JointDef {
            name: "ground".into(),
            kind: JointKind::Fixed { angle: 0.0 },
            parent: None,
            anchor: [0.0, ANKLE_HEIGHT],
            group: None,
            side: None,
        },
    );
    let pendulum = body(
        "body",
        10.0,
        0.5,
        [0.0, 0.9],
        1.0,
        JointDef {
            name: "ankle".into(),
            kind: JointKind::Revolute { direction: -1.0, limits: Some([deg(-40.0), deg(40.0)]), locked: false },
            parent: Some("foot".into()),
            anchor: [0.0, 0.0],
            group: Some("ankle".into()),
            side: None,
        },
    );
    let single = |name: &str, f_max: f64, l_opt: f64, arm: f64| MuscleDef {
        params: MuscleParams::new(name, f_max, l_opt, 0.0),
        side: None,
        rest_length: l_opt,
        moment_arms: BTreeMap::from([("ankle".to_string(), arm)]),
    };
    ModelDef {
        schema_version: MODEL_SCHEMA_VERSION,
        name: "ankle_pendulum".into(),
        gravity: GRAVITY,
        bodies: vec![foot, pendulum],
        contact_spheres: foot_spheres("foot"),
        contact: ContactParams::default(),
        muscles: vec![single("plantarflexor", 1000.0, 0.06, -0.05), single("dorsiflexor", 800.0, 0.06, 0.04)],
        roles: ModelRoles {
            pelvis_body: "body".into(),
            pelvis_point: PointRef { body: "body".into(), offset: [0.0, 0.9] },
            head_point: PointRef { body: "body".into(), offset: [0.0, 0.9] },
            feet: vec!["foot".into()],
        },
    }
}

fn bare(name: &str, bodies: Vec<BodyDef>) -> ModelDef {
    let first = bodies[0].name.clone();
    ModelDef {
        schema_version: MODEL_SCHEMA_VERSION,
        name: name.into(),
        gravity: GRAVITY,
        bodies,
        contact_spheres: vec![],
        contact: ContactParams::default(),
        muscles: vec![],
        roles: ModelRoles {
            pelvis_body: first.clone(),
            pelvis_point: PointRef { body: first.clone(), offset: [0.0, 0.0] },
            head_point: PointRef { body: first.clone(), offset: [0.0, 0.0] },
            feet: vec![first],
        },
    }
}

fn world_hinge(name: &str) -> JointDef {
    JointDef {
        name: name.into(),
        kind: JointKind::Revolute { direction: 1.0, limits: None, locked: false },
        parent: None,
        anchor: [0.0, 0.0],
        group: None,
        side: None,
    }
}

/// One link hinged at the world origin with its COM `d` along the body x axis,
/// so `q = 0` is horizontal and `q = pi/2` points straight up.
pub fn single_pendulum(mass: f64, d: f64, inertia: f64) -> ModelDef {
    bare("single_pendulum", vec![body("link", mass, inertia, [d, 0.0], d, world_hinge("q1"))])
}

/// Two-link planar arm along the body x axes: link 1 hinged at the origin, link 2
/// hinged at distance `l1` along link 1.
pub fn two_link(m: [f64; 2], l1: f64, lc: [f64; 2], inertia: [f64; 2]) -> ModelDef {
    let mut elbow = world_hinge("q2");
    elbow.parent = Some("link1".into());
    elbow.anchor = [l1, 0.0];
    bare(
        "two_link",
        vec![
            body("link1", m[0], inertia[0], [lc[0], 0.0], l1, world_hinge("q1")),
            body("link2", m[1], inertia[1], [lc[1], 0.0], 2.0 * lc[1], elbow),
        ],
    )
}

/// A single rigid body on a planar root joint.
pub fn free_body(mass: f64, inertia: f64, com: Vec2) -> ModelDef {
    let joint = JointDef {
        name: "root".into(),
        kind: JointKind::Planar,
        parent: None,
        anchor: [0.0, 0.0],
        group: None,
        side: None,
    };
    bare("free_body", vec![body("box", mass, inertia, com, 0.0, joint)])
}
