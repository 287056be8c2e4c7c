use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::muscle::MuscleParams;

use super::contact::ContactParams;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            other => Err(Error::Config(format!("unknown side `{other}` (expected left or right)"))),
        }
    }
}

/// How a body attaches to its parent (or to the world when `parent` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointKind {
    /// Free planar motion: horizontal and vertical translation plus tilt.
    Planar,
    /// Hinge about the out-of-plane axis. `direction` (+1 or -1) sets the sign
    /// convention of the coordinate. Locked hinges keep their coordinate fixed.
    Revolute {
        #[serde(default = "one")]
        direction: f64,
        #[serde(default)]
        limits: Option<[f64; 2]>,
        #[serde(default)]
        locked: bool,
    },
    /// Rigid attachment with a fixed relative angle.
    Fixed {
        #[serde(default)]
        angle: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: JointKind,
    /// Parent body name; `None` attaches to the world.
    #[serde(default)]
    pub parent: Option<String>,
    /// Joint location in the parent frame (world frame for world attachments), m.
    #[serde(default)]
    pub anchor: Vec2,
    /// Functional group shared by mirrored joints (`hip`, `knee`, `ankle`).
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyDef {
    pub name: String,
    pub mass: f64,
    /// Planar moment of inertia about the body COM, kg m^2.
    pub inertia: f64,
    /// COM in the body frame (origin at the joint), m.
    pub com: Vec2,
    #[serde(default)]
    pub length: f64,
    pub joint: JointDef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSphere {
    pub body: String,
    pub offset: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleDef {
    #[serde(flatten)]
    pub params: MuscleParams,
    #[serde(default)]
    pub side: Option<Side>,
    /// Musculotendon path length at the neutral posture (all coordinates zero), m.
    pub rest_length: f64,
    /// Constant moment arm per coordinate name, m. Positive arms produce positive
    /// generalized torque and shorten as the coordinate increases.
    pub moment_arms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRef {
    pub body: String,
    #[serde(default)]
    pub offset: Vec2,
}

/// Bodies and points the environment needs to know about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRoles {
    /// Observations are centered on this body's horizontal origin.
    pub pelvis_body: String,
    /// Height of this point drives the fall check.
    pub pelvis_point: PointRef,
    /// Upright check: head x relative to pelvis x.
    pub head_point: PointRef,
    /// Foot bodies; their origins are the ankle joints.
    pub feet: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDef {
    pub schema_version: u32,
    pub name: String,
    pub gravity: f64,
    /// Bodies in parent-before-child order.
    pub bodies: Vec<BodyDef>,
    pub contact_spheres: Vec<ContactSphere>,
    #[serde(default)]
    pub contact: ContactParams,
    pub muscles: Vec<MuscleDef>,
    pub roles: ModelRoles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    TranslationX,
    TranslationY,
    Angle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub name: String,
    pub body: usize,
    pub kind: CoordKind,
    pub limits: Option<[f64; 2]>,
    pub locked: bool,
    pub group: Option<String>,
    pub side: Option<Side>,
}

/// One generalized coordinate contributing to a body's motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ChainEntry {
    Tx(usize),
    Ty(usize),
    Rot { coord: usize, pivot: usize, direction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Attachment {
    Planar { x: usize, y: usize, tilt: usize },
    Revolute { coord: usize, direction: f64 },
    Fixed { angle: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResolvedSphere {
    pub body: usize,
    pub offset: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResolvedPoint {
    pub body: usize,
    pub offset: Vec2,
}

/// Validated planar articulated model with cached topology.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonModel {
    def: ModelDef,
    pub(crate) parent: Vec<Option<usize>>,
    pub(crate) attachment: Vec<Attachment>,
    pub(crate) chains: Vec<Vec<ChainEntry>>,
    coords: Vec<Coordinate>,
    free: Vec<usize>,
    actuated: Vec<usize>,
    moment_arms: DMatrix<f64>,
    pub(crate) spheres: Vec<ResolvedSphere>,
    pub(crate) pelvis_body: usize,
    pub(crate) pelvis_point: ResolvedPoint,
    pub(crate) head_point: ResolvedPoint,
    pub(crate) feet: Vec<usize>,
    root_planar: Option<[usize; 3]>,
}

impl SkeletonModel {
    pub fn new(def: ModelDef) -> Result<Self> {
        let cfg = |m: String| Err(Error::ModelConfig(m));
        if def.schema_version != MODEL_SCHEMA_VERSION {
            return cfg(format!(
                "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
                def.schema_version
            ));
        }
        if !(def.gravity >= 0.0) {
            return cfg("gravity must be non-negative".into());
        }
        def.contact.validate()?;

        let mut names: BTreeMap<&str, usize> = BTreeMap::new();
        let mut parent = Vec::new();
        let mut attachment = Vec::new();
        let mut chains: Vec<Vec<ChainEntry>> = Vec::new();
        let mut coords = Vec::new();
        let mut root_planar = None;

        for (i, b) in def.bodies.iter().enumerate() {
            if names.insert(b.name.as_str(), i).is_some() {
                return cfg(format!("duplicate body name `{}`", b.name));
            }
            if !(b.mass > 0.0) || !(b.inertia > 0.0) {
                return cfg(format!("body `{}` needs positive mass and inertia", b.name));
            }
            let p = match &b.joint.parent {
                None => None,
                Some(name) => match names.get(name.as_str()) {
                    Some(&j) if j < i => Some(j),
                    _ => return cfg(format!("body `{}`: parent `{name}` must be listed earlier", b.name)),
                },
            };
            let mut chain = p.map(|j| chains[j].clone()).unwrap_or_default();
            let j = &b.joint;
            let att = match &j.kind {
                JointKind::Planar => {
                    if p.is_some() {
                        return cfg(format!("planar joint `{}` must attach to the world", j.name));
                    }
                    let base = coords.len();
                    for (suffix, kind) in [
                        ("tx", CoordKind::TranslationX),
                        ("ty", CoordKind::TranslationY),
                        ("tilt", CoordKind::Angle),
                    ] {
                        coords.push(Coordinate {
                            name: format!("{}_{suffix}", j.name),
                            body: i,
                            kind,
                            limits: None,
                            locked: false,
                            group: None,
                            side: None,
                        });
                    }
                    chain.push(ChainEntry::Tx(base));
                    chain.push(ChainEntry::Ty(base + 1));
                    chain.push(ChainEntry::Rot { coord: base + 2, pivot: i, direction: 1.0 });
                    if root_planar.is_none() {
                        root_planar = Some([base, base + 1, base + 2]);
                    }
                    Attachment::Planar { x: base, y: base + 1, tilt: base + 2 }
                }
                JointKind::Revolute { direction, limits, locked } => {
                    if direction.abs() != 1.0 {
                        return cfg(format!("joint `{}`: direction must be +1 or -1", j.name));
                    }
                    if let Some([lo, hi]) = limits {
                        if !(lo < hi) {
                            return cfg(format!("joint `{}`: empty limit range", j.name));
                        }
                    }
                    let c = coords.len();
                    coords.push(Coordinate {
                        name: j.name.clone(),
                        body: i,
                        kind: CoordKind::Angle,
                        limits: *limits,
                        locked: *locked,
                        group: j.group.clone(),
                        side: j.side,
                    });
                    chain.push(ChainEntry::Rot { coord: c, pivot: i, direction: *direction });
                    Attachment::Revolute { coord: c, direction: *direction }
                }
                JointKind::Fixed { angle } => Attachment::Fixed { angle: *angle },
            };
            parent.push(p);
            attachment.push(att);
            chains.push(chain);
        }

        let mut seen = BTreeMap::new();
        for c in &coords {
            if seen.insert(c.name.clone(), ()).is_some() {
                return cfg(format!("duplicate coordinate name `{}`", c.name));
            }
        }
        let free: Vec<usize> = (0..coords.len()).filter(|&i| !coords[i].locked).collect();
        let actuated: Vec<usize> = (0..coords.len())
            .filter(|&i| coords[i].kind == CoordKind::Angle && !coords[i].locked && !is_root(&attachment, i))
            .collect();

        let body_idx = |name: &str| {
            names
                .get(name)
                .copied()
                .ok_or_else(|| Error::ModelConfig(format!("unknown body `{name}`")))
        };

        let mut spheres = Vec::new();
        for s in &def.contact_spheres {
            if !(s.radius > 0.0) {
                return cfg(format!("contact sphere on `{}` needs a positive radius", s.body));
            }
            spheres.push(ResolvedSphere { body: body_idx(&s.body)?, offset: s.offset, radius: s.radius });
        }

        let n_m = def.muscles.len();
        let mut moment_arms = DMatrix::zeros(n_m, coords.len());
        for (m, md) in def.muscles.iter().enumerate() {
            md.params.validate()?;
            if !(md.rest_length > 0.0) {
                return cfg(format!("muscle `{}` needs a positive rest length", md.params.name));
            }
            for (cname, arm) in &md.moment_arms {
                let Some(c) = coords.iter().position(|c| &c.name == cname) else {
                    return cfg(format!("muscle `{}` spans unknown coordinate `{cname}`", md.params.name));
                };
                if !actuated.contains(&c) {
                    return cfg(format!("muscle `{}` spans non-actuated coordinate `{cname}`", md.params.name));
                }
                moment_arms[(m, c)] = *arm;
            }
        }

        let resolve_point = |p: &PointRef| -> Result<ResolvedPoint> {
            Ok(ResolvedPoint { body: body_idx(&p.body)?, offset: p.offset })
        };
        let roles = &def.roles;
        let pelvis_body = body_idx(&roles.pelvis_body)?;
        let pelvis_point = resolve_point(&roles.pelvis_point)?;
        let head_point = resolve_point(&roles.head_point)?;
        let feet = roles.feet.iter().map(|f| body_idx(f)).collect::<Result<Vec<_>>>()?;
        if feet.is_empty() {
            return cfg("model needs at least one foot body".into());
        }

        Ok(Self {
            parent,
            attachment,
            chains,
            coords,
            free,
            actuated,
            moment_arms,
            spheres,
            pelvis_body,
            pelvis_point,
            head_point,
            feet,
            root_planar,
            def,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read model file {}: {e}", path.display())))?;
        let def: ModelDef = serde_json::from_str(&text)?;
        Self::new(def)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.def)?)?;
        Ok(())
    }

    pub fn def(&self) -> &ModelDef {
        &self.def
    }

    pub fn into_def(self) -> ModelDef {
        self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn gravity(&self) -> f64 {
        self.def.gravity
    }

    pub fn n_bodies(&self) -> usize {
        self.def.bodies.len()
    }

    pub fn n_coords(&self) -> usize {
        self.coords.len()
    }

    pub fn n_muscles(&self) -> usize {
        self.def.muscles.len()
    }

    pub fn bodies(&self) -> &[BodyDef] {
        &self.def.bodies
    }

    pub fn coords(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.def.bodies.iter().position(|b| b.name == name)
    }

    /// Coordinates that are integrated (everything except locked hinges).
    pub fn free_coords(&self) -> &[usize] {
        &self.free
    }

    /// Unlocked hinge coordinates below the root; the PD controller drives these.
    pub fn actuated_coords(&self) -> &[usize] {
        &self.actuated
    }

    /// Root translation and tilt coordinates when the model floats.
    pub fn planar_root(&self) -> Option<[usize; 3]> {
        self.root_planar
    }

    pub fn muscles(&self) -> impl Iterator<Item = &MuscleParams> {
        self.def.muscles.iter().map(|m| &m.params)
    }

    pub fn muscle_defs(&self) -> &[MuscleDef] {
        &self.def.muscles
    }

    /// Moment-arm matrix, `n_muscles x n_coords`.
    pub fn moment_arms(&self) -> &DMatrix<f64> {
        &self.moment_arms
    }

    pub fn contact_params(&self) -> &ContactParams {
        &self.def.contact
    }

    pub fn contact_spheres(&self) -> &[ContactSphere] {
        &self.def.contact_spheres
    }

    pub fn feet(&self) -> &[usize] {
        &self.feet
    }

    pub fn pelvis_body(&self) -> usize {
        self.pelvis_body
    }

    pub fn total_mass(&self) -> f64 {
        self.def.bodies.iter().map(|b| b.mass).sum()
    }

    /// Coordinates sharing a functional group with the given side, e.g. `("ankle", Left)`.
    pub fn coords_in_group(&self, group: &str) -> Vec<usize> {
        self.actuated
            .iter()
            .copied()
            .filter(|&c| self.coords[c].group.as_deref() == Some(group))
            .collect()
    }

    /// Rebuilds with an edited definition, e.g. after a scenario transform.
    pub fn with_def(&self, f: impl FnOnce(&mut ModelDef)) -> Result<Self> {
        let mut def = self.def.clone();
        f(&mut def);
        Self::new(def)
    }
}

fn is_root(attachment: &[Attachment], coord: usize) -> bool {
    attachment
        .iter()
        .any(|a| matches!(a, Attachment::Planar { tilt, .. } if *tilt == coord))
}
