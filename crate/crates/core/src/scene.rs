//! Scene files: a versioned TOML description of a domain, a flow, tolerances
//! and sampling parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::Expr;
use crate::flowfield::{
    check_traversing, morse_stratify, FlowError, FlowSpec, MorseStrata, DEFAULT_GRID_RESOLUTION,
    DEFAULT_POSITIVITY_MARGIN, DEFAULT_REFINE_TOLERANCE,
};
use crate::geometry::{
    Curve, CurveShape, Domain, GeometryError, DEFAULT_AMBIENT_MARGIN, DEFAULT_BOUNDARY_TOLERANCE,
};
use crate::tracing::{
    sample_causality_map, CausalityDataset, SampleError, SamplingConfig, Tolerances, TraceConfig, Tracer,
    DEFAULT_TANGENCY_THRESHOLD,
};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

pub const BUILTIN_SCENES: &[&str] = &[
    "disk",
    "annulus",
    "two_holes",
    "three_holes",
    "four_holes",
    "ellipse",
    "range_split",
];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot parse scene: {0}")]
    Parse(String),
    #[error("unsupported scene schema {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("invalid domain: {0}")]
    Geometry(#[from] GeometryError),
    #[error("unknown built-in scene `{0}`")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub outer: CurveShape,
    #[serde(default)]
    pub holes: Vec<CurveShape>,
    #[serde(default = "default_margin")]
    pub ambient_margin: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub vx: String,
    pub vy: String,
    pub f: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<String>,
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default = "default_refine")]
    pub refine_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default = "default_tangency")]
    pub tangency: f64,
    #[serde(default = "default_positivity")]
    pub positivity_margin: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        ToleranceSection {
            tangency: DEFAULT_TANGENCY_THRESHOLD,
            positivity_margin: DEFAULT_POSITIVITY_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// Boundary samples per unit length.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Interior grid points per side for the algebra stage.
    #[serde(default = "default_interior")]
    pub interior_grid: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            density: default_density(),
            interior_grid: default_interior(),
        }
    }
}

fn default_margin() -> f64 {
    DEFAULT_AMBIENT_MARGIN
}
fn default_boundary_tol() -> f64 {
    DEFAULT_BOUNDARY_TOLERANCE
}
fn default_grid() -> usize {
    DEFAULT_GRID_RESOLUTION
}
fn default_refine() -> f64 {
    DEFAULT_REFINE_TOLERANCE
}
fn default_tangency() -> f64 {
    DEFAULT_TANGENCY_THRESHOLD
}
fn default_positivity() -> f64 {
    DEFAULT_POSITIVITY_MARGIN
}
fn default_density() -> f64 {
    100.0
}
fn default_interior() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSection,
    pub flow: FlowSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub sampling: SamplingSection,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// A scene turned into geometry and a flow.
#[derive(Debug, Clone)]
pub struct BuiltScene {
    pub scene: Scene,
    pub domain: Domain,
    pub flow: FlowSpec,
}

impl BuiltScene {
    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            tangency_threshold: self.scene.tolerances.tangency,
            ..TraceConfig::default()
        }
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig::with_density(self.scene.sampling.density)
    }

    /// The scene moved by the rotation about the origin by `angle`, with the
    /// parameter shift of each curve (`R(c(t)) = c'(t + shift)`).
    pub fn rotated(&self, angle: f64) -> Result<(BuiltScene, Vec<f64>), SceneError> {
        let mut scene = self.scene.clone();
        scene.name = format!("{}_rot", scene.name);
        let mut shifts = Vec::new();
        let outer = self.domain.curve(0).rotated(angle);
        scene.domain.outer = outer.0.shape().clone();
        shifts.push(outer.1);
        scene.domain.holes.clear();
        for id in 1..self.domain.curve_count() {
            let (c, shift) = self.domain.curve(id).rotated(angle);
            scene.domain.holes.push(c.shape().clone());
            shifts.push(shift);
        }
        let flow = self.flow.rotated(angle);
        scene.flow.vx = flow.vx().to_string();
        scene.flow.vy = flow.vy().to_string();
        scene.flow.f = flow.f().to_string();
        scene.flow.lambda = flow.lambda().map(|l| l.to_string());
        Ok((scene.build()?, shifts))
    }

    /// Checks the traversing condition, then stratifies the boundary.
    pub fn strata(&self) -> Result<MorseStrata, FlowError> {
        check_traversing(
            &self.domain,
            &self.flow,
            self.scene.flow.grid_resolution,
            self.scene.tolerances.positivity_margin,
        )?;
        morse_stratify(&self.domain, &self.flow, self.scene.flow.refine_tolerance)
    }

    pub fn tracer(&self) -> Tracer<'_> {
        Tracer::new(&self.domain, &self.flow, self.trace_config())
    }

    /// Samples the causality map at the scene's density.
    pub fn sample(&self) -> Result<CausalityDataset, PipelineError> {
        self.sample_with(&self.sampling_config())
    }

    pub fn sample_with(&self, config: &SamplingConfig) -> Result<CausalityDataset, PipelineError> {
        let strata = self.strata()?;
        let mut d = sample_causality_map(&self.tracer(), &strata, config, self.tolerances())?;
        d.header.scene_hash = self.scene.hash();
        Ok(d)
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            boundary: self.scene.domain.boundary_tolerance,
            tangency: self.scene.tolerances.tangency,
            refine: self.scene.flow.refine_tolerance,
            positivity: self.scene.tolerances.positivity_margin,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<(), SceneError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SceneError::InvalidField {
            field: field.to_string(),
            reason: format!("must be positive, got {v}"),
        })
    }
}

fn expr(field: &str, src: &str) -> Result<Expr, SceneError> {
    Expr::parse(src).map_err(|e| SceneError::InvalidField {
        field: field.to_string(),
        reason: e.to_string(),
    })
}

fn curve(field: &str, shape: &CurveShape) -> Result<Curve, SceneError> {
    Curve::new(shape.clone()).map_err(|e| SceneError::InvalidField {
        field: field.to_string(),
        reason: e.to_string(),
    })
}

impl Scene {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        if scene.schema != SCENE_SCHEMA_VERSION {
            return Err(SceneError::Schema {
                found: scene.schema,
                expected: SCENE_SCHEMA_VERSION,
            });
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// A built-in name or a path to a scene file.
    pub fn resolve(spec: &str) -> Result<Self, SceneError> {
        if BUILTIN_SCENES.contains(&spec) {
            Self::builtin(spec)
        } else {
            Self::load(Path::new(spec))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    fn validate(&self) -> Result<(), SceneError> {
        positive("domain.ambient_margin", self.domain.ambient_margin)?;
        positive("domain.boundary_tolerance", self.domain.boundary_tolerance)?;
        positive("flow.refine_tolerance", self.flow.refine_tolerance)?;
        positive("tolerances.tangency", self.tolerances.tangency)?;
        positive("tolerances.positivity_margin", self.tolerances.positivity_margin)?;
        positive("sampling.density", self.sampling.density)?;
        if self.flow.grid_resolution < 2 {
            return Err(SceneError::InvalidField {
                field: "flow.grid_resolution".into(),
                reason: "must be at least 2".into(),
            });
        }
        if self.sampling.interior_grid < 2 {
            return Err(SceneError::InvalidField {
                field: "sampling.interior_grid".into(),
                reason: "must be at least 2".into(),
            });
        }
        Ok(())
    }

    pub fn build(&self) -> Result<BuiltScene, SceneError> {
        self.validate()?;
        let outer = curve("domain.outer", &self.domain.outer)?;
        let holes = self
            .domain
            .holes
            .iter()
            .enumerate()
            .map(|(i, h)| curve(&format!("domain.holes[{i}]"), h))
            .collect::<Result<Vec<_>, _>>()?;
        let domain = Domain::with_tolerance(
            outer,
            holes,
            self.domain.ambient_margin,
            self.domain.boundary_tolerance,
        )?;
        let flow = FlowSpec::new(
            expr("flow.vx", &self.flow.vx)?,
            expr("flow.vy", &self.flow.vy)?,
            expr("flow.f", &self.flow.f)?,
            self.flow.lambda.as_deref().map(|l| expr("flow.lambda", l)).transpose()?,
        );
        Ok(BuiltScene {
            scene: self.clone(),
            domain,
            flow,
        })
    }

    fn vertical(name: &str, outer: CurveShape, holes: Vec<CurveShape>, density: f64) -> Scene {
        Scene {
            schema: SCENE_SCHEMA_VERSION,
            name: name.to_string(),
            seed: 1,
            domain: DomainSection {
                outer,
                holes,
                ambient_margin: DEFAULT_AMBIENT_MARGIN,
                boundary_tolerance: DEFAULT_BOUNDARY_TOLERANCE,
            },
            flow: FlowSection {
                vx: "0".into(),
                vy: "1".into(),
                f: "y".into(),
                lambda: None,
                grid_resolution: DEFAULT_GRID_RESOLUTION,
                refine_tolerance: DEFAULT_REFINE_TOLERANCE,
            },
            tolerances: ToleranceSection::default(),
            sampling: SamplingSection {
                density,
                interior_grid: default_interior(),
            },
        }
    }

    pub fn builtin(name: &str) -> Result<Scene, SceneError> {
        let circle = |x: f64, y: f64, r: f64| CurveShape::Circle {
            center: [x, y],
            radius: r,
        };
        let scene = match name {
            "disk" => Scene::vertical(name, circle(0.0, 0.0, 1.0), vec![], 100.0),
            "annulus" => Scene::vertical(name, circle(0.0, 0.0, 2.0), vec![circle(0.0, 0.0, 1.0)], 100.0),
            "two_holes" => Scene::vertical(
                name,
                circle(0.0, 0.0, 3.0),
                vec![circle(-1.2, 0.4, 0.6), circle(1.1, -0.5, 0.5)],
                100.0,
            ),
            "three_holes" => Scene::vertical(
                name,
                circle(0.0, 0.0, 3.0),
                vec![circle(-1.5, 0.2, 0.5), circle(0.3, 1.3, 0.45), circle(1.2, -1.0, 0.55)],
                100.0,
            ),
            "four_holes" => Scene::vertical(
                name,
                circle(0.0, 0.0, 3.0),
                vec![
                    circle(-1.5, 0.3, 0.45),
                    circle(0.2, 1.4, 0.4),
                    circle(1.3, -0.9, 0.45),
                    circle(-0.4, -1.6, 0.4),
                ],
                200.0,
            ),
            "ellipse" => Scene::vertical(
                name,
                CurveShape::Ellipse {
                    center: [0.0, 0.0],
                    semi_x: 2.0,
                    semi_y: 1.0,
                    rotation: 0.0,
                },
                vec![],
                100.0,
            ),
            "range_split" => {
                let mut s = Scene::vertical(name, circle(0.0, 0.0, 2.0), vec![circle(0.0, 0.0, 1.0)], 50.0);
                s.flow.vx = "x".into();
                s.flow.vy = "y".into();
                s.flow.f = "x^2 + y^2 + 0.5*x".into();
                s.flow.grid_resolution = 120;
                s
            }
            other => return Err(SceneError::UnknownBuiltin(other.to_string())),
        };
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_build_and_round_trip() {
        for name in BUILTIN_SCENES {
            let s = Scene::builtin(name).unwrap();
            let text = s.to_toml();
            let back = Scene::from_toml(&text).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.hash(), s.hash());
            back.build().unwrap();
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let mut text = Scene::builtin("disk").unwrap().to_toml();
        text = text.replace("[flow]", "[flow]\nspeed = 3");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn bad_expression_names_field() {
        let mut s = Scene::builtin("disk").unwrap();
        s.flow.vy = "1 + ".into();
        let err = s.build().unwrap_err().to_string();
        assert!(err.contains("flow.vy"), "{err}");
    }

    #[test]
    fn non_positive_tolerance_rejected() {
        let text = Scene::builtin("disk")
            .unwrap()
            .to_toml()
            .replace("density = 100.0", "density = -1.0");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("sampling.density"), "{err}");
    }
}
