//! Run configuration: one JSON document naming the model, the numeric
//! settings and the output location. Field names carry their units.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use polling_core::apps::fwlan::{fwlan_hybrid_spec, fwlan_spec, Architecture, FwlanGeometry, Objective};
use polling_core::apps::waste::WasteSpec;
use polling_core::measure::{
    Atom, DensityForm, MixedMeasure, MomentFn, MomentProfile, PointMoments, PollingSpec, StageSpec,
};
use polling_core::quadrature::Quadrature;
use polling_core::simulate::{AtomService, ServiceFamily};
use polling_core::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub numeric: NumericConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Polling(PollingConfig),
    Fwlan(FwlanConfig),
    Waste(WasteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollingConfig {
    pub lambda_per_time: f64,
    pub speed_length_per_time: f64,
    pub circumference_length: f64,
    pub stages: Vec<StageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    /// Shape of the continuous part, scaled to the mass left by the atoms.
    #[serde(default)]
    pub density: Option<DensityConfig>,
    pub moments: MomentsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub position_length: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Uniform,
    PiecewiseConstant { breaks_length: Vec<f64>, values: Vec<f64> },
    PiecewiseLinear { knots_length: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub first_time: MomentFnConfig,
    pub second_time2: MomentFnConfig,
    #[serde(default)]
    pub points: Vec<PointMomentsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MomentFnConfig {
    Constant(f64),
    Table { knots_length: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMomentsConfig {
    pub position_length: f64,
    pub first_time: f64,
    pub second_time2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureConfig {
    #[default]
    Autonomous,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwlanConfig {
    pub d1_length: f64,
    pub d2_length: f64,
    pub d_length: f64,
    /// Transfer time at unit channel gain.
    pub eta_time: f64,
    pub beta: f64,
    pub speed_length_per_time: f64,
    pub lambda_per_time: f64,
    #[serde(default)]
    pub eta1_time: f64,
    #[serde(default)]
    pub d_bs_length: f64,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WasteConfig {
    pub pickup_time: f64,
    pub discard_time: f64,
    pub lambda_per_time: f64,
    pub density: DensityConfig,
    pub x_d_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceFamilyConfig {
    #[default]
    Auto,
    Deterministic,
    Exponential,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomServiceConfig {
    #[default]
    Gated,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericConfig {
    pub quadrature_panels: usize,
    pub quadrature_order: usize,
    pub quadrature_tolerance: f64,
    pub sigmas: Vec<usize>,
    pub replications: usize,
    /// Observation length in mean cycles, used unless `horizon_time` is set.
    pub horizon_cycles: f64,
    pub horizon_time: Option<f64>,
    pub warmup_time: Option<f64>,
    pub seed: Option<u64>,
    pub service_family: ServiceFamilyConfig,
    pub atom_service: AtomServiceConfig,
    /// Extra points whose cycle and progress statistics are reported.
    pub reference_points_length: Vec<f64>,
    pub tau_points: usize,
    /// Allowed relative gap between the finest discretization and the
    /// continuous workload.
    pub sigma_tolerance: f64,
    /// Allowed simulation z-score.
    pub z_threshold: f64,
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self {
            quadrature_panels: 64,
            quadrature_order: 8,
            quadrature_tolerance: 1e-6,
            sigmas: vec![1, 8, 64, 1024],
            replications: 20,
            horizon_cycles: 20_000.0,
            horizon_time: None,
            warmup_time: None,
            seed: None,
            service_family: ServiceFamilyConfig::Auto,
            atom_service: AtomServiceConfig::Gated,
            reference_points_length: Vec::new(),
            tau_points: 20,
            sigma_tolerance: 0.01,
            z_threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    LambdaPerTime,
    SpeedLengthPerTime,
    DLength,
    DBsLength,
    XDLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl SweepConfig {
    /// Equally spaced values from `from` to `to` inclusive.
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.from],
            n => (0..n).map(|i| self.from + (self.to - self.from) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveConfig {
    #[default]
    Workload,
    FirstMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub objective: ObjectiveConfig,
    /// Grid size for the collection-point search.
    pub grid_points: usize,
    /// Grid shift in units of the grid spacing, in `[0, 1)`.
    pub grid_offset: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { objective: ObjectiveConfig::Workload, grid_points: 10_000, grid_offset: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<String>,
    /// Write the event trace of the first replication.
    pub trace: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Compact JSON with fields in declaration order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical form with the output directory left out,
    /// so the same experiment hashes alike wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.directory = None;
        Sha256::digest(c.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn quadrature(&self) -> Quadrature {
        let n = &self.numeric;
        Quadrature::new(n.quadrature_panels, n.quadrature_order.max(1)).with_tolerance(n.quadrature_tolerance)
    }

    pub fn service_family(&self) -> ServiceFamily {
        match self.numeric.service_family {
            ServiceFamilyConfig::Auto => ServiceFamily::Auto,
            ServiceFamilyConfig::Deterministic => ServiceFamily::Deterministic,
            ServiceFamilyConfig::Exponential => ServiceFamily::Exponential,
            ServiceFamilyConfig::Gamma => ServiceFamily::Gamma,
        }
    }

    pub fn atom_service(&self) -> AtomService {
        match self.numeric.atom_service {
            AtomServiceConfig::Gated => AtomService::Gated,
            AtomServiceConfig::Exhaustive => AtomService::Exhaustive,
        }
    }

    pub fn objective(&self) -> Objective {
        match self.optimize.objective {
            ObjectiveConfig::Workload => Objective::Workload,
            ObjectiveConfig::FirstMoment => Objective::FirstMoment,
        }
    }
}

impl DensityConfig {
    pub fn form(&self) -> DensityForm {
        match self {
            DensityConfig::Uniform => DensityForm::Uniform,
            DensityConfig::PiecewiseConstant { breaks_length, values } => {
                DensityForm::PiecewiseConstant { breaks: breaks_length.clone(), values: values.clone() }
            }
            DensityConfig::PiecewiseLinear { knots_length, values } => {
                DensityForm::PiecewiseLinear { knots: knots_length.clone(), values: values.clone() }
            }
        }
    }
}

impl MomentFnConfig {
    fn build(&self) -> Result<MomentFn> {
        match self {
            MomentFnConfig::Constant(c) => Ok(MomentFn::Constant(*c)),
            MomentFnConfig::Table { knots_length, values } => MomentFn::table(knots_length.clone(), values.clone()),
        }
    }
}

impl PollingConfig {
    pub fn build(&self) -> Result<PollingSpec> {
        let c = self.circumference_length;
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let atoms = s.atoms.iter().map(|a| Atom { position: a.position_length, mass: a.mass }).collect();
                let measure = MixedMeasure::from_form(c, atoms, s.density.as_ref().map(DensityConfig::form).as_ref())?;
                let points = s
                    .moments
                    .points
                    .iter()
                    .map(|p| PointMoments { position: p.position_length, first: p.first_time, second: p.second_time2 })
                    .collect();
                let moments =
                    MomentProfile::new(s.moments.first_time.build()?, s.moments.second_time2.build()?).with_points(points);
                Ok(StageSpec::new(s.epsilon, measure, moments))
            })
            .collect::<Result<Vec<_>>>()?;
        PollingSpec::new(self.lambda_per_time, self.speed_length_per_time, stages)
    }
}

impl FwlanConfig {
    pub fn geometry(&self) -> FwlanGeometry {
        FwlanGeometry {
            d1: self.d1_length,
            d2: self.d2_length,
            d: self.d_length,
            eta: self.eta_time,
            beta: self.beta,
            alpha: self.speed_length_per_time,
            lambda: self.lambda_per_time,
            eta1: self.eta1_time,
            d_bs: self.d_bs_length,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self.architecture {
            ArchitectureConfig::Autonomous => Architecture::Autonomous,
            ArchitectureConfig::Hybrid => Architecture::Hybrid,
        }
    }
}

impl WasteConfig {
    pub fn build(&self) -> Result<WasteSpec> {
        let ws = WasteSpec {
            pickup: self.pickup_time,
            discard: self.discard_time,
            lambda: self.lambda_per_time,
            density: MixedMeasure::from_form(1.0, Vec::new(), Some(&self.density.form()))?,
            x_d: self.x_d_length,
        };
        ws.validate()?;
        Ok(ws)
    }
}

impl ModelConfig {
    /// The model as a general polling system.
    pub fn polling_spec(&self) -> Result<PollingSpec> {
        match self {
            ModelConfig::Polling(p) => p.build(),
            ModelConfig::Fwlan(f) => match f.architecture() {
                Architecture::Autonomous => fwlan_spec(&f.geometry()),
                Architecture::Hybrid => fwlan_hybrid_spec(&f.geometry()),
            },
            ModelConfig::Waste(w) => w.build()?.polling_spec(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Polling(_) => "polling",
            ModelConfig::Fwlan(_) => "fwlan",
            ModelConfig::Waste(_) => "waste",
        }
    }
}
