//! The adaptive loop: flow to convergence on a mesh, estimate, mark,
//! bisect, transfer, repeat.

pub mod config;
mod export;
mod oracle;

use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{indicator, mark};
use crate::error::{Error, Result};
use crate::flow::{inner_loop, orthonormalize, DtEvent, FlowState, FlowTermination, HistoryRecord};
use crate::ksmodel::{EnergyBreakdown, KsModel, Molecule, OrbitalSet};
use crate::mesh::{build_box_mesh, Mesh, Point};

pub use config::{HartreeMode, InitialGuess, RunConfig};
pub use export::{write_history_csv, write_summary};
pub use oracle::{run_linear_oracle, OracleReport, MAX_ORACLE_DOFS};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Converged data of one refinement level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    pub dofs: usize,
    pub tets: usize,
    pub min_h: f64,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub steps: usize,
    pub halvings: usize,
    pub termination: FlowTermination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub levels: Vec<LevelRecord>,
    pub final_energy: Option<f64>,
    pub termination: String,
    pub max_gram_err: f64,
    /// Re-orthonormalizations inside the time loop (always zero; Löwdin runs only after transfer).
    pub in_loop_reorthonormalizations: usize,
    pub config_echo: RunConfig,
    pub version: String,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunReport {
    pub summary: RunSummary,
    pub history: Vec<HistoryRecord>,
    pub dt_events: Vec<DtEvent>,
    /// Final mesh and its nodal density, when at least one level finished.
    pub final_mesh: Option<Mesh>,
    pub final_density: Option<Vec<f64>>,
    pub final_orbitals: Option<OrbitalSet>,
    pub error: Option<Error>,
}

impl RunReport {
    /// Process exit code: 0 converged, 2 budget exhausted, 1 error.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.summary.termination.as_str()) {
            (Some(_), _) => 1,
            (None, "converged") => 0,
            _ => 2,
        }
    }
}

/// The initial mesh: a Kuhn box refined `prerefine` times around the nuclei.
pub fn initial_mesh(config: &RunConfig) -> Result<Mesh> {
    let mesh = build_box_mesh(config.domain_lo.into(), config.domain_hi.into(), [config.cells; 3])?;
    let points: Vec<Point> = config.nuclei.iter().map(|n| n.point()).collect();
    mesh.refine_around(&points, config.prerefine)
}

/// Nucleus-centred Gaussians `exp(-|x - R|²)`, orbital `i` on nucleus
/// `i mod K`; the `r`-th orbital on a nucleus (r ≥ 1) is multiplied by the
/// coordinate `(x - R)` along axis `(r - 1) mod 3`.
pub fn gaussian_guess(model: &KsModel) -> DMatrix<f64> {
    let molecule = model.molecule();
    let mesh = model.mesh();
    let dofs = model.space().dofs();
    let centres: Vec<Point> = if molecule.nuclei.is_empty() {
        vec![Point::zeros()]
    } else {
        molecule.nuclei.iter().map(|n| n.point()).collect()
    };
    DMatrix::from_fn(dofs.n_dofs(), molecule.n_orbitals(), |d, i| {
        let x = mesh.vertices()[dofs.vertex(d)];
        let centre = centres[i % centres.len()];
        let round = i / centres.len();
        let y = x - centre;
        let envelope = (-y.norm_squared()).exp();
        if round == 0 {
            envelope
        } else {
            envelope * y[(round - 1) % 3]
        }
    })
}

/// Seeded uniform noise under `exp(-dist(x, nuclei))`.
pub fn random_guess(model: &KsModel, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let molecule = model.molecule();
    let mesh = model.mesh();
    let dofs = model.space().dofs();
    let mut c = DMatrix::zeros(dofs.n_dofs(), molecule.n_orbitals());
    for i in 0..molecule.n_orbitals() {
        for d in 0..dofs.n_dofs() {
            let x = mesh.vertices()[dofs.vertex(d)];
            let dist = molecule
                .nuclei
                .iter()
                .map(|n| (x - n.point()).norm())
                .fold(x.norm(), f64::min);
            c[(d, i)] = (-dist).exp() * rng.gen_range(-1.0..1.0);
        }
    }
    c
}

fn initial_orbitals(model: &KsModel, config: &RunConfig) -> Result<OrbitalSet> {
    let c = match config.init {
        InitialGuess::Gaussian => gaussian_guess(model),
        InitialGuess::Random => random_guess(model, config.seed),
    };
    orthonormalize(&OrbitalSet::new(c, config.occupations.clone())?, model.mass())
}

/// Transfers interior coefficients from `coarse` to its descendant `fine`.
pub fn transfer_orbitals(orbitals: &OrbitalSet, coarse: &KsModel, fine: &KsModel) -> Result<OrbitalSet> {
    let full = coarse.space().dofs().extend_columns(&orbitals.coefficients);
    let mut out = DMatrix::zeros(fine.n_dofs(), orbitals.n_orbitals());
    for j in 0..orbitals.n_orbitals() {
        let column: Vec<f64> = full.column(j).iter().copied().collect();
        let moved = fine.mesh().transfer_nodal(coarse.mesh(), &column)?;
        out.column_mut(j).copy_from_slice(&fine.space().dofs().restrict(&moved));
    }
    Ok(orbitals.with_coefficients(out))
}

struct Progress {
    levels: Vec<LevelRecord>,
    history: Vec<HistoryRecord>,
    dt_events: Vec<DtEvent>,
    max_gram_err: f64,
    last: Option<(KsModel, FlowState)>,
}

fn adaptive_loop(config: &RunConfig, progress: &mut Progress) -> Result<FlowTermination> {
    let molecule: Molecule = config.molecule()?;
    let options = config.model_options();
    let flow_options = config.flow_options();
    let mut model = KsModel::new(&initial_mesh(config)?, molecule.clone(), options.clone())?;
    let mut orbitals = initial_orbitals(&model, config)?;
    let mut termination = FlowTermination::Converged;
    for level in 0..=config.maxrefine {
        let started = Instant::now();
        let min_h = model.mesh().element_sizes().min();
        let dt = config.dt_init.unwrap_or(min_h * min_h);
        let mut state = FlowState::with_metric(&model, orbitals, dt, level, flow_options.metric)?;
        let result = inner_loop(&model, &mut state, &flow_options);
        progress.max_gram_err = progress.max_gram_err.max(state.max_gram_err);
        progress.history.extend_from_slice(&state.history);
        progress.dt_events.extend_from_slice(&state.dt_events);
        termination = result?;
        let halvings = state
            .dt_events
            .iter()
            .filter(|e| e.change == crate::flow::DtChange::Halved)
            .count();
        let record = LevelRecord {
            level,
            dofs: model.n_dofs(),
            tets: model.mesh().n_tets(),
            min_h,
            energy: state.energy,
            grad_norm: state.grad_norm,
            steps: state.step_index,
            halvings,
            termination,
            wall_seconds: (!config.deterministic).then(|| started.elapsed().as_secs_f64()),
        };
        info!(
            "level {level}: {} dofs, {} tets, E = {:.8}, |grad| = {:.3e}, {} steps",
            record.dofs, record.tets, record.energy.total, record.grad_norm, record.steps
        );
        progress.levels.push(record);

        let density = state.evaluation().density.values.clone();
        if let Some(dir) = &config.output_dir {
            if config.export_density {
                crate::mesh::write_vtk(&dir.join(format!("density_{level}.vtk")), model.mesh(), &[("rho", &density)])?;
            }
        }
        let eta = (level < config.maxrefine || config.export_indicator)
            .then(|| indicator(model.space(), &density, config.indicator));
        if let (Some(dir), Some(eta)) = (&config.output_dir, &eta) {
            if config.export_indicator {
                eta.write_csv(&dir.join(format!("indicator_{level}.csv")), model.mesh())?;
            }
        }
        orbitals = state.orbitals.clone();
        if level == config.maxrefine {
            progress.last = Some((model, state));
            break;
        }
        let marks = mark(eta.as_ref().expect("indicator computed below maxrefine"), config.theta)?;
        if marks.is_empty() {
            info!("indicator vanished; stopping refinement at level {level}");
            progress.last = Some((model, state));
            break;
        }
        let fine_mesh = model.mesh().bisect(&marks.marked)?;
        let fine = KsModel::new(&fine_mesh, molecule.clone(), options.clone())?;
        orbitals = orthonormalize(&transfer_orbitals(&orbitals, &model, &fine)?, fine.mass())?;
        progress.last = Some((model, state));
        model = fine;
    }
    Ok(termination)
}

/// Runs the adaptive algorithm and writes the configured outputs. Errors
/// abort the run but still produce a report with the partial summary.
pub fn run(config: &RunConfig) -> RunReport {
    let mut progress = Progress {
        levels: Vec::new(),
        history: Vec::new(),
        dt_events: Vec::new(),
        max_gram_err: 0.0,
        last: None,
    };
    let mut error = match &config.output_dir {
        Some(dir) => std::fs::create_dir_all(dir).err().map(|e| Error::io(dir, e)),
        None => None,
    };
    let mut termination = String::new();
    if error.is_none() {
        match adaptive_loop(config, &mut progress) {
            Ok(FlowTermination::Converged) => termination = "converged".into(),
            Ok(FlowTermination::BudgetExhausted) => termination = "budget-exhausted".into(),
            Err(e) => error = Some(e),
        }
    }
    if let Some(e) = &error {
        termination = e.kind().into();
    }
    let summary = RunSummary {
        final_energy: progress.levels.last().map(|l| l.energy.total),
        levels: progress.levels,
        termination,
        max_gram_err: progress.max_gram_err,
        in_loop_reorthonormalizations: 0,
        config_echo: config.clone(),
        version: VERSION.to_string(),
    };
    let (final_mesh, final_density, final_orbitals) = match progress.last {
        Some((model, state)) => (
            Some(model.mesh().clone()),
            Some(state.evaluation().density.values.clone()),
            Some(state.orbitals.clone()),
        ),
        None => (None, None, None),
    };
    let mut report = RunReport {
        summary,
        history: progress.history,
        dt_events: progress.dt_events,
        final_mesh,
        final_density,
        final_orbitals,
        error,
    };
    if let Some(dir) = &config.output_dir {
        if let Err(e) = export::write_all(dir, &report, config.export_density) {
            report.error.get_or_insert(e);
        }
    }
    report
}
