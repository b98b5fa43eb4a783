use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create, divergence_dominated, resolve_case, write_metadata, Settings, SweepArgs, EXIT_DIVERGENCE};
use crate::cases::{LoadModel, SystemCase};
use crate::dynmodels::{CompositeLoadParams, ZipLoadParams};
use crate::error::{Error, Result};
use crate::margins::{binary_search_sol, compute_pcll, compute_sol, write_margin_table, MarginRow};

/// One load composition of a sweep. Exactly one of `zip` and `composite`
/// is given; it replaces the model of every load (or only those in `area`)
/// while keeping each load's nominal P and Q and its relief voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadOverride {
    pub name: String,
    #[serde(default)]
    pub area: Option<u32>,
    #[serde(default)]
    pub zip: Option<ZipShares>,
    #[serde(default)]
    pub composite: Option<CompositeShares>,
}

/// `[a, b, c]` impedance, current and power shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipShares {
    pub p: [f64; 3],
    pub q: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeShares {
    pub lim: f64,
    pub sim: f64,
    #[serde(default)]
    pub dl: f64,
    #[serde(default)]
    pub mva: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverride {
    pub fine_step: Option<f64>,
    pub coarse_step: Option<f64>,
    pub coarse_until: Option<f64>,
    pub t_end: Option<f64>,
}

/// SOL by bisection instead of the linear scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BisectionSpec {
    pub tol: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_hi() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub configs: Vec<LoadOverride>,
    pub contingencies: Vec<String>,
    #[serde(default)]
    pub schedule: ScheduleOverride,
    #[serde(default)]
    pub binary_search: Option<BisectionSpec>,
}

impl LoadOverride {
    /// The case with this composition applied.
    pub fn apply(&self, case: &SystemCase) -> SystemCase {
        let mut out = case.clone();
        let areas: Vec<Option<u32>> = out.loads.iter().map(|l| case.area_of(l.bus)).collect();
        for (load, area) in out.loads.iter_mut().zip(areas) {
            if self.area.is_some_and(|a| Some(a) != area) {
                continue;
            }
            let (p, q, v_relief) = match &load.model {
                LoadModel::Zip(z) => (z.p0_mw, z.q0_mvar, z.v_relief),
                LoadModel::Composite(c) => (c.p0_mw, c.q0_mvar, c.v_relief),
            };
            load.model = match (&self.zip, &self.composite) {
                (Some(z), None) => LoadModel::Zip(ZipLoadParams {
                    v_relief,
                    ..ZipLoadParams::new(p, q, z.p, z.q)
                }),
                (None, Some(c)) => LoadModel::Composite(CompositeLoadParams {
                    v_relief,
                    ..CompositeLoadParams::new(p, q, c.lim, c.sim, c.dl, c.mva)
                }),
                _ => unreachable!("checked by SweepSpec::validate"),
            };
        }
        out
    }
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Structural checks plus the invariants of every overridden case.
    pub fn validate(&self, case: &SystemCase) -> Result<Vec<SystemCase>> {
        let mut bad = Vec::new();
        if self.configs.is_empty() {
            bad.push("sweep has no load configurations".to_string());
        }
        if self.contingencies.is_empty() {
            bad.push("sweep has no contingencies".to_string());
        }
        for (k, c) in self.configs.iter().enumerate() {
            if self.configs[..k].iter().any(|o| o.name == c.name) {
                bad.push(format!("duplicate load configuration '{}'", c.name));
            }
            if c.zip.is_some() == c.composite.is_some() {
                bad.push(format!(
                    "configuration '{}' needs exactly one of zip, composite",
                    c.name
                ));
            }
        }
        for label in &self.contingencies {
            if let Err(e) = case.contingency(label) {
                bad.push(e.to_string());
            }
        }
        if let Some(b) = &self.binary_search {
            if !(b.tol > 0.0) || !(b.hi > 0.0) {
                bad.push(format!(
                    "binary_search needs tol > 0 and hi > 0 (tol {}, hi {})",
                    b.tol, b.hi
                ));
            }
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let mut cases = Vec::new();
        for c in &self.configs {
            let overridden = c.apply(case);
            if let Err(Error::Validation(v)) = overridden.validate() {
                bad.extend(v.into_iter().map(|m| format!("configuration '{}': {m}", c.name)));
            }
            cases.push(overridden);
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        Ok(cases)
    }

    fn settings(&self) -> Settings {
        let d = Settings::default();
        let s = &self.schedule;
        Settings {
            fine_step: s.fine_step.unwrap_or(d.fine_step),
            coarse_step: s.coarse_step.unwrap_or(d.coarse_step),
            coarse_until: s.coarse_until.unwrap_or(d.coarse_until),
            t_end: s.t_end.unwrap_or(d.t_end),
            ..d
        }
    }
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone)]
enum Cell {
    Margin(MarginRow, bool),
    Failed(MarginRow),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Margin(_, true) => "divergence".to_string(),
            Cell::Margin(r, false) => r.margin_mw.map(|m| m.to_string()).unwrap_or_default(),
            Cell::Failed(r) if r.limiting_reason.starts_with("divergence") => "divergence".to_string(),
            Cell::Failed(_) => "error".to_string(),
        }
    }

    fn row(&self) -> &MarginRow {
        match self {
            Cell::Margin(r, _) | Cell::Failed(r) => r,
        }
    }

    fn divergent(&self) -> bool {
        self.text() == "divergence"
    }
}

#[derive(Serialize)]
struct SweepSettings<'a> {
    spec: &'a SweepSpec,
    workers: usize,
    resolved: &'a Settings,
}

/// Run every (configuration, contingency, method) cell on a bounded pool
/// and write `sweep_table.csv` (one row per configuration, PCLL and SOL
/// columns per contingency) and the long-form `margins.csv`.
pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let case = resolve_case(&a.case)?;
    let spec = SweepSpec::load(&a.spec)?;
    let cases = spec.validate(&case)?;
    let settings = a.flags.resolve(&spec.settings());
    let criterion = settings.criterion()?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Validation(vec![format!("worker pool: {e}")]))?;

    let mut jobs = Vec::new();
    for k in 0..spec.configs.len() {
        for label in &spec.contingencies {
            jobs.push((k, label.clone(), false));
            jobs.push((k, label.clone(), true));
        }
    }
    let run_cell = |(k, label, sol): &(usize, String, bool)| -> Cell {
        let name = &spec.configs[*k].name;
        let c = &cases[*k];
        let method = if *sol { "SOL" } else { "PCLL" };
        let out = settings.schedule(c).and_then(|schedule| {
            let contingency = c.contingency(label)?;
            match (sol, &spec.binary_search) {
                (false, _) => compute_pcll(c, contingency, &schedule, &criterion),
                (true, None) => compute_sol(c, contingency, &schedule, &criterion),
                (true, Some(b)) => binary_search_sol(c, contingency, 0.0, b.hi, b.tol, &schedule, &criterion),
            }
        });
        match out {
            Ok(r) => Cell::Margin(MarginRow::from_result(name, &r), divergence_dominated(&r)),
            Err(e) => {
                let reason = match e {
                    Error::Diverged { .. } | Error::Initialization(_) => format!("divergence: {e}"),
                    _ => format!("error: {e}"),
                };
                Cell::Failed(MarginRow {
                    scenario: label.clone(),
                    load_config: name.clone(),
                    method: method.to_string(),
                    margin_mw: None,
                    limiting_reason: reason,
                })
            }
        }
    };
    let cells: Vec<Cell> = pool.install(|| jobs.par_iter().map(run_cell).collect());

    let out = &a.flags.out;
    let table = out.join("sweep_table.csv");
    let io = |e: csv::Error| Error::io(table.display().to_string(), std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_writer(create(&table)?);
    let mut header = vec!["load_config".to_string()];
    for label in &spec.contingencies {
        header.push(format!("{label}_PCLL_MW"));
        header.push(format!("{label}_SOL_MW"));
    }
    w.write_record(&header).map_err(io)?;
    let per_row = 2 * spec.contingencies.len();
    for (k, config) in spec.configs.iter().enumerate() {
        let mut row = vec![config.name.clone()];
        row.extend(cells[k * per_row..(k + 1) * per_row].iter().map(Cell::text));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(table.display().to_string(), e))?;

    let rows: Vec<MarginRow> = cells.iter().map(|c| c.row().clone()).collect();
    write_margin_table(&rows, create(&out.join("margins.csv"))?)?;
    write_metadata(
        out,
        "sweep",
        &a.case,
        SweepSettings {
            spec: &spec,
            workers,
            resolved: &settings,
        },
    )?;

    for c in &cells {
        let r = c.row();
        let m = r
            .margin_mw
            .map(|m| format!("{m} MW"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "{} {} {}: {} ({})",
            r.load_config, r.scenario, r.method, m, r.limiting_reason
        );
    }
    Ok(if cells.iter().any(Cell::divergent) {
        EXIT_DIVERGENCE
    } else {
        0
    })
}
