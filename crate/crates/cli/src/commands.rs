//! Subcommand implementations. Each returns `Ok(())` or a [`CliError`]
//! carrying the exit status.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dsbo_core::problems::{generate_logistic_data, LogisticParams, QuadraticToy, PUBLISHED_TOY_TRIPLE};
use dsbo_core::runner::{run, run_sweep_with, stats::MeanStd, MetricsSeries, ProblemSpec, RunConfig, SweepGrid};
use dsbo_core::selftest::run_selftest;
use dsbo_core::topology::{ConnectivityReport, TopologySpec, ValidationReport};
use dsbo_core::{derive_draw_key, Stream};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, rows_from_series, write_rows, write_table};

/// Overrides applied on top of a loaded config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub record_every: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.runner.base_seed = s;
        }
        if let Some(r) = self.record_every {
            cfg.envelope.record_every = r;
        }
    }
}

/// Parse JSON text, reporting the offending line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

pub fn load_config(path: &Path, overrides: Overrides) -> CliResult<RunConfig> {
    let mut cfg: RunConfig = load_json(path)?;
    overrides.apply(&mut cfg);
    cfg.validate_static()?;
    Ok(cfg)
}

pub fn run_id(cfg: &RunConfig) -> String {
    format!("{}-n{}-seed{}", cfg.strategy, cfg.problem.n_agents(), cfg.runner.base_seed)
}

#[derive(Debug, Serialize)]
struct Triple3 {
    x: f64,
    y1: f64,
    y2: f64,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    run_id: String,
    config: &'a RunConfig,
    summary: &'a dsbo_core::RunSummary,
    gamma_range_warning: Option<&'a str>,
    topology_warnings: &'a [String],
    /// Per-coordinate closed-form optimum, toy instance only.
    reference: Option<Triple3>,
    final_xbar: &'a [f64],
    final_ybar: &'a [f64],
}

fn toy_reference(problem: &ProblemSpec) -> Option<Triple3> {
    match problem {
        ProblemSpec::Toy {
            n_agents,
            dim,
            a_step,
            b_step,
            ..
        } => QuadraticToy::<f64>::with_spread(*n_agents, *dim, *a_step, *b_step)
            .reference_solution()
            .ok()
            .map(|r| Triple3 {
                x: r.x[0],
                y1: r.y1[0],
                y2: r.y2[0],
            }),
        ProblemSpec::Logistic { .. } => None,
    }
}

fn create(path: &Path) -> CliResult<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_csv(path: &Path, run_id: &str, series: &MetricsSeries) -> CliResult<()> {
    write_rows(create(path)?, &rows_from_series(run_id, series)).map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| CliError::Runtime(e.to_string()))
}

/// `<out>` with its extension replaced by `summary.json`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.json")
}

/// Execute one run, writing the CSV to `out` and the JSON summary next to it.
pub fn cmd_run(config_path: &Path, out: &Path, overrides: Overrides, quiet: bool) -> CliResult<MetricsSeries> {
    let cfg = load_config(config_path, overrides)?;
    let series = run::<f64>(&cfg)?;
    let id = run_id(&cfg);
    write_csv(out, &id, &series)?;
    let report = RunReport {
        run_id: id.clone(),
        config: &cfg,
        summary: &series.summary,
        gamma_range_warning: series.gamma_range_warning.as_deref(),
        topology_warnings: &series.topology_warnings,
        reference: toy_reference(&cfg.problem),
        final_xbar: &series.final_xbar,
        final_ybar: &series.final_ybar,
    };
    write_json(&summary_path(out), &report)?;
    if !quiet {
        if let Some(w) = &series.gamma_range_warning {
            eprintln!("warning: {w}");
        }
        for w in &series.topology_warnings {
            eprintln!("warning: {w}");
        }
        let s = &series.summary;
        println!(
            "{id}: {} rows, avg grad_psi_sq {:.6e}, final grad_psi_sq {:.6e}, {:.0} ms",
            series.rows.len(),
            s.avg_grad_psi_sq,
            s.final_grad_psi_sq,
            s.wall_ms
        );
        if let (Some(ex), Some(ey)) = (s.final_rel_err_x, s.final_rel_err_y) {
            println!("{id}: relative error x {ex:.6e}, y {ey:.6e}");
        }
    }
    Ok(series)
}

const AGGREGATE_COLUMNS: [&str; 14] = [
    "point",
    "n_agents",
    "topology",
    "p",
    "gamma",
    "strategy",
    "runs_ok",
    "runs_failed",
    "avg_grad_psi_sq_mean",
    "avg_grad_psi_sq_std",
    "avg_consensus_total_mean",
    "avg_consensus_total_std",
    "final_grad_psi_sq_mean",
    "final_grad_psi_sq_std",
];

/// Run a grid; one CSV per grid point plus `aggregate.csv` and `sweep.json`.
pub fn cmd_sweep(config_path: &Path, grid_path: &Path, out_dir: &Path, overrides: Overrides, quiet: bool) -> CliResult<()> {
    let base = load_config(config_path, overrides)?;
    let grid: SweepGrid = load_json(grid_path)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let points = grid.points(&base);
    let mut per_point: Vec<Vec<crate::output::OutputRecordRow>> = vec![Vec::new(); points.len()];
    let result = run_sweep_with::<f64>(&base, &grid, |index, seed, series| {
        let id = format!("point{index}-seed{seed}");
        per_point[index].extend(rows_from_series(&id, series));
        if !quiet {
            println!("{id}: avg grad_psi_sq {:.6e}", series.summary.avg_grad_psi_sq);
        }
    })?;
    let mut table = Vec::new();
    for (index, (pr, rows)) in result.points.iter().zip(&per_point).enumerate() {
        let path = out_dir.join(format!("point{index}.csv"));
        write_rows(create(&path)?, rows).map_err(|e| CliError::Runtime(e.to_string()))?;
        let failed = pr.runs.iter().filter(|r| r.error.is_some()).count();
        let ms = |m: &MeanStd| [fmt_f64(m.mean), fmt_f64(m.std)];
        let mut row = vec![
            index.to_string(),
            pr.point.n_agents.to_string(),
            format!("{:?}", pr.point.topology.kind).to_lowercase(),
            fmt_f64(pr.point.p),
            fmt_f64(pr.point.gamma),
            pr.point.strategy.to_string(),
            (pr.runs.len() - failed).to_string(),
            failed.to_string(),
        ];
        row.extend(ms(&pr.avg_grad_psi_sq));
        row.extend(ms(&pr.avg_consensus_total));
        row.extend(ms(&pr.final_grad_psi_sq));
        table.push(row);
    }
    write_table(create(&out_dir.join("aggregate.csv"))?, &AGGREGATE_COLUMNS, &table).map_err(|e| CliError::Runtime(e.to_string()))?;
    #[derive(Serialize)]
    struct SweepReport<'a> {
        config: &'a RunConfig,
        grid: &'a SweepGrid,
        result: &'a dsbo_core::runner::SweepResult,
    }
    write_json(
        &out_dir.join("sweep.json"),
        &SweepReport {
            config: &base,
            grid: &grid,
            result: &result,
        },
    )
}

#[derive(Debug, Serialize)]
pub struct TopologyCheck {
    pub round: usize,
    pub validation: ValidationReport,
    pub spectrum: Option<ConnectivityReport<f64>>,
    pub warnings: Vec<String>,
}

/// Validate a topology for `n` agents. Dynamic graphs are checked over
/// `rounds` rounds, seeded the same way the runner seeds them.
pub fn check_topology(spec: &TopologySpec, n: usize, rounds: usize, seed: u64) -> CliResult<Vec<TopologyCheck>> {
    let rounds = if spec.is_dynamic() { rounds.max(1) } else { 1 };
    let topo_seed = spec.seed.unwrap_or(seed);
    (0..rounds)
        .map(|k| {
            let round_seed = derive_draw_key(topo_seed, k as u64, 0, Stream::Topology).to_seed();
            let w = spec.build::<f64>(n, round_seed)?;
            let validation = w.validate();
            let spectrum = if validation
                .violations
                .iter()
                .any(|v| matches!(v, dsbo_core::topology::Violation::Asymmetric { .. }))
            {
                None
            } else {
                Some(w.spectral_report()?)
            };
            Ok(TopologyCheck {
                round: k,
                validation,
                spectrum,
                warnings: w.warnings().to_vec(),
            })
        })
        .collect()
}

/// One-line verdict: `OK, ρ=0.9045` or the first violations.
pub fn topology_verdict(checks: &[TopologyCheck]) -> (bool, String) {
    let bad: Vec<&TopologyCheck> = checks.iter().filter(|c| !c.validation.is_ok()).collect();
    if bad.is_empty() {
        let rho = checks
            .iter()
            .filter_map(|c| c.spectrum.as_ref().map(|s| s.rho))
            .fold(f64::NEG_INFINITY, f64::max);
        let label = if checks.len() > 1 {
            format!("OK, max ρ={rho:.4} over {} rounds", checks.len())
        } else {
            format!("OK, ρ={rho:.4}")
        };
        (true, label)
    } else {
        let first = bad[0];
        let list: Vec<String> = first.validation.violations.iter().take(5).map(|v| v.to_string()).collect();
        (false, format!("INVALID (round {}): {}", first.round, list.join("; ")))
    }
}

pub fn cmd_validate_topology(spec: &TopologySpec, n: usize, rounds: usize, seed: u64, json: bool) -> CliResult<()> {
    let checks = check_topology(spec, n, rounds, seed)?;
    let (ok, line) = topology_verdict(&checks);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&checks).map_err(|e| CliError::Runtime(e.to_string()))?
        );
    } else {
        println!("{line}");
        for w in checks.iter().flat_map(|c| &c.warnings) {
            println!("warning: {w}");
        }
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(line))
    }
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub n_agents: usize,
    pub dim: usize,
    pub derived: (f64, f64, f64),
    pub published: (f64, f64, f64),
}

pub fn oracle(n_agents: usize, dim: usize, a_step: f64, b_step: f64) -> CliResult<OracleReport> {
    let r = QuadraticToy::<f64>::with_spread(n_agents, dim, a_step, b_step).reference_solution()?;
    Ok(OracleReport {
        n_agents,
        dim,
        derived: (r.x[0], r.y1[0], r.y2[0]),
        published: PUBLISHED_TOY_TRIPLE,
    })
}

pub fn oracle_text(r: &OracleReport) -> String {
    let (x, y1, y2) = r.derived;
    let (px, py1, py2) = r.published;
    format!(
        "toy instance, n={} N={} (each block is a multiple of the all-ones vector)\n\
         derived:   x* = {x:.6}  y1* = {y1:.6}  y2* = {y2:.6}\n\
         published: x* = {px:.2}  y1* = {py1:.2}  y2* = {py2:.2}  (approximation, not the target)",
        r.n_agents, r.dim
    )
}

pub fn cmd_oracle(n_agents: usize, dim: usize, a_step: f64, b_step: f64, json: bool) -> CliResult<()> {
    let r = oracle(n_agents, dim, a_step, b_step)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&r).map_err(|e| CliError::Runtime(e.to_string()))?
        );
    } else {
        println!("{}", oracle_text(&r));
    }
    Ok(())
}

pub fn cmd_selftest(quiet: bool) -> CliResult<()> {
    let checks = run_selftest();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        if !quiet || !c.passed {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Selftest(failed))
    }
}

/// Write the synthetic logistic data set as one CSV row per sample.
pub fn cmd_export_data(params: &LogisticParams, seed: u64, out: &Path) -> CliResult<()> {
    let data = generate_logistic_data::<f64>(params, seed)?;
    let mut header = vec!["agent".to_string(), "split".into(), "label".into()];
    header.extend((0..params.features).map(|j| format!("f{j}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (i, agent) in data.agents.iter().enumerate() {
        for (split, set) in [("train", &agent.train), ("val", &agent.val)] {
            for (feat, label) in set.features.iter().zip(&set.labels) {
                let mut row = vec![i.to_string(), split.to_string(), fmt_f64(*label)];
                row.extend(feat.iter().map(|&v| fmt_f64(v)));
                rows.push(row);
            }
        }
    }
    write_table(create(out)?, &header_refs, &rows).map_err(|e| CliError::Runtime(e.to_string()))
}
