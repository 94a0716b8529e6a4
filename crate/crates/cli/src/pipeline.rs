//! Pipeline stages. Each stage reads the artifacts of the previous one from
//! disk, so every reported number traces back to a stored file.
//!
//! ```text
//! out/
//!   instances/manifest.csv, <id>.ising
//!   samples/<solver>/points.csv, <id>__<param hash>.json
//!   profiles/<solver>/profiles.csv, params.csv
//!   strategies/<solver>/virtual_best.csv, fixed.csv, meta_sweep.csv,
//!                       meta_curve.csv, cv_test_profiles.csv, cv_splits.json
//!   report/index.json, performance_<solver>.csv, parameters_<solver>.csv,
//!          meta_<solver>.csv, scaling.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stochbench::instances::{generate_wishart, read_instance, write_atomic, write_instance, WishartSpec};
use stochbench::profiles::{
    aggregate_instances, bootstrap_profile, read_params_csv, read_profiles_csv, write_params_csv, write_profiles_csv,
    BootstrapSettings, ProfileSet,
};
use stochbench::rng::{derive, tag};
use stochbench::strategies::{
    cross_validate, train_strategies, virtual_best, MetaSweep, StrategyCurve, StrategyPoint, StrategySettings,
};
use stochbench::{IsingInstance, ParameterPoint, ResourceGrid, SampleSet, SolverId};

use crate::config::{RunConfig, SolverSettings};
use crate::error::CliError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const DEFAULT_GRID_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub n: usize,
    pub alpha: f64,
    pub index: usize,
    pub ground_energy: f64,
}

fn csv_bytes<F>(header: &[String], fill: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(csv_error)?;
        fill(&mut w).map_err(csv_error)?;
        w.flush().map_err(CliError::io("<buffer>"))?;
    }
    Ok(buf)
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Core(stochbench::Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() })
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn read_file(path: &Path, what: &str, stage: &'static str) -> Result<Vec<u8>, CliError> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(CliError::Missing { what: format!("{what} ({})", path.display()), stage })
        }
        Err(e) => Err(CliError::io(path)(e)),
    }
}

pub fn cmd_gen(cfg: &RunConfig, opts: Options) -> Result<Vec<ManifestEntry>, CliError> {
    if cfg.count == 0 {
        return Err(CliError::Config("`instances.count` must be positive".into()));
    }
    if cfg.sizes.is_empty() {
        return Err(CliError::Config("`instances.n` is required".into()));
    }
    let dir = &cfg.instances_dir;
    if dir.exists() && fs::read_dir(dir).map_err(CliError::io(dir))?.next().is_some() {
        if !opts.force {
            return Err(CliError::Config(format!("{} is not empty; pass --force to overwrite", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut entries = Vec::new();
    for &n in &cfg.sizes {
        let spec = WishartSpec { n, alpha: cfg.alpha, seed: derive(cfg.seed, &[tag("gen"), n as u64]), count: cfg.count };
        for (index, inst) in generate_wishart(&spec)?.into_iter().enumerate() {
            let id = format!("w{n:03}_{index:04}");
            let file = format!("{id}.ising");
            write_instance(&inst, &dir.join(&file))?;
            entries.push(ManifestEntry {
                id,
                file,
                n,
                alpha: cfg.alpha,
                index,
                ground_energy: inst.ground_energy().expect("planted"),
            });
        }
    }
    let bytes = csv_bytes(&strings(&["id", "file", "n", "alpha", "index", "ground_energy"]), |w| {
        for e in &entries {
            w.write_record([
                e.id.clone(),
                e.file.clone(),
                e.n.to_string(),
                e.alpha.to_string(),
                e.index.to_string(),
                e.ground_energy.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(&dir.join("manifest.csv"), &bytes)?;
    info!("wrote {} instances to {}", entries.len(), dir.display());
    Ok(entries)
}

pub fn read_manifest(cfg: &RunConfig) -> Result<Vec<ManifestEntry>, CliError> {
    let bytes = read_file(&cfg.instances_dir.join("manifest.csv"), "instance manifest", "gen")?;
    csv::Reader::from_reader(bytes.as_slice()).deserialize().map(|r| r.map_err(csv_error)).collect()
}

fn load_instances(cfg: &RunConfig, manifest: &[ManifestEntry]) -> Result<BTreeMap<String, IsingInstance>, CliError> {
    manifest
        .par_iter()
        .map(|e| {
            let path = cfg.instances_dir.join(&e.file);
            if !path.exists() {
                return Err(CliError::Missing { what: format!("instance file {}", path.display()), stage: "gen" });
            }
            Ok((e.id.clone(), read_instance(&path)?))
        })
        .collect()
}

pub fn sample_file(instance_id: &str, point: &ParameterPoint) -> String {
    format!("{instance_id}__{}.json", point.hash_hex())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub computed: usize,
    pub skipped: usize,
}

/// Run every solver over instance x parameter point. Existing sample files
/// are kept unless `force` is set.
pub fn cmd_run(cfg: &RunConfig, opts: Options) -> Result<RunSummary, CliError> {
    if cfg.solvers.is_empty() {
        return Err(CliError::Config("no solvers configured".into()));
    }
    let manifest = read_manifest(cfg)?;
    let instances = load_instances(cfg, &manifest)?;
    let mut summary = RunSummary::default();
    for s in &cfg.solvers {
        let points = s.points(cfg.seed)?;
        let dir = cfg.samples_dir(s.id);
        let mut index = Vec::new();
        write_params_csv(&mut index, &points)?;
        write_atomic(&dir.join("points.csv"), &index)?;

        let jobs: Vec<(&ManifestEntry, &ParameterPoint)> =
            manifest.iter().flat_map(|e| points.iter().map(move |p| (e, p))).collect();
        let done = jobs
            .par_iter()
            .map(|&(e, p)| run_job(cfg, s, &dir, e, &instances[&e.id], p, opts.force))
            .collect::<Result<Vec<bool>, _>>()?;
        let computed = done.iter().filter(|&&d| d).count();
        info!("{}: computed {computed}, kept {}", s.id, done.len() - computed);
        summary.computed += computed;
        summary.skipped += done.len() - computed;
    }
    Ok(summary)
}

fn run_job(
    cfg: &RunConfig,
    s: &SolverSettings,
    dir: &Path,
    entry: &ManifestEntry,
    instance: &IsingInstance,
    point: &ParameterPoint,
    force: bool,
) -> Result<bool, CliError> {
    let path = dir.join(sample_file(&entry.id, point));
    if path.exists() && !force {
        return Ok(false);
    }
    let seed = derive(cfg.seed, &[tag("run"), tag(s.id.as_str()), tag(&entry.id), tag(&point.canonical())]);
    let set = s
        .id
        .run(&entry.id, instance, point, &s.fixed, s.shots, seed)
        .map_err(|e| CliError::Solver(format!("{} on {} at {point}: {e}", s.id, entry.id)))?;
    let bytes = serde_json::to_vec(&set).map_err(stochbench::Error::from)?;
    write_atomic(&path, &bytes)?;
    Ok(true)
}

fn resource_grid(cfg: &RunConfig, sets: &[SampleSet]) -> Result<ResourceGrid, CliError> {
    let lo = cfg.grid.min.unwrap_or_else(|| sets.iter().map(SampleSet::mean_cost).fold(f64::INFINITY, f64::min));
    let hi = cfg.grid.max.unwrap_or_else(|| sets.iter().map(|s| s.total_resource).fold(f64::INFINITY, f64::min));
    let points = cfg.grid.points.unwrap_or(DEFAULT_GRID_POINTS);
    if !(lo > 0.0 && hi >= lo) || points == 0 {
        return Err(CliError::Config(format!("empty resource grid [{lo}, {hi}] with {points} points")));
    }
    let grid = if points == 1 || hi == lo { ResourceGrid::new(vec![lo]) } else { ResourceGrid::log_spaced(lo, hi, points) };
    Ok(grid?)
}

/// Bootstrap every stored sample set into a performance profile.
pub fn cmd_profile(cfg: &RunConfig, _opts: Options) -> Result<(), CliError> {
    let manifest = read_manifest(cfg)?;
    let instances = load_instances(cfg, &manifest)?;
    for s in &cfg.solvers {
        let dir = cfg.samples_dir(s.id);
        let index = read_file(&dir.join("points.csv"), &format!("{} samples", s.id), "run")?;
        let points = read_params_csv(index.as_slice())?;
        let jobs: Vec<(&ManifestEntry, &String)> =
            manifest.iter().flat_map(|e| points.keys().map(move |h| (e, h))).collect();
        let sets = jobs
            .par_iter()
            .map(|&(e, hash)| {
                let path = dir.join(sample_file(&e.id, &points[hash]));
                let bytes = read_file(&path, "sample set", "run")?;
                Ok(serde_json::from_slice::<SampleSet>(&bytes).map_err(stochbench::Error::from)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let grid = resource_grid(cfg, &sets)?;
        let profiles = sets
            .par_iter()
            .map(|set| {
                let settings = BootstrapSettings {
                    seed: derive(
                        cfg.seed,
                        &[tag("bootstrap"), tag(s.id.as_str()), tag(&set.instance_id), tag(&set.params.canonical())],
                    ),
                    ..cfg.bootstrap
                };
                bootstrap_profile(set, &grid, &settings, &instances[&set.instance_id])
            })
            .collect::<stochbench::Result<Vec<_>>>()?;

        let out = cfg.profiles_dir(s.id);
        let mut buf = Vec::new();
        write_profiles_csv(&mut buf, &profiles)?;
        write_atomic(&out.join("profiles.csv"), &buf)?;
        let mut buf = Vec::new();
        write_params_csv(&mut buf, &points.values().cloned().collect::<Vec<_>>())?;
        write_atomic(&out.join("params.csv"), &buf)?;
        info!("{}: {} profiles over {} grid points", s.id, profiles.len(), grid.len());
    }
    Ok(())
}

pub fn load_profile_set(cfg: &RunConfig, solver: SolverId) -> Result<ProfileSet, CliError> {
    let dir = cfg.profiles_dir(solver);
    let params = read_file(&dir.join("params.csv"), &format!("{solver} profiles"), "profile")?;
    let profiles = read_file(&dir.join("profiles.csv"), &format!("{solver} profiles"), "profile")?;
    let params = read_params_csv(params.as_slice())?;
    Ok(ProfileSet::new(read_profiles_csv(profiles.as_slice(), &params)?)?)
}

fn strategy_settings(cfg: &RunConfig, s: &SolverSettings) -> Result<StrategySettings, CliError> {
    Ok(StrategySettings {
        statistic: cfg.statistic,
        bootstrap: BootstrapSettings { seed: derive(cfg.seed, &[tag("strategies"), tag(s.id.as_str())]), ..cfg.bootstrap },
        window: cfg.window,
        fit: cfg.fit,
        meta_grid: s.meta_grid()?,
        n_rep: cfg.n_rep,
        nominal: s.nominal.clone(),
    })
}

fn point_row(p: &StrategyPoint, names: &[&str]) -> Vec<String> {
    let mut row = vec![p.resource.to_string()];
    row.extend(names.iter().map(|n| p.params.get(n).map(|v| v.to_string()).unwrap_or_default()));
    row.extend([p.estimate.to_string(), p.ci_low.to_string(), p.ci_high.to_string()]);
    row
}

fn curve_csv(curves: &[(String, &StrategyCurve)], names: &[&str], param_prefix: &str) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["strategy".to_string(), "resource".to_string()];
    header.extend(names.iter().map(|n| format!("{param_prefix}{n}")));
    header.extend(strings(&["estimate", "ci_low", "ci_high", "needs_rerun"]));
    csv_bytes(&header, |w| {
        for (label, curve) in curves {
            for p in &curve.points {
                let mut row = vec![label.clone()];
                row.extend(point_row(p, names));
                row.push(p.needs_rerun.to_string());
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

fn meta_sweep_csv(sweep: &MetaSweep) -> Result<Vec<u8>, CliError> {
    csv_bytes(&strings(&["explore_frac", "tau", "resource", "estimate", "ci_low", "ci_high"]), |w| {
        for c in &sweep.cells {
            w.write_record([c.meta.explore_frac, c.meta.tau, c.resource, c.estimate, c.ci_low, c.ci_high].map(|v| v.to_string()))?;
        }
        Ok(())
    })
}

/// Virtual best, fixed and exploration-exploitation strategies on the full
/// instance set, plus cross-validated test profiles of each.
pub fn cmd_strategies(cfg: &RunConfig, _opts: Options) -> Result<(), CliError> {
    for s in &cfg.solvers {
        let set = load_profile_set(cfg, s.id)?;
        let settings = strategy_settings(cfg, s)?;
        let names = s.id.param_names();
        let out = cfg.strategies_dir(s.id);

        let vb = virtual_best(&set)?;
        let mut header = strings(&["instance_id", "resource"]);
        header.extend(names.iter().map(|n| format!("param:{n}")));
        header.extend(strings(&["estimate", "ci_low", "ci_high"]));
        let bytes = csv_bytes(&header, |w| {
            for (id, v) in &vb {
                for p in &v.curve.points {
                    let mut row = vec![id.clone()];
                    row.extend(point_row(p, names));
                    w.write_record(&row)?;
                }
            }
            Ok(())
        })?;
        write_atomic(&out.join("virtual_best.csv"), &bytes)?;

        let trained = train_strategies(&set, &settings)?;
        let fixed = curve_csv(
            &[
                ("fixed".into(), &trained.fixed),
                ("fixed:actionable".into(), &trained.fixed_actionable),
                ("fixed-average".into(), &trained.fixed_average),
                ("fixed-average:actionable".into(), &trained.fixed_average_actionable),
            ],
            names,
            "param:",
        )?;
        write_atomic(&out.join("fixed.csv"), &fixed)?;
        write_atomic(&out.join("meta_sweep.csv"), &meta_sweep_csv(&trained.meta)?)?;
        let meta = curve_csv(
            &[
                ("explore-exploit".into(), &trained.meta.best),
                ("explore-exploit:actionable".into(), &trained.meta_actionable),
            ],
            &["explore_frac", "tau"],
            "",
        )?;
        write_atomic(&out.join("meta_curve.csv"), &meta)?;

        let cv = cross_validate(
            &set,
            cfg.n_splits,
            cfg.train_frac,
            derive(cfg.seed, &[tag("cv"), tag(s.id.as_str())]),
            &settings,
        )?;
        let bytes = csv_bytes(&strings(&["strategy", "resource", "estimate", "ci_low", "ci_high", "n_boot"]), |w| {
            for (kind, p) in &cv.profiles {
                for pt in &p.points {
                    w.write_record([
                        kind.to_string(),
                        pt.resource.to_string(),
                        pt.estimate.to_string(),
                        pt.ci_low.to_string(),
                        pt.ci_high.to_string(),
                        pt.n_boot.to_string(),
                    ])?;
                }
            }
            Ok(())
        })?;
        write_atomic(&out.join("cv_test_profiles.csv"), &bytes)?;
        let splits: Vec<_> = cv.splits.iter().map(|o| &o.split).collect();
        let json = serde_json::to_vec_pretty(&splits).map_err(stochbench::Error::from)?;
        write_atomic(&out.join("cv_splits.json"), &json)?;
        info!("{}: strategies over {} instances, {} splits", s.id, set.by_instance.len(), cv.splits.len());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub performance: String,
    pub parameters: String,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub schema_version: u32,
    pub seed: u64,
    pub solvers: BTreeMap<String, SolverReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<String>,
}

/// Assemble the report directory from stored artifacts.
pub fn cmd_report(cfg: &RunConfig, _opts: Options) -> Result<ReportIndex, CliError> {
    let manifest = read_manifest(cfg)?;
    for s in &cfg.solvers {
        for f in ["profiles.csv", "params.csv"] {
            read_file(&cfg.profiles_dir(s.id).join(f), &format!("{} profiles", s.id), "profile")?;
        }
    }
    let mut copies: Vec<(PathBuf, String)> = Vec::new();
    let mut solvers = BTreeMap::new();
    for s in &cfg.solvers {
        let dir = cfg.strategies_dir(s.id);
        let entry = SolverReport {
            performance: format!("performance_{}.csv", s.id),
            parameters: format!("parameters_{}.csv", s.id),
            meta: format!("meta_{}.csv", s.id),
        };
        for (src, dst) in [
            ("cv_test_profiles.csv", &entry.performance),
            ("fixed.csv", &entry.parameters),
            ("meta_curve.csv", &entry.meta),
        ] {
            let path = dir.join(src);
            if !path.exists() {
                return Err(CliError::Missing { what: format!("{} strategies ({})", s.id, path.display()), stage: "strategies" });
            }
            copies.push((path, dst.clone()));
        }
        solvers.insert(s.id.to_string(), entry);
    }

    let report = cfg.report_dir();
    if report.exists() {
        fs::remove_dir_all(&report).map_err(CliError::io(&report))?;
    }
    for (src, dst) in &copies {
        let bytes = fs::read(src).map_err(CliError::io(src))?;
        write_atomic(&report.join(dst), &bytes)?;
    }
    let scaling = match cfg.scaling_resource {
        Some(r) => {
            write_atomic(&report.join("scaling.csv"), &scaling_csv(cfg, &manifest, r)?)?;
            Some("scaling.csv".to_string())
        }
        None => None,
    };
    let index = ReportIndex { schema_version: REPORT_SCHEMA_VERSION, seed: cfg.seed, solvers, scaling };
    let json = serde_json::to_vec_pretty(&index).map_err(stochbench::Error::from)?;
    write_atomic(&report.join("index.json"), &json)?;
    info!("report written to {}", report.display());
    Ok(index)
}

/// Aggregated virtual best score per solver and instance size at the grid
/// point at or below `resource`.
fn scaling_csv(cfg: &RunConfig, manifest: &[ManifestEntry], resource: f64) -> Result<Vec<u8>, CliError> {
    let sizes: BTreeMap<&str, usize> = manifest.iter().map(|e| (e.id.as_str(), e.n)).collect();
    let mut rows = Vec::new();
    for s in &cfg.solvers {
        let set = load_profile_set(cfg, s.id)?;
        let g = set.grid.floor_index(resource);
        let mut by_size: BTreeMap<usize, Vec<_>> = BTreeMap::new();
        for (id, v) in virtual_best(&set)? {
            let n = *sizes
                .get(id.as_str())
                .ok_or_else(|| CliError::Missing { what: format!("manifest entry for {id}"), stage: "gen" })?;
            by_size.entry(n).or_default().push(v.profile);
        }
        for (n, profiles) in by_size {
            let settings = BootstrapSettings {
                seed: derive(cfg.seed, &[tag("scaling"), tag(s.id.as_str()), n as u64]),
                ..cfg.bootstrap
            };
            let agg = aggregate_instances(&profiles, cfg.statistic, &settings)?;
            let p = agg.points[g];
            rows.push([
                s.id.to_string(),
                n.to_string(),
                p.resource.to_string(),
                profiles.len().to_string(),
                p.estimate.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
            ]);
        }
    }
    csv_bytes(&strings(&["solver", "n", "resource", "instances", "estimate", "ci_low", "ci_high"]), |w| {
        rows.iter().try_for_each(|r| w.write_record(r))
    })
}

/// Every stage in order.
pub fn cmd_all(cfg: &RunConfig, opts: Options) -> Result<ReportIndex, CliError> {
    cmd_gen(cfg, opts)?;
    cmd_run(cfg, opts)?;
    cmd_profile(cfg, opts)?;
    cmd_strategies(cfg, opts)?;
    cmd_report(cfg, opts)
}
