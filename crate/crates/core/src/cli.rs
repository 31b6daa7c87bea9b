//! Command-line front end: flag parsing, config-file merging, experiment
//! orchestration and artifact export.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage error, 3 negative
//! probe/sweep verdict. All numeric work happens in the library modules; this
//! file only adapts.

use crate::analysis::{
    reachability_probe, robustness_experiment, theta_sweep, two_zone_check, ProbeConfig,
};
use crate::classify::{classify_sigma_point, find_tangencies, TangencyInfo};
use crate::error::{Error, Result};
use crate::orbit::{
    integrate_orbit, orbit_sidecar, orbit_to_csv, BranchPolicy, Side,
};
use crate::psvf::{make_z_theta, psvf_from_json, BumpPerturbation, Psvf};
use crate::sphere::{Mat3, PlaneCircle, Vec3};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_3;
use std::path::{Path, PathBuf};

/// Piecewise-smooth vector fields on the sphere: classification, orbits,
/// and transitivity probing.
#[derive(Debug, Parser)]
#[command(name = "filippov", version, about)]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SystemArgs {
    /// Band rotation angle of the builtin three-zone family (radians).
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// JSON system definition file (conflicts with --theta).
    #[arg(long, global = true)]
    pub system: Option<PathBuf>,
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file path (defaults depend on the subcommand).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a switching-manifold point.
    Classify {
        #[command(flatten)]
        sys: SystemArgs,
        /// Point as x,y,z (normalized onto the sphere).
        #[arg(long, value_parser = parse_vec3)]
        point: Vec3,
        /// Circle id (1-based).
        #[arg(long)]
        circle: u32,
    },
    /// Locate and classify all tangency points.
    Tangencies {
        #[command(flatten)]
        sys: SystemArgs,
    },
    /// Integrate a Filippov orbit and export CSV plus a JSON sidecar.
    Orbit {
        #[command(flatten)]
        sys: SystemArgs,
        /// Start point as x,y,z (normalized onto the sphere).
        #[arg(long, value_parser = parse_vec3)]
        start: Vec3,
        #[arg(long)]
        horizon: Option<f64>,
        /// Escaping-encounter policy; the default alternating tour visits
        /// both sides.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Run the finite transitivity probe.
    Probe {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the reachability relation as adjacency lists.
        #[arg(long)]
        adjacency: Option<PathBuf>,
        /// Also export the first witness orbit as CSV.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Probe the builtin family across several band angles.
    Sweep {
        #[command(flatten)]
        sys: SystemArgs,
        /// Comma-separated list of angles in radians.
        #[arg(long, value_delimiter = ',')]
        thetas: Vec<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a two-zone piecewise-linear system.
    TwoZone {
        #[command(flatten)]
        sys: SystemArgs,
        /// Field above the circle: nine floats, row major.
        #[arg(long, value_parser = parse_mat3)]
        a1: Mat3,
        /// Field below the circle: nine floats, row major.
        #[arg(long, value_parser = parse_mat3)]
        a2: Mat3,
        /// Circle plane normal as x,y,z.
        #[arg(long, value_parser = parse_vec3)]
        normal: Vec3,
        /// Circle plane offset, |c| < 1.
        #[arg(long)]
        offset: f64,
    },
    /// Bump-perturbation experiment on the tangency connection.
    Perturb {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, value_parser = parse_vec3)]
        center: Vec3,
        #[arg(long)]
        radius: f64,
        #[arg(long)]
        amplitude: f64,
        #[arg(long, value_parser = parse_vec3)]
        direction: Vec3,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Remain on the switching manifold at escaping encounters.
    Stay,
    /// Exit immediately to the gamma > 0 side.
    ExitUp,
    /// Exit immediately to the gamma < 0 side.
    ExitDown,
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got '{s}'"));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad component '{part}': {e}"))?;
    }
    Ok(Vec3::from(v))
}

fn parse_mat3(s: &str) -> std::result::Result<Mat3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 9 {
        return Err(format!("expected nine comma-separated floats, got {}", parts.len()));
    }
    let mut m = [[0.0; 3]; 3];
    for (i, part) in parts.iter().enumerate() {
        m[i / 3][i % 3] = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad entry '{part}': {e}"))?;
    }
    Ok(Mat3::new(m))
}

/// Optional JSON config file; flags override these values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    theta: Option<f64>,
    n: Option<usize>,
    epsilon: Option<f64>,
    horizon: Option<f64>,
    budget: Option<usize>,
    seed: Option<u64>,
    output: Option<PathBuf>,
}

/// Fully resolved run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    pub theta: f64,
    pub system_file: Option<PathBuf>,
    pub probe: ProbeConfig,
    pub output: Option<PathBuf>,
    pub orbit_horizon: f64,
}

fn system_args(cmd: &Command) -> &SystemArgs {
    match cmd {
        Command::Classify { sys, .. }
        | Command::Tangencies { sys }
        | Command::Orbit { sys, .. }
        | Command::Probe { sys, .. }
        | Command::Sweep { sys, .. }
        | Command::TwoZone { sys, .. }
        | Command::Perturb { sys, .. } => sys,
    }
}

/// Merge argv with the optional config file. Defaults: theta = pi/3, N = 200,
/// epsilon = 0.25, horizon = 200, budget = 4, seed = 0.
pub fn parse_config(args: CliArgs) -> Result<RunConfig> {
    let sys = system_args(&args.command).clone();
    let file: FileConfig = match &sys.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => FileConfig::default(),
    };
    if sys.theta.is_some() && sys.system.is_some() {
        return Err(Error::Usage(
            "--theta and --system are mutually exclusive".into(),
        ));
    }

    let theta = sys.theta.or(file.theta).unwrap_or(FRAC_PI_3);
    let defaults = ProbeConfig::default();
    let mut probe = ProbeConfig {
        nodes: file.n.unwrap_or(defaults.nodes),
        epsilon: file.epsilon.unwrap_or(defaults.epsilon),
        horizon: file.horizon.unwrap_or(defaults.horizon),
        branch_budget: file.budget.unwrap_or(defaults.branch_budget),
        seed: file.seed.unwrap_or(defaults.seed),
    };
    let mut orbit_horizon = file.horizon.unwrap_or(20.0);

    match &args.command {
        Command::Probe {
            n,
            epsilon,
            horizon,
            budget,
            seed,
            ..
        }
        | Command::Sweep {
            n,
            epsilon,
            horizon,
            budget,
            seed,
            ..
        } => {
            probe.nodes = n.unwrap_or(probe.nodes);
            probe.epsilon = epsilon.unwrap_or(probe.epsilon);
            probe.horizon = horizon.unwrap_or(probe.horizon);
            probe.branch_budget = budget.unwrap_or(probe.branch_budget);
            probe.seed = seed.unwrap_or(probe.seed);
        }
        Command::Orbit { horizon, .. } => {
            orbit_horizon = horizon.unwrap_or(orbit_horizon);
        }
        _ => {}
    }
    if probe.epsilon <= 0.0 || probe.horizon <= 0.0 || orbit_horizon <= 0.0 {
        return Err(Error::Usage("numeric parameters must be positive".into()));
    }

    let output = sys.output.clone().or(file.output);
    Ok(RunConfig {
        command: args.command,
        theta,
        system_file: sys.system,
        probe,
        output,
        orbit_horizon,
    })
}

fn load_system(config: &RunConfig) -> Result<Psvf> {
    match &config.system_file {
        Some(path) => psvf_from_json(&std::fs::read_to_string(path)?),
        None => make_z_theta(config.theta),
    }
}

fn write_or_print(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content)?;
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ClassifyRecord {
    point: [f64; 3],
    class: crate::classify::RegionClass,
}

#[derive(Serialize)]
struct TangencyRecord {
    point: [f64; 3],
    circle: u32,
    orders: OrdersRecord,
    visibility: VisibilityRecord,
    double_type: crate::classify::DoubleType,
}

#[derive(Serialize)]
struct OrdersRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    above: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    below: Option<u32>,
}

#[derive(Serialize)]
struct VisibilityRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    above: Option<crate::classify::Visibility>,
    #[serde(skip_serializing_if = "Option::is_none")]
    below: Option<crate::classify::Visibility>,
}

fn tangency_record(info: &TangencyInfo) -> TangencyRecord {
    TangencyRecord {
        point: info.point.to_array(),
        circle: info.circle,
        orders: OrdersRecord {
            above: info.above.map(|c| c.order),
            below: info.below.map(|c| c.order),
        },
        visibility: VisibilityRecord {
            above: info.above.map(|c| c.visibility),
            below: info.below.map(|c| c.visibility),
        },
        double_type: info.double_type,
    }
}

/// Execute a resolved configuration. Returns the process exit code.
pub fn run(config: RunConfig) -> Result<i32> {
    let psvf = load_system(&config)?;
    match &config.command {
        Command::Classify { point, circle, .. } => {
            let p = crate::sphere::project_to_sphere(*point)?;
            let ci = psvf.circle_index_by_id(*circle)?;
            let snapped = psvf.circle(ci).snap(p.as_vec());
            let class = classify_sigma_point(&psvf, ci, snapped)?;
            let record = ClassifyRecord {
                point: snapped.to_array(),
                class,
            };
            write_or_print(config.output.as_deref(), &serde_json::to_string_pretty(&record)?)?;
            Ok(0)
        }
        Command::Tangencies { .. } => {
            let mut records = Vec::new();
            for ci in 0..psvf.circles().len() {
                for info in find_tangencies(&psvf, ci)? {
                    records.push(tangency_record(&info));
                }
            }
            write_or_print(
                config.output.as_deref(),
                &serde_json::to_string_pretty(&records)?,
            )?;
            Ok(0)
        }
        Command::Orbit { start, policy, .. } => {
            let p = crate::sphere::project_to_sphere(*start)?;
            let branch_policy = match policy {
                Some(PolicyArg::Stay) => BranchPolicy::stay(),
                Some(PolicyArg::ExitUp) => BranchPolicy::exit_now(Side::Above),
                Some(PolicyArg::ExitDown) => BranchPolicy::exit_now(Side::Below),
                // alternating tour: dwell one unit, exit, alternate sides
                None => BranchPolicy::scheduled(
                    (0..64)
                        .map(|i| (1.0, if i % 2 == 0 { Side::Below } else { Side::Above }))
                        .collect(),
                ),
            };
            let orbit = integrate_orbit(&psvf, p, config.orbit_horizon, &branch_policy)?;
            let csv = orbit_to_csv(&orbit);
            let out = config
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from("orbit.csv"));
            std::fs::write(&out, csv)?;
            let sidecar_path = out.with_extension("json");
            std::fs::write(
                &sidecar_path,
                serde_json::to_string_pretty(&orbit_sidecar(&orbit))?,
            )?;
            eprintln!(
                "wrote {} and {} ({} arcs)",
                out.display(),
                sidecar_path.display(),
                orbit.arcs.len()
            );
            Ok(0)
        }
        Command::Probe {
            adjacency, witness, ..
        } => {
            let report = reachability_probe(&psvf, &config.probe)?;
            if let Some(path) = adjacency {
                std::fs::write(path, report.adjacency_lists())?;
            }
            if let Some(path) = witness {
                if let Some(orbit) = report.witnesses.first() {
                    std::fs::write(path, orbit_to_csv(orbit))?;
                }
            }
            let ok = report.verdict.is_transitive();
            write_or_print(
                config.output.as_deref(),
                &serde_json::to_string_pretty(&report)?,
            )?;
            Ok(if ok { 0 } else { 3 })
        }
        Command::Sweep { thetas, .. } => {
            if thetas.is_empty() {
                return Err(Error::Usage("--thetas requires at least one angle".into()));
            }
            let rows = theta_sweep(thetas, &config.probe)?;
            let all_ok = rows.iter().all(|r| r.verdict.is_transitive());
            write_or_print(
                config.output.as_deref(),
                &serde_json::to_string_pretty(&rows)?,
            )?;
            Ok(if all_ok { 0 } else { 3 })
        }
        Command::TwoZone {
            a1,
            a2,
            normal,
            offset,
            ..
        } => {
            let n = normal.normalize()?;
            let circle = PlaneCircle::new(n, *offset, 1)?;
            let report = two_zone_check(*a1, *a2, circle, &config.probe)?;
            let ok = report.verdict.is_transitive();
            write_or_print(
                config.output.as_deref(),
                &serde_json::to_string_pretty(&report)?,
            )?;
            Ok(if ok { 0 } else { 3 })
        }
        Command::Perturb {
            center,
            radius,
            amplitude,
            direction,
            ..
        } => {
            let c = crate::sphere::project_to_sphere(*center)?;
            let bump = BumpPerturbation::new(c, *radius, *direction, *amplitude)?;
            let report = robustness_experiment(&psvf, &bump, &config.probe, true)?;
            write_or_print(
                config.output.as_deref(),
                &serde_json::to_string_pretty(&report)?,
            )?;
            Ok(0)
        }
    }
}

/// Classify errors into process exit codes.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::InvalidConfig(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn parse(args: &[&str]) -> Result<RunConfig> {
        let mut argv = vec!["filippov"];
        argv.extend_from_slice(args);
        let cli = CliArgs::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
        parse_config(cli)
    }

    #[test]
    fn probe_flag_defaults() {
        let cfg = parse(&["probe", "--theta", "1.0471975512"]).unwrap();
        assert!((cfg.theta - FRAC_PI_3).abs() < 1e-9);
        assert_eq!(cfg.probe.nodes, 200);
        assert_eq!(cfg.probe.epsilon, 0.25);
        assert_eq!(cfg.probe.horizon, 200.0);
        assert_eq!(cfg.probe.branch_budget, 4);
        assert_eq!(cfg.probe.seed, 0);
    }

    #[test]
    fn sweep_parses_theta_list() {
        let cfg = parse(&["sweep", "--thetas", "0.3,0.6,1.0"]).unwrap();
        match cfg.command {
            Command::Sweep { thetas, .. } => assert_eq!(thetas, vec![0.3, 0.6, 1.0]),
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn conflicting_system_sources_rejected() {
        let err = parse(&["probe", "--theta", "1.0", "--system", "sys.json"]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn config_file_merging_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"n": 64, "epsilon": 0.4, "seed": 9}"#).unwrap();
        let cfg = parse(&["probe", "--config", path.to_str().unwrap(), "--seed", "2"]).unwrap();
        assert_eq!(cfg.probe.nodes, 64);
        assert_eq!(cfg.probe.epsilon, 0.4);
        assert_eq!(cfg.probe.seed, 2, "flag overrides file");
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"n": 64, "mystery": 1}"#).unwrap();
        assert!(parse(&["probe", "--config", path.to_str().unwrap()]).is_err());
    }

    #[test]
    fn vector_and_matrix_parsing() {
        assert!(parse_vec3("1,0,0").is_ok());
        assert!(parse_vec3("1,0").is_err());
        assert!(parse_mat3("0,0,1,0,0,0,-1,0,0").is_ok());
        assert!(parse_mat3("1,2,3").is_err());
    }
}
