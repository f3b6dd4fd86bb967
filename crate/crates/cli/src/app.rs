use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use coexist_core::branching::{annealed_curve, AnnealedMode, PopulationState};
use coexist_core::estimators::{
    fit_power_law, meander_consistency, oracle_coexistence, oracle_exit, zs_deviation, MeanderConfig, MeanderMode,
};
use coexist_core::harmonic::{
    estimate_v, free_walk_repulsion, htransform_sample, repulsion_report, HarmonicApprox, RepulsionReport,
    SamplerConfig,
};
use coexist_core::rng::STREAM_RULE;
use coexist_core::walk::{cone_geometry, exit_tail_curve};
use coexist_core::{EnvFamily, Streams, SurvivalCurve};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, EXIT_CONFIG, EXIT_OK};
use crate::output::{
    csv_text, curve_from_rows, curve_rows, emit_curve_csv, emit_svg, fit_row, num, parse_curve_csv, sha256_hex,
    theta_theory, write_file, RunManifest, FIT_HEADER, REPULSION_HEADER,
};

#[derive(Parser, Debug, Clone)]
#[command(name = "coexist", version, about = "Co-existence and conditioned-walk experiments for two critical branching populations in a correlated random environment")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub family: Option<EnvFamily>,
    /// coexist, single-1 or single-2.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<AnnealedMode>,
    #[arg(long, value_parser = parse_u64_pair)]
    pub z: Option<[u64; 2]>,
    #[arg(long, value_parser = parse_f64_pair)]
    pub x: Option<[f64; 2]>,
    /// a:b:x<k> (geometric) or a:b:+<s> (arithmetic).
    #[arg(long)]
    pub n_grid: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, visible_alias = "particles")]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    /// walk, quenched or rejection.
    #[arg(long, value_parser = parse_meander_mode)]
    pub meander_mode: Option<MeanderMode>,
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Also write a log-log SVG plot.
    #[arg(long)]
    pub svg: bool,
    /// JSON run config or a previous run's manifest; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<[T; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([a.parse().map_err(|_| format!("bad value '{a}'"))?, b.parse().map_err(|_| format!("bad value '{b}'"))?]),
        _ => Err(format!("expected two comma-separated values, got '{s}'")),
    }
}

fn parse_u64_pair(s: &str) -> Result<[u64; 2], String> {
    parse_pair(s)
}

fn parse_f64_pair(s: &str) -> Result<[f64; 2], String> {
    parse_pair(s)
}

fn parse_mode(s: &str) -> Result<AnnealedMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown mode '{s}'"))
}

fn parse_meander_mode(s: &str) -> Result<MeanderMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown meander mode '{s}'"))
}

/// Reads a run config, accepting either a bare config or a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let inner = match value.get("config") {
        Some(c) if value.get("stream_rule").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl Cli {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => {
                let c = load_config(p)?;
                if c.command != self.command {
                    return Err(CliError::Config(format!(
                        "config is for '{}' but '{}' was requested",
                        c.command, self.command
                    )));
                }
                c
            }
            None => RunConfig::defaults(self.command),
        };
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        take!(rho, family, mode, z, x, n_grid, n, replicas, epsilon, n_min, t_grid, meander_mode, offset, seed, out);
        if self.input.is_some() {
            c.input = self.input.clone();
        }
        if self.svg {
            c.svg = true;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Written data files, in write order.
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: String,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<(String, String)>,
}

impl Artifacts {
    fn put(&mut self, name: String, contents: String) -> Result<(), CliError> {
        write_file(&self.dir, &name, &contents)?;
        self.written.push((name, contents));
        Ok(())
    }
}

/// Validates, runs and writes every artifact of one command.
pub fn run(config: &RunConfig, threads: Option<usize>) -> Result<RunOutcome, CliError> {
    config.validate()?;
    if threads == Some(0) {
        return Err(CliError::Config("threads must be >= 1".into()));
    }
    std::fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
    let started = Instant::now();
    let mut art = Artifacts { dir: config.out.clone(), written: Vec::new() };
    let summary = match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(config, &mut art))?
        }
        None => dispatch(config, &mut art)?,
    };
    let manifest = RunManifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        duration_seconds: started.elapsed().as_secs_f64(),
        outputs: art.written.iter().map(|(n, c)| (n.clone(), sha256_hex(c.as_bytes()))).collect::<BTreeMap<_, _>>(),
        stream_rule: STREAM_RULE.into(),
    };
    let name = format!("{}.manifest.json", config.command.tag());
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&config.out, &name, &text)?;
    Ok(RunOutcome {
        files: art.written.iter().map(|(n, _)| config.out.join(n)).collect(),
        manifest: config.out.join(name),
        summary,
    })
}

fn streams(config: &RunConfig) -> Streams {
    Streams::new(config.seed, config.command.tag())
}

fn plot(config: &RunConfig, curve: &SurvivalCurve, art: &mut Artifacts) -> Result<String, CliError> {
    if !config.svg {
        return Ok(String::new());
    }
    match fit_power_law(curve, config.n_min) {
        Ok(fit) => {
            art.put(format!("{}.svg", config.command.tag()), emit_svg(curve, &fit, theta_theory(curve.meta.rho))?)?;
            Ok(String::new())
        }
        Err(e) => Ok(format!("\nno plot: {e}")),
    }
}

fn dispatch(c: &RunConfig, art: &mut Artifacts) -> Result<String, CliError> {
    let tag = c.command.tag();
    match c.command {
        Command::Coexist | Command::ExitTail => {
            let spec = c.spec()?;
            let grid = c.grid()?;
            let curve = if c.command == Command::Coexist {
                annealed_curve(&spec, PopulationState::new(c.z[0], c.z[1]), &grid, c.replicas, &streams(c), c.mode)?
            } else {
                exit_tail_curve(&spec, c.start(), &grid, c.replicas, &streams(c))?
            };
            art.put(format!("{tag}.csv"), emit_curve_csv(&curve_rows(&curve))?)?;
            let note = plot(c, &curve, art)?;
            Ok(format!("{} rows written{}{}", curve.rows.len(), warnings(&curve.warnings), note))
        }
        Command::Fit => {
            let path = c.input.as_ref().expect("validated");
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let curve = curve_from_rows(&parse_curve_csv(&text)?)?;
            let fit = fit_power_law(&curve, c.n_min)?;
            let theta = theta_theory(curve.meta.rho);
            art.put(format!("{tag}.csv"), csv_text(&FIT_HEADER, &[fit_row(&fit, theta)])?)?;
            if c.svg {
                art.put(format!("{tag}.svg"), emit_svg(&curve, &fit, theta)?)?;
            }
            Ok(format!(
                "slope {} stderr {} theta {} difference {}{}",
                fit.slope,
                fit.stderr,
                theta,
                fit.slope + theta,
                warnings(&fit.flags)
            ))
        }
        Command::Oracle => {
            let spec = c.spec()?;
            let s = streams(c);
            let co = oracle_coexistence(&spec, PopulationState::new(c.z[0], c.z[1]), c.n, c.replicas, &s.child("coexist"))?;
            let ex = oracle_exit(&spec, c.start(), c.n, c.replicas, &s.child("exit"))?;
            let mut rows = Vec::new();
            let mut lines = Vec::new();
            for (kind, reps) in [("coexist", &co), ("exit", &ex)] {
                for r in reps {
                    rows.push(vec![kind.into(), num(c.rho), r.n.to_string(), num(r.exact), num(r.mc), num(r.stderr), num(r.z)]);
                    lines.push(format!("{kind} n={} exact {} mc {} z-score {:.3}", r.n, r.exact, r.mc, r.z));
                }
            }
            art.put(format!("{tag}.csv"), csv_text(&["kind", "rho", "n", "exact", "mc", "stderr", "zscore"], &rows)?)?;
            Ok(lines.join("\n"))
        }
        Command::Repulsion => {
            let spec = c.spec()?;
            let grid = c.grid()?;
            let s = streams(c);
            let approx = HarmonicApprox::new(cone_geometry(c.rho_param()?)?, c.offset, 0, 1)?;
            let ensembles = grid
                .iter()
                .map(|&n| htransform_sample(&approx, &spec, c.start(), n, &SamplerConfig::new(c.replicas), &s.child(&format!("n{n}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let cond = repulsion_report(&ensembles)?;
            let free = free_walk_repulsion(&spec, c.start(), &grid, c.replicas, &s.child("free"))?;
            art.put(format!("{tag}.csv"), repulsion_csv(&cond)?)?;
            art.put(format!("{tag}-free.csv"), repulsion_csv(&free)?)?;
            Ok(cond
                .rows
                .iter()
                .zip(&free.rows)
                .map(|(a, b)| format!("n={} conditioned {:.4} ± {:.4} free {:.4}", a.n, a.fraction, a.stderr, b.fraction))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Meander => {
            let cfg = MeanderConfig {
                mode: c.meander_mode,
                t_grid: c.t_grid.clone(),
                horizons: (c.n, 4 * c.n),
                samples: c.replicas,
            };
            let rep = meander_consistency(&c.spec()?, c.start(), c.z, &cfg, &streams(c))?;
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| vec![num(r.t), num(r.ks[0]), num(r.ks[1]), num(r.ks[2]), num(r.ess[0]), num(r.ess[1])])
                .collect();
            art.put(format!("{tag}.csv"), csv_text(&["t", "ks_coord1", "ks_coord2", "ks_radial", "ess_n", "ess_4n"], &rows)?)?;
            Ok(rep
                .rows
                .iter()
                .map(|r| format!("t={} ks {:.4} {:.4} {:.4} ess {:.0} {:.0}", r.t, r.ks[0], r.ks[1], r.ks[2], r.ess[0], r.ess[1]))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Zs => {
            let spec = c.spec()?;
            let s = streams(c);
            let mut rows = Vec::new();
            let mut lines = Vec::new();
            for n in c.grid()? {
                let r = zs_deviation(&spec, PopulationState::new(c.z[0], c.z[1]), n, c.replicas, c.epsilon, &s.child(&format!("n{n}")))?;
                rows.push(vec![
                    n.to_string(),
                    num(r.epsilon),
                    num(r.frequency),
                    num(r.stderr),
                    num(r.upper95),
                    r.co_surviving.to_string(),
                    r.saturated.to_string(),
                    r.replicas.to_string(),
                ]);
                lines.push(format!("n={n} frequency {:.4} ± {:.4} over {} co-surviving runs", r.frequency, r.stderr, r.co_surviving));
            }
            art.put(
                format!("{tag}.csv"),
                csv_text(&["n", "epsilon", "frequency", "stderr", "upper95", "co_surviving", "saturated", "replicas"], &rows)?,
            )?;
            Ok(lines.join("\n"))
        }
        Command::EstimateV => {
            let approx = HarmonicApprox::new(cone_geometry(c.rho_param()?)?, c.offset, c.n, c.replicas)?;
            let v = estimate_v(&approx, &c.spec()?, c.start(), &streams(c))?;
            let row = vec![
                num(c.x[0]),
                num(c.x[1]),
                num(c.offset),
                c.n.to_string(),
                num(v.value),
                num(v.stderr),
                v.survivors.to_string(),
                v.replicas.to_string(),
                v.starved.to_string(),
            ];
            art.put(
                format!("{tag}.csv"),
                csv_text(&["x1", "x2", "offset", "depth", "value", "stderr", "survivors", "replicas", "starved"], &[row])?,
            )?;
            Ok(format!("V({}, {}) = {} ± {}{}", c.x[0], c.x[1], v.value, v.stderr, if v.starved { " (starved)" } else { "" }))
        }
    }
}

fn repulsion_csv(r: &RepulsionReport) -> Result<String, CliError> {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| vec![row.n.to_string(), num(row.fraction), num(row.stderr), row.particles.to_string()])
        .collect();
    csv_text(&REPULSION_HEADER, &rows)
}

fn warnings(w: &[String]) -> String {
    w.iter().map(|m| format!("\nwarning: {m}")).collect()
}

/// Parses arguments, runs, prints, and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = cli.resolve().and_then(|c| run(&c, cli.threads));
    match result {
        Ok(out) => {
            if !out.summary.is_empty() {
                println!("{}", out.summary);
            }
            println!("manifest: {}", out.manifest.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
