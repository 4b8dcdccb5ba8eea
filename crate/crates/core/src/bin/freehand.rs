use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use freehand::analysis::{
    concentrability_per_step, concentrability_per_trajectory, concentrability_reward, instance_pair_kl,
    lower_bound_instance, prop2_instance, BoundKind,
};
use freehand::classes::RewardClass;
use freehand::confidence::{build_reward_confidence, implied_radius_constant};
use freehand::harness::config::{Algorithm, ExperimentConfig, InstanceSpec, LawSpec};
use freehand::harness::derive_seed;
use freehand::harness::instances::{build_advantage_classes, build_instance, build_reward_class, ExperimentInstance};
use freehand::harness::plot::rates_svg;
use freehand::harness::rates::{fit_levels, fit_rate, level_stats, levels_from_csv, rates_csv};
use freehand::harness::run::{cell_dataset, reference_law, run_experiment, ResultTable};
use freehand::mdp::{trajectory_distribution, Instance, DEFAULT_ENUMERATION_CAP};
use freehand::action::margin_profile;
use freehand::mle::{fit_advantage_mle, fit_reward_mle, trace_csv};
use freehand::planner::{greedy_plan, robust_plan_known};
use freehand::preference::{generate_action_dataset, Link, PreferenceDataset};
use freehand::{Error, Result};

#[derive(Parser)]
#[command(name = "freehand", version, about = "Offline preference-based RL on small tabular MDPs")]
struct Cli {
    /// JSON config (experiment config, instance spec, or instance file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Prop2,
    LowerBound,
    Inline,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    St,
    Tr,
}

#[derive(Subcommand)]
enum Command {
    /// Emit an explicit instance spec usable as `instance` in a config.
    GenInstance {
        generator: Generator,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, value_enum, default_value_t = KindArg::Tr)]
        kind: KindArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Which reward of a lower-bound pair (0 or 1).
        #[arg(long, default_value_t = 0)]
        member: usize,
    },
    /// Draw one dataset from an experiment config.
    GenData {
        #[arg(long)]
        n: usize,
    },
    /// Fit the MLE of the configured class on a dataset file.
    FitMle {
        #[arg(long)]
        data: PathBuf,
    },
    /// Robust (or greedy) planning on a dataset file.
    Plan {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the configured sweep.
    Run,
    /// Concentrability coefficients of an instance.
    Coeffs {
        #[arg(long, default_value_t = 0.5)]
        resolution: f64,
    },
    /// Per-N means and the log-log fit from a results CSV.
    Rates {
        #[arg(long)]
        input: PathBuf,
    },
    /// SVG plot from a rates CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "rates")]
        title: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn need_config(cli: &Cli) -> Result<String> {
    let path = cli.config.as_ref().ok_or_else(|| Error::InvalidParams("--config is required".into()))?;
    read(path)
}

/// Writes `text` to `out/name`, or stdout without `--out`.
fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn inline_spec(inst: &ExperimentInstance) -> InstanceSpec {
    InstanceSpec::Inline {
        instance: Instance { mdp: inst.mdp.clone(), reward: Some(inst.reward.clone()) }.to_file(),
        mu0: LawSpec::Mixture(inst.mu0.entries().to_vec()),
        mu1: LawSpec::Mixture(inst.mu1.entries().to_vec()),
        target: Some(inst.target.clone()),
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenInstance { generator, states, actions, horizon, c, kind, n, member } => {
            let kind = match kind {
                KindArg::St => BoundKind::St,
                KindArg::Tr => BoundKind::Tr,
            };
            let (spec, meta) = match generator {
                Generator::Prop2 => {
                    let p = prop2_instance(*states, *actions, *horizon, *c, None, None)?;
                    let (st, tr) = p.coefficients()?;
                    let spec = InstanceSpec::Prop2 { states: *states, actions: *actions, horizon: *horizon, c: *c };
                    (spec, json!({ "generator": "prop2", "c": c, "horizon": horizon, "c_st": st, "c_tr": tr }))
                }
                Generator::LowerBound => {
                    let pair = lower_bound_instance(kind, *c, *horizon, *n)?;
                    let meta = json!({
                        "generator": "lower_bound", "kind": kind, "case": pair.case, "c": c, "horizon": horizon,
                        "n": n, "x": pair.x, "kl": instance_pair_kl(&pair), "kl_bound": pair.kl_bound(),
                    });
                    (InstanceSpec::LowerBound { kind, c: *c, horizon: *horizon, n: *n, member: *member }, meta)
                }
                Generator::Inline => {
                    let spec: InstanceSpec = serde_json::from_str(&need_config(&cli)?)?;
                    (spec, json!({ "generator": "inline" }))
                }
            };
            let inst = build_instance(&spec)?;
            emit(&cli.out, "instance.json", &pretty(&json!({ "instance": inline_spec(&inst), "meta": meta }))?)
        }
        Command::GenData { n } => {
            let cfg = ExperimentConfig::from_json(&need_config(&cli)?)?;
            let inst = build_instance(&cfg.instance)?;
            let seed = cli.seed.unwrap_or(0);
            let text = if cfg.algorithm == Algorithm::FreehandAction {
                let law = inst
                    .action_law
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParams("instance has no action sampling law".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, *n as u64, 0));
                generate_action_dataset(&inst.mdp, &inst.reward, &Link::Sigmoid, law, *n, &mut rng)?.to_text()
            } else {
                cell_dataset(&cfg, &inst, *n, seed)?.to_text()
            };
            emit(&cli.out, "data.txt", &text)
        }
        Command::FitMle { data } => {
            let cfg = ExperimentConfig::from_json(&need_config(&cli)?)?;
            let inst = build_instance(&cfg.instance)?;
            let text = read(data)?;
            let out = if cfg.algorithm == Algorithm::FreehandAction {
                let ds = freehand::preference::ActionPreferenceDataset::from_text(&text)?;
                let spec = cfg.advantage_class.as_ref().expect("validated");
                let classes = build_advantage_classes(spec, &inst.mdp, cfg.constants.c_geom);
                json!({ "advantage": fit_advantage_mle(&classes, &ds, &Link::Sigmoid, &cfg.mle)? })
            } else {
                let ds = PreferenceDataset::from_text(&text)?;
                let class = build_reward_class(cfg.reward_class.as_ref().expect("validated"), &inst, cfg.constants.c_geom)?;
                let fit = fit_reward_mle(&class, &ds, &Link::Sigmoid, &cfg.mle)?;
                let set = build_reward_confidence(&ds, &class, &Link::Sigmoid, cfg.delta, cfg.constants.c_mle, &cfg.mle)?;
                // Grid classes only: their member lists are exact.
                let implied = match &class {
                    RewardClass::TabularGrid(_) => {
                        let members = set.discretize(0.0, DEFAULT_ENUMERATION_CAP)?;
                        let c = implied_radius_constant(&set, &members, &inst.mu0, &inst.mu1, &inst.truth_table()?, cfg.delta)?;
                        json!({ "members": members.len(), "implied_radius_constant": c })
                    }
                    RewardClass::Linear(_) => serde_json::Value::Null,
                };
                if cli.out.is_some() && !fit.trace.is_empty() {
                    emit(&cli.out, "trace.csv", &trace_csv(&fit.trace))?;
                }
                json!({
                    "params": fit.model.params,
                    "table": fit.model.table,
                    "loglik": fit.loglik,
                    "iterations": fit.iterations,
                    "zeta": set.zeta,
                    "confidence": implied,
                })
            };
            emit(&cli.out, "mle.json", &pretty(&out)?)
        }
        Command::Plan { data } => {
            let cfg = ExperimentConfig::from_json(&need_config(&cli)?)?;
            let inst = build_instance(&cfg.instance)?;
            let ds = PreferenceDataset::from_text(&read(data)?)?;
            let class = build_reward_class(cfg.reward_class.as_ref().expect("validated"), &inst, cfg.constants.c_geom)?;
            let out = match cfg.algorithm {
                Algorithm::Freehand => {
                    let set = build_reward_confidence(&ds, &class, &Link::Sigmoid, cfg.delta, cfg.constants.c_mle, &cfg.mle)?;
                    let mu_ref = reference_law(&cfg, &inst, &ds)?;
                    let res = robust_plan_known(&inst.mdp, &set, &mu_ref, &cfg.plan)?;
                    if cli.out.is_some() {
                        emit(&cli.out, "plan_values.csv", &res.values_csv())?;
                    }
                    json!({
                        "policy": res.policy, "policy_index": res.policy_index, "value": res.value,
                        "zeta": set.zeta, "worst_reward": res.worst_reward.table, "diagnostics": res.diagnostics,
                    })
                }
                Algorithm::GreedyMleBaseline => {
                    let fit = fit_reward_mle(&class, &ds, &Link::Sigmoid, &cfg.mle)?;
                    let (policy, index, value) = greedy_plan(&inst.mdp, &fit.model.table, cfg.plan.policy_kind, cfg.plan.policy_cap)?;
                    json!({ "policy": policy, "policy_index": index, "value": value })
                }
                _ => return Err(Error::InvalidParams("plan supports freehand and greedy_mle_baseline".into())),
            };
            emit(&cli.out, "plan.json", &pretty(&out)?)
        }
        Command::Run => {
            let cfg = ExperimentConfig::from_json(&need_config(&cli)?)?;
            let table = run_experiment(&cfg)?;
            let failed = table.rows.iter().filter(|r| r.status != "ok").count();
            match &cli.out {
                Some(dir) => {
                    emit(&cli.out, "results.csv", &table.to_csv())?;
                    emit(&cli.out, "timings.csv", &table.timings_csv())?;
                    let levels = level_stats(&table.points());
                    emit(&cli.out, "rates.csv", &rates_csv(&levels))?;
                    if let Ok(fit) = fit_levels(levels) {
                        emit(&cli.out, "fit.json", &pretty(&fit)?)?;
                    }
                    eprintln!("{} cells ({failed} failed) written to {}", table.rows.len(), dir.display());
                }
                None => print!("{}", table.to_csv()),
            }
            Ok(())
        }
        Command::Coeffs { resolution } => {
            let text = need_config(&cli)?;
            let (spec, cfg) = match serde_json::from_str::<ExperimentConfig>(&text) {
                Ok(cfg) => (cfg.instance.clone(), Some(cfg)),
                Err(_) => {
                    let v: serde_json::Value = serde_json::from_str(&text)?;
                    let spec = v.get("instance").cloned().unwrap_or(v);
                    (serde_json::from_value::<InstanceSpec>(spec)?, None)
                }
            };
            let inst = build_instance(&spec)?;
            let d = trajectory_distribution(&inst.mdp, &inst.target, DEFAULT_ENUMERATION_CAP)?;
            let mut rows: Vec<(String, f64)> = vec![
                ("C_st".into(), concentrability_per_step(&d, &inst.mu0, inst.mdp.horizon())),
                ("C_tr".into(), concentrability_per_trajectory(&d, &inst.mu0)),
            ];
            if let Some(spec) = cfg.as_ref().and_then(|c| c.reward_class.as_ref()) {
                let class = build_reward_class(spec, &inst, cfg.as_ref().unwrap().constants.c_geom)?;
                let c = concentrability_reward(
                    &class,
                    &d,
                    &inst.mu1,
                    &inst.mu0,
                    &inst.mu1,
                    &inst.truth_table()?,
                    *resolution,
                    DEFAULT_ENUMERATION_CAP,
                )?;
                rows.push(("C_r".into(), c.value));
            }
            if let InstanceSpec::LowerBound { kind, c, horizon, n, .. } = &spec {
                let pair = lower_bound_instance(*kind, *c, *horizon, *n)?;
                rows.push(("kl".into(), instance_pair_kl(&pair)));
                rows.push(("kl_bound".into(), pair.kl_bound()));
            }
            if cfg.as_ref().is_some_and(|c| c.algorithm == Algorithm::FreehandAction) {
                let alphas: Vec<f64> = (0..=12).map(|i| 10f64.powf(-2.0 + i as f64 / 6.0)).collect();
                let p = margin_profile(&inst.mdp, &inst.reward, &alphas)?;
                rows.push(("beta".into(), p.beta));
                if cli.out.is_some() {
                    emit(&cli.out, "margin.csv", &p.to_csv())?;
                }
            }
            if cli.out.is_some() {
                let csv: String = rows.iter().map(|(k, v)| format!("{k},{v}\n")).collect();
                emit(&cli.out, "coeffs.csv", &format!("quantity,value\n{csv}"))
            } else {
                rows.iter().for_each(|(k, v)| println!("{k} {v}"));
                Ok(())
            }
        }
        Command::Rates { input } => {
            let pts = ResultTable::points_from_csv(&read(input)?)?;
            let fit = fit_rate(&pts)?;
            emit(&cli.out, "rates.csv", &rates_csv(&fit.levels))?;
            if cli.out.is_some() {
                emit(&cli.out, "fit.json", &pretty(&fit)?)?;
            }
            eprintln!("slope {:.4} intercept {:.4} R2 {:.4}", fit.slope, fit.intercept, fit.r_squared);
            Ok(())
        }
        Command::Plot { input, title } => {
            let levels = levels_from_csv(&read(input)?)?;
            let fit = fit_levels(levels.clone()).ok();
            emit(&cli.out, "plot.svg", &rates_svg(&levels, fit.as_ref(), title))
        }
    }
}
