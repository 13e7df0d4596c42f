//! Command-line entry point: dataset generation, training, evaluation,
//! the comparison matrix, and the verification suites.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 I/O or file-format error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use abmil::data::{build_bags, load_idx, Dataset, Split};
use abmil::eval::{evaluate, run_matrix, MatrixSpec};
use abmil::rng::substream;
use abmil::train::{history_to_csv, train};
use abmil::verify::{run_all, Scale};
use abmil::{Error, ParamSet};

use config::{
    echo_dataset, echo_eval, echo_matrix, echo_train, parse_dataset, parse_eval, parse_matrix,
    parse_train, ConfigFile, DatasetConfig, PoolSource,
};

#[derive(Parser)]
#[command(
    name = "abmil",
    version,
    about = "Attention-MIL training with memory-bounded gradient accumulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bag dataset directory from a config file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a generated dataset; writes the selected checkpoint and
    /// the per-epoch history CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the strategy x alpha x inference-sampling comparison grid.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the verification suites and report one line per property.
    Verify {
        #[arg(long, default_value = "smoke")]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Truncated { .. } | Error::IdxMagic { .. } | Error::Format(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> abmil::Result<ExitCode> {
    match cli.command {
        Command::Gen { config, out, seed } => cmd_gen(&config, &out, seed),
        Command::Train {
            config,
            dataset,
            out,
            seed,
        } => cmd_train(&config, &dataset, &out, seed),
        Command::Eval {
            config,
            params,
            dataset,
            out,
            seed,
        } => cmd_eval(&config, &params, &dataset, &out, seed),
        Command::Matrix { config, out, seed } => cmd_matrix(&config, &out, seed),
        Command::Verify { scale, seed } => cmd_verify(&scale, seed),
    }
}

fn read_config(path: &Path) -> abmil::Result<ConfigFile> {
    let text = fs::read_to_string(path)?;
    ConfigFile::parse(&text)
}

fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    echo: &str,
    outputs: &[&Path],
) -> abmil::Result<()> {
    use std::fmt::Write as _;
    let mut text = String::from(echo);
    let _ = writeln!(text, "[run]");
    let _ = writeln!(text, "command = {command}");
    let _ = writeln!(text, "version = {}", env!("CARGO_PKG_VERSION"));
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let _ = writeln!(text, "unix_timestamp = {ts}");
    for p in outputs {
        let _ = writeln!(text, "output = {}", p.display());
    }
    fs::write(out_dir.join("run.manifest"), text)?;
    Ok(())
}

fn build_pool(ds: &DatasetConfig) -> abmil::Result<abmil::data::InstancePool> {
    match &ds.source {
        PoolSource::Synthetic(p) => abmil::data::make_synthetic_pool(
            ds.bag_spec.seed,
            p.n_classes,
            p.input_dim,
            p.samples_per_class,
        ),
        PoolSource::Idx {
            images_path,
            labels_path,
            limit,
        } => load_idx(Path::new(images_path), Path::new(labels_path), *limit),
    }
}

fn cmd_gen(config: &Path, out: &Path, seed: Option<u64>) -> abmil::Result<ExitCode> {
    let cfg = read_config(config)?;
    let mut ds = parse_dataset(&cfg)?;
    if let Some(s) = seed {
        ds.bag_spec.seed = s;
    }
    let pool = build_pool(&ds)?;
    let dataset = build_bags(&pool, &ds.bag_spec)?;
    fs::create_dir_all(out)?;
    dataset.save(out)?;

    let mut echo = String::new();
    echo_dataset(&mut echo, &ds);
    write_run_manifest(out, "gen", &echo, &[&out.join("train.bags")])?;
    println!(
        "dataset written to {} ({} train / {} val / {} test bags, {} instances each)",
        out.display(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        ds.bag_spec.instances_per_bag
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    config: &Path,
    dataset_dir: &Path,
    out: &Path,
    seed: Option<u64>,
) -> abmil::Result<ExitCode> {
    let cfg = read_config(config)?;
    let mut tc = parse_train(&cfg)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    let dataset = Dataset::load(dataset_dir)?;
    let outcome = train(&dataset, &tc)?;

    fs::create_dir_all(out)?;
    let ckpt = out.join("best.params");
    outcome.best.save(&ckpt)?;
    fs::write(out.join("history.csv"), history_to_csv(&outcome.history))?;

    let mut echo = String::new();
    echo_train(&mut echo, &tc);
    write_run_manifest(out, "train", &echo, &[&ckpt, &out.join("history.csv")])?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs ({}); best epoch {} with validation error {}",
        tc.epochs,
        tc.strategy.name(),
        outcome.best_epoch,
        outcome.history[outcome.best_epoch - 1].val_error
    );
    println!(
        "final epoch: train_loss {} val_loss {} val_error {}",
        last.train_loss, last.val_loss, last.val_error
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    config: &Path,
    params_path: &Path,
    dataset_dir: &Path,
    out: &Path,
    seed: Option<u64>,
) -> abmil::Result<ExitCode> {
    let cfg = read_config(config)?;
    let mut ec = parse_eval(&cfg)?;
    if let Some(s) = seed {
        ec.seed = s;
    }
    let params = ParamSet::load(params_path)?;
    let dataset = Dataset::load(dataset_dir)?;
    let split = match ec.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        _ => Split::Test,
    };
    let bags = dataset.split(split);
    if bags.is_empty() {
        return Err(Error::Config(format!("split '{}' is empty", ec.split)));
    }
    let mut rng = substream(ec.seed, "eval", 0);
    let result = evaluate(&params, bags, ec.inference_sample_percent, &mut rng)?;

    fs::create_dir_all(out)?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut summary = String::from(
        "bag_acc,inst_auc,inst_auc_pos_bags,inst_auc_bag_mean,n_bags,infer_sample_pct\n",
    );
    summary.push_str(&format!(
        "{},{},{},{},{},{}\n",
        result.bag_accuracy,
        fmt(result.instance_auc),
        fmt(result.instance_auc_pos_bags),
        fmt(result.instance_auc_bag_mean),
        bags.len(),
        ec.inference_sample_percent
    ));
    fs::write(out.join("eval.csv"), summary)?;

    let mut per_bag = String::from("bag,label,score,evaluated_instances\n");
    for (i, r) in result.records.iter().enumerate() {
        per_bag.push_str(&format!(
            "{},{},{},{}\n",
            i,
            r.label,
            r.score,
            r.attention.len()
        ));
    }
    fs::write(out.join("bags.csv"), per_bag)?;

    let mut echo = String::new();
    echo_eval(&mut echo, &ec);
    write_run_manifest(out, "eval", &echo, &[&out.join("eval.csv")])?;
    println!(
        "bag accuracy {} | instance AUC {} over {} bags",
        result.bag_accuracy,
        fmt(result.instance_auc),
        bags.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_matrix(config: &Path, out: &Path, seed: Option<u64>) -> abmil::Result<ExitCode> {
    let cfg = read_config(config)?;
    let ds = parse_dataset(&cfg)?;
    let tc = parse_train(&cfg)?;
    let mut mc = parse_matrix(&cfg)?;
    if let Some(s) = seed {
        mc.base_seed = s;
    }
    let pool = match &ds.source {
        PoolSource::Synthetic(p) => p.clone(),
        PoolSource::Idx { .. } => {
            return Err(Error::Config(
                "[matrix] runs resample synthetic pools; source = idx is not supported here".into(),
            ))
        }
    };
    let spec = MatrixSpec {
        bag_spec: ds.bag_spec.clone(),
        pool,
        train: tc.clone(),
        strategies: mc.strategies.clone(),
        alphas: mc.alphas.clone(),
        inference_samples: mc.inference_samples.clone(),
        repeats: mc.repeats,
        base_seed: mc.base_seed,
    };
    let csv = run_matrix(&spec)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("matrix.csv"), &csv)?;

    let mut echo = String::new();
    echo_dataset(&mut echo, &ds);
    echo_train(&mut echo, &tc);
    echo_matrix(&mut echo, &mc);
    write_run_manifest(out, "matrix", &echo, &[&out.join("matrix.csv")])?;
    println!(
        "matrix written to {} ({} data rows)",
        out.join("matrix.csv").display(),
        csv.lines().count() - 1
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(scale: &str, seed: u64) -> abmil::Result<ExitCode> {
    let scale = Scale::parse(scale)?;
    let checks = run_all(scale, seed)?;
    let mut failed = 0;
    for check in &checks {
        println!("{check}");
        if !check.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} of {} properties failed", checks.len());
        Ok(ExitCode::from(1))
    } else {
        println!("all {} properties hold", checks.len());
        Ok(ExitCode::SUCCESS)
    }
}
