use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mhcl::data::{assign_cohorts, build_subgraphs, load_tsv, split, RatingDataset, Schema, DEFAULT_RATIOS};
use mhcl::harness::train::forward_config;
use mhcl::harness::{
    evaluate_completion, evaluate_recommendation, report_longtail, train, Checkpoint, Scorer,
};
use mhcl::model::final_embeddings;
use mhcl::ndcore::Matrix;
use mhcl::objective::decode;
use mhcl::{par, Error, Result};

#[derive(Parser)]
#[command(name = "mhcl", version, about = "Multi-channel hypergraph contrastive matrix completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Completion,
    Recommendation,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a ratings file, split it 8:1:1 and write the prepared directory.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// Preset name, descriptor file or inline `key=value;...` text.
        #[arg(long, default_value = "ml-100k")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a prepared directory and write the best checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key=value file; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "completion")]
        task: TaskArg,
    },
    /// Test MSE per user cohort and per true rating.
    ReportLongtail {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rating distribution for one user and item, by raw id.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
    },
}

fn prepare(input: &Path, schema: &str, out: &Path, seed: u64) -> Result<()> {
    let schema = Schema::resolve(schema)?;
    let table = load_tsv(input, &schema)?;
    let dataset = split(&table, seed, DEFAULT_RATIOS)?;
    dataset.save_dir(out)?;
    println!(
        "users={}\nitems={}\ntrain={}\nval={}\ntest={}\nduplicates={}",
        dataset.num_users,
        dataset.num_items,
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        table.duplicates
    );
    Ok(())
}

fn run_train(data: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let config = match config {
        Some(p) => mhcl::harness::TrainConfig::load(p)?,
        None => mhcl::harness::TrainConfig::default(),
    };
    let dataset = RatingDataset::load_dir(data)?;
    let run = train(&config, &dataset)?;
    run.checkpoint.save(out)?;
    println!(
        "epochs={}\nbest_epoch={}\nbest_val_metric={:.6}\nstopped_early={}",
        run.log.len(),
        run.checkpoint.best_epoch,
        run.checkpoint.best_metric,
        run.stopped_early
    );
    Ok(())
}

/// Recomputes the final embeddings of `ckpt` on the graphs of `dataset`.
fn load_model(ckpt: &Path, data: &Path) -> Result<(Checkpoint, RatingDataset, Matrix)> {
    let ckpt = Checkpoint::load(ckpt)?;
    let dataset = RatingDataset::load_dir(data)?;
    let shape = ckpt.shape();
    if (shape.num_users, shape.num_items) != (dataset.num_users, dataset.num_items)
        || ckpt.categories != dataset.categories
    {
        return Err(Error::Validation(format!(
            "checkpoint covers {} users x {} items x ratings {:?}, data has {} x {} x {:?}",
            shape.num_users,
            shape.num_items,
            ckpt.categories,
            dataset.num_users,
            dataset.num_items,
            dataset.categories
        )));
    }
    let graphs = build_subgraphs(&dataset);
    let e = final_embeddings(&ckpt.params, &graphs, forward_config(&ckpt.config))?;
    Ok((ckpt, dataset, e))
}

fn eval(ckpt: &Path, data: &Path, task: TaskArg) -> Result<()> {
    let (ckpt, dataset, e) = load_model(ckpt, data)?;
    let decoders = ckpt.params.decoders();
    let scorer = Scorer {
        embeddings: &e,
        decoders: &decoders,
        num_users: dataset.num_users,
        categories: &dataset.categories,
    };
    let report = match task {
        TaskArg::Completion => evaluate_completion(&scorer, &dataset.test)?,
        TaskArg::Recommendation => {
            let mut seen = dataset.train.clone();
            seen.extend_from_slice(&dataset.val);
            evaluate_recommendation(&scorer, &seen, &dataset.test)?
        }
    };
    print!("{report}");
    println!();
    for (k, v) in report.key_values() {
        println!("{k}={v}");
    }
    Ok(())
}

fn longtail(ckpt: &Path, data: &Path, csv: Option<&Path>) -> Result<()> {
    let (ckpt, dataset, e) = load_model(ckpt, data)?;
    let decoders = ckpt.params.decoders();
    let scorer = Scorer {
        embeddings: &e,
        decoders: &decoders,
        num_users: dataset.num_users,
        categories: &dataset.categories,
    };
    let cohorts = assign_cohorts(&dataset);
    let report = report_longtail(&scorer, &cohorts, &dataset.test)?;
    print!("{report}");
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv())
            .map_err(|e| Error::Io {
                context: format!("writing {}", path.display()),
                source: e,
            })?;
    }
    Ok(())
}

fn predict(ckpt: &Path, user: &str, item: &str) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let e = ckpt
        .final_embeddings
        .as_ref()
        .ok_or_else(|| Error::Format("checkpoint carries no cached embeddings".into()))?;
    let u = ckpt
        .users
        .dense(user)
        .ok_or_else(|| Error::Validation(format!("unknown user {user:?}")))?;
    let v = ckpt
        .items
        .dense(item)
        .ok_or_else(|| Error::Validation(format!("unknown item {item:?}")))?;
    let m = ckpt.shape().num_users;
    let decoders: Vec<Matrix> = ckpt.params.decoders().into_iter().cloned().collect();
    let p = decode(e.row(u as usize), e.row(m + v as usize), &decoders, &ckpt.categories)?;
    println!("{:<8} {:>10}", "rating", "prob");
    for (r, q) in ckpt.categories.iter().zip(&p.prob) {
        println!("{r:<8} {q:>10.4}");
    }
    println!();
    for (r, q) in ckpt.categories.iter().zip(&p.prob) {
        println!("prob_{r}={q:.6}");
    }
    println!("expected_rating={:.6}", p.expected_rating);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            input,
            schema,
            out,
            seed,
        } => prepare(&input, &schema, &out, seed),
        Command::Train { data, config, out } => run_train(&data, config.as_deref(), &out),
        Command::Eval { ckpt, data, task } => eval(&ckpt, &data, task),
        Command::ReportLongtail { ckpt, data, csv } => longtail(&ckpt, &data, csv.as_deref()),
        Command::Predict { ckpt, user, item } => predict(&ckpt, &user, &item),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match par::threads_from_env() {
        Some(n) => par::with_threads(n, || run(cli)),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
